"""Desk-scale experimental protocols on synthetic multi-domain audio.

Provides the four-domain synthetic benchmark, zero-shot baselines,
one/five-example adaptation with seed averaging, the augmentation-count
ablation, and the cross-domain generalization grid. All reports are
byte-deterministic given identical seeds and inputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .adapt import AdaptConfig, AdaptResult, adapt, zero_shot_classify
from .augment import AugmentConfig
from .dsp import DspConfig, MelSpectrogram, log_mel_spectrogram, resample_linear, synth_waveform
from .errors import TtadaError, ValidationError
from .model import ClassPromptSet, ModelWeights
from .seeding import make_rng, stable_seed

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ClassRecipe:
    name: str
    family: str
    params: dict


@dataclass(frozen=True)
class SyntheticDomainSpec:
    name: str
    class_recipes: tuple[ClassRecipe, ...]
    noise_level: float = 0.0
    bandpass: tuple[float, float] | None = None
    envelope: str = "flat"
    eq_tilt_db_per_octave: float = 0.0
    duration_s: float = 6.0
    sample_rate_hz: int = 44100
    train_count: int = 24
    test_count: int = 40
    prompt_template: str = "the sound of a {}"

    def __post_init__(self):
        if len(self.class_recipes) < 2:
            raise ValidationError(f"domain '{self.name}' needs >= 2 classes")
        signatures = [
            (r.family, tuple(sorted(r.params.items()))) for r in self.class_recipes
        ]
        if len(set(signatures)) != len(signatures):
            raise ValidationError(f"domain '{self.name}' has duplicate class recipes")
        names = [r.name for r in self.class_recipes]
        if len(set(names)) != len(names):
            raise ValidationError(f"domain '{self.name}' has duplicate class names")

    @property
    def num_classes(self) -> int:
        return len(self.class_recipes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.class_recipes)

    @property
    def class_prompts(self) -> tuple[str, ...]:
        return tuple(self.prompt_template.format(n) for n in self.class_names)


@dataclass
class LabeledExample:
    mel: MelSpectrogram
    label: int


@dataclass
class DomainDataset:
    spec: SyntheticDomainSpec
    train: list[LabeledExample]
    test: list[LabeledExample]

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.spec.class_names

    @property
    def class_prompts(self) -> tuple[str, ...]:
        return self.spec.class_prompts


_JITTER = 0.06


def default_benchmark() -> tuple[SyntheticDomainSpec, ...]:
    """Four synthetic evaluation domains, four classes each.

    Each domain pairs spectrally distinct classes with a deployment-style
    acoustic shift relative to the clean pretraining variant: a spectral
    tilt (channel coloration) for tones and chirps, background noise for
    noise bursts and pulsing tones. Shift strengths are tuned so zero-shot
    accuracy lands below ceiling with headroom for adaptation.
    """
    tones = SyntheticDomainSpec(
        name="tones",
        class_recipes=tuple(
            ClassRecipe(f"{n} tone", "tone", {"freq": f, "jitter": _JITTER})
            for n, f in (
                ("low", 220.0), ("mid", 440.0), ("high", 880.0), ("top", 1760.0)
            )
        ),
        noise_level=0.02,
        eq_tilt_db_per_octave=6.0,
    )
    chirps = SyntheticDomainSpec(
        name="chirps",
        class_recipes=(
            ClassRecipe(
                "narrow rising chirp", "chirp",
                {"f0": 400.0, "f1": 800.0, "jitter": _JITTER},
            ),
            ClassRecipe(
                "wide rising chirp", "chirp",
                {"f0": 400.0, "f1": 3200.0, "jitter": _JITTER},
            ),
            ClassRecipe(
                "narrow falling chirp", "chirp",
                {"f0": 1600.0, "f1": 800.0, "jitter": _JITTER},
            ),
            ClassRecipe(
                "wide falling chirp", "chirp",
                {"f0": 6400.0, "f1": 800.0, "jitter": _JITTER},
            ),
        ),
        noise_level=0.02,
        envelope="fade",
        eq_tilt_db_per_octave=-2.5,
    )
    noisebursts = SyntheticDomainSpec(
        name="noisebursts",
        class_recipes=tuple(
            ClassRecipe(
                f"{n} noise burst", "noise_burst",
                {"band_lo": lo, "band_hi": hi, "bursts": 5, "jitter": _JITTER},
            )
            for n, lo, hi in (
                ("rumble", 100.0, 400.0),
                ("low", 400.0, 1200.0),
                ("mid", 1200.0, 3600.0),
                ("hiss", 3600.0, 10000.0),
            )
        ),
        noise_level=0.06,
    )
    am_tones = SyntheticDomainSpec(
        name="am-tones",
        class_recipes=tuple(
            ClassRecipe(
                f"{n} pulsing tone", "am_tone",
                {"carrier": c, "rate": 4.0, "jitter": _JITTER},
            )
            for n, c in (
                ("low", 260.0), ("mid", 520.0), ("high", 1040.0), ("top", 2080.0)
            )
        ),
        noise_level=0.15,
    )
    return (tones, chirps, noisebursts, am_tones)


def pretraining_variant(spec: SyntheticDomainSpec) -> SyntheticDomainSpec:
    """Clean 'studio' counterpart of a domain: same classes, no coloration.

    The gap between this variant and the deployed domain is the shift that
    test-time adaptation gets to compensate.
    """
    return replace(
        spec,
        noise_level=0.005,
        bandpass=None,
        envelope="flat",
        eq_tilt_db_per_octave=0.0,
    )


def generate_domain(
    spec: SyntheticDomainSpec, dsp_cfg: DspConfig, seed: int
) -> DomainDataset:
    """Deterministic labeled train/test splits; splits use disjoint seeds."""

    def make_split(split: str, count: int) -> list[LabeledExample]:
        items = []
        for i in range(count):
            label = i % spec.num_classes
            wave = synth_waveform(spec, label, stable_seed(seed, spec.name, split, i))
            if spec.sample_rate_hz != dsp_cfg.sample_rate_hz:
                wave = resample_linear(
                    wave, spec.sample_rate_hz, dsp_cfg.sample_rate_hz
                )
            mel = log_mel_spectrogram(
                wave, dsp_cfg, source_id=f"{spec.name}/{split}/{i:03d}"
            )
            items.append(LabeledExample(mel, label))
        return items

    return DomainDataset(
        spec=spec,
        train=make_split("train", spec.train_count),
        test=make_split("test", spec.test_count),
    )


def pretraining_pairs(datasets) -> list[tuple[MelSpectrogram, str]]:
    """(spectrogram, class name) pairs from the train splits of all domains."""
    pairs = []
    for ds in datasets:
        for ex in ds.train:
            pairs.append((ex.mel, ds.class_prompts[ex.label]))
    return pairs


def evaluate_zero_shot(items, classes: ClassPromptSet, w: ModelWeights, dv=None) -> float:
    """Fraction of items whose argmax prediction matches the label."""
    items = list(items)
    if not items:
        raise ValidationError("cannot evaluate on an empty dataset")
    correct = 0
    for ex in items:
        predicted, _ = zero_shot_classify(ex.mel, classes, w, dv)
        correct += predicted == ex.label
    return correct / len(items)


# ---------------------------------------------------------------------------
# Protocols


@dataclass
class SeedRun:
    seed: int
    indices: list[int]
    result: AdaptResult


def _adaptation_runs(
    ds: DomainDataset,
    k: int,
    cfg: AdaptConfig,
    w: ModelWeights,
    seeds,
    aug_cfg: AugmentConfig | None = None,
) -> list[SeedRun]:
    """One adaptation per seed on k unlabeled test examples.

    The same derivation is used by every protocol, so a grid diagonal cell
    and a standalone run at the same seeds are bit-identical.
    """
    if k < 1:
        raise ValidationError(f"need k >= 1 adaptation examples, got {k}")
    if k > len(ds.test):
        raise ValidationError(
            f"insufficient examples: domain '{ds.name}' has {len(ds.test)} "
            f"test files, need k={k}"
        )
    classes = ClassPromptSet.build(ds.class_prompts, w.vocab)
    runs = []
    for seed in seeds:
        rng = make_rng(stable_seed(seed, ds.name, "sample"))
        indices = sorted(
            int(i) for i in rng.choice(len(ds.test), size=k, replace=False)
        )
        run_cfg = replace(cfg, seed=stable_seed(seed, ds.name, "adapt"))
        result = adapt(
            [ds.test[i].mel for i in indices], classes, w, run_cfg, aug_cfg
        )
        runs.append(SeedRun(seed=seed, indices=indices, result=result))
    return runs


def _config_digest(cfg: AdaptConfig, aug_cfg, k, seeds, w: ModelWeights) -> str:
    payload = {
        "adapt": {
            "learning_rate": cfg.learning_rate,
            "steps": cfg.steps,
            "weight_decay": cfg.weight_decay,
            "adam_betas": list(cfg.adam_betas),
            "adam_eps": cfg.adam_eps,
            "num_aug_views": cfg.num_aug_views,
            "prompt_tokens": cfg.prompt_tokens,
            "sequential": cfg.sequential,
        },
        "augment": None
        if aug_cfg is None
        else {
            "tm_width": list(aug_cfg.tm_width),
            "tm_stripes": list(aug_cfg.tm_stripes),
            "fm_width": list(aug_cfg.fm_width),
            "fm_stripes": list(aug_cfg.fm_stripes),
            "tr_segments": list(aug_cfg.tr_segments),
            "num_aug_views": aug_cfg.num_aug_views,
            "mask_fill": aug_cfg.mask_fill,
        },
        "k": k,
        "seeds": list(seeds),
        "weights": w.content_hash()[:16],
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EvalReport:
    domain: str
    k: int
    seeds: list[int]
    per_seed_accuracy: list[float]
    per_seed_zero_shot: list[float]
    eval_counts: list[int]
    adapt_indices: list[list[int]]
    config_digest: str
    runs: list[SeedRun] | None = None  # in-memory only, not serialized

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.per_seed_accuracy))

    @property
    def mean_zero_shot(self) -> float:
        return float(np.mean(self.per_seed_zero_shot))

    @property
    def mean_delta(self) -> float:
        return self.mean_accuracy - self.mean_zero_shot

    def to_json_dict(self) -> dict:
        return {
            "domain": self.domain,
            "k": self.k,
            "seeds": self.seeds,
            "per_seed_accuracy": self.per_seed_accuracy,
            "per_seed_zero_shot": self.per_seed_zero_shot,
            "eval_counts": self.eval_counts,
            "adapt_indices": self.adapt_indices,
            "mean_accuracy": self.mean_accuracy,
            "mean_zero_shot": self.mean_zero_shot,
            "mean_delta": self.mean_delta,
            "config_digest": self.config_digest,
        }

    def csv_rows(self) -> list[tuple]:
        return [
            (self.domain, self.domain, seed, acc, self.config_digest)
            for seed, acc in zip(self.seeds, self.per_seed_accuracy)
        ]


def adapt_and_eval(
    ds: DomainDataset,
    k: int,
    cfg: AdaptConfig,
    w: ModelWeights,
    seeds=DEFAULT_SEEDS,
    aug_cfg: AugmentConfig | None = None,
) -> EvalReport:
    """Adapt on k unlabeled test examples per seed and score the rest.

    The adaptation examples are excluded from the accuracy denominator;
    the zero-shot reference is computed on the same evaluation subset.
    """
    seeds = list(seeds)
    classes = ClassPromptSet.build(ds.class_prompts, w.vocab)
    runs = _adaptation_runs(ds, k, cfg, w, seeds, aug_cfg)
    per_acc, per_zs, counts, indices = [], [], [], []
    for run in runs:
        held = set(run.indices)
        eval_items = [ex for i, ex in enumerate(ds.test) if i not in held]
        per_acc.append(
            evaluate_zero_shot(eval_items, classes, w, run.result.domain_vector)
        )
        per_zs.append(evaluate_zero_shot(eval_items, classes, w, None))
        counts.append(len(eval_items))
        indices.append(run.indices)
    return EvalReport(
        domain=ds.name,
        k=k,
        seeds=seeds,
        per_seed_accuracy=per_acc,
        per_seed_zero_shot=per_zs,
        eval_counts=counts,
        adapt_indices=indices,
        config_digest=_config_digest(cfg, aug_cfg, k, seeds, w),
        runs=runs,
    )


@dataclass
class AblationReport:
    domain: str
    k: int
    seeds: list[int]
    view_counts: list[int]
    reports: list[EvalReport]

    def to_json_dict(self) -> dict:
        return {
            "domain": self.domain,
            "k": self.k,
            "seeds": self.seeds,
            "view_counts": self.view_counts,
            "reports": [r.to_json_dict() for r in self.reports],
        }

    def csv_rows(self) -> list[tuple]:
        rows = []
        for report in self.reports:
            rows.extend(report.csv_rows())
        return rows

    def format_table(self) -> str:
        lines = [f"{'':>18}  mean acc   zero-shot   delta"]
        for count, report in zip(self.view_counts, self.reports):
            lines.append(
                f"{count:>3} augmentations  {report.mean_accuracy:9.4f}  "
                f"{report.mean_zero_shot:10.4f}  {report.mean_delta:+7.4f}"
            )
        return "\n".join(lines)


def ablate_augmentations(
    ds: DomainDataset,
    view_counts,
    cfg: AdaptConfig,
    w: ModelWeights,
    seeds=DEFAULT_SEEDS,
    k: int = 1,
) -> AblationReport:
    """One adaptation report per augmented-view count, same seeds throughout."""
    view_counts = list(view_counts)
    if not view_counts:
        raise ValidationError("view_counts must be nonempty")
    reports = []
    for count in view_counts:
        if count < 1:
            raise ValidationError(
                f"view count must be >= 1 (batch needs an augmented view), got {count}"
            )
        reports.append(
            adapt_and_eval(ds, k, replace(cfg, num_aug_views=count), w, seeds)
        )
    return AblationReport(
        domain=ds.name, k=k, seeds=list(seeds), view_counts=view_counts, reports=reports
    )


@dataclass
class CrossDomainGrid:
    domains: list[str]
    seeds: list[int]
    cells: dict  # cells[source][target] = {"per_seed": [...], "mean": float}
    zero_shot: dict  # target -> accuracy on the full test split
    row_avg: dict  # source -> mean over targets of cell means
    col_avg: dict  # target -> mean over sources of cell means
    summary: dict  # source -> in-domain delta vs mean off-domain delta
    config_digest: str

    def to_json_dict(self) -> dict:
        return {
            "domains": self.domains,
            "seeds": self.seeds,
            "cells": self.cells,
            "zero_shot": self.zero_shot,
            "row_avg": self.row_avg,
            "col_avg": self.col_avg,
            "summary": self.summary,
            "config_digest": self.config_digest,
        }

    def csv_rows(self) -> list[tuple]:
        rows = []
        for source in self.domains:
            for target in self.domains:
                per_seed = self.cells[source][target]["per_seed"]
                for seed, acc in zip(self.seeds, per_seed):
                    rows.append((source, target, seed, acc, self.config_digest))
        return rows

    def format_table(self) -> str:
        width = max(len(d) for d in self.domains) + 2
        header = "".join(f"{d:>{width}}" for d in ["", "ZS", *self.domains, "avg"])
        lines = [header]
        for source in self.domains:
            cells = [f"{self.zero_shot[source]:.4f}"]
            cells += [f"{self.cells[source][t]['mean']:.4f}" for t in self.domains]
            cells.append(f"{self.row_avg[source]:.4f}")
            lines.append(f"{source:>{width}}" + "".join(f"{c:>{width}}" for c in cells))
        summary = [
            f"{s}: in-domain {self.summary[s]['in_domain_delta']:+.4f}, "
            f"off-domain {self.summary[s]['mean_off_domain_delta']:+.4f}"
            for s in self.domains
        ]
        return "\n".join(lines + ["", "adaptation deltas vs zero-shot:", *summary])


def cross_domain_grid(
    datasets,
    cfg: AdaptConfig,
    w: ModelWeights,
    seeds=DEFAULT_SEEDS,
    aug_cfg: AugmentConfig | None = None,
) -> CrossDomainGrid:
    """Adapt on each source domain (k=1) and evaluate on every target.

    Diagonal cells exclude the adaptation example from scoring and match
    standalone one-example runs bit-for-bit; off-diagonal cells score the
    target's full test split. The zero-shot column is adaptation-free.
    """
    datasets = list(datasets)
    if len(datasets) < 2:
        raise ValidationError("cross-domain grid needs at least 2 domains")
    seeds = list(seeds)
    by_name = {ds.name: ds for ds in datasets}
    class_sets = {
        ds.name: ClassPromptSet.build(ds.class_prompts, w.vocab) for ds in datasets
    }
    zs = {
        ds.name: evaluate_zero_shot(ds.test, class_sets[ds.name], w, None)
        for ds in datasets
    }
    cells: dict = {}
    for source_ds in datasets:
        runs = _adaptation_runs(source_ds, 1, cfg, w, seeds, aug_cfg)
        cells[source_ds.name] = {}
        for target_ds in datasets:
            per_seed = []
            for run in runs:
                if target_ds.name == source_ds.name:
                    held = set(run.indices)
                    items = [
                        ex for i, ex in enumerate(target_ds.test) if i not in held
                    ]
                else:
                    items = target_ds.test
                per_seed.append(
                    evaluate_zero_shot(
                        items, class_sets[target_ds.name], w, run.result.domain_vector
                    )
                )
            cells[source_ds.name][target_ds.name] = {
                "per_seed": per_seed,
                "mean": float(np.mean(per_seed)),
                "in_domain": target_ds.name == source_ds.name,
            }
    names = [ds.name for ds in datasets]
    row_avg = {
        s: float(np.mean([cells[s][t]["mean"] for t in names])) for s in names
    }
    col_avg = {
        t: float(np.mean([cells[s][t]["mean"] for s in names])) for t in names
    }
    summary = {}
    for s in names:
        off = [cells[s][t]["mean"] - zs[t] for t in names if t != s]
        summary[s] = {
            "in_domain_delta": cells[s][s]["mean"] - zs[s],
            "mean_off_domain_delta": float(np.mean(off)),
        }
    return CrossDomainGrid(
        domains=names,
        seeds=seeds,
        cells=cells,
        zero_shot=zs,
        row_avg=row_avg,
        col_avg=col_avg,
        summary=summary,
        config_digest=_config_digest(cfg, aug_cfg, 1, seeds, w),
    )


@dataclass
class ZeroShotReport:
    domains: dict  # name -> accuracy
    seed: int
    config_digest: str

    def to_json_dict(self) -> dict:
        return {
            "domains": self.domains,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }

    def csv_rows(self) -> list[tuple]:
        return [
            (name, name, self.seed, acc, self.config_digest)
            for name, acc in self.domains.items()
        ]


def zero_shot_report(datasets, w: ModelWeights, seed: int) -> ZeroShotReport:
    accs = {}
    for ds in datasets:
        classes = ClassPromptSet.build(ds.class_prompts, w.vocab)
        accs[ds.name] = evaluate_zero_shot(ds.test, classes, w, None)
    digest = hashlib.sha256(
        json.dumps({"weights": w.content_hash(), "seed": seed}).encode()
    ).hexdigest()[:12]
    return ZeroShotReport(domains=accs, seed=seed, config_digest=digest)


# ---------------------------------------------------------------------------
# Report emission and dataset manifests

CSV_HEADER = ("source", "target", "seed", "accuracy", "config_digest")


def emit_report(report, fmt: str, path: str) -> None:
    """Write a report as JSON (full object) or CSV (per-seed accuracy rows)."""
    if fmt == "json":
        payload = json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in report.csv_rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        payload = buf.getvalue()
    else:
        raise ValidationError(f"unknown report format '{fmt}' (want json or csv)")
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(payload)
    except OSError as e:
        raise TtadaError(f"cannot write report to {path}: {e}") from e


def manifest_dict(specs) -> dict:
    return {
        "domains": [
            {
                "name": s.name,
                "noise_level": s.noise_level,
                "bandpass": list(s.bandpass) if s.bandpass else None,
                "envelope": s.envelope,
                "duration_s": s.duration_s,
                "sample_rate_hz": s.sample_rate_hz,
                "train_count": s.train_count,
                "test_count": s.test_count,
                "prompt_template": s.prompt_template,
                "eq_tilt_db_per_octave": s.eq_tilt_db_per_octave,
                "classes": [
                    {"name": r.name, "family": r.family, "params": r.params}
                    for r in s.class_recipes
                ],
            }
            for s in specs
        ]
    }


def load_manifest(path: str) -> tuple[SyntheticDomainSpec, ...]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise TtadaError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"manifest {path} is not valid JSON: {e}") from e
    specs = []
    try:
        for dom in doc["domains"]:
            recipes = tuple(
                ClassRecipe(c["name"], c["family"], dict(c["params"]))
                for c in dom["classes"]
            )
            specs.append(
                SyntheticDomainSpec(
                    name=dom["name"],
                    class_recipes=recipes,
                    noise_level=float(dom.get("noise_level", 0.0)),
                    bandpass=tuple(dom["bandpass"]) if dom.get("bandpass") else None,
                    envelope=dom.get("envelope", "flat"),
                    duration_s=float(dom.get("duration_s", 6.0)),
                    sample_rate_hz=int(dom.get("sample_rate_hz", 44100)),
                    train_count=int(dom.get("train_count", 24)),
                    test_count=int(dom.get("test_count", 40)),
                    prompt_template=dom.get("prompt_template", "the sound of a {}"),
                    eq_tilt_db_per_octave=float(
                        dom.get("eq_tilt_db_per_octave", 0.0)
                    ),
                )
            )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"manifest {path} is missing fields: {e}") from e
    return tuple(specs)
