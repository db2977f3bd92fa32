"""Command-line entry point.

Subcommands: pretrain, zeroshot, adapt, ablate, grid, gradcheck,
augment-preview. Exit codes: 0 success, 1 validation error, 2 runtime
error. All randomness derives from --seed (falling back to the TTADA_SEED
environment variable), and identical invocations produce byte-identical
report files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .adapt import AdaptConfig
from .augment import AugmentConfig, build_augmented_batch
from .dsp import DspConfig, log_mel_spectrogram, read_wav, resample_linear, synth_waveform
from .errors import TtadaError, ValidationError
from .gradcheck import gradient_check_sweep, worst_error
from .harness import (
    ablate_augmentations,
    adapt_and_eval,
    cross_domain_grid,
    default_benchmark,
    emit_report,
    generate_domain,
    load_manifest,
    pretraining_pairs,
    pretraining_variant,
    zero_shot_report,
)
from .model import (
    ModelDims,
    contrastive_loss,
    contrastive_pretrain,
    load_weights,
    save_weights,
)
from .seeding import stable_seed

GRADCHECK_TOLERANCE = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; route through our validation path.
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (default: $TTADA_SEED or 0)")
    common.add_argument("--config", default=None,
                        help="JSON file overriding any flag group")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress tables")

    dspf = argparse.ArgumentParser(add_help=False)
    dspf.add_argument("--sample-rate", type=int, default=None)
    dspf.add_argument("--window", type=int, default=None)
    dspf.add_argument("--hop", type=int, default=None)
    dspf.add_argument("--mel-bins", type=int, default=None)
    dspf.add_argument("--fmin", type=float, default=None)
    dspf.add_argument("--fmax", type=float, default=None)

    dimf = argparse.ArgumentParser(add_help=False)
    dimf.add_argument("--dim", type=int, default=None, help="embedding width d")
    dimf.add_argument("--hidden", type=int, default=None, help="MLP hidden width")

    adaptf = argparse.ArgumentParser(add_help=False)
    adaptf.add_argument("--lr", type=float, default=None, help="learning rate")
    adaptf.add_argument("--steps", type=int, default=None)
    adaptf.add_argument("--wd", type=float, default=None, help="weight decay")
    adaptf.add_argument("--views", type=int, default=None,
                        help="number of augmented views")
    adaptf.add_argument("--prompt-tokens", type=int, default=None,
                        help="domain-vector token count")
    adaptf.add_argument("--sequential", action="store_true",
                        help="per-example updates instead of one joint loss")

    dataf = argparse.ArgumentParser(add_help=False)
    dataf.add_argument("--manifest", default=None,
                       help="JSON domain manifest (default: built-in benchmark)")
    dataf.add_argument("--weights", default=None, help="weight file path")

    protof = argparse.ArgumentParser(add_help=False)
    protof.add_argument("--runs", type=int, default=5,
                        help="number of seeded protocol runs")

    parser = _Parser(prog="ttada", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("pretrain", parents=[common, dspf, dimf, dataf],
                       help="contrastively pretrain toy weights")
    p.add_argument("--epochs", type=int, default=700)
    p.add_argument("--pretrain-lr", type=float, default=2e-2)
    p.add_argument("--positional-pooling", action="store_true")

    sub.add_parser("zeroshot", parents=[common, dspf, dataf],
                   help="zero-shot baseline on every domain")

    p = sub.add_parser("adapt", parents=[common, dspf, dataf, adaptf, protof],
                       help="one/five-example adaptation plus evaluation")
    p.add_argument("--domain", default=None, help="domain name (default: first)")
    p.add_argument("--k", type=int, default=1, help="adaptation examples per run")

    p = sub.add_parser("ablate", parents=[common, dspf, dataf, adaptf, protof],
                       help="augmentation-count ablation")
    p.add_argument("--domain", default=None)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--view-counts", default="25,50",
                   help="comma-separated augmented-view counts")

    sub.add_parser("grid", parents=[common, dspf, dataf, adaptf, protof],
                   help="cross-domain generalization grid")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="autodiff vs finite differences sweep")
    p.add_argument("--configs", type=int, default=20)

    p = sub.add_parser("augment-preview", parents=[common, dspf],
                       help="dump augmented views and their provenance")
    p.add_argument("--wav", default=None, help="input WAV (default: synthetic)")
    p.add_argument("--domain", default="tones")
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--views", type=int, default=8)

    return parser


# ---------------------------------------------------------------------------
# Flag resolution (explicit flag > --config group > default)


def _load_config_doc(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise TtadaError(f"cannot read config {args.config}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {args.config} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ValidationError(f"config {args.config} must be a JSON object")
    return doc


def _pick(flag_value, group: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return group.get(key, default)


def _resolve_seed(args, doc) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in doc:
        try:
            return int(doc["seed"])
        except (TypeError, ValueError) as e:
            raise ValidationError(f"config seed {doc['seed']!r} is not an integer") from e
    env = os.environ.get("TTADA_SEED")
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ValidationError(f"TTADA_SEED={env!r} is not an integer") from e
    return 0


def _resolve_dsp(args, doc) -> DspConfig:
    g = doc.get("dsp", {})
    return DspConfig(
        sample_rate_hz=_pick(args.sample_rate, g, "sample_rate_hz", 44100),
        window_size=_pick(args.window, g, "window_size", 1024),
        hop_size=_pick(args.hop, g, "hop_size", 320),
        mel_bins=_pick(args.mel_bins, g, "mel_bins", 64),
        fmin_hz=_pick(args.fmin, g, "fmin_hz", 50.0),
        fmax_hz=_pick(args.fmax, g, "fmax_hz", 14000.0),
    )


def _resolve_dims(args, doc, mel_bins: int) -> ModelDims:
    g = doc.get("dims", {})
    return ModelDims(
        d=_pick(args.dim, g, "d", 768),
        h=_pick(args.hidden, g, "h", 256),
        audio_bins=mel_bins,
    )


def _resolve_adapt(args, doc, seed: int) -> AdaptConfig:
    g = doc.get("adapt", {})
    return AdaptConfig(
        learning_rate=_pick(args.lr, g, "learning_rate", 5e-2),
        steps=_pick(args.steps, g, "steps", 1),
        weight_decay=_pick(args.wd, g, "weight_decay", 0.0),
        num_aug_views=_pick(args.views, g, "num_aug_views", 50),
        prompt_tokens=_pick(args.prompt_tokens, g, "prompt_tokens", 1),
        sequential=args.sequential or g.get("sequential", False),
        seed=seed,
    )


def _resolve_domains(args, doc, dsp_cfg, seed):
    specs = load_manifest(args.manifest) if args.manifest else default_benchmark()
    data_seed = stable_seed(seed, "data")
    return [generate_domain(spec, dsp_cfg, data_seed) for spec in specs]


def _pick_domain(datasets, name):
    if name is None:
        return datasets[0]
    for ds in datasets:
        if ds.name == name:
            return ds
    raise ValidationError(
        f"unknown domain '{name}'; available: {[d.name for d in datasets]}"
    )


def _weights_path(args, out_dir) -> str:
    return args.weights or os.path.join(out_dir, "weights.ttw")


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_pretrain(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    dims = _resolve_dims(args, doc, dsp_cfg.mel_bins)
    os.makedirs(args.out, exist_ok=True)
    specs = load_manifest(args.manifest) if args.manifest else default_benchmark()
    train_seed = stable_seed(seed, "pretrain-data")
    datasets = [
        generate_domain(pretraining_variant(spec), dsp_cfg, train_seed)
        for spec in specs
    ]
    pairs = pretraining_pairs(datasets)
    g = doc.get("pretrain", {})
    epochs = _pick(None, g, "epochs", args.epochs)
    lr = _pick(None, g, "learning_rate", args.pretrain_lr)
    w = contrastive_pretrain(
        pairs,
        epochs=epochs,
        seed=stable_seed(seed, "pretrain"),
        dims=dims,
        lr=lr,
        positional_pooling=args.positional_pooling,
    )
    path = _weights_path(args, args.out)
    save_weights(w, path)
    _say(args, f"pretrained on {len(pairs)} pairs for {epochs} epochs")
    _say(args, f"final contrastive loss {contrastive_loss(pairs, w):.4f}")
    _say(args, f"weights written to {path}")
    return 0


def _cmd_zeroshot(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    os.makedirs(args.out, exist_ok=True)
    w = load_weights(_weights_path(args, args.out))
    datasets = _resolve_domains(args, doc, dsp_cfg, seed)
    report = zero_shot_report(datasets, w, seed)
    emit_report(report, "json", os.path.join(args.out, "zeroshot.json"))
    emit_report(report, "csv", os.path.join(args.out, "zeroshot.csv"))
    for name, acc in report.domains.items():
        _say(args, f"{name:>12}: {acc:.4f}")
    return 0


def _cmd_adapt(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    cfg = _resolve_adapt(args, doc, seed)
    os.makedirs(args.out, exist_ok=True)
    w = load_weights(_weights_path(args, args.out))
    datasets = _resolve_domains(args, doc, dsp_cfg, seed)
    ds = _pick_domain(datasets, args.domain)
    seeds = [seed + i for i in range(args.runs)]
    report = adapt_and_eval(ds, args.k, cfg, w, seeds)
    emit_report(report, "json", os.path.join(args.out, "adapt_report.json"))
    emit_report(report, "csv", os.path.join(args.out, "adapt_report.csv"))
    for run in report.runs or []:
        path = os.path.join(args.out, f"adapt_result_seed{run.seed}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(run.result.to_json_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
    _say(
        args,
        f"{ds.name}: k={args.k} adapted {report.mean_accuracy:.4f} "
        f"zero-shot {report.mean_zero_shot:.4f} delta {report.mean_delta:+.4f}",
    )
    return 0


def _cmd_ablate(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    cfg = _resolve_adapt(args, doc, seed)
    try:
        counts = [int(c) for c in args.view_counts.split(",") if c.strip()]
    except ValueError as e:
        raise ValidationError(f"bad --view-counts '{args.view_counts}': {e}") from e
    os.makedirs(args.out, exist_ok=True)
    w = load_weights(_weights_path(args, args.out))
    datasets = _resolve_domains(args, doc, dsp_cfg, seed)
    ds = _pick_domain(datasets, args.domain)
    seeds = [seed + i for i in range(args.runs)]
    report = ablate_augmentations(ds, counts, cfg, w, seeds, k=args.k)
    emit_report(report, "json", os.path.join(args.out, "ablation.json"))
    emit_report(report, "csv", os.path.join(args.out, "ablation.csv"))
    _say(args, report.format_table())
    return 0


def _cmd_grid(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    cfg = _resolve_adapt(args, doc, seed)
    os.makedirs(args.out, exist_ok=True)
    w = load_weights(_weights_path(args, args.out))
    datasets = _resolve_domains(args, doc, dsp_cfg, seed)
    seeds = [seed + i for i in range(args.runs)]
    grid = cross_domain_grid(datasets, cfg, w, seeds)
    emit_report(grid, "json", os.path.join(args.out, "grid.json"))
    emit_report(grid, "csv", os.path.join(args.out, "grid.csv"))
    _say(args, grid.format_table())
    return 0


def _cmd_gradcheck(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    results = gradient_check_sweep(num_configs=args.configs, seed=seed)
    for r in results:
        c = r["config"]
        _say(
            args,
            f"M={c['M']:>2} N={c['N']} d={c['d']:>2} k={c['k']} "
            f"rel_err={r['max_rel_err']:.3e}",
        )
    worst = worst_error(results)
    print(f"max relative error over {len(results)} configs: {worst:.3e}")
    if worst > GRADCHECK_TOLERANCE:
        print(
            f"gradient check FAILED (tolerance {GRADCHECK_TOLERANCE:g})",
            file=sys.stderr,
        )
        return 2
    return 0


def _cmd_augment_preview(args) -> int:
    doc = _load_config_doc(args)
    seed = _resolve_seed(args, doc)
    dsp_cfg = _resolve_dsp(args, doc)
    os.makedirs(args.out, exist_ok=True)
    if args.wav:
        samples, rate = read_wav(args.wav)
        samples = resample_linear(samples, rate, dsp_cfg.sample_rate_hz)
        mel = log_mel_spectrogram(samples, dsp_cfg, source_id=args.wav)
    else:
        specs = {s.name: s for s in default_benchmark()}
        if args.domain not in specs:
            raise ValidationError(
                f"unknown domain '{args.domain}'; available: {sorted(specs)}"
            )
        spec = specs[args.domain]
        wave = synth_waveform(spec, args.class_id, stable_seed(seed, "preview"))
        mel = log_mel_spectrogram(
            wave, dsp_cfg, source_id=f"{spec.name}/class{args.class_id}"
        )
    batch = build_augmented_batch(
        mel, AugmentConfig(num_aug_views=args.views), seed=seed
    )
    views_path = os.path.join(args.out, "views.npy")
    np.save(views_path, batch.views)
    prov = [
        {"strategy": p.strategy, "params": p.params, "stream": p.stream}
        for p in batch.provenance
    ]
    prov_path = os.path.join(args.out, "provenance.json")
    with open(prov_path, "w", encoding="utf-8") as f:
        json.dump(
            {"source_id": mel.source_id, "shape": list(batch.views.shape),
             "original_index": batch.original_index, "views": prov},
            f, sort_keys=True, indent=2)
        f.write("\n")
    _say(args, f"wrote {batch.num_views} views to {views_path}")
    _say(args, f"provenance in {prov_path}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "zeroshot": _cmd_zeroshot,
    "adapt": _cmd_adapt,
    "ablate": _cmd_ablate,
    "grid": _cmd_grid,
    "gradcheck": _cmd_gradcheck,
    "augment-preview": _cmd_augment_preview,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TtadaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:  # console-script shim
    sys.exit(main())


if __name__ == "__main__":
    entry()
