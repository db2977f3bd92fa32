"""Masking and reordering augmentations over log-mel spectrograms.

Four strategies: time masking (stripe widths 2-128), frequency masking
(widths 2-32), their composition, and time reorder (segment shuffle).
Stripe counts range over 2-24. A batch of M views is the augmented views
plus the untouched original, each view reproducible in isolation from its
provenance record.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .dsp import MelSpectrogram
from .errors import ValidationError
from .seeding import make_rng

STRATEGY_CYCLE = ("time_mask", "freq_mask", "time_freq_mask", "time_reorder")

ArrayLike = Union[MelSpectrogram, np.ndarray]


@dataclass(frozen=True)
class AugmentConfig:
    tm_width: tuple[int, int] = (2, 128)
    tm_stripes: tuple[int, int] = (2, 24)
    fm_width: tuple[int, int] = (2, 32)
    fm_stripes: tuple[int, int] = (2, 24)
    tr_segments: tuple[int, int] = (2, 8)
    num_aug_views: int = 50
    mask_fill: float = 0.0

    def __post_init__(self):
        for name in ("tm_width", "tm_stripes", "fm_width", "fm_stripes", "tr_segments"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ValidationError(f"{name} range [{lo}, {hi}] invalid")
        if self.num_aug_views < 1:
            raise ValidationError(
                f"num_aug_views must be >= 1, got {self.num_aug_views}"
            )


@dataclass
class ViewProvenance:
    """What produced one view: strategy, sampled parameters, RNG substream."""

    strategy: str
    params: dict
    stream: dict


@dataclass
class AugmentedBatch:
    """M views of one spectrogram; the last view is the pristine original."""

    views: np.ndarray
    provenance: list[ViewProvenance]
    original_index: int

    @property
    def num_views(self) -> int:
        return self.views.shape[0]


def _frames(x: ArrayLike) -> np.ndarray:
    if isinstance(x, MelSpectrogram):
        return x.frames
    return np.asarray(x, dtype=np.float64)


def _sample_stripes(axis_len, width_range, stripe_range, rng):
    count = int(rng.integers(stripe_range[0], stripe_range[1] + 1))
    stripes = []
    for _ in range(count):
        width = int(rng.integers(width_range[0], width_range[1] + 1))
        span = min(width, axis_len)
        start = int(rng.integers(0, axis_len - span + 1))
        stripes.append({"start": start, "width": width, "span": span})
    return stripes


def _apply_stripes(frames, stripes, axis, fill):
    out = frames.copy()
    for s in stripes:
        if axis == 0:
            out[s["start"] : s["start"] + s["span"], :] = fill
        else:
            out[:, s["start"] : s["start"] + s["span"]] = fill
    return out


def time_mask(x: ArrayLike, rng: np.random.Generator, cfg: AugmentConfig | None = None):
    """Zero random column stripes along the time axis; widths clamp to T."""
    cfg = cfg or AugmentConfig()
    frames = _frames(x)
    stripes = _sample_stripes(frames.shape[0], cfg.tm_width, cfg.tm_stripes, rng)
    params = {"axis": "time", "stripes": stripes, "fill": cfg.mask_fill}
    return _apply_stripes(frames, stripes, 0, cfg.mask_fill), params


def freq_mask(x: ArrayLike, rng: np.random.Generator, cfg: AugmentConfig | None = None):
    """Zero random row stripes along the frequency axis; widths clamp to F."""
    cfg = cfg or AugmentConfig()
    frames = _frames(x)
    stripes = _sample_stripes(frames.shape[1], cfg.fm_width, cfg.fm_stripes, rng)
    params = {"axis": "freq", "stripes": stripes, "fill": cfg.mask_fill}
    return _apply_stripes(frames, stripes, 1, cfg.mask_fill), params


def time_freq_mask(
    x: ArrayLike, rng: np.random.Generator, cfg: AugmentConfig | None = None
):
    """Time masking followed by frequency masking, both recorded."""
    cfg = cfg or AugmentConfig()
    masked, tm_params = time_mask(x, rng, cfg)
    out, fm_params = freq_mask(masked, rng, cfg)
    return out, {"time": tm_params, "freq": fm_params}


def time_reorder(
    x: ArrayLike, rng: np.random.Generator, cfg: AugmentConfig | None = None
):
    """Split the time axis into segments and permute them.

    The frame multiset is preserved exactly; the recorded cuts and
    permutation reconstruct either direction bit-for-bit.
    """
    cfg = cfg or AugmentConfig()
    frames = _frames(x)
    t = frames.shape[0]
    segments = int(rng.integers(cfg.tr_segments[0], cfg.tr_segments[1] + 1))
    segments = min(segments, t)
    if segments > 1:
        cuts = sorted(
            int(c) for c in rng.choice(np.arange(1, t), size=segments - 1, replace=False)
        )
    else:
        cuts = []
    perm = [int(p) for p in rng.permutation(segments)]
    params = {"cuts": cuts, "perm": perm}
    return _reorder(frames, cuts, perm), params


def _reorder(frames, cuts, perm):
    pieces = np.split(frames, cuts)
    return np.concatenate([pieces[p] for p in perm], axis=0)


def invert_time_reorder(view: np.ndarray, params: dict) -> np.ndarray:
    """Undo a recorded time reorder, recovering the original frame order."""
    src_lengths = np.diff([0, *params["cuts"], view.shape[0]])
    out_cuts = np.cumsum([src_lengths[p] for p in params["perm"]])[:-1]
    inverse = np.argsort(params["perm"])
    return _reorder(view, [int(c) for c in out_cuts], [int(p) for p in inverse])


def replay(x: ArrayLike, prov: ViewProvenance) -> np.ndarray:
    """Recompute a view from its provenance record alone."""
    frames = _frames(x)
    if prov.strategy == "original":
        return frames.copy()
    if prov.strategy in ("time_mask", "freq_mask"):
        p = prov.params
        return _apply_stripes(
            frames, p["stripes"], 0 if p["axis"] == "time" else 1, p["fill"]
        )
    if prov.strategy == "time_freq_mask":
        tm, fm = prov.params["time"], prov.params["freq"]
        masked = _apply_stripes(frames, tm["stripes"], 0, tm["fill"])
        return _apply_stripes(masked, fm["stripes"], 1, fm["fill"])
    if prov.strategy == "time_reorder":
        return _reorder(frames, prov.params["cuts"], prov.params["perm"])
    raise ValidationError(f"unknown strategy '{prov.strategy}'")


_APPLY = {
    "time_mask": time_mask,
    "freq_mask": freq_mask,
    "time_freq_mask": time_freq_mask,
    "time_reorder": time_reorder,
}


def build_augmented_batch(
    x: ArrayLike, cfg: AugmentConfig, seed: int
) -> AugmentedBatch:
    """num_aug_views views cycling TM, FM, TFM, TR, plus the original last.

    Each view's generator is derived from (seed, view_index), so any single
    view can be regenerated in isolation and views may be produced in any
    order (or concurrently) without changing the result.
    """
    frames = _frames(x)
    m = cfg.num_aug_views + 1
    views = np.empty((m, *frames.shape), dtype=np.float64)
    provenance = []
    for i in range(cfg.num_aug_views):
        strategy = STRATEGY_CYCLE[i % len(STRATEGY_CYCLE)]
        rng = make_rng(seed, i)
        view, params = _APPLY[strategy](frames, rng, cfg)
        views[i] = view
        provenance.append(ViewProvenance(strategy, params, {"seed": seed, "view": i}))
    views[-1] = frames.copy()
    provenance.append(
        ViewProvenance("original", {}, {"seed": seed, "view": cfg.num_aug_views})
    )
    return AugmentedBatch(views, provenance, original_index=cfg.num_aug_views)
