"""Test-time adaptation: average augmented-view predictions, minimize their
self-entropy, update only the domain vector with AdamW.

One adaptation call owns a fresh domain vector (initialized Gaussian(0, 0.02)
from the config seed) and never mutates the model weights. Per-audio
augmentation seeds are keyed by audio content, not list position, so the
multi-audio loss is invariant to input order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .augment import AugmentConfig, build_augmented_batch
from .dsp import MelSpectrogram
from .errors import ValidationError
from .model import (
    ClassPromptSet,
    DomainVector,
    ModelWeights,
    class_logits,
    encode_views,
    text_encode,
)
from .optim import AdamState, adamw_update
from .seeding import stable_seed
from .tensor import Tape, backward

ENTROPY_CLAMP = 1e-12


@dataclass(frozen=True)
class AdaptConfig:
    learning_rate: float = 5e-2
    steps: int = 1
    weight_decay: float = 0.0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    num_aug_views: int = 50
    seed: int = 0
    prompt_tokens: int = 1
    sequential: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if self.num_aug_views < 1:
            raise ValidationError(
                f"num_aug_views must be >= 1, got {self.num_aug_views}"
            )
        if self.prompt_tokens < 1:
            raise ValidationError(
                f"prompt_tokens must be >= 1, got {self.prompt_tokens}"
            )


@dataclass
class StepRecord:
    loss: float
    clamped_entries: int


@dataclass
class AdaptResult:
    domain_vector: DomainVector
    loss_trace: list[StepRecord]
    probs_before: list[np.ndarray]
    probs_after: list[np.ndarray]
    audio_digests: list[str]
    provenance_digest: str
    config: AdaptConfig

    def to_json_dict(self) -> dict:
        cfg = self.config
        return {
            "domain_vector": self.domain_vector.value.data.tolist(),
            "loss_trace": [
                {"loss": s.loss, "clamped_entries": s.clamped_entries}
                for s in self.loss_trace
            ],
            "config": {
                "learning_rate": cfg.learning_rate,
                "steps": cfg.steps,
                "weight_decay": cfg.weight_decay,
                "adam_betas": list(cfg.adam_betas),
                "adam_eps": cfg.adam_eps,
                "num_aug_views": cfg.num_aug_views,
                "seed": cfg.seed,
                "prompt_tokens": cfg.prompt_tokens,
                "sequential": cfg.sequential,
            },
            "audio_digests": self.audio_digests,
            "provenance_digest": self.provenance_digest,
        }


def average_probs(p: tc.Tensor) -> tc.Tensor:
    """Mean prediction over the M augmented views (still a distribution)."""
    return tc.mean_rows(p)


def self_entropy(p_avg: tc.Tensor) -> tc.Tensor:
    """-sum p * ln(max(p, 1e-12)); exact 0 for one-hot, ln N for uniform."""
    return tc.neg(
        tc.sum_all(tc.mul_elem(p_avg, tc.log_elem(tc.clamp_min(p_avg, ENTROPY_CLAMP))))
    )


def clamped_entries(p_avg: tc.Tensor) -> int:
    """How many entries the entropy clamp touched (recorded per step)."""
    return int(np.count_nonzero(p_avg.data < ENTROPY_CLAMP))


def adamw_step(
    dv: DomainVector, grad: np.ndarray, state: AdamState, cfg: AdaptConfig
) -> tuple[DomainVector, AdamState]:
    """Bias-corrected AdamW update of the domain vector, in place."""
    adamw_update(
        dv.value,
        grad,
        state,
        lr=cfg.learning_rate,
        betas=cfg.adam_betas,
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )
    return dv, state


def _audio_digest(mel: MelSpectrogram) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(mel.frames.shape, dtype=np.int64).tobytes())
    h.update(mel.frames.tobytes())
    return h.hexdigest()


def _provenance_digest(batches) -> str:
    payload = [
        [
            {"strategy": p.strategy, "params": p.params, "stream": p.stream}
            for p in batch.provenance
        ]
        for batch in batches
    ]
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _snapshot_probs(view_embeddings, classes, dv, w) -> list[np.ndarray]:
    u = text_encode(classes, dv, w)
    return [class_logits(v, u, w).data.copy() for v in view_embeddings]


def entropy_loss(
    view_embeddings, classes: ClassPromptSet, dv: DomainVector, w: ModelWeights
) -> tuple[tc.Tensor, int]:
    """Mean over audios of the self-entropy of their averaged predictions.

    ``view_embeddings`` is one M x d tensor per audio. Returns the scalar
    loss tensor and the number of clamped probability entries.
    """
    u = text_encode(classes, dv, w)
    total = None
    clamp_count = 0
    for v in view_embeddings:
        p_avg = average_probs(class_logits(v, u, w))
        clamp_count += clamped_entries(p_avg)
        ent = self_entropy(p_avg)
        total = ent if total is None else tc.add(total, ent)
    return tc.scale(total, 1.0 / len(view_embeddings)), clamp_count


def adapt(
    audios,
    classes: ClassPromptSet,
    w: ModelWeights,
    cfg: AdaptConfig,
    aug_cfg: AugmentConfig | None = None,
) -> AdaptResult:
    """Adapt a fresh domain vector on one or more unlabeled spectrograms.

    Joint mode (default) averages the per-audio entropies into one loss per
    step; sequential mode applies one update per audio per step. Weights are
    untouched either way.
    """
    audios = list(audios)
    if not audios:
        raise ValidationError("adapt needs at least one audio example")
    if len(classes) < 2:
        raise ValidationError("adapt needs at least 2 classes")
    aug = aug_cfg or AugmentConfig(num_aug_views=cfg.num_aug_views)

    # Canonical content order makes the result independent of list order.
    digests = [_audio_digest(a) for a in audios]
    order = sorted(range(len(audios)), key=lambda i: digests[i])
    audios = [audios[i] for i in order]
    digests = [digests[i] for i in order]

    batches = [
        build_augmented_batch(a, aug, stable_seed(cfg.seed, digest))
        for a, digest in zip(audios, digests)
    ]
    # The view embeddings are constant w.r.t. the domain vector: encode once.
    view_embeddings = [encode_views(b.views, w) for b in batches]

    dv = DomainVector.random(cfg.prompt_tokens, w.dims.d, cfg.seed)
    state = AdamState.for_tensor(dv.value)
    probs_before = _snapshot_probs(view_embeddings, classes, dv, w)

    trace: list[StepRecord] = []
    for _ in range(cfg.steps):
        if cfg.sequential:
            losses = []
            clamp_count = 0
            for v in view_embeddings:
                tape = Tape()
                with tape:
                    loss, clamped = entropy_loss([v], classes, dv, w)
                dv.value.zero_grad()
                backward(loss, tape)
                adamw_step(dv, dv.value.grad, state, cfg)
                losses.append(loss.item())
                clamp_count += clamped
            trace.append(StepRecord(float(np.mean(losses)), clamp_count))
        else:
            tape = Tape()
            with tape:
                loss, clamp_count = entropy_loss(view_embeddings, classes, dv, w)
            dv.value.zero_grad()
            backward(loss, tape)
            adamw_step(dv, dv.value.grad, state, cfg)
            trace.append(StepRecord(loss.item(), clamp_count))
    dv.value.zero_grad()

    return AdaptResult(
        domain_vector=dv,
        loss_trace=trace,
        probs_before=probs_before,
        probs_after=_snapshot_probs(view_embeddings, classes, dv, w),
        audio_digests=digests,
        provenance_digest=_provenance_digest(batches),
        config=cfg,
    )


def zero_shot_classify(
    audio: MelSpectrogram,
    classes: ClassPromptSet,
    w: ModelWeights,
    dv: DomainVector | None = None,
) -> tuple[int, np.ndarray]:
    """Classify one un-augmented spectrogram; ties break to the lowest index.

    With ``dv`` absent the prompt is omitted entirely (pure zero-shot).
    """
    v = encode_views(audio.frames[None], w)
    u = text_encode(classes, dv, w)
    probs = class_logits(v, u, w).data[0]
    return int(np.argmax(probs)), probs
