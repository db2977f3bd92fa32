"""End-to-end verification that backprop through the adaptation loss matches
central finite differences, over randomized model/batch configurations."""

from __future__ import annotations

from .adapt import entropy_loss
from .augment import AugmentConfig, build_augmented_batch
from .model import (
    ClassPromptSet,
    DomainVector,
    ModelDims,
    Vocabulary,
    encode_views,
    init_weights,
)
from .seeding import make_rng, stable_seed
from .tensor import Tape, backward, finite_diff_grad, max_relative_error

VIEW_COUNTS = (3, 5, 11)
CLASS_COUNTS = (2, 4, 7)
EMBED_DIMS = (8, 16)


def gradient_check_sweep(
    num_configs: int = 20, seed: int = 0, eps: float = 1e-5
) -> list[dict]:
    """Compare analytic and finite-difference gradients of the loss w.r.t.
    the domain vector across randomized configurations.

    Cycles the (M, N, d) cross product; configurations beyond it rerun with
    a 2-token prompt. Returns one record per configuration with the
    max relative error.
    """
    combos = [
        (m, n, d) for m in VIEW_COUNTS for n in CLASS_COUNTS for d in EMBED_DIMS
    ]
    results = []
    for idx in range(num_configs):
        m, n, d = combos[idx % len(combos)]
        k = 1 + idx // len(combos)
        rng = make_rng(stable_seed(seed, "gradcheck", idx))
        t_frames, f_bins = 40, 12
        frames = rng.uniform(-2.0, 2.0, size=(t_frames, f_bins))
        names = [f"class{c} kind{c % 3}" for c in range(n)]
        vocab = Vocabulary.from_texts(names)
        w = init_weights(
            int(rng.integers(1 << 31)),
            ModelDims(d=d, h=d, audio_bins=f_bins),
            vocab,
        )
        # Fresh Gaussian(0, 0.02) weights put the loss at its flat entropy
        # maximum where finite differences drown in cancellation noise;
        # scale to a generic position with a healthy gradient.
        for t in w.tensors().values():
            t.data *= 20.0
        classes = ClassPromptSet.build(names, vocab)
        batch = build_augmented_batch(
            frames, AugmentConfig(num_aug_views=m - 1), seed=stable_seed(seed, idx)
        )
        v = encode_views(batch.views, w)
        dv = DomainVector.random(k, d, seed=stable_seed(seed, "dv", idx))
        dv.value.data *= 20.0

        tape = Tape()
        with tape:
            loss, _ = entropy_loss([v], classes, dv, w)
        backward(loss, tape)
        analytic = dv.value.grad.copy()

        def objective(probe):
            value, _ = entropy_loss([v], classes, DomainVector(probe), w)
            return value.item()

        numeric = finite_diff_grad(objective, dv.value, eps)
        results.append(
            {
                "config": {"M": m, "N": n, "d": d, "k": k},
                "loss": loss.item(),
                "max_rel_err": max_relative_error(analytic, numeric.data),
            }
        )
    return results


def worst_error(results: list[dict]) -> float:
    return max(r["max_rel_err"] for r in results)
