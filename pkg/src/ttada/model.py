"""Toy frozen two-tower contrastive audio-text model.

Audio branch: time-pooled mel frames -> two-layer MLP -> projection.
Text branch: token embeddings (with an optional learnable prompt prepended)
-> mean pool -> one-hidden-layer MLP -> projection. Both outputs are
L2-normalized and compared by temperature-scaled cosine similarity, so
zero-shot classification is an argmax over class-name embeddings. During
adaptation every weight tensor stays frozen; only the prompt (the domain
vector) receives gradients.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .augment import AugmentedBatch
from .errors import FormatError, ValidationError
from .optim import AdamState, adamw_update
from .seeding import make_rng, stable_seed
from .tensor import Tape, Tensor, backward

WEIGHTS_MAGIC = b"TTADAW01"

INIT_STD = 0.02
DEFAULT_TEMPERATURE = 0.07


@dataclass(frozen=True)
class ModelDims:
    d: int = 768
    h: int = 256
    audio_bins: int = 64

    def __post_init__(self):
        if min(self.d, self.h, self.audio_bins) < 1:
            raise ValidationError(f"model dims must be positive, got {self}")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list; ids are dense, pad=0 and unknown=1."""

    tokens: tuple[str, ...]

    PAD = "<pad>"
    UNK = "<unk>"

    def __post_init__(self):
        if self.tokens[:2] != (self.PAD, self.UNK):
            raise ValidationError("vocabulary must start with <pad>, <unk>")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_ids", {tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        words = sorted({w for text in texts for w in text.lower().split()})
        return cls((cls.PAD, cls.UNK, *words))

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._ids.get(word, self.unk_id)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercase whitespace tokenization; unknown words map to <unk>."""
    return [vocab.id_of(w) for w in text.lower().split()]


@dataclass(frozen=True)
class ClassPromptSet:
    """The class names to classify into, tokenized once."""

    class_names: tuple[str, ...]
    token_ids: tuple[tuple[int, ...], ...]

    @classmethod
    def build(cls, names, vocab: Vocabulary) -> "ClassPromptSet":
        names = tuple(names)
        if not names:
            raise ValidationError("empty class list")
        ids = []
        for name in names:
            seq = tuple(tokenize(name, vocab))
            if not seq:
                raise ValidationError(f"class name '{name}' tokenizes to nothing")
            ids.append(seq)
        return cls(names, tuple(ids))

    def __len__(self) -> int:
        return len(self.class_names)


@dataclass
class DomainVector:
    """k x d learnable soft prompt; the only parameter adapted at test time."""

    value: Tensor

    @property
    def k(self) -> int:
        return self.value.shape[0]

    @classmethod
    def random(cls, k: int, d: int, seed: int) -> "DomainVector":
        if k < 1:
            raise ValidationError(f"domain vector needs k >= 1 tokens, got {k}")
        rng = make_rng(stable_seed(seed, "domain-vector"))
        return cls(Tensor(rng.normal(0.0, INIT_STD, size=(k, d)), requires_grad=True))


_TENSOR_FIELDS = (
    "token_embedding",
    "text_w1",
    "text_b1",
    "text_w2",
    "text_b2",
    "audio_w1",
    "audio_b1",
    "audio_w2",
    "audio_b2",
    "text_proj",
    "audio_proj",
)


@dataclass
class ModelWeights:
    vocab: Vocabulary
    dims: ModelDims
    token_embedding: Tensor
    text_w1: Tensor
    text_b1: Tensor
    text_w2: Tensor
    text_b2: Tensor
    audio_w1: Tensor
    audio_b1: Tensor
    audio_w2: Tensor
    audio_b2: Tensor
    text_proj: Tensor
    audio_proj: Tensor
    temperature: float = DEFAULT_TEMPERATURE
    positional_pooling: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in _TENSOR_FIELDS}

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors().values():
            t.requires_grad = flag
            t.grad = None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in self.tensors().items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        h.update(struct.pack("<d", self.temperature))
        return h.hexdigest()


def init_weights(
    seed: int, dims: ModelDims, vocab: Vocabulary, positional_pooling: bool = False
) -> ModelWeights:
    """Gaussian(0, 0.02) weights, deterministic per seed; temperature 0.07."""
    rng = make_rng(stable_seed(seed, "init-weights"))

    def g(rows, cols):
        return Tensor(rng.normal(0.0, INIT_STD, size=(rows, cols)))

    d, h, f = dims.d, dims.h, dims.audio_bins
    return ModelWeights(
        vocab=vocab,
        dims=dims,
        token_embedding=g(len(vocab), d),
        text_w1=g(d, h),
        text_b1=g(1, h),
        text_w2=g(h, d),
        text_b2=g(1, d),
        audio_w1=g(f, h),
        audio_b1=g(1, h),
        audio_w2=g(h, d),
        audio_b2=g(1, d),
        text_proj=g(d, d),
        audio_proj=g(d, d),
        positional_pooling=positional_pooling,
    )


# ---------------------------------------------------------------------------
# Encoders


def _affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # Bias via an explicit ones-column product; no implicit broadcasting.
    ones = Tensor(np.ones((x.shape[0], 1)))
    return tc.add(tc.matmul(x, weight), tc.matmul(ones, bias))


def _text_tower(
    token_seqs, dv: DomainVector | None, w: ModelWeights
) -> Tensor:
    """Per-sequence pooled embedding -> MLP -> projection, rows normalized."""
    if not token_seqs:
        raise ValidationError("no token sequences to encode")
    rows = None
    for ids in token_seqs:
        emb = tc.gather_rows(w.token_embedding, ids)
        if dv is not None:
            emb = tc.concat_rows(dv.value, emb)
        pooled = tc.mean_rows(emb)
        rows = pooled if rows is None else tc.concat_rows(rows, pooled)
    hidden = tc.tanh_elem(_affine(rows, w.text_w1, w.text_b1))
    feats = _affine(hidden, w.text_w2, w.text_b2)
    return tc.l2_normalize_rows(tc.matmul(feats, w.text_proj))


def _audio_tower(pooled: Tensor, w: ModelWeights) -> Tensor:
    """Pooled mel features -> MLP -> projection, rows normalized."""
    hidden = tc.tanh_elem(_affine(pooled, w.audio_w1, w.audio_b1))
    feats = _affine(hidden, w.audio_w2, w.audio_b2)
    return tc.l2_normalize_rows(tc.matmul(feats, w.audio_proj))


def text_encode(
    classes: ClassPromptSet, dv: DomainVector | None, w: ModelWeights
) -> Tensor:
    """d x N class-text embeddings; differentiable w.r.t. the domain vector."""
    if len(classes) == 0:
        raise ValidationError("empty class list")
    return tc.transpose(_text_tower(classes.token_ids, dv, w))


def pool_views(views: np.ndarray, positional: bool = False) -> np.ndarray:
    """Collapse each T x F view to a standardized F-vector by time pooling.

    Each pooled vector is standardized across mel bins (per-clip mean/scale
    removal), so the encoder keys on spectral shape rather than absolute
    level. Plain mean pooling is permutation-invariant over frames, which
    makes the time-reorder augmentation a no-op for this encoder; positional
    weighting (a fixed linear ramp) is the opt-in escape hatch.
    """
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 3:
        raise ValidationError(f"expected M x T x F views, got shape {views.shape}")
    if positional:
        t = views.shape[1]
        ramp = np.linspace(0.5, 1.5, t)
        ramp /= ramp.sum()
        pooled = np.einsum("mtf,t->mf", views, ramp)
    else:
        pooled = views.mean(axis=1)
    center = pooled - pooled.mean(axis=1, keepdims=True)
    return center / (center.std(axis=1, keepdims=True) + 1e-8)


def encode_views(views: np.ndarray, w: ModelWeights) -> Tensor:
    return _audio_tower(Tensor(pool_views(views, w.positional_pooling)), w)


def audio_encode(batch: AugmentedBatch, w: ModelWeights) -> Tensor:
    """M x d embeddings of all views; a frozen, gradient-free path."""
    return encode_views(batch.views, w)


def class_logits(v: Tensor, u: Tensor, w: ModelWeights) -> Tensor:
    """Temperature-scaled cosine logits turned into per-view distributions."""
    return tc.softmax_rows(tc.scale(tc.matmul(v, u), 1.0 / w.temperature))


# ---------------------------------------------------------------------------
# Weight file format
#
# magic "TTADAW01" | uint32-LE header length | JSON header | raw f32 LE data.
# The header lists tensor names/shapes/dtype/offsets (offsets into the data
# section) plus the ordered vocabulary and scalar metadata.


def save_weights(w: ModelWeights, path: str) -> None:
    entries = []
    blobs = []
    offset = 0
    tensors = dict(w.tensors())
    tensors["temperature"] = Tensor([[w.temperature]])
    for name, t in tensors.items():
        blob = t.data.astype("<f4").tobytes()
        entries.append(
            {"name": name, "shape": list(t.shape), "dtype": "f32", "offset": offset}
        )
        blobs.append(blob)
        offset += len(blob)
    header = {
        "dims": {"d": w.dims.d, "h": w.dims.h, "audio_bins": w.dims.audio_bins},
        "positional_pooling": w.positional_pooling,
        "tensors": entries,
        "vocab": list(w.vocab.tokens),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_weights(path: str) -> ModelWeights:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != WEIGHTS_MAGIC:
        raise FormatError(
            f"{path}: bad magic {raw[:8]!r} (expected {WEIGHTS_MAGIC!r})"
        )
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated before header length")
    (header_len,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header ({e})") from e
    data = raw[12 + header_len :]

    loaded: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        name = entry.get("name", "<unnamed>")
        shape, dtype, off = entry.get("shape"), entry.get("dtype"), entry.get("offset")
        if not isinstance(shape, list) or not isinstance(off, int):
            raise FormatError(f"{path}: malformed entry for tensor '{name}'")
        if dtype != "f32":
            raise FormatError(f"{path}: tensor '{name}' has unsupported dtype '{dtype}'")
        count = int(np.prod(shape)) if shape else 1
        end = off + 4 * count
        if off < 0 or end > len(data):
            raise FormatError(f"{path}: truncated data for tensor '{name}'")
        values = np.frombuffer(data[off:end], dtype="<f4").astype(np.float64)
        loaded[name] = values.reshape(shape)

    missing = [n for n in (*_TENSOR_FIELDS, "temperature") if n not in loaded]
    if missing:
        raise FormatError(f"{path}: missing tensors {missing}")
    dims = ModelDims(**header["dims"])
    vocab = Vocabulary(tuple(header["vocab"]))
    return ModelWeights(
        vocab=vocab,
        dims=dims,
        temperature=float(loaded["temperature"][0, 0]),
        positional_pooling=bool(header.get("positional_pooling", False)),
        **{name: Tensor(loaded[name]) for name in _TENSOR_FIELDS},
    )


# ---------------------------------------------------------------------------
# Contrastive pretraining


def _prepare_pairs(pairs, w: ModelWeights):
    pooled = np.stack(
        [pool_views(mel.frames[None], w.positional_pooling)[0] for mel, _ in pairs]
    )
    unique_texts = sorted({text for _, text in pairs})
    token_seqs = [tokenize(text, w.vocab) for text in unique_texts]
    index_map = [unique_texts.index(text) for _, text in pairs]
    return Tensor(pooled), token_seqs, index_map


def _contrastive_forward(audio_feats, token_seqs, index_map, w) -> Tensor:
    """Symmetric InfoNCE over in-batch negatives on normalized embeddings."""
    b = audio_feats.shape[0]
    a = _audio_tower(audio_feats, w)
    t_unique = _text_tower(token_seqs, None, w)
    t = tc.gather_rows(t_unique, index_map)
    logits = tc.scale(tc.matmul(a, tc.transpose(t)), 1.0 / w.temperature)
    eye = Tensor(np.eye(b))
    half = []
    for p in (tc.softmax_rows(logits), tc.softmax_rows(tc.transpose(logits))):
        picked = tc.mul_elem(eye, tc.log_elem(tc.clamp_min(p, 1e-300)))
        half.append(tc.neg(tc.scale(tc.sum_all(picked), 1.0 / b)))
    return tc.scale(tc.add(half[0], half[1]), 0.5)


def contrastive_loss(pairs, w: ModelWeights) -> float:
    """Forward-only InfoNCE loss of (MelSpectrogram, text) pairs under ``w``."""
    if len(pairs) < 2:
        raise ValidationError("contrastive loss needs at least 2 pairs per batch")
    feats, token_seqs, index_map = _prepare_pairs(pairs, w)
    return _contrastive_forward(feats, token_seqs, index_map, w).item()


def contrastive_pretrain(
    pairs,
    epochs: int,
    seed: int,
    dims: ModelDims | None = None,
    lr: float = 1e-2,
    positional_pooling: bool = False,
) -> ModelWeights:
    """Full-batch contrastive training of fresh weights on audio-text pairs.

    Returns frozen weights. Deterministic per (pairs, epochs, seed).
    """
    if len(pairs) < 2:
        raise ValidationError("contrastive pretraining needs at least 2 pairs per batch")
    mel_bins = pairs[0][0].config.mel_bins
    dims = dims or ModelDims(d=64, h=64, audio_bins=mel_bins)
    if dims.audio_bins != mel_bins:
        raise ValidationError(
            f"dims.audio_bins {dims.audio_bins} != mel bins {mel_bins} of the pairs"
        )
    vocab = Vocabulary.from_texts([text for _, text in pairs])
    w = init_weights(seed, dims, vocab, positional_pooling=positional_pooling)
    feats, token_seqs, index_map = _prepare_pairs(pairs, w)

    w.set_trainable(True)
    states = {name: AdamState.for_tensor(t) for name, t in w.tensors().items()}
    for _ in range(epochs):
        tape = Tape()
        with tape:
            loss = _contrastive_forward(feats, token_seqs, index_map, w)
        backward(loss, tape)
        for name, t in w.tensors().items():
            if t.grad is not None:
                adamw_update(t, t.grad, states[name], lr=lr)
            t.grad = None
    w.set_trainable(False)
    return w


def in_batch_retrieval_accuracy(pairs, w: ModelWeights) -> float:
    """Fraction of audios whose best-matching text is their own pair."""
    feats, token_seqs, index_map = _prepare_pairs(pairs, w)
    a = _audio_tower(feats, w)
    t = tc.gather_rows(_text_tower(token_seqs, None, w), index_map)
    sims = a.data @ t.data.T
    return float(np.mean(np.argmax(sims, axis=1) == np.arange(len(pairs))))
