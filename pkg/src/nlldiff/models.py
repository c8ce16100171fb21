"""Token sequences, scored sequence models, and the toy training corpus.

A scored model maps a fixed-length sequence of token ids to its per-token
mean negative log-likelihood (nats per token).  All built-in models are
backed by a dense ``(context, token)`` log-probability table, which keeps
scoring deterministic, cheap, and safe to share across workers.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import PreconditionError

MODEL_FORMAT = "nlldiff-model-v1"


def sequence_id(tokens) -> str:
    """Stable content hash of a token sequence (16 hex chars)."""
    text = " ".join(str(int(t)) for t in tokens)
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


@dataclass(frozen=True)
class TokenSequence:
    """Immutable fixed-length sequence of non-negative token ids."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")

    @classmethod
    def of(cls, tokens) -> "TokenSequence":
        return cls(tuple(int(t) for t in tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def as_array(self) -> np.ndarray:
        return np.array(self.tokens, dtype=np.int64)

    @property
    def id(self) -> str:
        return sequence_id(self.tokens)


def _as_token_matrix(seqs) -> np.ndarray:
    arr = np.asarray(seqs, dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError(f"expected a (batch, seq_len) array, got shape {arr.shape}")
    return arr


class ScoredModel(ABC):
    """Deterministic map from token sequences to per-token mean NLL.

    Implementations must be immutable after construction: concurrent
    read-only scoring from any number of workers returns identical results,
    and repeated calls on the same sequence are bit-identical.
    """

    vocab_size: int
    seq_len: int

    @abstractmethod
    def score_batch(self, seqs: np.ndarray) -> np.ndarray:
        """Score a ``(batch, seq_len)`` int array, returning ``(batch,)`` NLLs."""

    def score_row(self, row: np.ndarray) -> float:
        """Fast scalar path for sampler hot loops.  No input validation."""
        return float(self.score_batch(np.asarray(row, dtype=np.int64)[None, :])[0])

    def score(self, seq) -> float:
        """Score one sequence, validating length and vocabulary."""
        if isinstance(seq, TokenSequence):
            row = seq.as_array()
        else:
            row = np.asarray(seq, dtype=np.int64)
        if row.ndim != 1 or row.shape[0] != self.seq_len:
            raise PreconditionError(
                f"sequence length {row.shape} does not match model seq_len={self.seq_len}"
            )
        if row.min() < 0 or row.max() >= self.vocab_size:
            raise PreconditionError(
                f"token ids must lie in [0, {self.vocab_size - 1}]"
            )
        return self.score_row(row)


class TableModel(ScoredModel):
    """Model scored from a dense (context, token) log-probability table.

    Contexts are the previous ``order - 1`` symbols encoded as an integer in
    base ``vocab_size + 1``; the extra symbol is a reserved begin-of-sequence
    marker that pads the first positions, so real token ids never collide
    with padding and the input space stays exactly ``vocab_size ** seq_len``.
    """

    def __init__(self, vocab_size: int, seq_len: int, order: int, log_probs: np.ndarray):
        if order < 1:
            raise ValueError("order must be >= 1")
        if vocab_size < 1 or seq_len < 1:
            raise ValueError("vocab_size and seq_len must be positive")
        if (vocab_size + 1) ** order >= 2**62:
            raise ValueError("context codes would overflow 64-bit integers")
        n_contexts = (vocab_size + 1) ** (order - 1)
        log_probs = np.asarray(log_probs, dtype=np.float64)
        if log_probs.shape != (n_contexts, vocab_size):
            raise ValueError(
                f"log_probs shape {log_probs.shape} != ({n_contexts}, {vocab_size})"
            )
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.order = order
        self.log_probs = log_probs
        self.log_probs.flags.writeable = False
        self._n_contexts = n_contexts
        # all-padding context; in base (V+1) that is the code with every digit = V
        self._start_context = n_contexts - 1

    def score_batch(self, seqs: np.ndarray) -> np.ndarray:
        seqs = _as_token_matrix(seqs)
        if seqs.shape[1] != self.seq_len:
            raise PreconditionError(
                f"sequences of length {seqs.shape[1]} do not match model seq_len={self.seq_len}"
            )
        if seqs.size and (seqs.min() < 0 or seqs.max() >= self.vocab_size):
            raise PreconditionError(f"token ids must lie in [0, {self.vocab_size - 1}]")
        base = self.vocab_size + 1
        ctx = np.full(seqs.shape[0], self._start_context, dtype=np.int64)
        total = np.zeros(seqs.shape[0], dtype=np.float64)
        # column-wise accumulation keeps the summation order identical to the
        # scalar path, so both return bit-identical values
        for t in range(self.seq_len):
            tok = seqs[:, t]
            total = total + self.log_probs[ctx, tok]
            ctx = (ctx * base + tok) % self._n_contexts
        return (-total) / self.seq_len

    def score_row(self, row: np.ndarray) -> float:
        lp = self.log_probs
        base = self.vocab_size + 1
        n_ctx = self._n_contexts
        ctx = self._start_context
        total = 0.0
        for t in range(self.seq_len):
            tok = row[t]
            total = total + lp[ctx, tok]
            ctx = (ctx * base + tok) % n_ctx
        return float((-total) / self.seq_len)


class NGramModel(TableModel):
    """Count-based n-gram model with additive smoothing.

    Conditionals are ``(count + alpha) / (context_total + alpha * V)``; with
    ``alpha > 0`` every probability is strictly positive, so scores are
    always finite.
    """

    def __init__(self, vocab_size: int, seq_len: int, order: int, alpha: float,
                 counts: np.ndarray):
        if alpha <= 0:
            raise ValueError("alpha must be > 0")
        counts = np.asarray(counts, dtype=np.int64)
        totals = counts.sum(axis=1, keepdims=True)
        log_probs = np.log(counts + alpha) - np.log(totals + alpha * vocab_size)
        super().__init__(vocab_size, seq_len, order, log_probs)
        self.alpha = float(alpha)
        self.counts = counts
        self.counts.flags.writeable = False


class UniformModel(TableModel):
    """Model assigning every sequence exactly ``log(vocab_size)`` nats/token."""

    def __init__(self, vocab_size: int, seq_len: int):
        log_probs = np.full((1, vocab_size), -np.log(vocab_size))
        super().__init__(vocab_size, seq_len, 1, log_probs)


class NoiseWrapper(TableModel):
    """A table model with Gaussian noise added to its log-probabilities.

    Each entry receives i.i.d. N(0, sigma^2) noise and every context row is
    renormalized, so the wrapper is again a valid model.  ``sigma = 0``
    reproduces the base table bit-exactly.
    """

    def __init__(self, base: TableModel, sigma: float, seed: int):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if sigma == 0:
            table = np.array(base.log_probs)
        else:
            rng = np.random.default_rng(seed)
            noisy = base.log_probs + rng.normal(0.0, sigma, size=base.log_probs.shape)
            table = noisy - logsumexp(noisy, axis=1, keepdims=True)
        super().__init__(base.vocab_size, base.seq_len, base.order, table)
        self.base = base
        self.sigma = float(sigma)
        self.seed = int(seed)


class OffsetModel(ScoredModel):
    """Wrapper adding a constant to every score of a base model."""

    def __init__(self, base: ScoredModel, offset: float):
        self.base = base
        self.offset = float(offset)
        self.vocab_size = base.vocab_size
        self.seq_len = base.seq_len

    def score_batch(self, seqs: np.ndarray) -> np.ndarray:
        return self.base.score_batch(seqs) + self.offset

    def score_row(self, row: np.ndarray) -> float:
        return self.base.score_row(row) + self.offset


def perturb(base: ScoredModel, sigma: float, seed: int) -> NoiseWrapper:
    """Perturb a table-backed model's log-probabilities with Gaussian noise."""
    if not isinstance(base, TableModel):
        raise PreconditionError(
            "perturb requires a model exposing a (context, token) log-probability table"
        )
    return NoiseWrapper(base, sigma, seed)


@dataclass(frozen=True)
class ModuloDataset:
    """Training sequences whose token sums are divisible by ``modulus``."""

    seq_len: int
    vocab_size: int
    modulus: int
    seed: int
    sequences: np.ndarray  # (count, seq_len) int64

    def __post_init__(self):
        seqs = self.sequences
        if seqs.ndim != 2 or seqs.shape[1] != self.seq_len:
            raise ValueError("sequences must be a (count, seq_len) array")
        if seqs.size:
            if seqs.min() < 0 or seqs.max() >= self.vocab_size:
                raise ValueError("token ids out of range")
            if (seqs.sum(axis=1) % self.modulus).any():
                raise ValueError("a sequence violates the modulo constraint")

    def __len__(self) -> int:
        return self.sequences.shape[0]

    def __iter__(self):
        for row in self.sequences:
            yield TokenSequence.of(row)


def modulo_population(seq_len: int, vocab_size: int, modulus: int) -> int:
    """Exact count of sequences in ``{0..V-1}^N`` with token sum divisible by K.

    Dynamic program over (positions remaining, residue); exact integer
    arithmetic throughout.
    """
    if modulus < 1:
        raise ValueError("modulus must be >= 1")
    return _suffix_ways(seq_len, vocab_size, modulus)[seq_len][0]


def _suffix_ways(seq_len: int, vocab_size: int, modulus: int) -> list[list[int]]:
    """ways[m][r] = number of length-m suffixes whose token sum is ≡ r (mod K)."""
    ways = [[0] * modulus for _ in range(seq_len + 1)]
    ways[0][0] = 1
    for m in range(1, seq_len + 1):
        prev = ways[m - 1]
        cur = ways[m]
        for r in range(modulus):
            total = 0
            for tok in range(vocab_size):
                total += prev[(r - tok) % modulus]
            cur[r] = total
    return ways


def generate_modulo_dataset(seq_len: int, vocab_size: int, modulus: int,
                            count: int, seed: int) -> ModuloDataset:
    """Draw ``count`` distinct sequences satisfying the modulo-sum constraint.

    The satisfying population is counted exactly, ``count`` distinct ranks are
    drawn without replacement, and each rank is unranked into the
    lexicographically ordered satisfying sequence it names.  Deterministic in
    ``seed`` and exact even when ``count`` nearly exhausts the population.
    """
    if seq_len < 1 or vocab_size < 1:
        raise ValueError("seq_len and vocab_size must be positive")
    if modulus < 1:
        raise ValueError("modulus must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    ways = _suffix_ways(seq_len, vocab_size, modulus)
    population = ways[seq_len][0]
    if count > population:
        raise PreconditionError(
            f"requested {count} sequences but only {population} satisfy "
            f"(sum mod {modulus} == 0) for seq_len={seq_len}, vocab_size={vocab_size}"
        )
    if population > 2**62:
        raise PreconditionError("population too large to unrank with 64-bit ranks")

    rng = np.random.default_rng(seed)
    ranks = rng.choice(population, size=count, replace=False).astype(np.int64)

    seqs = np.empty((count, seq_len), dtype=np.int64)
    residue = np.zeros(count, dtype=np.int64)
    remaining = ranks.copy()
    for pos in range(seq_len):
        m = seq_len - pos - 1
        # ways to finish after choosing token t at this position, given the
        # residue still needed: table[r, t] = ways[m][(r - t) mod K]
        r_grid = np.arange(modulus, dtype=np.int64)[:, None]
        t_grid = np.arange(vocab_size, dtype=np.int64)[None, :]
        table = np.asarray(ways[m], dtype=np.int64)[(r_grid - t_grid) % modulus]
        cum = np.cumsum(table, axis=1)
        rows = cum[residue]  # (count, V)
        tok = (remaining[:, None] >= rows).sum(axis=1)
        prev_cum = np.where(tok > 0,
                            np.take_along_axis(rows, np.maximum(tok - 1, 0)[:, None],
                                               axis=1)[:, 0],
                            0)
        remaining = remaining - prev_cum
        seqs[:, pos] = tok
        residue = (residue - tok) % modulus

    return ModuloDataset(seq_len=seq_len, vocab_size=vocab_size, modulus=modulus,
                         seed=seed, sequences=seqs)


def train_ngram(dataset: ModuloDataset, order: int, alpha: float) -> NGramModel:
    """Fit an additive-smoothing n-gram model to a dataset.

    The first ``order - 1`` positions are conditioned on begin-of-sequence
    padding, never on real token ids.
    """
    if len(dataset) == 0:
        raise PreconditionError("cannot train on an empty dataset")
    if order < 1:
        raise ValueError("order must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    vocab = dataset.vocab_size
    base = vocab + 1
    n_contexts = base ** (order - 1)
    counts = np.zeros((n_contexts, vocab), dtype=np.int64)
    seqs = dataset.sequences
    ctx = np.full(seqs.shape[0], n_contexts - 1, dtype=np.int64)
    for t in range(dataset.seq_len):
        tok = seqs[:, t]
        np.add.at(counts, (ctx, tok), 1)
        ctx = (ctx * base + tok) % n_contexts
    return NGramModel(vocab_size=vocab, seq_len=dataset.seq_len, order=order,
                      alpha=alpha, counts=counts)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _model_to_dict(model: ScoredModel) -> dict:
    if isinstance(model, NGramModel):
        nz = np.nonzero(model.counts)
        triples = [[int(c), int(t), int(model.counts[c, t])] for c, t in zip(*nz)]
        return {
            "type": "ngram",
            "vocab_size": model.vocab_size,
            "seq_len": model.seq_len,
            "order": model.order,
            "alpha": model.alpha,
            "counts": triples,
        }
    if isinstance(model, NoiseWrapper):
        return {
            "type": "noise",
            "sigma": model.sigma,
            "seed": model.seed,
            "base": _model_to_dict(model.base),
        }
    if isinstance(model, OffsetModel):
        return {
            "type": "offset",
            "offset": model.offset,
            "base": _model_to_dict(model.base),
        }
    if isinstance(model, UniformModel):
        return {
            "type": "uniform",
            "vocab_size": model.vocab_size,
            "seq_len": model.seq_len,
        }
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_dict(spec: dict) -> ScoredModel:
    kind = spec["type"]
    if kind == "ngram":
        base = spec["vocab_size"] + 1
        n_contexts = base ** (spec["order"] - 1)
        counts = np.zeros((n_contexts, spec["vocab_size"]), dtype=np.int64)
        for c, t, n in spec["counts"]:
            counts[c, t] = n
        return NGramModel(spec["vocab_size"], spec["seq_len"], spec["order"],
                          spec["alpha"], counts)
    if kind == "noise":
        return NoiseWrapper(_model_from_dict(spec["base"]), spec["sigma"], spec["seed"])
    if kind == "offset":
        return OffsetModel(_model_from_dict(spec["base"]), spec["offset"])
    if kind == "uniform":
        return UniformModel(spec["vocab_size"], spec["seq_len"])
    raise ValueError(f"unknown model type {kind!r}")


def save_model(model: ScoredModel, path) -> None:
    payload = {"format": MODEL_FORMAT}
    payload.update(_model_to_dict(model))
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path) -> ScoredModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a recognized model file")
    return _model_from_dict(payload)
