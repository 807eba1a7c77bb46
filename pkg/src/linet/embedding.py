"""Date, store and item embeddings plus the sentence-vector utilities.

Lookup tables stand in for a pretrained text encoder: every calendar field
and entity id owns a learnable row. Mean pooling, cosine similarity and
the CoSENT ranking loss are provided as standalone differentiable ops so
that externally produced vectors can be pooled and fitted the same way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DataError
from .tensor import Tensor

CALENDAR_FIELDS = ("day_of_week", "day_of_month", "month", "hour")
CALENDAR_SIZES = (7, 31, 12, 24)

_TS_RE = re.compile(
    r"^(?P<year>\d{4})-(?P<month>\d{1,2})-(?P<day>\d{1,2})"
    r"(?:[T ](?P<hour>\d{1,2})(?::(?P<minute>\d{2})(?::(?P<second>\d{2})(?:\.\d+)?)?)?)?$"
)


class TimestampError(DataError):
    def __init__(self, text: str, position: int, reason: str):
        super().__init__(f"cannot parse timestamp {text!r} at position {position}: {reason}")
        self.text = text
        self.position = position


@dataclass(frozen=True)
class CalendarFeatures:
    day_of_week: int  # Monday = 0
    day_of_month: int
    month: int
    hour: int = 0

    def __post_init__(self):
        for name, lo, hi in (("day_of_week", 0, 6), ("day_of_month", 1, 31),
                             ("month", 1, 12), ("hour", 0, 23)):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def indices(self) -> tuple[int, int, int, int]:
        """Zero-based row indices into the four calendar tables."""
        return (self.day_of_week, self.day_of_month - 1, self.month - 1, self.hour)


def _days_in_month(year: int, month: int) -> int:
    if month == 2:
        leap = year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)
        return 29 if leap else 28
    return 30 if month in (4, 6, 9, 11) else 31


def _weekday(year: int, month: int, day: int) -> int:
    # Sakamoto's method gives Sunday = 0; shift so Monday = 0
    offsets = (0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4)
    y = year - (month < 3)
    sunday0 = (y + y // 4 - y // 100 + y // 400 + offsets[month - 1] + day) % 7
    return (sunday0 + 6) % 7


def calendar_features(timestamp: str) -> CalendarFeatures:
    """Parse an ISO-8601 date or datetime into proleptic-Gregorian fields."""
    text = timestamp.strip()
    m = _TS_RE.match(text)
    if m is None:
        pos = 0
        while pos < len(text) and pos < 10 and (text[pos].isdigit() or text[pos] == "-"):
            pos += 1
        raise TimestampError(text, pos, "expected YYYY-MM-DD[ HH[:MM[:SS]]]")
    year, month, day = int(m["year"]), int(m["month"]), int(m["day"])
    if not 1 <= month <= 12:
        raise TimestampError(text, m.start("month"), f"month {month} out of range")
    if not 1 <= day <= _days_in_month(year, month):
        raise TimestampError(text, m.start("day"), f"day {day} out of range for {year}-{month:02d}")
    hour = int(m["hour"]) if m["hour"] is not None else 0
    if hour > 23:
        raise TimestampError(text, m.start("hour"), f"hour {hour} out of range")
    if m["minute"] is not None and int(m["minute"]) > 59:
        raise TimestampError(text, m.start("minute"), "minute out of range")
    if m["second"] is not None and int(m["second"]) > 59:
        raise TimestampError(text, m.start("second"), "second out of range")
    return CalendarFeatures(_weekday(year, month, day), day, month, hour)


class EmbeddingTable:
    """Learnable [vocab_size, dim] lookup table."""

    def __init__(self, vocab_size: int, dim: int = 32, rng: np.random.Generator | None = None,
                 dtype=np.float64, std: float = 0.02, name: str = "table"):
        if vocab_size < 1 or dim < 1:
            raise ConfigError("embedding table needs positive vocab_size and dim")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.rows = Tensor(rng.normal(0.0, std, size=(vocab_size, dim)).astype(dtype),
                           requires_grad=True, name=name)

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def lookup(self, index) -> Tensor:
        idx = np.asarray(index)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab_size):
            raise IndexError(f"lookup index outside [0, {self.vocab_size})")
        return tn.take_rows(self.rows, idx)


def embed_calendar_indices(index: np.ndarray, tables: Sequence[Tensor]) -> Tensor:
    """Sum of the four field lookups; ``index`` has trailing axis of size 4."""
    index = np.asarray(index)
    if index.shape[-1] != len(tables):
        raise ConfigError(f"expected {len(tables)} calendar fields, got {index.shape[-1]}")
    dims = {t.shape[1] for t in tables}
    if len(dims) != 1:
        raise ConfigError("calendar tables must share one embedding dim")
    out = tn.take_rows(tables[0], index[..., 0])
    for i in range(1, len(tables)):
        out = out + tn.take_rows(tables[i], index[..., i])
    return out


def embed_calendar(f: CalendarFeatures, tables: Sequence[Tensor]) -> Tensor:
    """Embedding vector [d] of one timestamp's calendar fields."""
    row = embed_calendar_indices(np.asarray([f.indices()]), tables)
    return tn.reshape(row, (tables[0].shape[1],))


def mean_pool(tokens: Tensor) -> Tensor:
    """Average the L token vectors of an [L, D] matrix into one [D] vector."""
    if tokens.ndim != 2:
        raise ConfigError(f"mean_pool expects [L, D], got {tokens.shape}")
    if tokens.shape[0] == 0:
        raise ValueError("mean_pool needs at least one token")
    return tn.mean(tokens, axis=0)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u||v|) as a differentiable scalar."""
    if u.shape != v.shape or u.ndim != 1:
        raise ConfigError(f"cosine needs two [d] vectors, got {u.shape} and {v.shape}")
    uu = float(np.dot(u.data, u.data))
    vv = float(np.dot(v.data, v.data))
    if uu == 0.0 or vv == 0.0:
        raise ValueError("cosine is undefined for a zero vector")
    dot = tn.sum(u * v)
    norm = tn.sqrt(tn.sum(u * u)) * tn.sqrt(tn.sum(v * v))
    return tn.div(dot, norm)


@dataclass
class PairBatch:
    vectors: list[Tensor]
    pos_pairs: list[tuple[int, int]]
    neg_pairs: list[tuple[int, int]]
    lam: float = 20.0

    def __post_init__(self):
        n = len(self.vectors)
        for i, j in list(self.pos_pairs) + list(self.neg_pairs):
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigError(f"pair ({i}, {j}) indexes outside {n} vectors")
        pos = {frozenset(p) for p in self.pos_pairs}
        if any(frozenset(p) in pos for p in self.neg_pairs):
            raise ConfigError("a pair cannot be both positive and negative")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")


def _stack_scalars(values: list[Tensor]) -> Tensor:
    return tn.concat_lastdim([tn.reshape(v, (1,)) for v in values])


def cosent_loss(batch: PairBatch) -> Tensor:
    """log(1 + sum over (pos, neg) of exp(lam * (cos_neg - cos_pos)))."""
    if not batch.pos_pairs or not batch.neg_pairs:
        dtype = batch.vectors[0].dtype if batch.vectors else np.float64
        return Tensor(np.zeros((), dtype=dtype))
    vec = batch.vectors
    cos_pos = _stack_scalars([cosine(vec[i], vec[j]) for i, j in batch.pos_pairs])
    cos_neg = _stack_scalars([cosine(vec[k], vec[l]) for k, l in batch.neg_pairs])
    n_pos, n_neg = len(batch.pos_pairs), len(batch.neg_pairs)
    ones_pos = Tensor(np.ones((n_pos, 1), dtype=cos_pos.dtype))
    ones_neg = Tensor(np.ones((1, n_neg), dtype=cos_pos.dtype))
    # [n_pos, n_neg] grid of cos_neg[l] - cos_pos[i]
    grid = tn.matmul(ones_pos, tn.reshape(cos_neg, (1, n_neg))) - \
        tn.matmul(tn.reshape(cos_pos, (n_pos, 1)), ones_neg)
    return tn.log1p_sum_exp(tn.reshape(grid * batch.lam, (n_pos * n_neg,)))


def fit_cosent(vectors: np.ndarray, pos_pairs, neg_pairs, lam: float = 20.0,
               steps: int = 200, lr: float = 1e-2, weight_decay: float = 0.0) -> np.ndarray:
    """Adjust a set of vectors so positive pairs out-rank negative pairs in cosine."""
    from .optim import AdamW

    rows = [Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=f"v{i}")
            for i, v in enumerate(vectors)]
    opt = AdamW({r.name: r for r in rows}, lr=lr, weight_decay=weight_decay)
    for _ in range(steps):
        opt.zero_grad()
        cosent_loss(PairBatch(rows, list(pos_pairs), list(neg_pairs), lam)).backward()
        opt.step()
    return np.stack([r.data for r in rows])


# -- precomputed vectors --------------------------------------------------

@dataclass
class PrecomputedEmbeddings:
    """Vectors read from a ``key<TAB>v1,v2,...`` text file."""

    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return next(iter(self.vectors.values())).shape[0] if self.vectors else 0

    @classmethod
    def load(cls, path: str | Path) -> "PrecomputedEmbeddings":
        vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\r\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise DataError(f"{path}:{lineno}: expected key<TAB>values")
                key, _, values = line.partition("\t")
                try:
                    vec = np.array([float(x) for x in values.split(",")], dtype=np.float64)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise DataError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
                vectors[key.strip()] = vec
        if not vectors:
            raise DataError(f"{path}: no vectors found")
        return cls(vectors)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, vec in self.vectors.items():
                fh.write(key + "\t" + ",".join(repr(float(x)) for x in vec) + "\n")

    def lookup(self, keys: Iterable[str]) -> np.ndarray:
        """Stack vectors for ``keys``; a datetime key falls back to its date part."""
        out = []
        for key in keys:
            vec = self.vectors.get(key)
            if vec is None:
                vec = self.vectors.get(key[:10])
            if vec is None:
                raise KeyError(f"no precomputed vector for key {key!r}")
            out.append(vec)
        return np.stack(out)
