"""Words, cylinder indexing and locally constant functions on the full shift.

A point of ``X = {1..n}^N`` is an infinite word; the shift drops the first
letter.  A function depending only on the first ``d`` letters is stored as a
vector of ``n**d`` values.  Word order is lexicographic with the first
letter most significant, so the word ``w_1 .. w_d`` sits at index

    idx(w) = sum_k (w_k - 1) * n**(d - k).

With this order, prefixes are contiguous blocks and ``f o shift`` is a tile
of ``f``.  All other modules index matrices the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DepthError, ResourceError, SingularityError, ValidationError

#: Largest admissible ``n**d`` for any working space.
MAX_ATOMS = 2**20


def check_size(n: int, depth: int, cap: int = MAX_ATOMS) -> int:
    """Return ``n**depth`` or raise :class:`ResourceError` above ``cap``."""
    if n < 1:
        raise ValidationError(f"alphabet size must be positive, got n={n}")
    if depth < 0:
        raise DepthError(f"depth must be nonnegative, got {depth}")
    size = n**depth
    if size > cap:
        raise ResourceError(f"n**d = {n}**{depth} = {size} exceeds cap {cap}")
    return size


@dataclass(frozen=True)
class Word:
    """Finite word over ``{1..n}``; names the cylinder of its extensions."""

    letters: tuple[int, ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple(int(x) for x in self.letters))
        bad = [x for x in self.letters if not 1 <= x <= self.n]
        if bad:
            raise ValidationError(f"letters {bad} outside 1..{self.n}")

    def __len__(self):
        return len(self.letters)

    def __str__(self):
        sep = "" if self.n < 10 else ","
        return sep.join(str(x) for x in self.letters)

    @property
    def index(self) -> int:
        return word_index(self.letters, self.n)

    @classmethod
    def parse(cls, text: str, n: int) -> "Word":
        """Parse ``"1,2,1"`` or, for ``n < 10``, ``"121"``."""
        text = text.strip()
        if not text:
            return cls((), n)
        parts = text.split(",") if "," in text else list(text)
        return cls(tuple(int(x) for x in parts), n)


def word_index(letters: Sequence[int], n: int) -> int:
    idx = 0
    for x in letters:
        idx = idx * n + (int(x) - 1)
    return idx


def index_word(idx: int, n: int, depth: int) -> tuple[int, ...]:
    if not 0 <= idx < n**depth:
        raise ValidationError(f"index {idx} out of range for n={n}, depth={depth}")
    out = []
    for _ in range(depth):
        idx, r = divmod(idx, n)
        out.append(r + 1)
    return tuple(reversed(out))


def iter_words(n: int, depth: int) -> Iterator[tuple[int, ...]]:
    """All depth-``depth`` words in canonical order."""
    for i in range(n**depth):
        yield index_word(i, n, depth)


def letter_table(n: int, depth: int) -> np.ndarray:
    """``(n**depth, depth)`` array of letters (1-based) in canonical order."""
    check_size(n, depth)
    idx = np.arange(n**depth)
    cols = [(idx // n ** (depth - 1 - k)) % n + 1 for k in range(depth)]
    return np.stack(cols, axis=1) if cols else np.zeros((1, 0), dtype=int)


@dataclass(frozen=True, eq=False)
class CylinderFunction:
    """Locally constant function of the first ``depth`` letters."""

    n: int
    depth: int
    values: np.ndarray

    def __post_init__(self):
        size = check_size(self.n, self.depth)
        vals = np.array(self.values)
        if vals.dtype.kind not in "fc":
            vals = vals.astype(float)
        vals = vals.reshape(-1)
        if vals.shape[0] != size:
            raise ValidationError(
                f"expected {size} values for n={self.n}, depth={self.depth}, got {vals.shape[0]}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, n: int, c: complex | float = 1.0) -> "CylinderFunction":
        return cls(n, 0, np.array([c]))

    @property
    def is_real(self) -> bool:
        return self.values.dtype.kind == "f" or not np.any(self.values.imag)

    def real(self) -> "CylinderFunction":
        return CylinderFunction(self.n, self.depth, self.values.real.copy())

    def __call__(self, letters: Sequence[int]) -> complex | float:
        if len(letters) < self.depth:
            raise DepthError(f"need at least {self.depth} letters, got {len(letters)}")
        return self.values[word_index(letters[: self.depth], self.n)]

    def __repr__(self):
        return f"CylinderFunction(n={self.n}, depth={self.depth}, values={self.values!r})"

    def lift(self, depth: int) -> "CylinderFunction":
        return lift_depth(self, depth)


def lift_depth(f: CylinderFunction, depth: int) -> CylinderFunction:
    """Re-express ``f`` as a depth-``depth`` function (prefix replication)."""
    if depth < f.depth:
        raise DepthError(f"cannot lift depth {f.depth} function down to depth {depth}")
    if depth == f.depth:
        return f
    check_size(f.n, depth)
    return CylinderFunction(f.n, depth, np.repeat(f.values, f.n ** (depth - f.depth)))


def apply_shift_index(idx, n: int, depth: int):
    """Index of ``shift(w)`` (depth ``depth - 1``) for depth-``depth`` word indices."""
    return idx % n ** (depth - 1) if depth >= 1 else idx


def compose_shift(f: CylinderFunction) -> CylinderFunction:
    """``f o shift``: a depth ``d + 1`` function ignoring the first letter."""
    check_size(f.n, f.depth + 1)
    return CylinderFunction(f.n, f.depth + 1, np.tile(f.values, f.n))


def indicator(word: Word | Sequence[int], n: int | None = None, depth: int | None = None) -> CylinderFunction:
    """Indicator of the cylinder named by ``word`` at the given working depth.

    ``depth`` defaults to ``len(word)``.
    """
    if not isinstance(word, Word):
        if n is None:
            raise ValidationError("alphabet size n is required for a bare letter sequence")
        word = Word(tuple(word), n)
    n = word.n
    depth = len(word) if depth is None else depth
    if len(word) > depth:
        raise DepthError(f"word of length {len(word)} exceeds working depth {depth}")
    check_size(n, depth)
    block = n ** (depth - len(word))
    vals = np.zeros(n**depth)
    start = word.index * block
    vals[start : start + block] = 1.0
    return CylinderFunction(n, depth, vals)


def align(*fs: CylinderFunction) -> list[CylinderFunction]:
    """Lift all arguments to their common maximal depth."""
    ns = {f.n for f in fs}
    if len(ns) != 1:
        raise ValidationError(f"alphabet sizes differ: {sorted(ns)}")
    depth = max(f.depth for f in fs)
    return [lift_depth(f, depth) for f in fs]


def pointwise(f: CylinderFunction, g: CylinderFunction | None, op: str, t: float | None = None) -> CylinderFunction:
    """Entrywise ``add``, ``mul`` or ``abs_pow`` (``|f|**t``, ``g`` unused)."""
    if op == "abs_pow":
        if t is None:
            raise ValidationError("abs_pow needs an exponent t")
        mag = np.abs(f.values)
        if t < 0 and np.any(mag == 0):
            raise SingularityError(f"|f|**{t} undefined where f vanishes")
        with np.errstate(divide="ignore"):
            return CylinderFunction(f.n, f.depth, mag**t)
    if g is None:
        raise ValidationError(f"op {op!r} needs two operands")
    f, g = align(f, g)
    if op == "add":
        return CylinderFunction(f.n, f.depth, f.values + g.values)
    if op == "mul":
        return CylinderFunction(f.n, f.depth, f.values * g.values)
    raise ValidationError(f"unknown pointwise op {op!r}")


def abs_pow(f: CylinderFunction, t: float) -> CylinderFunction:
    return pointwise(f, None, "abs_pow", t)


def mul(f: CylinderFunction, g: CylinderFunction) -> CylinderFunction:
    return pointwise(f, g, "mul")


def add(f: CylinderFunction, g: CylinderFunction) -> CylinderFunction:
    return pointwise(f, g, "add")
