"""Sparse multivariate polynomials with exact rational coefficients.

Polynomials are the common currency of the library: vector fields, guard
surfaces, guard inequalities and reset maps are all polynomial. Keeping
coefficients as :class:`fractions.Fraction` makes iterated Lie derivatives
coefficient-exact; evaluation falls back to floats (optionally vectorized
over numpy arrays) for the numerical pipeline.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponents = tuple[int, ...]


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, float):
        # exact conversion: every binary float is a rational number
        return Fraction(c)
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot interpret {c!r} as a rational coefficient")


class Poly:
    """A sparse polynomial in ``nvars`` variables with Fraction coefficients.

    Immutable. Terms are stored as a mapping from exponent tuples to nonzero
    coefficients; the zero polynomial has no terms.
    """

    __slots__ = ("nvars", "terms", "_arrays")

    def __init__(self, nvars: int, terms: Mapping[Exponents, Fraction] | None = None):
        if nvars < 1:
            raise ValueError("nvars must be >= 1")
        clean: dict[Exponents, Fraction] = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars:
                raise ValueError(f"exponent tuple {exps} does not match nvars={nvars}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            c = _as_fraction(c)
            if c != 0:
                clean[exps] = clean.get(exps, Fraction(0)) + c
        object.__setattr__(self, "nvars", nvars)
        object.__setattr__(self, "terms", {e: c for e, c in clean.items() if c != 0})
        object.__setattr__(self, "_arrays", None)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("Poly is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars, {})

    @classmethod
    def constant(cls, nvars: int, c) -> "Poly":
        return cls(nvars, {(0,) * nvars: _as_fraction(c)})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Poly":
        exps = [0] * nvars
        exps[i] = 1
        return cls(nvars, {tuple(exps): Fraction(1)})

    # -- algebra -----------------------------------------------------------

    def _check(self, other: "Poly") -> None:
        if not isinstance(other, Poly) or other.nvars != self.nvars:
            raise TypeError("arity mismatch in polynomial arithmetic")

    def __add__(self, other: "Poly") -> "Poly":
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return Poly(self.nvars, out)

    def __sub__(self, other: "Poly") -> "Poly":
        return self + other.scale(-1)

    def __mul__(self, other) -> "Poly":
        if isinstance(other, (int, float, Fraction)):
            return self.scale(other)
        self._check(other)
        out: dict[Exponents, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def scale(self, c) -> "Poly":
        c = _as_fraction(c)
        return Poly(self.nvars, {e: c * v for e, v in self.terms.items()})

    def partial(self, i: int) -> "Poly":
        """Partial derivative with respect to variable ``i``."""
        out: dict[Exponents, Fraction] = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            new = list(e)
            new[i] -= 1
            out[tuple(new)] = out.get(tuple(new), Fraction(0)) + c * e[i]
        return Poly(self.nvars, out)

    def lie_along(self, field: Sequence["Poly"]) -> "Poly":
        """Directional derivative of self along a polynomial vector field."""
        if len(field) != self.nvars:
            raise ValueError("field dimension mismatch")
        acc = Poly.zero(self.nvars)
        for i, f in enumerate(field):
            acc = acc + self.partial(i) * f
        return acc

    # -- queries -----------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        if not self.terms:
            return "Poly(0)"
        bits = []
        for e, c in sorted(self.terms.items()):
            mono = "*".join(f"x{i}^{p}" if p > 1 else f"x{i}" for i, p in enumerate(e) if p)
            bits.append(f"{c}" + (f"*{mono}" if mono else ""))
        return "Poly(" + " + ".join(bits) + ")"

    # -- evaluation --------------------------------------------------------

    def _compiled(self):
        arrays = object.__getattribute__(self, "_arrays")
        if arrays is None:
            if self.terms:
                exps = np.array(sorted(self.terms), dtype=np.int64)
                coeffs = np.array([float(self.terms[tuple(e)]) for e in exps], dtype=float)
            else:
                exps = np.zeros((0, self.nvars), dtype=np.int64)
                coeffs = np.zeros(0, dtype=float)
            arrays = (exps, coeffs)
            object.__setattr__(self, "_arrays", arrays)
        return arrays

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for e, c in self.terms.items():
            term = float(c)
            for xi, p in zip(x, e):
                if p:
                    term *= xi**p
            total += term
        return total

    def eval_batch(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate on an (n, nvars) array of points, returning shape (n,)."""
        pts = np.asarray(pts, dtype=float)
        exps, coeffs = self._compiled()
        if exps.shape[0] == 0:
            return np.zeros(pts.shape[0])
        powers = pts[:, None, :] ** exps[None, :, :]
        return powers.prod(axis=2) @ coeffs

    def eval_exact(self, x: Sequence) -> Fraction:
        """Evaluate with exact rational arithmetic (floats converted exactly)."""
        xs = [_as_fraction(v) for v in x]
        total = Fraction(0)
        for e, c in self.terms.items():
            term = c
            for xi, p in zip(xs, e):
                if p:
                    term *= xi**p
            total += term
        return total

    # -- serialization -----------------------------------------------------

    def to_json(self, out: int | None = None) -> list[dict]:
        rows = []
        for e, c in sorted(self.terms.items()):
            row = {"coeff": float(c), "exps": list(e)}
            if out is not None:
                row["out"] = out
            rows.append(row)
        if not rows:
            row = {"coeff": 0.0, "exps": [0] * self.nvars}
            if out is not None:
                row["out"] = out
            rows.append(row)
        return rows

    @classmethod
    def from_json(cls, rows: Iterable[Mapping], nvars: int) -> "Poly":
        terms: dict[Exponents, Fraction] = {}
        for row in rows:
            e = tuple(int(v) for v in row["exps"])
            terms[e] = terms.get(e, Fraction(0)) + _as_fraction(row["coeff"])
        return cls(nvars, terms)


class PolyMap:
    """A polynomial map R^nvars -> R^ncomps (vector field or reset map)."""

    __slots__ = ("comps", "nvars", "_arrays")

    def __init__(self, comps: Sequence[Poly]):
        if not comps:
            raise ValueError("empty polynomial map")
        nvars = comps[0].nvars
        if any(p.nvars != nvars for p in comps):
            raise ValueError("mixed arities in polynomial map")
        object.__setattr__(self, "comps", tuple(comps))
        object.__setattr__(self, "nvars", nvars)
        object.__setattr__(self, "_arrays", None)

    def __setattr__(self, name, value):  # pragma: no cover
        raise AttributeError("PolyMap is immutable")

    def __len__(self):
        return len(self.comps)

    def __iter__(self):
        return iter(self.comps)

    def __getitem__(self, i: int) -> Poly:
        return self.comps[i]

    def __call__(self, x) -> np.ndarray:
        return np.array([p(x) for p in self.comps], dtype=float)

    def eval_batch(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate on (n, nvars) points, returning (n, ncomps)."""
        pts = np.asarray(pts, dtype=float)
        out = np.empty((pts.shape[0], len(self.comps)))
        for j, p in enumerate(self.comps):
            out[:, j] = p.eval_batch(pts)
        return out

    def to_json(self) -> list[dict]:
        rows: list[dict] = []
        for j, p in enumerate(self.comps):
            rows.extend(p.to_json(out=j))
        return rows

    @classmethod
    def from_json(cls, rows: Iterable[Mapping], nvars: int, ncomps: int) -> "PolyMap":
        buckets: list[list] = [[] for _ in range(ncomps)]
        for row in rows:
            buckets[int(row.get("out", 0))].append(row)
        return cls([Poly.from_json(b, nvars) for b in buckets])
