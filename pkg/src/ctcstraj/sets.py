"""Canonical convex sets with Euclidean projections.

These are the building blocks for the control/dilation admissible sets and
for the per-block constraints handed to the first-order QP solver. Only
sets with a cheap closed-form projection are supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_KINDS = ("box", "ball", "interval", "nonneg", "zero", "free")


@dataclass(frozen=True)
class ConvexSetSpec:
    """A simple convex set in R^dim.

    kind:
        ``box``      elementwise bounds ``lower <= v <= upper``
        ``ball``     Euclidean ball ``||v - center|| <= radius``
        ``interval`` scalar bounds broadcast over all components
        ``nonneg``   nonnegative orthant
        ``zero``     the origin
        ``free``     all of R^dim (no constraint)
    """

    kind: str
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown set kind {self.kind!r}")
        if self.kind in ("box", "interval"):
            if np.any(self.lower > self.upper):
                raise ValueError("set bounds require lower <= upper")
        if self.kind == "ball" and self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    # -- constructors -----------------------------------------------------

    @classmethod
    def box(cls, lower, upper) -> "ConvexSetSpec":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("box bounds must have matching shapes")
        return cls("box", lower.size, lower=lower, upper=upper)

    @classmethod
    def ball(cls, center, radius: float) -> "ConvexSetSpec":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return cls("ball", center.size, center=center, radius=float(radius))

    @classmethod
    def interval(cls, lo: float, hi: float, dim: int = 1) -> "ConvexSetSpec":
        lo = np.full(dim, float(lo))
        hi = np.full(dim, float(hi))
        return cls("interval", dim, lower=lo, upper=hi)

    @classmethod
    def nonneg(cls, dim: int) -> "ConvexSetSpec":
        return cls("nonneg", dim)

    @classmethod
    def zero(cls, dim: int) -> "ConvexSetSpec":
        return cls("zero", dim)

    @classmethod
    def free(cls, dim: int) -> "ConvexSetSpec":
        return cls("free", dim)

    # -- geometry ----------------------------------------------------------

    def project(self, v: np.ndarray) -> np.ndarray:
        """Euclidean projection of v onto the set (idempotent)."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {v.shape}")
        if self.kind == "free":
            return v.copy()
        if self.kind == "zero":
            return np.zeros(self.dim)
        if self.kind == "nonneg":
            return np.maximum(v, 0.0)
        if self.kind in ("box", "interval"):
            return np.clip(v, self.lower, self.upper)
        # ball
        d = v - self.center
        nrm = float(np.linalg.norm(d))
        if nrm <= self.radius:
            return v.copy()
        return self.center + d * (self.radius / nrm)

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v), ord=np.inf)) <= tol

    def distance(self, v: np.ndarray) -> float:
        return float(np.linalg.norm(np.asarray(v, dtype=float) - self.project(v)))

    def is_bounded(self) -> bool:
        if self.kind in ("ball", "zero"):
            return True
        if self.kind in ("box", "interval"):
            return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))
        return False

    def replicate(self, copies: int) -> "BlockSet":
        return BlockSet([self] * copies)


@dataclass
class BlockSet:
    """Cartesian product of ConvexSetSpec blocks (projection is blockwise)."""

    blocks: list[ConvexSetSpec] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def append(self, spec: ConvexSetSpec) -> None:
        self.blocks.append(spec)

    def extend(self, other: "BlockSet") -> None:
        self.blocks.extend(other.blocks)

    def slices(self):
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.dim))
            start += b.dim
        return out

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        for sl, b in zip(self.slices(), self.blocks):
            out[sl] = b.project(v[sl])
        return out

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        return float(np.linalg.norm(v - self.project(v), ord=np.inf)) <= tol

    def lower_upper(self):
        """Componentwise clamp bounds for non-ball blocks (+-inf where free).

        Ball blocks are returned separately by :meth:`ball_blocks`; for them
        the clamp bounds here are +-inf.
        """
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for sl, b in zip(self.slices(), self.blocks):
            if b.kind in ("box", "interval"):
                lo[sl], hi[sl] = b.lower, b.upper
            elif b.kind == "nonneg":
                lo[sl] = 0.0
            elif b.kind == "zero":
                lo[sl] = 0.0
                hi[sl] = 0.0
        return lo, hi

    def ball_blocks(self):
        """(start, end, center, radius) tuples for all ball blocks."""
        out = []
        for sl, b in zip(self.slices(), self.blocks):
            if b.kind == "ball":
                out.append((sl.start, sl.stop, b.center, b.radius))
        return out


def project_set(spec, v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``spec`` (ConvexSetSpec or BlockSet)."""
    return spec.project(v)
