"""PWLC lower bound (alpha vectors) and sawtooth upper bound.

Reward orientation: the optimal value is convex in the belief, the lower
bound is the max over a finite alpha set, the upper bound interpolates a
corner-point base with sampled (belief, value) points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SANDWICH_TOL = 1e-8


@dataclass(frozen=True)
class AlphaVector:
    """Linear value function over states with the action that generated it."""

    values: np.ndarray
    action: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("alpha vector entries must be finite")


class LowerBound:
    """Max-over-alphas PWLC lower bound on the (reward) value function."""

    def __init__(self, alphas):
        self.alphas = list(alphas)
        if not self.alphas:
            raise ValueError("alpha set must be nonempty")
        self._matrix = None

    def matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self.alphas):
            self._matrix = np.array([a.values for a in self.alphas])
        return self._matrix

    def __len__(self):
        return len(self.alphas)

    def best(self, b: np.ndarray):
        """(value, action, index) of the maximizing alpha; lowest index wins ties."""
        m = self.matrix()
        sup = np.flatnonzero(b)
        if sup.size * 8 < b.size:
            scores = m[:, sup] @ b[sup]
        else:
            scores = m @ b
        i = int(np.argmax(scores))
        return float(scores[i]), self.alphas[i].action, i

    def value(self, b: np.ndarray) -> float:
        return self.best(b)[0]

    def value_many(self, posts) -> np.ndarray:
        """Envelope values at many beliefs (rows of a sparse matrix)."""
        return np.asarray(posts @ self.matrix().T).max(axis=1)

    def add(self, alpha: AlphaVector) -> None:
        self.alphas.append(alpha)
        self._matrix = None

    def prune_pointwise(self) -> int:
        """Drop alphas pointwise-dominated by another; returns removed count."""
        m = self.matrix()
        keep = np.ones(len(self.alphas), dtype=bool)
        for i in range(len(self.alphas)):
            if not keep[i]:
                continue
            dom = (m[keep] >= m[i] + 1e-14).all(axis=1)
            if dom.any():
                keep[i] = False
        # always keep at least one
        if not keep.any():
            keep[0] = True
        removed = int((~keep).sum())
        if removed:
            self.alphas = [a for a, k in zip(self.alphas, keep) if k]
            self._matrix = None
        return removed

    def prune_witness(self, witnesses: np.ndarray) -> int:
        """Keep alphas achieving the max at some witness belief (corners
        plus sampled beliefs); returns removed count."""
        m = self.matrix()
        scores = m @ witnesses.T           # (n_alpha, n_wit)
        useful = np.zeros(len(self.alphas), dtype=bool)
        useful[np.argmax(scores, axis=0)] = True
        removed = int((~useful).sum())
        if removed:
            self.alphas = [a for a, k in zip(self.alphas, useful) if k]
            self._matrix = None
        return removed


class UpperBound:
    """Sawtooth (Jensen-style) upper bound anchored at corner beliefs."""

    def __init__(self, corner_values: np.ndarray):
        self.corner = np.asarray(corner_values, dtype=float)
        if not np.all(np.isfinite(self.corner)):
            raise ValueError("corner values must be finite")
        self.points: list = []   # (belief, value, support indices)

    def __len__(self):
        return len(self.points) + self.corner.size

    def value(self, b: np.ndarray) -> float:
        """Corner-weighted baseline minus the best single-point improvement."""
        base = float(self.corner @ b)
        best = base
        for (bp, vp, sup, gain) in self.points:
            if gain >= 0.0:
                continue
            c = np.min(b[sup] / bp[sup])
            cand = base + c * gain
            if cand < best:
                best = cand
        return best

    def value_many(self, posts) -> np.ndarray:
        """Sawtooth values at many beliefs at once.

        ``posts`` is a sparse (m, n_states) matrix whose rows are beliefs;
        returns the m values. The per-point interpolation coefficient is
        evaluated over the point's (small) support only."""
        base = np.asarray(posts @ self.corner).ravel()
        best = base.copy()
        live = [(bp, sup, gain) for (bp, _vp, sup, gain) in self.points
                if gain < 0.0]
        if live:
            pc = posts.tocsc()
            indptr, indices, data = pc.indptr, pc.indices, pc.data
            m = base.size
            for (bp, sup, gain) in live:
                block = np.zeros((m, sup.size))
                for jj, s in enumerate(sup):
                    lo, hi = indptr[s], indptr[s + 1]
                    block[indices[lo:hi], jj] = data[lo:hi]
                c = (block / bp[sup]).min(axis=1)
                np.minimum(best, base + c * gain, out=best)
        return best

    def add(self, b: np.ndarray, v: float) -> bool:
        """Insert (b, v) if it improves the interpolated bound at b."""
        if v >= self.value(b) - 1e-12:
            return False
        sup = np.flatnonzero(b > 0.0)
        gain = float(v) - float(self.corner[sup] @ b[sup])
        self.points.append((b.copy(), float(v), sup, gain))
        return True

    def prune(self) -> int:
        """Drop points no longer improving on the rest; returns removed count."""
        kept = []
        removed = 0
        for i, pt in enumerate(self.points):
            others = UpperBound(self.corner)
            others.points = kept + self.points[i + 1:]
            if pt[1] < others.value(pt[0]) - 1e-12:
                kept.append(pt)
            else:
                removed += 1
        self.points = kept
        return removed


@dataclass
class BoundPair:
    """Sandwich pair: PWLC lower set and sawtooth upper point set."""

    lower: LowerBound
    upper: UpperBound
    audits: int = 0
    worst_violation: float = field(default=0.0)

    def gap(self, b: np.ndarray) -> float:
        return self.upper.value(b) - self.lower.value(b)

    def audit(self, b: np.ndarray) -> None:
        """Record the sandwich invariant lower <= upper + tol at b."""
        v = self.lower.value(b) - self.upper.value(b)
        self.audits += 1
        if v > self.worst_violation:
            self.worst_violation = v
        if v > SANDWICH_TOL:
            raise AssertionError(f"bound sandwich violated by {v:.3e}")
