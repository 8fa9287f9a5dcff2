"""POMDP model container, belief updates and observation probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

STOCH_TOL = 1e-10
BELIEF_TOL = 1e-10


class ImpossibleObservationError(ValueError):
    """Bayes update conditioned on a zero-probability observation."""


class OracleScaleError(ValueError):
    """Exact value-iteration oracle called beyond its scale limits."""


def _as_csr(m) -> sparse.csr_matrix:
    return m.tocsr() if sparse.issparse(m) else sparse.csr_matrix(np.asarray(m, dtype=float))


@dataclass
class PomdpModel:
    """Finite POMDP with stage costs.

    ``transitions[a]`` is row-stochastic over next states, ``observations[a]``
    maps next state s' to Pr(O | S', A). Costs are finite; the solver works on
    reward = -cost.
    """

    transitions: list
    observations: list
    cost: np.ndarray
    discount: float
    action_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.transitions = [_as_csr(t) for t in self.transitions]
        self.observations = [_as_csr(z) for z in self.observations]
        self.cost = np.asarray(self.cost, dtype=float)
        n = self.transitions[0].shape[0]
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("costs must be finite")
        if self.cost.shape != (n, len(self.transitions)):
            raise ValueError("cost table shape mismatch")
        if len(self.observations) != len(self.transitions):
            raise ValueError("need one observation matrix per action")
        for m in self.transitions + self.observations:
            if m.shape[0] != n:
                raise ValueError("matrix row dimension mismatch")
            err = np.abs(np.asarray(m.sum(axis=1)).ravel() - 1.0).max()
            if err > STOCH_TOL:
                raise ValueError(f"rows must be stochastic (off by {err:.2e})")
        self._obs_csc = [z.tocsc() for z in self.observations]

    @property
    def n_states(self) -> int:
        return self.transitions[0].shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.transitions)

    @property
    def n_obs(self) -> int:
        return self.observations[0].shape[1]

    @property
    def reward(self) -> np.ndarray:
        return -self.cost

    def propagate(self, b: np.ndarray, a: int) -> np.ndarray:
        """Predictive next-state distribution sum_S Pr(S'|S,a) b(S)."""
        return self.transitions[a].T.dot(b)

    def obs_column(self, a: int, o: int):
        """Sparse column Pr(o | ., a) over next states."""
        return self._obs_csc[a][:, o]

    def obs_col_arrays(self, a: int, o: int):
        """(next-state indices, probabilities) of column o without the
        sparse-indexing overhead."""
        z = self._obs_csc[a]
        lo, hi = z.indptr[o], z.indptr[o + 1]
        return z.indices[lo:hi], z.data[lo:hi]


def check_belief(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if (b < -BELIEF_TOL).any() or abs(b.sum() - 1.0) > BELIEF_TOL:
        raise ValueError("belief must be a probability vector")
    return b


def update_belief(b: np.ndarray, a: int, o: int, model: PomdpModel) -> np.ndarray:
    """Bayes posterior b'(S') = Pr(o|S',a) sum_S Pr(S'|S,a) b(S), normalized."""
    tau = model.propagate(check_belief(b), a)
    idx, vals = model.obs_col_arrays(a, o)
    post = np.zeros(model.n_states)
    post[idx] = vals * tau[idx]
    z = post.sum()
    if z <= 0.0:
        raise ImpossibleObservationError(
            f"observation {o} has zero probability under action {a}")
    return post / z


def observation_prob(o: int, a: int, b: np.ndarray, model: PomdpModel) -> float:
    """Pr(O=o | A=a, b) = sum_{S,S'} Pr(o|S',a) Pr(S'|S,a) b(S)."""
    tau = model.propagate(check_belief(b), a)
    idx, vals = model.obs_col_arrays(a, o)
    return float(vals @ tau[idx])


def observation_distribution(b_or_tau: np.ndarray, a: int, model: PomdpModel,
                             propagated: bool = False) -> np.ndarray:
    """Vector of Pr(O | A=a, b) over all observations."""
    tau = b_or_tau if propagated else model.propagate(check_belief(b_or_tau), a)
    return model.observations[a].T.dot(tau)
