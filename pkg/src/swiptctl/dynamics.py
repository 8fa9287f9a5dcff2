"""Data-queue and energy-buffer dynamics and the controlled transition kernel.

The per-slot recursions are exact integer maps; the kernel factorizes the
joint next-state law into independent channel-level, energy and queue factors
per user, with levels drawn i.i.d. each slot (block fading).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats

ROW_SUM_TOL = 1e-10


class InadmissibleActionError(ValueError):
    """Action spends more energy units than the buffer holds."""


class StateSpaceBudgetError(ValueError):
    """Enumerated joint state space exceeds the configured budget."""


# ---------------------------------------------------------------------------
# per-slot recursions
# ---------------------------------------------------------------------------

def step_queue(q: int, served: int, arrived: int, q_max: int) -> int:
    """Next queue length min([q - served]^+ + arrived, q_max)."""
    if min(q, served, arrived, q_max) < 0:
        raise ValueError("queue arguments must be nonnegative")
    return min(max(q - served, 0) + arrived, q_max)


def step_energy(e: int, used: int, harvested: int, e_max: int) -> int:
    """Next buffer level min(max(e - used, 0) + harvested, e_max).

    Spending more than the stored energy is inadmissible.
    """
    if min(e, used, harvested, e_max) < 0:
        raise ValueError("energy arguments must be nonnegative")
    if used > e:
        raise InadmissibleActionError(f"used {used} units with only {e} stored")
    return min(max(e - used, 0) + harvested, e_max)


# ---------------------------------------------------------------------------
# arrivals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalModel:
    """Truncated Poisson packet arrivals with per-slot mean ``lam``."""

    lam: float
    cap: int | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("arrival rate must be positive")

    def resolved_cap(self) -> int:
        if self.cap is not None:
            return self.cap
        return default_arrival_cap(self.lam)


def default_arrival_cap(lam: float, tail: float = 1e-9) -> int:
    """Smallest n with P(A > n) < tail."""
    n = int(stats.poisson.isf(tail, lam))
    while stats.poisson.sf(n, lam) >= tail:
        n += 1
    return n


def arrival_pmf(model: ArrivalModel) -> np.ndarray:
    """Truncated, renormalized Poisson pmf over {0, ..., cap}."""
    cap = model.resolved_cap()
    if cap == 0:
        return np.array([1.0])
    pmf = stats.poisson.pmf(np.arange(cap + 1), model.lam)
    return pmf / pmf.sum()


# ---------------------------------------------------------------------------
# state space and level model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateSpace:
    """Joint enumeration of per-user (queue, energy, channel level) triples.

    Index is mixed-radix, user-major with (q, e, l) minor order:
    ``idx = ((q1 * n_e + e1) * n_l + l1) * stride + ...``.
    """

    n_users: int
    q_max: int
    e_max: int
    n_levels: int

    @property
    def per_user(self) -> int:
        return (self.q_max + 1) * (self.e_max + 1) * self.n_levels

    @property
    def size(self) -> int:
        return self.per_user ** self.n_users

    def encode(self, users: tuple) -> int:
        idx = 0
        for (q, e, lv) in users:
            idx = idx * self.per_user + ((q * (self.e_max + 1) + e) * self.n_levels + lv)
        return idx

    def decode(self, idx: int) -> tuple:
        out = []
        for _ in range(self.n_users):
            idx, rem = divmod(idx, self.per_user)
            rem, lv = divmod(rem, self.n_levels)
            q, e = divmod(rem, self.e_max + 1)
            out.append((q, e, lv))
        return tuple(reversed(out))

    def states(self):
        for idx in range(self.size):
            yield idx, self.decode(idx)


@dataclass(frozen=True)
class LevelModel:
    """I.i.d. per-slot channel-quality levels with an observation confusion
    matrix Pr(observed level | true level)."""

    probs: np.ndarray            # (L,)
    obs_confusion: np.ndarray    # (L, L), rows stochastic

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        c = np.asarray(self.obs_confusion, dtype=float)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "obs_confusion", c)
        if abs(p.sum() - 1.0) > ROW_SUM_TOL or (p < 0).any():
            raise ValueError("level pmf must be a distribution")
        if c.shape != (p.size, p.size):
            raise ValueError("confusion matrix shape mismatch")
        if np.abs(c.sum(axis=1) - 1.0).max() > ROW_SUM_TOL or (c < 0).any():
            raise ValueError("confusion rows must be distributions")


@dataclass(frozen=True)
class ActionEffect:
    """Physical effect of one joint action, tabulated per user and true level.

    ``served``/``harvested`` are integer packet/energy-unit tables of shape
    (n_users, L); ``used_units`` integer per user; powers in watts and rates
    in packets/slot feed the cost and the rollout metrics.
    """

    served: np.ndarray
    harvested: np.ndarray
    used_units: np.ndarray
    p_up: np.ndarray
    p_down: np.ndarray
    rate_up: np.ndarray
    rate_down: np.ndarray
    mask_id: int = 0
    power_id: int = 0
    label: str = ""

    def admissible(self, energies) -> bool:
        return all(self.used_units[u] <= energies[u] for u in range(len(energies)))


# ---------------------------------------------------------------------------
# transition kernel
# ---------------------------------------------------------------------------

@dataclass
class TransitionKernel:
    """Row-stochastic controlled kernel, one CSR matrix per action."""

    space: StateSpace
    matrices: list = field(default_factory=list)  # csr_matrix per action

    def __post_init__(self):
        for m in self.matrices:
            err = np.abs(np.asarray(m.sum(axis=1)).ravel() - 1.0).max()
            if err > ROW_SUM_TOL:
                raise ValueError(f"kernel row sums off by {err:.2e}")
            if (m.data < 0).any():
                raise ValueError("negative transition probability")

    def row(self, state: int, action: int) -> np.ndarray:
        return np.asarray(self.matrices[action].getrow(state).todense()).ravel()

    def export_triplets(self, path, action: int = 0) -> None:
        """Write (state_index, next_index, prob) lines for one action."""
        coo = self.matrices[action].tocoo()
        with open(path, "w") as fh:
            for s, sp, p in zip(coo.row, coo.col, coo.data):
                fh.write(f"{s} {sp} {p:.17g}\n")


def _user_next_pmf(q: int, e: int, lv: int, effect: ActionEffect, user: int,
                   pmf_arr: np.ndarray, level: LevelModel, space: StateSpace):
    """Support/probability pairs of the next (q, e, l) triple for one user.

    Inadmissible energy expenditure degrades to a no-transmit fallback for
    that user (nothing served, nothing spent); harvesting is unaffected.
    """
    used = int(effect.used_units[user])
    served = int(effect.served[user, lv])
    if used > e:
        used, served = 0, 0
    e_next = step_energy(e, used, int(effect.harvested[user, lv]), space.e_max)
    q_inter = max(q - served, 0)
    sup_q = np.minimum(q_inter + np.arange(pmf_arr.size), space.q_max)
    q_pmf: dict[int, float] = {}
    for qn, p in zip(sup_q, pmf_arr):
        q_pmf[int(qn)] = q_pmf.get(int(qn), 0.0) + float(p)
    out = []
    for lv_next, p_l in enumerate(level.probs):
        if p_l == 0.0:
            continue
        for qn, p_q in q_pmf.items():
            out.append(((qn, e_next, lv_next), p_l * p_q))
    return out


def build_kernel(space: StateSpace, arrivals: ArrivalModel, level: LevelModel,
                 effects, max_states: int = 20000) -> TransitionKernel:
    """Controlled kernel with rows equal to the product of independent
    per-user channel, energy and queue factors."""
    if space.size > max_states:
        raise StateSpaceBudgetError(
            f"state space size {space.size} exceeds budget {max_states}")
    pmf_arr = arrival_pmf(arrivals)
    mats = []
    for effect in effects:
        rows, cols, vals = [], [], []
        for idx, users in space.states():
            supports = [
                _user_next_pmf(q, e, lv, effect, u, pmf_arr, level, space)
                for u, (q, e, lv) in enumerate(users)
            ]
            for combo in itertools.product(*supports):
                p = 1.0
                for _, pu in combo:
                    p *= pu
                nxt = space.encode(tuple(c[0] for c in combo))
                rows.append(idx)
                cols.append(nxt)
                vals.append(p)
        m = sparse.csr_matrix((vals, (rows, cols)),
                              shape=(space.size, space.size))
        m.sum_duplicates()
        mats.append(m)
    return TransitionKernel(space=space, matrices=mats)


def build_observation_matrix(space: StateSpace, level: LevelModel) -> sparse.csc_matrix:
    """Pr(O | S') with queue and energy observed exactly and the channel
    level read through the estimation confusion matrix.

    Observations share the state enumeration (the level digit indexes the
    observed level). Action-independent.
    """
    conf = level.obs_confusion
    rows, cols, vals = [], [], []
    for idx, users in space.states():
        choices = []
        for (q, e, lv) in users:
            choices.append([((q, e, ol), conf[lv, ol])
                            for ol in range(space.n_levels) if conf[lv, ol] > 0])
        for combo in itertools.product(*choices):
            p = 1.0
            for _, pu in combo:
                p *= pu
            obs = space.encode(tuple(c[0] for c in combo))
            rows.append(idx)
            cols.append(obs)
            vals.append(p)
    m = sparse.csc_matrix((vals, (rows, cols)), shape=(space.size, space.size))
    m.sum_duplicates()
    return m
