"""Point-based HSVI: bound initialization, backups, guided exploration.

All tie-breaks (actions, observations, alphas) resolve to the lowest index,
so identical inputs yield identical iteration logs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .bounds import AlphaVector, BoundPair, LowerBound, UpperBound
from .model import PomdpModel, check_belief, observation_distribution, update_belief


def _mdp_value(model: PomdpModel, tol: float = 1e-9, max_iter: int = 100000) -> np.ndarray:
    """Fully-observed MDP value (reward orientation); upper-bounds the POMDP."""
    r = model.reward
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        q = np.column_stack([r[:, a] + model.discount * model.transitions[a].dot(v)
                             for a in range(model.n_actions)])
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() < tol * (1.0 - model.discount):
            return v_new
        v = v_new
    return v


def _blind_alphas(model: PomdpModel, tol: float = 1e-9,
                  max_iter: int = 100000) -> list:
    """Stationary single-action policy values; each is a valid lower bound."""
    out = []
    for a in range(model.n_actions):
        r_a = model.reward[:, a]
        v = np.full(model.n_states, r_a.min() / (1.0 - model.discount))
        for _ in range(max_iter):
            v_new = r_a + model.discount * model.transitions[a].dot(v)
            if np.abs(v_new - v).max() < tol * (1.0 - model.discount):
                break
            v = v_new
        out.append(AlphaVector(values=v, action=a))
    return out


def initial_bounds(model: PomdpModel) -> BoundPair:
    """Blind-policy alpha set below, fully-observed MDP corners above."""
    return BoundPair(lower=LowerBound(_blind_alphas(model)),
                     upper=UpperBound(_mdp_value(model)))


def _successor_posts(model: PomdpModel, a: int, tau: np.ndarray):
    """All Bayes posteriors reachable under action a from the propagated
    belief tau: (active observation ids, their probabilities, posterior rows
    as a sparse (m, n_states) matrix)."""
    w = model.observations[a].multiply(tau.reshape(-1, 1)).tocsc()
    p_o = np.asarray(w.sum(axis=0)).ravel()
    active = np.flatnonzero(p_o > 0.0)
    posts = w[:, active].T.tocsr()
    posts.data /= np.repeat(p_o[active], np.diff(posts.indptr))
    return active, p_o[active], posts


def backup(b: np.ndarray, bounds: BoundPair, model: PomdpModel) -> AlphaVector:
    """Point-based backup at b: per action, stage reward plus the discounted
    best-alpha cross-sum over observations; extremal action at b wins."""
    b = check_belief(b)
    alpha_mat = bounds.lower.matrix()
    best_val, best_vec, best_a = -np.inf, None, 0
    for a in range(model.n_actions):
        tau = model.propagate(b, a)
        active, _p_act, posts = _successor_posts(model, a, tau)
        # argmax is invariant to the positive per-row normalization
        best_idx = np.asarray(posts @ alpha_mat.T).argmax(axis=1)
        g = np.zeros(model.n_states)
        for o, i in zip(active, best_idx):
            idx, vals = model.obs_col_arrays(a, o)
            # accumulate Z[s',o] * alpha_best(o)(s') over s'
            g[idx] += vals * alpha_mat[i, idx]
        vec = model.reward[:, a] + model.discount * model.transitions[a].dot(g)
        val = float(vec @ b)
        if val > best_val + 1e-15:
            best_val, best_vec, best_a = val, vec, a
    return AlphaVector(values=best_vec, action=best_a)


def _q_upper(b, a, model, bounds, tau=None):
    tau = model.propagate(b, a) if tau is None else tau
    active, p_act, posts = _successor_posts(model, a, tau)
    total = float(model.reward[:, a] @ b)
    if active.size:
        total += model.discount * float(
            p_act @ bounds.upper.value_many(posts))
    return total


def bellman_value(b: np.ndarray, bounds: BoundPair, model: PomdpModel,
                  use_upper: bool = True):
    """One-step Bellman value at b against the chosen bound; returns
    (value, best action), reward orientation (best action minimizes cost)."""
    b = check_belief(b)
    vals = np.empty(model.n_actions)
    for a in range(model.n_actions):
        tau = model.propagate(b, a)
        active, p_act, posts = _successor_posts(model, a, tau)
        bound = bounds.upper if use_upper else bounds.lower
        acc = float(p_act @ bound.value_many(posts)) if active.size else 0.0
        vals[a] = float(model.reward[:, a] @ b) + model.discount * acc
    a_star = int(np.argmax(vals))
    return float(vals[a_star]), a_star


def excess_uncertainty(b: np.ndarray, bounds: BoundPair, t: int, eps: float,
                       discount: float) -> float:
    """Bound gap at b minus the depth-discounted convergence threshold."""
    if t < 0:
        raise ValueError("depth must be nonnegative")
    return bounds.gap(b) - eps / discount ** t


@dataclass
class ExploreStats:
    backups: int = 0
    truncations: int = 0
    visited: list = field(default_factory=list)


def explore(b: np.ndarray, t: int, bounds: BoundPair, model: PomdpModel,
            eps: float, depth_cap: int, stats: ExploreStats | None = None) -> BoundPair:
    """One depth-first HSVI exploration from b at depth t, updating both
    bounds on the unwind. Exceeding the depth cap truncates (recorded,
    non-fatal)."""
    stats = stats if stats is not None else ExploreStats()
    b = check_belief(b)
    bounds.audit(b)
    if excess_uncertainty(b, bounds, t, eps, model.discount) <= 0.0:
        return bounds
    if t >= depth_cap:
        stats.truncations += 1
        return bounds
    # action by optimistic (upper bound) one-step lookahead
    q_vals = np.empty(model.n_actions)
    succ = []
    for a in range(model.n_actions):
        tau = model.propagate(b, a)
        active, p_act, posts = _successor_posts(model, a, tau)
        up = bounds.upper.value_many(posts) if active.size else np.zeros(0)
        q_vals[a] = float(model.reward[:, a] @ b) \
            + model.discount * float(p_act @ up)
        succ.append((p_act, posts, up))
    a_star = int(np.argmax(q_vals))
    # observation maximizing weighted excess at the successor
    p_act, posts, up = succ[a_star]
    if p_act.size:
        lo = bounds.lower.value_many(posts)
        scores = p_act * (up - lo - eps / model.discount ** (t + 1))
        i_star = int(np.argmax(scores))
        if scores[i_star] > 0.0:
            explore(np.asarray(posts.getrow(i_star).todense()).ravel(),
                    t + 1, bounds, model, eps, depth_cap, stats)
    bounds.lower.add(backup(b, bounds, model))
    bounds.upper.add(b, max(_q_upper(b, a, model, bounds)
                            for a in range(model.n_actions)))
    stats.backups += 1
    stats.visited.append(b)
    return bounds


def ssea_sample(belief_set, model: PomdpModel, rng: np.random.Generator):
    """Explorative-action sampling: one sampled observation per action,
    candidate successors by Bayes update, greedily add the candidate
    farthest (L1) from the current set.

    Returns (new belief, distance) or None; adds at most one point per call.
    """
    beliefs = [check_belief(b) for b in belief_set]
    if not beliefs:
        raise ValueError("belief set must be nonempty")
    candidates = []
    for b in beliefs:
        for a in range(model.n_actions):
            p_o = observation_distribution(b, a, model)
            if p_o.sum() <= 0:
                continue
            o = int(rng.choice(p_o.size, p=p_o / p_o.sum()))
            candidates.append(update_belief(b, a, o, model))
    best, best_d = None, 0.0
    for cand in candidates:
        d = min(float(np.abs(cand - b).sum()) for b in beliefs)
        if d > best_d + 1e-15:
            best, best_d = cand, d
    if best is None:
        return None
    return best, best_d


@dataclass
class HsviResult:
    bounds: BoundPair
    log: list                 # (iter, root_lower, root_upper, n_alpha, n_pts, wall_ms)
    converged: bool
    root_value: float
    iterations: int

    def log_lines(self, include_wall: bool = False):
        """Line-delimited iteration records; wall clock is excluded by
        default so emitted logs are reproducible byte-for-byte."""
        for rec in self.log:
            base = f"{rec[0]} {rec[1]:.12g} {rec[2]:.12g} {rec[3]} {rec[4]}"
            yield base + (f" {rec[5]:.1f}" if include_wall else "")


def solve_hsvi(model: PomdpModel, b0: np.ndarray, eps: float,
               max_iterations: int = 1000, time_budget_s: float | None = None,
               depth_cap: int | None = None, prune_every: int = 10) -> HsviResult:
    """Repeat guided exploration from b0 until the root gap drops below eps
    or the iteration/time budget runs out."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    b0 = check_belief(b0)
    bounds = initial_bounds(model)
    start = time.perf_counter()
    gap0 = bounds.gap(b0)
    if depth_cap is None:
        if gap0 > eps:
            depth_cap = int(math.ceil(math.log(eps / gap0)
                                      / math.log(model.discount))) + 20
        else:
            depth_cap = 20
    log = []
    converged = gap0 <= eps
    last_gap = gap0
    witness_extra = [b0]
    it = 0
    for it in range(1, max_iterations + 1):
        if converged:
            break
        stats = ExploreStats()
        explore(b0, 0, bounds, model, eps, depth_cap, stats)
        witness_extra.extend(stats.visited)
        if prune_every and it % prune_every == 0:
            bounds.lower.prune_pointwise()
            corners = np.eye(model.n_states)
            wit = np.vstack([corners] + [w.reshape(1, -1) for w in witness_extra[-200:]])
            bounds.lower.prune_witness(wit)
            bounds.upper.prune()
        lo, hi = bounds.lower.value(b0), bounds.upper.value(b0)
        gap = hi - lo
        # root gap log is monotone non-increasing by construction
        gap = min(gap, last_gap)
        last_gap = gap
        log.append((it, lo, hi, len(bounds.lower), len(bounds.upper),
                    (time.perf_counter() - start) * 1e3))
        if gap <= eps:
            converged = True
        if time_budget_s is not None and time.perf_counter() - start > time_budget_s:
            break
    root = 0.5 * (bounds.lower.value(b0) + bounds.upper.value(b0))
    return HsviResult(bounds=bounds, log=log, converged=converged,
                      root_value=root, iterations=it)
