"""Monte Carlo rollouts, baseline policies, and the figure sweeps.

Episodes execute the exact integer queue/energy recursions under a policy,
with per-episode counter-based random streams so results are reproducible
and episode-order independent. Sweeps emit fixed-column CSV rows.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import (ConstraintSpec, Multipliers, Policy, build_cost_table,
                      effective_effect, greedy_policy, solve_inner_beamforming,
                      solve_outer_selection, uniform_initial_belief)
from .dynamics import arrival_pmf
from .scenario import (CompiledScenario, ScenarioConfig, compile_scenario,
                       with_budget)

CSV_COLUMNS = ("scenario_hash", "policy", "budget_w", "delay_ms_mean",
               "delay_ms_ci", "p_up_w", "p_down_w", "rate_up", "rate_down",
               "episodes")


def episode_rng(base_seed: int, episode: int) -> np.random.Generator:
    """Independent counter-based stream per episode."""
    return np.random.Generator(np.random.Philox(key=[base_seed, episode]))


def run_episode(policy: Policy, compiled: CompiledScenario, horizon: int,
                seed: int, episode: int = 0) -> list:
    """One rollout; returns per-slot records of state, action and metrics.

    Conservation holds exactly per user: total harvested minus total spent
    equals the buffer delta plus overflow-discarded units."""
    policy.check_hash(compiled)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    cfg = compiled.config
    space = compiled.space
    level = compiled.level
    rng = episode_rng(seed, episode)
    pmf = arrival_pmf(compiled.arrivals)
    n_users = space.n_users
    q = np.zeros(n_users, dtype=int)
    e = np.full(n_users, space.e_max, dtype=int)
    mask_sizes = compiled.calibration.mask_sizes
    traj = []
    for _t in range(horizon):
        levels = rng.choice(level.probs.size, size=n_users, p=level.probs)
        obs_levels = np.array([
            rng.choice(level.probs.size, p=level.obs_confusion[lv])
            for lv in levels])
        obs = space.encode(tuple((int(q[u]), int(e[u]), int(obs_levels[u]))
                                 for u in range(n_users)))
        a = policy.action(obs)
        eff = effective_effect(compiled.effects[a], e)
        served = np.array([min(int(eff.served[u, levels[u]]), int(q[u]))
                           for u in range(n_users)])
        harvested = np.array([int(eff.harvested[u, levels[u]])
                              for u in range(n_users)])
        used = np.asarray(eff.used_units, dtype=int)
        arrived = rng.choice(pmf.size, size=n_users, p=pmf)
        e_inter = e - used
        discarded = np.maximum(e_inter + harvested - space.e_max, 0)
        rate_down = np.array([float(eff.rate_down[u])
                              for u in range(n_users)])
        traj.append({
            "queues": q.copy(), "energies": e.copy(), "levels": levels,
            "obs": obs, "action": a,
            "n_active": mask_sizes[compiled.effects[a].mask_id],
            "p_up": np.asarray(eff.p_up, dtype=float).copy(),
            "p_down": np.asarray(eff.p_down, dtype=float).copy(),
            "served": served, "arrived": arrived,
            "harvested": harvested, "used": used, "discarded": discarded,
            "rate_up": served.astype(float), "rate_down": rate_down,
        })
        q = np.minimum(np.maximum(q - served, 0) + arrived, space.q_max)
        e = np.minimum(e_inter + harvested, space.e_max)
    return traj


@dataclass
class RunResult:
    """Aggregated rollout statistics with normal-approximation CIs."""

    scenario_hash: str
    policy_kind: str
    episodes: int
    delay_slots: np.ndarray       # per-user mean delay proxy (slots)
    delay_ms_mean: float          # total across users, milliseconds
    delay_ms_ci: float
    p_up_w: np.ndarray
    p_down_w: np.ndarray
    rate_up: np.ndarray
    rate_down: np.ndarray
    effective_power_w: float = 0.0
    effective_power_ci: float = 0.0

    def to_row(self, budget_w: float = float("nan")) -> dict:
        return {
            "scenario_hash": self.scenario_hash,
            "policy": self.policy_kind,
            "budget_w": f"{budget_w:.6g}",
            "delay_ms_mean": f"{self.delay_ms_mean:.6g}",
            "delay_ms_ci": f"{self.delay_ms_ci:.6g}",
            "p_up_w": f"{float(np.sum(self.p_up_w)):.6g}",
            "p_down_w": f"{float(np.sum(self.p_down_w)):.6g}",
            "rate_up": f"{float(np.sum(self.rate_up)):.6g}",
            "rate_down": f"{float(np.sum(self.rate_down)):.6g}",
            "episodes": str(self.episodes),
        }


def _episode_summary(traj, cfg: ScenarioConfig) -> dict:
    qs = np.array([rec["queues"] for rec in traj], dtype=float)
    delay_slots = qs.mean(axis=0) / cfg.lam_slot
    tx = np.array([np.sum(rec["p_up"]) + np.sum(rec["p_down"])
                   for rec in traj])
    frac = np.array([rec["n_active"] / cfg.n_r for rec in traj])
    circ = np.array([rec["n_active"] * cfg.circuit_w_per_antenna
                     for rec in traj])
    return {
        "delay_slots": delay_slots,
        "p_up": np.array([rec["p_up"] for rec in traj]).mean(axis=0),
        "p_down": np.array([rec["p_down"] for rec in traj]).mean(axis=0),
        "rate_up": np.array([rec["rate_up"] for rec in traj]).mean(axis=0),
        "rate_down": np.array([rec["rate_down"] for rec in traj]).mean(axis=0),
        "effective_power": float(np.mean(tx * frac + circ)),
    }


def monte_carlo(policy: Policy, compiled: CompiledScenario, episodes: int,
                horizon: int, base_seed: int = 0) -> RunResult:
    """Means and 95% half-widths over independent seeded episodes."""
    if episodes < 2:
        raise ValueError("need at least 2 episodes")
    cfg = compiled.config
    sums = []
    for ep in range(episodes):
        traj = run_episode(policy, compiled, horizon, base_seed, episode=ep)
        sums.append(_episode_summary(traj, cfg))
    delay_ms = np.array([float(np.sum(s["delay_slots"])) * cfg.slot_s * 1e3
                         for s in sums])
    eff_p = np.array([s["effective_power"] for s in sums])
    half = 1.96 / np.sqrt(episodes)
    return RunResult(
        scenario_hash=compiled.scenario_hash,
        policy_kind=policy.kind,
        episodes=episodes,
        delay_slots=np.mean([s["delay_slots"] for s in sums], axis=0),
        delay_ms_mean=float(delay_ms.mean()),
        delay_ms_ci=float(half * delay_ms.std(ddof=1)),
        p_up_w=np.mean([s["p_up"] for s in sums], axis=0),
        p_down_w=np.mean([s["p_down"] for s in sums], axis=0),
        rate_up=np.mean([s["rate_up"] for s in sums], axis=0),
        rate_down=np.mean([s["rate_down"] for s in sums], axis=0),
        effective_power_w=float(eff_p.mean()),
        effective_power_ci=float(half * eff_p.std(ddof=1)),
    )


# ---------------------------------------------------------------------------
# baseline policies
# ---------------------------------------------------------------------------

BASELINE_KINDS = ("d-opt", "j-opt", "p-opt")


def _solve_kind(compiled: CompiledScenario, nu: Multipliers,
                spec: ConstraintSpec, kind: str, eps: float,
                extra_action_cost=None, log_sink=None, **hsvi_kw) -> Policy:
    cost_table = build_cost_table(compiled, nu, spec,
                                  extra_action_cost=extra_action_cost)
    mask_ids = sorted({eff.mask_id for eff in compiled.effects})
    inner = {}
    for m in mask_ids:
        pol, res, _ids = solve_inner_beamforming(
            compiled, m, nu, spec, eps=eps, cost_table=cost_table, **hsvi_kw)
        inner[m] = pol
        if log_sink is not None:
            log_sink.append((f"inner mask {m}", res))
    if len(mask_ids) == 1:
        policy = inner[mask_ids[0]]
    else:
        policy, res, _ = solve_outer_selection(
            compiled, inner, nu, spec, eps=eps, cost_table=cost_table,
            **hsvi_kw)
        if log_sink is not None:
            log_sink.append(("outer selection", res))
    policy.kind = kind
    return policy


def default_constraints(cfg: ScenarioConfig) -> ConstraintSpec:
    """Loose limits built from the configured grids (nothing binds)."""
    return ConstraintSpec(
        p_max_up=max(cfg.power_levels_up) + 1.0,
        p_max_down=max(cfg.power_levels_down) + 1.0,
        tau_up=float(cfg.q_max) / cfg.lam_slot,
        r_min_up=1e-6, r_min_down=1e-6)


def baseline_policy(kind: str, compiled: CompiledScenario,
                    spec: ConstraintSpec | None = None, eps: float = 0.5,
                    j_power_weight: float = 2.0, **hsvi_kw) -> Policy:
    """Reference controllers.

    d-opt minimizes the delay proxy alone; j-opt adds fixed equal weights on
    both transmit power terms; p-opt is delay-blind — per (energy, level)
    observation it plays the cheapest admissible action meeting the minimum
    rates, independent of the queue."""
    spec = default_constraints(compiled.config) if spec is None else spec
    n_users = compiled.space.n_users
    if kind == "d-opt":
        return _solve_kind(compiled, Multipliers.zeros(n_users), spec,
                           kind, eps, **hsvi_kw)
    if kind == "j-opt":
        nu = Multipliers(nu={"p_up": np.full(n_users, j_power_weight),
                             "p_down": np.full(n_users, j_power_weight)},
                         varrho=np.ones(n_users))
        cfg = compiled.config
        circuit = np.array([
            j_power_weight * cfg.circuit_w_per_antenna
            * compiled.calibration.mask_sizes[eff.mask_id]
            for eff in compiled.effects])
        return _solve_kind(compiled, nu, spec, kind, eps,
                           extra_action_cost=circuit, **hsvi_kw)
    if kind == "p-opt":
        return _p_opt_policy(compiled, spec)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _p_opt_policy(compiled: CompiledScenario, spec: ConstraintSpec) -> Policy:
    """CSI/ESI-only minimum-power controller, constant across queue states."""
    space = compiled.space
    table = np.empty(space.size, dtype=int)
    # rank actions by total power, ascending; ties by index
    order = sorted(range(compiled.n_actions),
                   key=lambda a: (float(np.sum(compiled.effects[a].p_up)
                                        + np.sum(compiled.effects[a].p_down)),
                                  a))
    for obs in range(space.size):
        users = space.decode(obs)
        energies = [e for (_q, e, _l) in users]
        chosen = None
        for a in order:
            eff = compiled.effects[a]
            if not eff.admissible(energies):
                continue
            ok = all(eff.served[u, lv] >= spec.r_min_up
                     and eff.rate_down[u] >= spec.r_min_down
                     for u, (_q, _e, lv) in enumerate(users))
            if ok:
                chosen = a
                break
        if chosen is None:
            # no admissible action meets the rates; fall back to the
            # highest-service admissible one
            feas = [a for a in order
                    if compiled.effects[a].admissible(energies)]
            chosen = max(feas, key=lambda a: (
                float(np.sum(compiled.effects[a].served)), -a)) if feas \
                else 0
        table[obs] = chosen
    return Policy(action_of=table, scenario_hash=compiled.scenario_hash,
                  kind="p-opt")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

# light solver budget for the qualitative sweeps; policies stabilize well
# before full convergence at desk scale
SWEEP_HSVI_KW = {"max_iterations": 8, "depth_cap": 25, "time_budget_s": 120.0}


def _sweep_kw(hsvi_kw: dict) -> dict:
    out = dict(SWEEP_HSVI_KW)
    out.update(hsvi_kw)
    return out


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(row[c] for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def sweep_power(cfg: ScenarioConfig, budgets, policies=("d-opt", "j-opt",
                                                        "p-opt"),
                episodes: int = 30, horizon: int = 300, eps: float = 5.0,
                seed: int = 0, **hsvi_kw) -> list:
    """Delay-versus-power-budget table, one row per (budget, policy).

    The budget restricts the per-slot power grid; the special policy name
    ``hd`` runs the delay-optimal controller on the half-duplex variant of
    the same configuration."""
    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be increasing")
    hsvi_kw = _sweep_kw(hsvi_kw)
    rows = []
    for budget in budgets:
        for kind in policies:
            if kind == "hd":
                sub = with_budget(replace(cfg, duplex="hd"), budget)
                compiled = compile_scenario(sub)
                policy = baseline_policy("d-opt", compiled, eps=eps,
                                         **hsvi_kw)
                policy.kind = "hd"
            else:
                compiled = compile_scenario(with_budget(cfg, budget))
                policy = baseline_policy(kind, compiled, eps=eps, **hsvi_kw)
            run = monte_carlo(policy, compiled, episodes=episodes,
                              horizon=horizon, base_seed=seed)
            rows.append(run.to_row(budget_w=budget))
    return rows


def sweep_antennas(cfg: ScenarioConfig, n_r_list, episodes: int = 30,
                   horizon: int = 300, eps: float = 5.0, seed: int = 0,
                   j_power_weight: float = 2.0, **hsvi_kw):
    """Effective-power-versus-array-size table for selection on/off.

    Effective power is average transmit power scaled by the active-antenna
    fraction plus a per-active-antenna circuit cost; results carry CIs in
    the delay columns' place semantics (rows keep the fixed CSV schema, the
    effective power is reported through ``p_up_w``/``p_down_w`` aggregation
    plus dedicated fields on the returned RunResults)."""
    hsvi_kw = _sweep_kw(hsvi_kw)
    rows = []
    results = []
    for n_r in n_r_list:
        min_mask = cfg.k * cfg.n_u
        if n_r < min_mask:
            raise ValueError(f"n_r={n_r} below ZF minimum {min_mask}")
        # masks below twice the ZF minimum are excluded (ill-conditioned
        # inversions, no array gain); small arrays therefore collapse to the
        # full mask and the two curves coincide there
        floor = 2 * min_mask
        shortlist = sorted({m for m in (floor, n_r // 2, n_r)
                            if floor <= m <= n_r} | {n_r})
        for selection, masks in (("select", tuple(shortlist)),
                                 ("full", (n_r,))):
            sub = replace(cfg, n_r=n_r, n_t=n_r, mask_sizes=masks)
            compiled = compile_scenario(sub)
            policy = baseline_policy("j-opt", compiled, eps=eps,
                                     j_power_weight=j_power_weight, **hsvi_kw)
            policy.kind = f"{selection}-n{n_r}"
            run = monte_carlo(policy, compiled, episodes=episodes,
                              horizon=horizon, base_seed=seed)
            row = run.to_row(budget_w=float(n_r))
            rows.append(row)
            results.append(run)
    return rows, results
