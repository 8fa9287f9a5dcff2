"""Imperfect-CSI MIMO physical layer.

Channel draws tied by an uncertainty factor alpha, antenna selection,
zero-forcing equalization, uplink/downlink SINR, power-splitting ID/EH
branches, harvested energy and per-slot achievable rate, plus the
closed-form SINR density evaluators used by the distribution checks.

All randomness enters through explicit ``numpy.random.Generator`` handles;
every function here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

#: refuse ZF inversion above this 2-norm condition number
COND_CAP = 1e8


class ConditioningError(ValueError):
    """Stacked channel matrix is singular or too ill-conditioned for ZF."""


class DegenerateParameterError(ValueError):
    """Moment-matching chain hit a zero denominator."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dims:
    """Antenna geometry: AGG has n_t = n_r antennas, each of the k SUs has n_u."""

    n_t: int
    n_r: int
    n_u: int
    k: int

    def __post_init__(self):
        if self.n_t != self.n_r:
            raise ValueError("equal transmit and receive antenna counts assumed")
        if not (self.n_r >= self.n_u >= 1):
            raise ValueError("need n_r >= n_u >= 1")
        if self.k < 1:
            raise ValueError("need at least one SU")
        if self.n_r < self.k * self.n_u:
            raise ValueError("ZF infeasible: n_r < k * n_u")


@dataclass(frozen=True)
class ChannelPair:
    """True and estimated channel realizations tied by the uncertainty factor.

    ``h_true = sqrt(1 - alpha^2) * h_est + alpha * delta`` holds exactly for
    the stored ``delta`` realization.
    """

    h_true: np.ndarray
    h_est: np.ndarray
    delta: np.ndarray
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1)")


@dataclass(frozen=True)
class AntennaSelection:
    """Active-antenna mask at the AGG; selection keeps the masked rows."""

    mask: np.ndarray  # bool, length n_r

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", m)
        if m.ndim != 1 or not m.any():
            raise ValueError("mask must be a 1-d vector with >= 1 active antenna")

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    def select(self, h: np.ndarray) -> np.ndarray:
        """Apply the implied selection matrix V (row subset)."""
        return h[self.mask, :]

    @staticmethod
    def all_on(n_r: int) -> "AntennaSelection":
        return AntennaSelection(np.ones(n_r, dtype=bool))

    @staticmethod
    def first(n_r: int, n_active: int) -> "AntennaSelection":
        mask = np.zeros(n_r, dtype=bool)
        mask[:n_active] = True
        return AntennaSelection(mask)


@dataclass(frozen=True)
class BeamformerSet:
    """Unit-Frobenius-norm precoders with explicit power scalars.

    ``w_up[k]`` has shape (n_u, d_k) and is applied at SU k; ``w_down[k]``
    has shape (n_active, d_k) and is applied at the AGG after selection.
    Powers are per-user arrays in watts.
    """

    w_up: tuple
    w_down: tuple
    p_up: np.ndarray
    p_down: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_up", np.atleast_1d(np.asarray(self.p_up, dtype=float)))
        object.__setattr__(self, "p_down", np.atleast_1d(np.asarray(self.p_down, dtype=float)))
        for w in tuple(self.w_up) + tuple(self.w_down):
            nrm = np.linalg.norm(w)
            if not math.isclose(nrm, 1.0, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError("precoders must have unit Frobenius norm")
        if (self.p_up < 0).any() or (self.p_down < 0).any():
            raise ValueError("powers must be nonnegative")


@dataclass(frozen=True)
class SinrReport:
    """Linear-scale SINR values plus the noise variances that produced them."""

    uplink: tuple | None = None    # per user: array of per-stream SINR
    downlink: np.ndarray | None = None  # per user scalar SINR
    noise: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.uplink or ()):
            if not np.all(np.isfinite(arr)) or np.any(np.asarray(arr) < 0):
                raise ValueError("SINR values must be finite and nonnegative")
        if self.downlink is not None:
            d = np.asarray(self.downlink)
            if not np.all(np.isfinite(d)) or np.any(d < 0):
                raise ValueError("SINR values must be finite and nonnegative")


@dataclass(frozen=True)
class BetaIIParams:
    """Moment-matched matrix-variate Beta-II degrees of freedom and the
    intermediates of the matching chain."""

    eta_g: float
    n_g: float
    eta_q: float
    n_q: float
    eta_v: float
    n_v: float
    n1: float
    n2: float

    def __post_init__(self):
        for name in ("eta_g", "n_g", "eta_q", "n_q", "eta_v", "n_v", "n1", "n2"):
            if not getattr(self, name) > 0:
                raise DegenerateParameterError(f"{name} must be positive")


@dataclass(frozen=True)
class SplitSignal:
    """Power-split outcome at an SU receiver: rho goes to information
    detection, 1 - rho to energy harvesting."""

    id_power: float
    eh_power: float
    rho: float


# ---------------------------------------------------------------------------
# channel draws
# ---------------------------------------------------------------------------

def crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Zero-mean unit-variance circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def channel_stream(seed: int, slot: int, user: int, link: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by (seed, slot, user, link).

    Parallel episodes drawing from disjoint (slot, user, link) triples are
    reproducible regardless of evaluation order.
    """
    return np.random.Generator(np.random.Philox(key=np.uint64(seed),
                                                counter=[0, slot, user, link]))


def draw_channel(dims: Dims, alpha: float, rng: np.random.Generator) -> ChannelPair:
    """Draw one (h_true, h_est) pair of shape (n_r, n_u) tied by alpha."""
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    h_est = crandn(rng, dims.n_r, dims.n_u)
    delta = crandn(rng, dims.n_r, dims.n_u)
    h_true = np.sqrt(1.0 - alpha ** 2) * h_est + alpha * delta
    return ChannelPair(h_true=h_true, h_est=h_est, delta=delta, alpha=alpha)


# ---------------------------------------------------------------------------
# zero forcing and SINR
# ---------------------------------------------------------------------------

def zf_equalizer(h_check: np.ndarray, d_k: int) -> np.ndarray:
    """ZF receive filter [I_{d_k} 0] @ inv(h_check) for a square stacked channel."""
    h_check = np.asarray(h_check)
    if h_check.ndim != 2 or h_check.shape[0] != h_check.shape[1]:
        raise ValueError("h_check must be square; use the stacked channel")
    if d_k < 1 or d_k > h_check.shape[0]:
        raise ValueError("invalid stream count")
    _check_conditioning(h_check)
    z = np.zeros((d_k, h_check.shape[0]), dtype=complex)
    z[:, :d_k] = np.eye(d_k)
    return z @ np.linalg.inv(h_check)


def _check_conditioning(m: np.ndarray) -> None:
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > COND_CAP:
        raise ConditioningError(
            f"condition number {np.inf if sv[-1] == 0 else sv[0] / sv[-1]:.3e} "
            f"exceeds cap {COND_CAP:.1e}")


def _stack_uplink(channels, sel: AntennaSelection, bf: BeamformerSet, k: int,
                  si_column: np.ndarray | None):
    """Stacked estimated channel for user k: desired block first, then the
    other users' effective interference columns and (optionally) the residual
    self-interference column.

    The interference factorization is non-unique; only factorization-invariant
    quantities (the final SINR, the ZF residual) are exposed.
    """
    blocks = [sel.select(channels[k].h_est)]
    for i, ch in enumerate(channels):
        if i != k:
            blocks.append(sel.select(ch.h_est) @ bf.w_up[i])
    if si_column is not None:
        blocks.append(si_column)
    h_check = np.hstack(blocks)
    if h_check.shape[1] > h_check.shape[0]:
        raise ValueError("ZF infeasible: more interference columns than active antennas")
    return h_check


def uplink_equalizer(channels, sel: AntennaSelection, bf: BeamformerSet, k: int,
                     si_column: np.ndarray | None = None) -> np.ndarray:
    """ZF receive filter for user k's n_u desired streams.

    Uses the square inverse when the stack is square, the left pseudo-inverse
    otherwise; either way ``U @ h_check = [I 0]`` exactly.
    """
    h_check = _stack_uplink(channels, sel, bf, k, si_column)
    n_u = channels[k].h_est.shape[1]
    if h_check.shape[0] == h_check.shape[1]:
        return zf_equalizer(h_check, n_u)
    _check_conditioning(h_check)
    gram_inv = np.linalg.inv(h_check.conj().T @ h_check)
    return gram_inv[:n_u, :] @ h_check.conj().T


def uplink_sinr(channels, sel: AntennaSelection, bf: BeamformerSet,
                noise: float, si_column: np.ndarray | None = None,
                p_si: float = 0.0) -> SinrReport:
    """Per-user per-stream uplink SINR through the ZF receiver.

    Desired power (1-alpha^2) p_u ||w_k||^2 / d_k over the residual
    estimation-error power alpha^2 * sum_i p_i ||w_i||^2 (plus the residual
    self-interference power ``p_si`` when present) and thermal noise, both
    projected through the stream-wise diagonal of inv(H^H H).
    """
    if noise < 0:
        raise ValueError("noise variance must be nonnegative")
    alpha = channels[0].alpha
    err_power = alpha ** 2 * (
        sum(float(bf.p_up[i]) * np.linalg.norm(bf.w_up[i]) ** 2
            for i in range(len(channels))) + p_si)
    per_user = []
    for k in range(len(channels)):
        h_check = _stack_uplink(channels, sel, bf, k, si_column)
        _check_conditioning(h_check)
        n_u = channels[k].h_est.shape[1]
        d_k = bf.w_up[k].shape[1]
        gram_inv = np.linalg.inv(h_check.conj().T @ h_check)
        diag = np.real(np.diag(gram_inv)[:n_u])
        num = (1.0 - alpha ** 2) * float(bf.p_up[k]) \
            * np.linalg.norm(bf.w_up[k]) ** 2 / d_k
        sinr = num / ((err_power + noise) * diag[:d_k]) if num > 0 \
            else np.zeros(d_k)
        per_user.append(np.maximum(sinr, 0.0))
    return SinrReport(uplink=tuple(per_user), noise={"sigma_u": noise})


def downlink_sinr(channels, sel: AntennaSelection, bf: BeamformerSet,
                  rho: float, noise_d: float, noise_s: float,
                  xtalk=None) -> SinrReport:
    """Per-user downlink SINR at the ID branch.

    Includes downlink inter-user interference, the alpha^2/(1-alpha^2)
    estimation-error term, uplink intracell interference scaled by
    p_u / ((1-alpha^2) p_d), and the two noise terms sigma_d^2/((1-a^2) p_d)
    and sigma_s^2/(rho (1-a^2) p_d).

    ``channels`` are the downlink pairs (F); ``xtalk`` is an optional list of
    per-user SU-to-SU cross channels g_k (shape (n_u, n_u) per interferer).
    """
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    alpha = channels[0].alpha
    n_users = len(channels)
    out = np.zeros(n_users)
    for k in range(n_users):
        f_hat = sel.select(channels[k].h_est)
        p_d = float(bf.p_down[k])
        num = np.linalg.norm(f_hat.conj().T @ bf.w_down[k]) ** 2
        den = 0.0
        for i in range(n_users):
            if i != k:
                den += np.linalg.norm(f_hat.conj().T @ bf.w_down[i]) ** 2
        err = 0.0
        for i in range(n_users):
            d_sel = sel.select(channels[i].delta)
            err += np.linalg.norm(d_sel.conj().T @ bf.w_down[i]) ** 2
        den += alpha ** 2 / (1.0 - alpha ** 2) * err
        if xtalk is not None:
            for i in range(n_users):
                if xtalk[k][i] is None:
                    continue
                den += float(bf.p_up[i]) / ((1.0 - alpha ** 2) * p_d) \
                    * np.linalg.norm(np.asarray(xtalk[k][i]).conj().T @ bf.w_up[i]) ** 2
        den += noise_d / ((1.0 - alpha ** 2) * p_d)
        den += noise_s / (rho * (1.0 - alpha ** 2) * p_d)
        out[k] = num / den
    return SinrReport(downlink=out, noise={"sigma_d": noise_d, "sigma_s": noise_s})


# ---------------------------------------------------------------------------
# power splitting, harvesting, rate
# ---------------------------------------------------------------------------

def split_received(received_power: float, rho: float) -> SplitSignal:
    """Split received power between the ID (rho) and EH (1 - rho) branches."""
    if received_power < 0:
        raise ValueError("received power must be nonnegative")
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    return SplitSignal(id_power=rho * received_power,
                       eh_power=(1.0 - rho) * received_power, rho=rho)


def harvested_energy(eh_power: float, efficiency: float, slot: float,
                     delta_e: float, cap: int | None = None) -> int:
    """Quantized harvested energy units: floor(eta * P_eh * slot / dE)."""
    if min(efficiency, slot, delta_e) <= 0 or eh_power < 0:
        raise ValueError("inputs must be positive (eh_power nonnegative)")
    units = int(math.floor(efficiency * eh_power * slot / delta_e))
    if cap is not None:
        units = min(units, cap)
    return units


def achievable_rate(sinr: float, bandwidth: float, slot: float,
                    packet_bits: float) -> int:
    """Whole packets per slot under the Shannon mapping."""
    if sinr < 0:
        raise ValueError("SINR must be nonnegative")
    return int(math.floor(bandwidth * slot * math.log2(1.0 + sinr) / packet_bits))


# ---------------------------------------------------------------------------
# closed-form SINR densities
# ---------------------------------------------------------------------------

def beta2_moment_match(n_t: int, k: int, alpha: float, power_ratio: float,
                       sigma_d0: float) -> BetaIIParams:
    """Moment-matching chain producing the Beta-II degrees of freedom.

    ``power_ratio`` is p_u / p_d before the (1 - alpha^2) normalization;
    ``sigma_d0`` is the combined normalized noise constant.
    """
    if n_t <= 0 or k <= 0 or sigma_d0 <= 0 or power_ratio < 0:
        raise ValueError("inputs must be positive")
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    r = power_ratio / (1.0 - alpha ** 2)
    a = alpha ** 2 / (1.0 - alpha ** 2)

    den_g = k * (1.0 + r) - 1.0
    if den_g == 0:
        raise DegenerateParameterError("eta_g denominator K(1+r)-1 vanished")
    eta_g = (k * (1.0 + r ** 2) - 1.0) / den_g
    den_ng = r ** 2 * k + k - 1.0
    if den_ng == 0:
        raise DegenerateParameterError("N_g denominator vanished")
    n_g = 2.0 * n_t * (r * k + k - 1.0) ** 2 / den_ng

    den_q = n_g * eta_g + 2.0 * n_t * k * a
    if den_q == 0:
        raise DegenerateParameterError("eta_q denominator vanished")
    eta_q = (n_g * eta_g ** 2 + 2.0 * n_t * k * a ** 2) / den_q
    den_nq = 2.0 * n_t * k * a ** 2 + n_g * eta_g ** 2
    if den_nq == 0:
        raise DegenerateParameterError("N_q denominator vanished")
    n_q = (2.0 * n_t * k * a + n_g * eta_g) ** 2 / den_nq

    eta_v = eta_q * n_q / (n_q + sigma_d0)
    n_v = n_q / 2.0 + sigma_d0 * (2.0 * n_q + sigma_d0) / (2.0 * n_q)

    den_1 = eta_v * (n_t + n_v - 1.0)
    if den_1 == 0:
        raise DegenerateParameterError("N1 denominator vanished")
    n1 = n_t * (n_t + (n_v - 2.0) * eta_v + 1.0) / den_1
    n2 = (n_v * (n_t - 3.0 * eta_v + 2.0) + n_v ** 2 * eta_v
          + 2.0 * (eta_v - 1.0)) / (n_t + n_v - 1.0)
    return BetaIIParams(eta_g=eta_g, n_g=n_g, eta_q=eta_q, n_q=n_q,
                        eta_v=eta_v, n_v=n_v, n1=n1, n2=n2)


def _multigammaln(x: float, d: int) -> float:
    return float(special.multigammaln(x, d))


def beta2_pdf(gamma, params: BetaIIParams, n_u: int = 1) -> float:
    """Matrix-variate Beta-II density (scalar Beta-prime for n_u = 1).

    det(G)^{(2 N1 - n_u - 1)/2} det(I + G)^{-(N1+N2)} / beta(N1, N2) with the
    multivariate-Gamma normalizer.
    """
    n1, n2 = params.n1, params.n2
    log_beta = _multigammaln(n1, n_u) + _multigammaln(n2, n_u) \
        - _multigammaln(n1 + n2, n_u)
    if n_u == 1:
        g = float(gamma)
        if g <= 0:
            raise ValueError("gamma must be positive")
        logp = (n1 - 1.0) * math.log(g) - (n1 + n2) * math.log1p(g) - log_beta
        return math.exp(logp)
    g = np.asarray(gamma)
    sign, logdet_g = np.linalg.slogdet(g)
    if sign <= 0:
        raise ValueError("gamma must be positive definite")
    _, logdet_ig = np.linalg.slogdet(np.eye(n_u) + g)
    logp = (2.0 * n1 - n_u - 1.0) / 2.0 * logdet_g \
        - (n1 + n2) * logdet_ig - log_beta
    return math.exp(logp)


def uplink_eta(dims: Dims, alpha: float, p_up: float, noise: float,
               w_norm_sq: float = 1.0, d_k: int = 1,
               err_power: float | None = None) -> float:
    """Gamma-scale parameter for the ZF uplink SINR density.

    Follows the Prop-style construction eta^2 = (1-a^2) p_u ||V w||^2 /
    (d_k (a^2 P_err + sigma^2)) with an extra 1/2 reconciling the density's
    real-Wishart normalization against unit-variance complex channel entries.
    ``err_power`` defaults to the single-user trace term p_u ||w||^2.
    """
    if err_power is None:
        err_power = p_up * w_norm_sq
    den = d_k * (alpha ** 2 * err_power + noise)
    if den <= 0:
        raise DegenerateParameterError("eta denominator vanished")
    return math.sqrt((1.0 - alpha ** 2) * p_up * w_norm_sq / (2.0 * den))


def uplink_sinr_pdf(gamma: float, eta: float, dims: Dims) -> float:
    """ZF uplink SINR density for the scalar-stream (n_u = 1) marginal.

    gamma^{(2 n_r - n_u - 1)/2} exp(-gamma / (2 eta^2)) over the
    2^{n_r} Gamma(n_r) (eta^2)^{n_r} normalizer; a Gamma(n_r, 2 eta^2) law.
    """
    if dims.n_u != 1:
        raise NotImplementedError("density evaluator supports n_u = 1 only")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if eta <= 0:
        raise DegenerateParameterError("eta must be positive")
    n_r = dims.n_r
    logp = (2 * n_r - dims.n_u - 1) / 2.0 * math.log(gamma) \
        - gamma / (2.0 * eta ** 2) \
        - n_r * math.log(2.0 * eta ** 2) - special.gammaln(n_r)
    return math.exp(logp)
