"""Closed-form constants, sequences and bounds for SGLD-VR.

All functions here are pure. Where a quantity has an independent brute-force
check (recursion vs. closed form, enumeration vs. formula) both sides live in
this module but share no code.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .dynamics import DecaySchedule
from .errors import (
    ConfigError,
    InconsistentConstantsError,
    InfeasibleHyperparametersError,
    SizeLimitError,
)
from .objectives import ObjectiveMetadata

# ---------------------------------------------------------------------------
# Lyapunov weights and the first-order bound


@dataclass(frozen=True)
class LyapunovSequences:
    c: np.ndarray  # length B_e + 1, c[B_e] = 0
    gamma: np.ndarray  # length B_e
    beta: np.ndarray  # length B_e
    gamma_min: float


def weight_sequences(eta, beta, L: float, B_e: int) -> LyapunovSequences:
    """Backward recursion c_t = c_{t+1}(1 + beta_t eta_t + 2 eta_t^2 L^2 / B_e) + eta_t^2 L^3 / B_e.

    ``eta`` holds eta_0..eta_{B_e-1}; ``beta`` is a scalar or a sequence of the
    same length.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (B_e,):
        raise ValueError(f"eta must have length B_e={B_e}, got shape {eta.shape}")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), eta.shape).copy()
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    c = np.zeros(B_e + 1)
    for t in range(B_e - 1, -1, -1):
        e = eta[t]
        c[t] = c[t + 1] * (1.0 + beta[t] * e + 2.0 * e * e * L * L / B_e) + e * e * L**3 / B_e
    c_next = c[1:]
    gamma = eta - c_next / beta * eta - eta * eta * L - 2.0 * c_next * eta * eta
    return LyapunovSequences(c=c, gamma=gamma, beta=beta, gamma_min=float(gamma.min()))


def closed_form_c0(eta0: float, beta_tilde: float, L: float, B_e: int) -> float:
    """c~_0 = (g^{B_e} - 1) D with g = 1 + beta eta0 + 2 eta0^2 L^2 / B_e.

    g^{B_e} - 1 is evaluated as expm1(B_e log1p(g - 1)) to avoid cancellation
    when g is close to 1.
    """
    g_minus_1 = beta_tilde * eta0 + 2.0 * eta0**2 * L**2 / B_e
    D = (eta0 * L**3 / B_e) / (beta_tilde + 2.0 * eta0 * L**2 / B_e)
    if D == 0.0:
        return 0.0
    return math.expm1(B_e * math.log1p(g_minus_1)) * D


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    lhs: float  # c~_0 (1/beta + 2 eta0) + eta0 L, must be < 1
    c0: float
    gamma_min: float
    reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def validate_hyperparams(eta0: float, beta_tilde: float, L: float, B_e: int) -> Feasibility:
    """Check c~_0 (1/beta~ + 2 eta0) + eta0 L < 1 and positivity of every gamma_t."""
    c0 = closed_form_c0(eta0, beta_tilde, L, B_e)
    lhs = c0 * (1.0 / beta_tilde + 2.0 * eta0) + eta0 * L
    seq = weight_sequences(np.full(B_e, eta0), beta_tilde, L, B_e)
    reasons = []
    if not lhs < 1.0:
        reasons.append(f"c0*(1/beta + 2*eta0) + eta0*L = {lhs:.6g} >= 1")
    if not seq.gamma_min > 0.0:
        reasons.append(f"min gamma_t = {seq.gamma_min:.6g} <= 0")
    return Feasibility(
        feasible=not reasons,
        lhs=lhs,
        c0=c0,
        gamma_min=seq.gamma_min,
        reason="; ".join(reasons) or None,
    )


def grad_norm_bound(Delta_f, T, gamma_min, L, c0, d, nu, C0=1.0) -> float:
    """Delta_f / (T gamma_min) + (d / gamma_min)(L/2 + c0) C0 / T^nu."""
    if gamma_min <= 0:
        raise InfeasibleHyperparametersError(f"gamma_min must be positive, got {gamma_min}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return Delta_f / (T * gamma_min) + (d / gamma_min) * (L / 2.0 + c0) * C0 / T**nu


# ---------------------------------------------------------------------------
# stepsize batches and recurrence


def _eta_source(sch):
    if isinstance(sch, DecaySchedule):
        return sch.eta, None
    etas = [float(e) for e in sch]
    return etas.__getitem__, len(etas)


def first_index_below(sch, delta: float, t_max: int) -> int | None:
    """Smallest t <= t_max with eta_t <= delta, or None."""
    eta, length = _eta_source(sch)
    stop = t_max if length is None else min(t_max, length - 1)
    for t in range(stop + 1):
        if eta(t) <= delta:
            return t
    return None


def stepsize_batch_partition(sch, delta: float, t_max: int | None = None) -> list[int]:
    """Indices n_0 < n_1 < ... <= t_max partitioning iterations into stepsize batches.

    n_0 is the first index with eta_{n_0} <= delta, and n_{k+1} is the smallest
    s > n_k with eta_{n_k} + ... + eta_{s-1} >= delta, so batch k is the
    half-open range [n_k, n_{k+1}). ``sch`` is a DecaySchedule or an explicit
    sequence of stepsizes.
    """
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    eta, length = _eta_source(sch)
    if t_max is None:
        if length is None:
            raise ValueError("t_max is required for a DecaySchedule")
        t_max = length
    if length is not None:
        # sums need eta up to index t_max - 1
        t_max = min(t_max, length)
    n0 = first_index_below(sch, delta, t_max)
    if n0 is None:
        return []
    out = [n0]
    acc = 0.0
    for s in range(n0, t_max):
        acc += eta(s)
        if acc >= delta:
            out.append(s + 1)
            acc = 0.0
    return out


def batch_sums(sch, partition: Sequence[int]) -> np.ndarray:
    """Sum of eta over each half-open batch [n_k, n_{k+1})."""
    eta, _ = _eta_source(sch)
    return np.array([math.fsum(eta(i) for i in range(a, b)) for a, b in zip(partition[:-1], partition[1:])])


@dataclass(frozen=True)
class RecurrenceConstants:
    delta: float
    C1: float
    C1_lower: float
    alpha: float
    B: float
    K: float
    level: float  # M = 2 delta B
    n0: int
    eta_n0: float
    delta_too_small: bool

    def expected_tau_bound(self, j) -> float:
        """4/alpha + K + j (1/(2 alpha delta) + 1)."""
        return 4.0 / self.alpha + self.K + j * self.slope_bound

    @property
    def slope_bound(self) -> float:
        return 1.0 / (2.0 * self.alpha * self.delta) + 1.0

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "slope_bound": self.slope_bound}


def recurrence_constants(
    meta: ObjectiveMetadata,
    sch: DecaySchedule,
    B_e: int,
    d: int,
    delta: float,
    f_x0: float,
    f_xn0: float | None = None,
) -> RecurrenceConstants:
    """alpha, B, K and the level M = 2 delta B for the sublevel-set stopping times.

    C1 is the midpoint of (eta0 (2 L^3 mu2 / (mu1 B_e) + L), 1). ``f_xn0`` defaults
    to ``f_x0``.
    """
    if not meta.has_regularization:
        raise ConfigError("recurrence constants need mu1, psi1, mu2, psi2")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    L, mu1, mu2, psi1, psi2 = meta.grad_lipschitz, meta.reg_mu1, meta.reg_mu2, meta.reg_psi1, meta.reg_psi2
    if not mu1 > 0:
        raise ConfigError("mu1 must be positive")
    c_lo = sch.eta0 * (2.0 * L**3 * mu2 / (mu1 * B_e) + L)
    if not c_lo < 1.0:
        raise InfeasibleHyperparametersError(
            f"eta0 * (2 L^3 mu2 / (mu1 B_e) + L) = {c_lo:.6g} >= 1; no admissible C1"
        )
    C1 = 0.5 * (c_lo + 1.0)
    rate = (1.0 - C1) * mu1 * delta
    alpha = 1.0 - 2.0 * math.exp(-rate)
    # eta_t <= delta once t + offset >= (eta0/delta)^(1/nu)
    n0 = max(0, math.ceil((sch.eta0 / delta) ** (1.0 / sch.nu)) - sch.index_offset)
    while n0 > 0 and sch.eta(n0 - 1) <= delta:
        n0 -= 1
    while sch.eta(n0) > delta:
        n0 += 1
    eta_n0 = sch.eta(n0)
    B = 2.0 * (psi1 + (2.0 * eta_n0 * L**3 / B_e) * (mu2 * f_x0 + 2.0 * psi2) + sch.rho0**2 * L * d / (2.0 * sch.eta0))
    f_xn0 = f_x0 if f_xn0 is None else f_xn0
    if B > 0 and f_xn0 > 0:
        K = math.log(f_xn0 / (delta * B)) / rate
    else:
        K = -math.inf
    return RecurrenceConstants(
        delta=delta,
        C1=C1,
        C1_lower=c_lo,
        alpha=alpha,
        B=B,
        K=K,
        level=2.0 * delta * B,
        n0=n0,
        eta_n0=eta_n0,
        delta_too_small=not alpha > 0,
    )


# ---------------------------------------------------------------------------
# reachability


@dataclass(frozen=True)
class ReachabilityBound:
    r: float
    rho0: float
    t_n: float
    target: tuple[float, ...]
    p1: float
    endpoint_factor: float  # first factor, before the d-th power
    reflection_base: float  # second factor's base, before clamping and the d-th power

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def brownian_p1_bound(r: float, rho0: float, t_n: float, z_star) -> ReachabilityBound:
    z = np.atleast_1d(np.asarray(z_star, dtype=float))
    d = z.size
    target = tuple(float(v) for v in z)
    if r == 0 or rho0 == 0:
        return ReachabilityBound(r, rho0, t_n, target, 0.0, 0.0, -1.0)
    if not t_n > 0:
        raise ValueError(f"t_n must be positive when rho0 > 0, got {t_n}")
    per_dim = math.sqrt(2.0 / (math.pi * t_n)) * np.exp(-(z**2 + (z + r / d) ** 2) / (2.0 * t_n)) * r / d
    endpoint = float(per_dim.min())
    u = float(np.linalg.norm(z)) + r
    base = 4.0 * u / math.sqrt(2.0 * math.pi * d * t_n) * math.exp(-(u**2) / (2.0 * d * t_n)) - 1.0
    p1 = endpoint**d * max(base, 0.0) ** d
    return ReachabilityBound(r, rho0, t_n, target, min(max(p1, 0.0), 1.0), endpoint, base)


def brownian_p1(r: float, rho0: float, t_n: float, z_star) -> float:
    """Lower bound on Pr(||z_n - z*|| <= r and ||z_k|| <= ||z*|| + r for all k).

    The reflection factor's base is clamped at 0 before the d-th power, so the
    bound is 0 whenever that base is negative.
    """
    return brownian_p1_bound(r, rho0, t_n, z_star).p1


def reachability_tolerance(eps: float, delta: float, C21: float, C22: float) -> float:
    """eps~ = eps + delta C21 + 2 delta sqrt(C22)."""
    return eps + delta * C21 + 2.0 * delta * math.sqrt(C22)


def ergodicity_horizon(
    meta: ObjectiveMetadata,
    sch: DecaySchedule,
    B_e: int,
    d: int,
    eps_tilde: float,
    p_fail: float,
    s,
    f_x0: float,
) -> float:
    """Horizon after which ||x_t - s|| <= eps~ has happened w.p. >= 1 - p (O~ constant taken as 1)."""
    if not meta.has_regularization:
        raise ConfigError("ergodicity horizon needs mu1, psi1, mu2, psi2")
    L, mu1, mu2, psi1, psi2 = meta.grad_lipschitz, meta.reg_mu1, meta.reg_mu2, meta.reg_psi1, meta.reg_psi2
    s_norm = float(np.linalg.norm(np.atleast_1d(s)))
    c = (4.0 / math.sqrt(2.0 * math.pi) - 1.0) * math.exp(-0.5)
    reach = (d * s_norm + eps_tilde) ** d / (eps_tilde * (c * eps_tilde) ** d)
    num = 1.0 + math.log(f_x0) + reach
    den = eps_tilde * p_fail * mu1 * (
        psi1 + 2.0 * sch.eta0 * L**3 * (mu2 * f_x0 + 2.0 * psi2) / B_e + sch.rho0**2 / sch.eta0 * L * d
    )
    return num / den


# ---------------------------------------------------------------------------
# saddle escape


@dataclass(frozen=True)
class SaddleQuantities:
    epsilon: float
    zeta: float
    radius: float
    Q: float
    indices: tuple[int, ...]
    escape_times: tuple[float, ...]
    # None when d <= 2, where Gamma((d-2)/2) is not finite
    constrained_probs: tuple[float, ...] | None
    projection_fail_probs: tuple[float, ...]
    success_prob_formula: float | None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def saddle_quantities(
    eps: float,
    L: float,
    q: float,
    delta: float,
    i_range: Iterable[int],
    *,
    eta0: float = 1.0,
    d: int = 3,
    schedule: DecaySchedule | None = None,
) -> SaddleQuantities:
    """zeta, r, Q and per-batch T_i, P_i for escaping a strict saddle.

    T_i uses the nu = 1 closed form 2 sqrt(eta0 e^{i delta})(e^{delta/2} - 1)
    unless ``schedule`` is given, in which case T_i is the direct sum of
    sqrt(eta_l) over stepsize batch i.
    """
    if not (eps > 0 and L > 0 and q > 0):
        raise ValueError("eps, L and q must be positive")
    zeta = 5.0 * eps**2 / (2.0 * L)
    r = max(eps / L, math.sqrt(3.0 / (L * q)) * eps)
    Q = (zeta + L * r**2) / (L + q)
    if not r**2 > Q:
        raise InconsistentConstantsError(f"r^2 = {r**2:.6g} <= Q = {Q:.6g}")
    idx = tuple(int(i) for i in i_range)
    if schedule is None:
        T = [2.0 * math.sqrt(eta0 * math.exp(i * delta)) * (math.exp(delta / 2.0) - 1.0) for i in idx]
    else:
        need = max(idx) + 2 if idx else 1
        t_max = 1024
        part = stepsize_batch_partition(schedule, delta, t_max)
        while len(part) < need + 1 and t_max < 1 << 26:
            t_max *= 4
            part = stepsize_batch_partition(schedule, delta, t_max)
        if len(part) < need:
            raise ValueError("stepsize batches too long for the requested indices")
        T = [math.fsum(math.sqrt(schedule.eta(l)) for l in range(part[i], part[i + 1])) for i in idx]
    fail = tuple(min(1.0, Q / (d * Ti)) for Ti in T)
    probs = None
    formula = None
    if d >= 3:
        k = (d - 1) / 2.0
        g = float(gamma_fn((d - 2) / 2.0))
        probs = tuple(min(1.0, Ti ** (-k) * (r**2 - Q) ** k / g) for Ti in T)
        formula = eps ** (d - 1) / (g * L ** (d - 1) * q ** (d - 1))
    return SaddleQuantities(eps, zeta, r, Q, idx, tuple(T), probs, fail, formula)


# ---------------------------------------------------------------------------
# subset selection and bounded drift


def _as_rows(values) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def subset_variance(values, b: int) -> float:
    """E||xi - mean||^2 for the mean xi of b elements drawn without replacement.

    Equals (N - b) / ((N - 1) b) times the population variance (1/N) sum ||a_i - mean||^2.
    """
    a = _as_rows(values)
    N = a.shape[0]
    if N < 2 or not 1 <= b <= N:
        raise ValueError(f"need N >= 2 and 1 <= b <= N, got N={N}, b={b}")
    spread = float(np.mean(np.sum((a - a.mean(axis=0)) ** 2, axis=1)))
    return (N - b) / ((N - 1) * b) * spread


def subset_variance_oracle(values, b: int, limit: int = 10**6) -> float:
    """Exact variance of the subset mean by enumerating every b-subset."""
    a = _as_rows(values)
    N = a.shape[0]
    if not 1 <= b <= N:
        raise ValueError(f"need 1 <= b <= N, got N={N}, b={b}")
    count = math.comb(N, b)
    if count > limit:
        raise SizeLimitError(f"C({N}, {b}) = {count} subsets exceeds the limit {limit}")
    center = a.sum(axis=0) / N
    total = 0.0
    for subset in itertools.combinations(range(N), b):
        xi = a[list(subset)].sum(axis=0) / b
        total += float(np.sum((xi - center) ** 2))
    return total / count


def drift_bound_check(
    C2: float,
    nu_sum: float,
    n_trials: int,
    seed: int,
    *,
    d: int = 5,
    length: int = 20,
    noise: str = "gaussian",
    weights: str = "uniform",
) -> float:
    """Fraction of trials with ||sum_j a_j xi_j|| <= 4 nu sqrt(C2).

    Weights are a random positive split of 2 nu (``uniform``) or all zero
    (``zero``); noise is isotropic Gaussian with E||xi||^2 = C2 (``gaussian``)
    or identically zero (``zero``).
    """
    if n_trials < 100:
        raise ValueError(f"need at least 100 trials, got {n_trials}")
    if not (C2 > 0 and nu_sum > 0):
        raise ValueError("C2 and nu_sum must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD21F7]))
    if weights == "uniform":
        a = rng.dirichlet(np.ones(length), size=n_trials) * (2.0 * nu_sum)
    elif weights == "zero":
        a = np.zeros((n_trials, length))
    else:
        raise ValueError(f"unknown weights {weights!r}")
    if noise == "gaussian":
        xi = rng.standard_normal((n_trials, length, d)) * math.sqrt(C2 / d)
    elif noise == "zero":
        xi = np.zeros((n_trials, length, d))
    else:
        raise ValueError(f"unknown noise {noise!r}")
    y = np.einsum("kj,kjd->kd", a, xi)
    return float(np.mean(np.linalg.norm(y, axis=1) <= 4.0 * nu_sum * math.sqrt(C2)))


# ---------------------------------------------------------------------------
# report


def theory_report(
    objective_spec: dict[str, Any],
    meta: ObjectiveMetadata,
    d: int,
    sch: DecaySchedule,
    B_e: int,
    *,
    f_x0: float,
    f_star: float = 0.0,
    horizon: int = 1000,
    beta_tilde: float = 2.0,
    delta: float = 0.5,
    eps: float = 0.1,
    eps_tilde: float = 0.1,
    p_fail: float = 0.1,
    C0: float = 1.0,
    target=None,
) -> dict[str, Any]:
    """Every derived constant that applies to the given objective and configuration."""
    L = meta.grad_lipschitz
    report: dict[str, Any] = {
        "objective": objective_spec,
        "metadata": meta.to_dict(),
        "schedule": sch.to_dict(),
        "epoch_length": B_e,
        "d": d,
    }
    feas = validate_hyperparams(sch.eta0, beta_tilde, L, B_e)
    seq = weight_sequences(sch.etas(B_e), beta_tilde, L, B_e)
    report["feasibility"] = feas.to_dict()
    report["lyapunov"] = {
        "beta_tilde": beta_tilde,
        "c": seq.c.tolist(),
        "gamma": seq.gamma.tolist(),
        "gamma_min": seq.gamma_min,
        "c0_closed_form": feas.c0,
    }
    if seq.gamma_min > 0:
        report["grad_norm_bound"] = {
            "T": horizon,
            "C0": C0,
            "value": grad_norm_bound(f_x0 - f_star, horizon, seq.gamma_min, L, seq.c[0], d, sch.nu, C0),
        }
    if meta.has_regularization:
        try:
            rc = recurrence_constants(meta, sch, B_e, d, delta, f_x0)
            report["recurrence"] = {**rc.to_dict(), "tau_bound_j1": rc.expected_tau_bound(1)}
        except InfeasibleHyperparametersError as exc:
            report["recurrence"] = {"error": str(exc)}
        s = np.zeros(d) if target is None else np.asarray(target, dtype=float)
        report["ergodicity_horizon"] = ergodicity_horizon(meta, sch, B_e, d, eps_tilde, p_fail, s, f_x0)
    if meta.strict_saddle_q:
        sq = saddle_quantities(eps, L, meta.strict_saddle_q, delta, range(5), eta0=sch.eta0, d=d)
        report["saddle"] = sq.to_dict()
    t_n = sch.rho0**2 * float(np.sum(sch.etas(horizon) / sch.eta0))
    z = np.zeros(d) if target is None else np.asarray(target, dtype=float)
    report["brownian_p1"] = brownian_p1_bound(eps_tilde, sch.rho0, t_n, z).to_dict() if t_n > 0 else None
    return report
