"""Monte-Carlo engine for the Brownian-Poisson market with a random horizon.

The market is S = S0 * E(sigma.W + zeta.N^c + mu.t) driven by a Brownian
motion and a compensated Poisson process with intensity ``lam``; the random
horizon is tau = (a T2) ^ T1, the minimum of the first Poisson jump time and
a fraction of the second.  For this horizon every survival object has a
closed form in terms of beta = lam (1/a - 1):

    G~_t = exp(-beta t)(1 + beta t)  before T1,   exp(-beta t) at T1,
    G_t  = exp(-beta t)(1 + beta t)  before T1,   0 from T1 on,
    m_t  = 1 + lam beta I1(t ^ T1) - beta T1 exp(-beta T1) 1{T1 <= t},
    D^o_t = int_0^{t ^ T1} (beta+lam) beta s exp(-beta s) ds
            + exp(-beta T1) 1{T1 <= t},

with I1(x) = int_0^x s exp(-beta s) ds.  Jump times are drawn exactly
(exponential gaps, kept off-grid); Brownian values are sampled exactly at the
report times and at tau; the Lebesgue part of D^o is the one quantity
evaluated by trapezoidal quadrature on the dt grid, so the pathwise identity
m = G + D^o holds up to O(dt^2).

Statistical verification is by Monte-Carlo means with standard errors (the
``mc_test`` oracle), sharpened by regressing one-step increments on
observable features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, SpaceValidationError

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class JumpDiffusionScenario:
    """Model coefficients, horizon fraction, grid, and sampling plan.

    sigma/zeta/mu are per-unit-time constants of the price dynamics, lam the
    Poisson intensity, ``a`` the second-jump fraction defining the horizon.
    """

    sigma: float
    zeta: float
    mu: float
    lam: float
    a: float
    S0: float = 1.0
    horizon: float = 1.0
    dt: float = 2.0 ** -10
    n_paths: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > SIGMA_FLOOR:
            raise SpaceValidationError("sigma must be strictly positive")
        if not self.zeta > -1.0:
            raise SpaceValidationError("zeta must exceed -1")
        if not self.lam > 0.0:
            raise SpaceValidationError("lam must be positive")
        if not 0.0 < self.a < 1.0:
            raise SpaceValidationError("a must lie in (0, 1)")
        if not self.dt > 0.0:
            raise SpaceValidationError("dt must be positive")
        if not self.horizon > 0.0:
            raise SpaceValidationError("horizon must be positive")
        if self.n_paths < 1:
            raise SpaceValidationError("n_paths must be at least 1")
        if self.S0 <= 0.0:
            raise SpaceValidationError("S0 must be positive")

    @property
    def beta(self) -> float:
        return self.lam * (1.0 / self.a - 1.0)


def _i1(beta: float, x):
    """int_0^x s exp(-beta s) ds, exact."""
    x = np.asarray(x, dtype=float)
    return (1.0 - np.exp(-beta * x) * (1.0 + beta * x)) / beta**2


def _ig(beta: float, x):
    """int_0^x beta s / (1 + beta s) ds = x - log(1 + beta x)/beta, exact."""
    x = np.asarray(x, dtype=float)
    return x - np.log1p(beta * x) / beta


@dataclass
class PathBundle:
    """Per-path simulation output at the report times plus full-grid samples.

    All (n_paths, n_report) arrays are exact-in-distribution; ``samples``
    holds full-grid versions of the first few paths (Brownian values filled
    in by bridge sampling from each path's own stream).
    """

    scenario: JumpDiffusionScenario
    report_times: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    tau: np.ndarray
    from_second_jump: np.ndarray
    W: np.ndarray
    W_tau: np.ndarray
    N: np.ndarray
    S: np.ndarray
    G: np.ndarray
    G_tilde: np.ndarray
    m: np.ndarray
    D_opt: np.ndarray
    N_G: np.ndarray
    samples: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return len(self.tau)

    def stopped_times(self) -> np.ndarray:
        return np.minimum(self.report_times[None, :], self.tau[:, None])

    def stopped_W(self) -> np.ndarray:
        hit = self.tau[:, None] <= self.report_times[None, :]
        return np.where(hit, self.W_tau[:, None], self.W)

    def default_seen(self) -> np.ndarray:
        """1{tau <= t} at the report times."""
        return (self.tau[:, None] <= self.report_times[None, :]).astype(float)

    def first_jump_stopped(self) -> np.ndarray:
        """1{tau = T1 <= t}: the price jump happened before or at the horizon."""
        return ((~self.from_second_jump)[:, None]
                & (self.t1[:, None] <= self.report_times[None, :])).astype(float)


def _quadrature_table(sc: JumpDiffusionScenario):
    beta, lam = sc.beta, sc.lam
    n_steps = int(np.ceil(sc.horizon / sc.dt - 1e-9))
    grid = np.arange(n_steps + 1) * sc.dt
    dens = (beta + lam) * beta * grid * np.exp(-beta * grid)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    return grid, dens, cum


def _lebesgue_quadrature(sc, grid, dens, cum, x):
    """Trapezoid of the D^o density over [0, x] using the dt grid plus a stub."""
    beta, lam = sc.beta, sc.lam
    x = np.asarray(x, dtype=float)
    idx = np.minimum((x / sc.dt).astype(int), len(grid) - 1)
    base = cum[idx]
    left = grid[idx]
    fl = dens[idx]
    fx = (beta + lam) * beta * x * np.exp(-beta * x)
    return base + 0.5 * (fl + fx) * (x - left)


def simulate(sc: JumpDiffusionScenario, *, report_times=None, keep_paths: int = 0,
             progress: bool = False) -> PathBundle:
    """Draw all paths and evaluate the market and survival objects.

    Randomness per path comes from its own counter-based stream derived from
    (seed, path index): first the exponential jump gaps, then the Brownian
    normals for the report grid augmented by tau, then (for kept paths) the
    bridge refinement onto the full dt grid.  Results are reproducible per
    (seed, n_paths, dt) regardless of chunking.
    """
    H, beta, lam = sc.horizon, sc.beta, sc.lam
    if report_times is None:
        report_times = H * np.arange(1, 9) / 8.0
    rep = np.asarray(report_times, dtype=float)
    R = len(rep)
    n = sc.n_paths

    jump_lists = []
    normals = np.empty((n, R + 1))
    keep_streams = []
    for i in range(n):
        gen = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=sc.seed, spawn_key=(i,))))
        gaps = gen.exponential(scale=1.0 / lam, size=8)
        cum = np.cumsum(gaps)
        while cum[-1] < H or len(cum) < 2:
            gaps = gen.exponential(scale=1.0 / lam, size=8)
            cum = np.concatenate([cum, cum[-1] + np.cumsum(gaps)])
        jump_lists.append(cum)
        normals[i] = gen.standard_normal(R + 1)
        if i < keep_paths:
            keep_streams.append(gen)

    kmax = max(len(c) for c in jump_lists)
    jumps = np.full((n, kmax), np.inf)
    for i, c in enumerate(jump_lists):
        jumps[i, :len(c)] = c
    t1, t2 = jumps[:, 0], jumps[:, 1]
    tau = np.minimum(sc.a * t2, t1)
    from_second = sc.a * t2 < t1
    tau_c = np.minimum(tau, H)

    # Brownian values at the report grid augmented (per path) by tau
    stacked = np.concatenate([np.tile(rep, (n, 1)), tau_c[:, None]], axis=1)
    order = np.argsort(stacked, axis=1, kind="stable")
    times_aug = np.take_along_axis(stacked, order, axis=1)
    dt_aug = np.diff(np.concatenate([np.zeros((n, 1)), times_aug], axis=1), axis=1)
    W_aug = np.cumsum(normals * np.sqrt(dt_aug), axis=1)
    tau_col = order == R
    W_tau = W_aug[tau_col]
    W_rep = W_aug[~tau_col].reshape(n, R)

    # Poisson counts and the price at the report times
    N_rep = np.zeros((n, R))
    step = 8192
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        N_rep[lo:hi] = (jumps[lo:hi, :, None] <= rep[None, None, :]).sum(axis=1)
    drift = sc.mu - sc.zeta * lam - 0.5 * sc.sigma**2
    S_rep = sc.S0 * np.exp(sc.sigma * W_rep + drift * rep[None, :]) \
        * (1.0 + sc.zeta) ** N_rep

    # closed-form survival objects
    before_t1 = rep[None, :] < t1[:, None]
    egrid = np.exp(-beta * rep)[None, :] * (1.0 + beta * rep)[None, :]
    G = np.where(before_t1, egrid, 0.0)
    G_tilde = np.where(before_t1, egrid, 0.0)  # {t = T1} carries no dt mass
    x1 = np.minimum(rep[None, :], t1[:, None])
    m = 1.0 + lam * beta * _i1(beta, x1) \
        - beta * t1[:, None] * np.exp(-beta * t1[:, None]) * (~before_t1)
    grid, dens, cum = _quadrature_table(sc)
    D_opt = _lebesgue_quadrature(sc, grid, dens, cum, x1) \
        + np.exp(-beta * t1[:, None]) * (~before_t1)
    xs = np.minimum(rep[None, :], tau[:, None])
    N_G = (from_second[:, None] & (sc.a * t2[:, None] <= rep[None, :])).astype(float) \
        - (lam + beta) * _ig(beta, xs)

    bundle = PathBundle(
        scenario=sc, report_times=rep, t1=t1, t2=t2, tau=tau,
        from_second_jump=from_second, W=W_rep, W_tau=W_tau, N=N_rep, S=S_rep,
        G=G, G_tilde=G_tilde, m=m, D_opt=D_opt, N_G=N_G,
    )
    for i in range(keep_paths):
        bundle.samples.append(_full_grid_sample(
            sc, grid, dens, cum, i, times_aug[i], W_aug[i], jump_lists[i],
            tau[i], from_second[i], keep_streams[i]))
    return bundle


def _full_grid_sample(sc, grid, dens, cum, index, coarse_t, coarse_w, jumps,
                      tau, from_second, gen):
    """Bridge-fill one path onto the dt grid and evaluate every process on it."""
    beta, lam = sc.beta, sc.lam
    anchors_t = np.concatenate([[0.0], coarse_t])
    anchors_w = np.concatenate([[0.0], coarse_w])
    W = np.empty_like(grid)
    W[0] = 0.0
    for j in range(len(anchors_t) - 1):
        s, e = anchors_t[j], anchors_t[j + 1]
        ws, we = anchors_w[j], anchors_w[j + 1]
        inside = np.flatnonzero((grid > s) & (grid < e))
        prev_t, prev_w = s, ws
        for g in inside:
            u = grid[g]
            span = e - prev_t
            mean = prev_w + (u - prev_t) / span * (we - prev_w)
            var = (u - prev_t) * (e - u) / span
            prev_w = mean + np.sqrt(max(var, 0.0)) * gen.standard_normal()
            prev_t = u
            W[g] = prev_w
        on = np.flatnonzero(np.isclose(grid, e) & (grid > s))
        for g in on:
            W[g] = we
    t1 = jumps[0]
    N = (jumps[None, :] <= grid[:, None]).sum(axis=1).astype(float)
    drift = sc.mu - sc.zeta * lam - 0.5 * sc.sigma**2
    S = sc.S0 * np.exp(sc.sigma * W + drift * grid) * (1.0 + sc.zeta) ** N
    before = grid < t1
    e1 = np.exp(-beta * grid) * (1.0 + beta * grid)
    G = np.where(before, e1, 0.0)
    G_tilde = np.where(before, e1, np.where(np.isclose(grid, t1), np.exp(-beta * grid), 0.0))
    x1 = np.minimum(grid, t1)
    m = 1.0 + lam * beta * _i1(beta, x1) - beta * t1 * np.exp(-beta * t1) * (grid >= t1)
    D_opt = _lebesgue_quadrature(sc, grid, dens, cum, x1) + np.exp(-beta * t1) * (grid >= t1)
    xs = np.minimum(grid, tau)
    N_G = (float(from_second) * (tau <= grid)) - (lam + beta) * _ig(beta, xs)
    return {
        "index": index, "time": grid, "W": W, "N": N, "S": S,
        "G": G, "G_tilde": G_tilde, "m": m, "D_opt": D_opt, "N_G": N_G,
        "tau": float(tau), "t1": float(t1),
        "m_identity_residual": float(np.max(np.abs(m - (G + D_opt)))),
    }


def closed_forms(bundle: PathBundle) -> dict:
    """Survival grids at the report times with the pathwise identity residual."""
    res = np.abs(bundle.m - (bundle.G + bundle.D_opt))
    return {
        "G": bundle.G, "G_tilde": bundle.G_tilde, "m": bundle.m,
        "D_opt": bundle.D_opt, "N_G": bundle.N_G,
        "m_identity_residual": float(res.max()),
    }


def solve_drift(sc: JumpDiffusionScenario, psi2: float) -> float:
    """The Brownian loading making the deflated price driftless.

    Solves mu + psi1 sigma + (psi2 - 1) zeta lam = 0 for psi1; psi2 must be
    strictly positive.
    """
    if not psi2 > 0.0:
        raise AdmissibilityError("psi2 must be strictly positive")
    return -(sc.mu + (psi2 - 1.0) * sc.zeta * sc.lam) / sc.sigma


def transported_brownian(bundle: PathBundle) -> np.ndarray:
    """W stopped at tau: the transport of the Brownian motion."""
    return bundle.stopped_W()


def transported_poisson(bundle: PathBundle) -> np.ndarray:
    """Transport of the compensated Poisson process.

    The stopped compensated process plus the jump correction (1 + beta T1)
    replacing the plain unit jump when the horizon coincides with T1.
    """
    sc = bundle.scenario
    ts = bundle.stopped_times()
    hit = bundle.first_jump_stopped()
    return hit * (1.0 + sc.beta * bundle.t1[:, None]) - sc.lam * ts


def survival_exponential(bundle: PathBundle) -> np.ndarray:
    """The density-style exponential of (1/G_minus) . m, a unit-mean martingale."""
    sc = bundle.scenario
    beta, lam = sc.beta, sc.lam
    x1 = np.minimum(bundle.report_times[None, :], bundle.t1[:, None])
    cont = np.exp(lam * _ig(beta, x1))
    seen = (bundle.t1[:, None] <= bundle.report_times[None, :])
    jump = np.where(seen, 1.0 / (1.0 + beta * bundle.t1[:, None]), 1.0)
    return cont * jump


def build_deflator(bundle: PathBundle, psi1: float, psi2: float, *,
                   phi_o: float = 0.0, phi_pr: float = 0.0) -> dict:
    """Deflator samples Z = E(L)^tau E(phi_o . N_G) E(phi_pr . D).

    L folds the drift-corrected Brownian and Poisson loadings with the
    survival discount; the pathwise constraints are checked at the realized
    default dates and violations name the offending path.
    """
    sc = bundle.scenario
    beta, lam = sc.beta, sc.lam
    if not psi2 > 0.0:
        raise AdmissibilityError("psi2 must be strictly positive")
    if not phi_o > -1.0:
        raise AdmissibilityError("phi_o must exceed -1 before the first jump")
    if not phi_pr > -1.0:
        raise AdmissibilityError("phi_pr must exceed -1 at the default date")
    hit_t1 = (~bundle.from_second_jump) & (bundle.tau <= sc.horizon)
    bound = psi2 * (1.0 + beta * bundle.t1)
    bad = np.flatnonzero(hit_t1 & (phi_o >= bound))
    if len(bad):
        raise AdmissibilityError(
            f"phi_o at the first jump breaches psi2 (1 + beta T1) on path {int(bad[0])}",
        )

    ts = bundle.stopped_times()
    Ws = bundle.stopped_W()
    jump_seen = bundle.first_jump_stopped()
    log_el = (psi1 * Ws - 0.5 * psi1**2 * ts - lam * psi2 * ts
              + (lam / beta) * np.log1p(beta * ts))
    e_l = np.exp(log_el) * np.where(
        jump_seen > 0, (1.0 + beta * bundle.t1[:, None]) * psi2, 1.0)
    second_seen = (bundle.from_second_jump[:, None]
                   & (bundle.tau[:, None] <= bundle.report_times[None, :]))
    e_ng = np.where(second_seen, 1.0 + phi_o, 1.0) \
        * np.exp(-phi_o * (lam + beta) * _ig(beta, ts))
    e_d = 1.0 + phi_pr * bundle.default_seen()
    Z = e_l * e_ng * e_d
    return {"Z": Z, "E_L": e_l, "E_NG": e_ng, "E_D": e_d}


def proportional_wealth(bundle: PathBundle, theta: float, *, stopped: bool = True) -> np.ndarray:
    """Wealth of the constant proportional strategy theta, optionally stopped.

    The multiplicative wealth E(theta . X) with X the price driver; requires
    1 + theta zeta > 0 for admissibility.
    """
    sc = bundle.scenario
    if 1.0 + theta * sc.zeta <= 0.0:
        raise AdmissibilityError("inadmissible proportional strategy")
    if stopped:
        ts, Ws = bundle.stopped_times(), bundle.stopped_W()
        Ns = bundle.first_jump_stopped()
    else:
        ts = np.tile(bundle.report_times, (bundle.n_paths, 1))
        Ws, Ns = bundle.W, bundle.N
    drift = theta * sc.mu - theta * sc.zeta * sc.lam - 0.5 * theta**2 * sc.sigma**2
    return np.exp(theta * sc.sigma * Ws + drift * ts) * (1.0 + theta * sc.zeta) ** Ns


def deflator_grid(bundle: PathBundle, index: int, psi1: float, psi2: float, *,
                  phi_o: float = 0.0, phi_pr: float = 0.0) -> np.ndarray:
    """Deflator values of one kept sample path on the full dt grid."""
    sc = bundle.scenario
    beta, lam = sc.beta, sc.lam
    s = bundle.samples[index]
    grid = s["time"]
    tau, t1 = s["tau"], s["t1"]
    ts = np.minimum(grid, tau)
    Ws = np.where(grid >= tau, bundle.W_tau[index], s["W"])
    jump_seen = (not bundle.from_second_jump[index]) & (tau <= grid)
    log_el = (psi1 * Ws - 0.5 * psi1**2 * ts - lam * psi2 * ts
              + (lam / beta) * np.log1p(beta * ts))
    e_l = np.exp(log_el) * np.where(jump_seen, (1.0 + beta * t1) * psi2, 1.0)
    second_seen = bundle.from_second_jump[index] & (tau <= grid)
    e_ng = np.where(second_seen, 1.0 + phi_o, 1.0) \
        * np.exp(-phi_o * (lam + beta) * _ig(beta, ts))
    e_d = 1.0 + phi_pr * (tau <= grid)
    return e_l * e_ng * e_d


def progressive_mean_test(bundle: PathBundle, values_at_default, *,
                          n_bins: int = 6, z_crit: float = 3.0):
    """Bin test of the zero-conditional-mean condition at the default date.

    ``values_at_default`` gives the progressive integrand evaluated at tau per
    path; paths defaulting inside the window are binned on observables at the
    default date (which jump produced it, and the default date quantile) and
    each bin's mean is z-tested against zero.  Returns (max |z|, rejected,
    bins) where bins maps a label to (count, mean, se).
    """
    vals = np.asarray(values_at_default, dtype=float)
    seen = bundle.tau <= bundle.scenario.horizon
    bins = {}
    max_z = 0.0
    for flag in (False, True):
        sel = seen & (bundle.from_second_jump == flag)
        if not np.any(sel):
            continue
        edges = np.quantile(bundle.tau[sel], np.linspace(0, 1, n_bins + 1))
        which = np.clip(np.searchsorted(edges, bundle.tau[sel], side="right") - 1,
                        0, n_bins - 1)
        v = vals[sel]
        for b in range(n_bins):
            grp = v[which == b]
            if len(grp) < 20:
                continue
            se = grp.std(ddof=1) / np.sqrt(len(grp))
            z = 0.0 if se == 0 else grp.mean() / se
            bins[f"jump{int(flag) + 1}/bin{b}"] = (len(grp), float(grp.mean()), float(se))
            max_z = max(max_z, abs(float(z)))
    return max_z, max_z > z_crit, bins


def lmd_times_price(bundle: PathBundle, psi1: float, psi2: float) -> np.ndarray:
    """E(psi1.W + (psi2-1).N^c) * S / S0, unstopped: the drift-condition probe."""
    sc = bundle.scenario
    t = bundle.report_times[None, :]
    dens = np.exp(psi1 * bundle.W - 0.5 * psi1**2 * t
                  - (psi2 - 1.0) * sc.lam * t) * psi2 ** bundle.N
    return dens * bundle.S / sc.S0


@dataclass(frozen=True)
class MCTestReport:
    """Mean / standard-error / z-score table per report time, plus regression z's."""

    times: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    zscores: np.ndarray
    regression_z: np.ndarray | None
    null: str
    rejected: bool
    max_abs_z: float
    warning: str | None


def mc_test(values, times, *, start: float, null: str = "martingale",
            features=None, z_crit: float = 3.0) -> MCTestReport:
    """Monte-Carlo null test of mean constancy (or decrease) from ``start``.

    ``values`` is (n_paths, n_times).  Under the martingale null every mean
    equals ``start``; under the supermartingale null means may only drift
    down.  With (n_paths, n_times, p) ``features`` observable at each time,
    one-step increments are regressed on them (intercept added) and the
    coefficient z-scores sharpen the martingale test.
    """
    X = np.asarray(values, dtype=float)
    n = X.shape[0]
    warning = f"only {n} paths: statistical power is low" if n < 1000 else None
    means = X.mean(axis=0)
    ses = X.std(axis=0, ddof=1) / np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ses > 0, (means - start) / ses, 0.0)
    reg_z = None
    max_z = float(np.max(np.abs(z))) if null == "martingale" else float(np.max(z))
    if features is not None and null == "martingale" and X.shape[1] > 1:
        F = np.asarray(features, dtype=float)
        rows = []
        for j in range(X.shape[1] - 1):
            dx = X[:, j + 1] - X[:, j]
            A = np.column_stack([np.ones(n), F[:, j, :]])
            coef, *_ = np.linalg.lstsq(A, dx, rcond=None)
            resid = dx - A @ coef
            # heteroskedasticity-robust (sandwich) standard errors
            AtA_inv = np.linalg.pinv(A.T @ A)
            meat = A.T @ (A * (resid**2)[:, None])
            cov = AtA_inv @ meat @ AtA_inv
            se = np.sqrt(np.maximum(np.diag(cov), 1e-300))
            rows.append(coef / se)
        reg_z = np.asarray(rows)
        max_z = max(max_z, float(np.max(np.abs(reg_z))))
    rejected = max_z > z_crit
    return MCTestReport(np.asarray(times, float), means, ses, z, reg_z,
                        null, bool(rejected), max_z, warning)


def feature_matrix(bundle: PathBundle) -> np.ndarray:
    """Observable features (S_t, N_t, 1{t < T1}) at each report time."""
    pre = (bundle.report_times[None, :] < bundle.t1[:, None]).astype(float)
    return np.stack([bundle.S, bundle.N, pre], axis=2)
