"""Return functions, Loschmidt rate functions, cusp detection, Fisher zeros
and the crossover time of the gain-induced long-time deviation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError
from .fockspace import creation
from .liouvillian import (
    LiouvillianMatrix,
    block_decompose,
    build_liouvillian,
    effective_hamiltonian,
    gap,
    restrict_weak_symmetry,
    spectrum,
    vectorize,
)
from .models import (
    TRIPLET_PROJECTOR,
    TWO_MODE_BASIS,
    BlochModel,
    QuenchSpec,
    hk_fock_embedding,
    hk_fock_model,
    hk_initial_state,
    hk_triplet_hamiltonian,
    hk_two_particle_heff,
    many_body_chain,
    single_k_hamiltonian,
    single_k_initial_density,
    single_k_jump_operators,
    slater_ground_state,
)
from .propagator import (
    check_times,
    evolve_nonhermitian,
    exact_overlaps,
    nonhermitian_amplitudes,
)

log = logging.getLogger(__name__)

ReturnMethod = Literal["exact", "nonhermitian"]


@dataclass
class RateSeries:
    times: np.ndarray
    g_values: np.ndarray  # (n_samples, n_times); samples are momenta or flux values
    G_values: np.ndarray
    k_grid: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


# --- two-band return / rate functions -----------------------------------------


def single_k_liouvillian(k: float, model: BlochModel) -> LiouvillianMatrix:
    """Post-quench Liouvillian at momentum k, restricted to n_ket == n_bra."""
    H = single_k_hamiltonian(k, model)
    L = build_liouvillian(H, single_k_jump_operators(model), TWO_MODE_BASIS)
    return restrict_weak_symmetry(L, 0)


def return_series(quench: QuenchSpec, k: float, times, method: ReturnMethod = "exact") -> np.ndarray:
    """g(k, t) = tr[rho0(k) rho(k, t)] on a time grid starting at 0."""
    t = check_times(times)
    rho0 = single_k_initial_density(k, quench.pre)
    if method == "exact":
        g = exact_overlaps(single_k_liouvillian(k, quench.post), rho0, t)
    elif method == "nonhermitian":
        heff = effective_hamiltonian(single_k_hamiltonian(k, quench.post), single_k_jump_operators(quench.post))
        g = evolve_nonhermitian(heff, rho0, t).overlaps(rho0)
    else:
        raise DomainError(f"unknown method {method!r}")
    if np.max(np.abs(g.imag)) > 1e-9:
        raise NumericError(f"return function has imaginary residue {np.max(np.abs(g.imag)):.2e}")
    return g.real


def return_function(quench: QuenchSpec, k: float, t: float, method: ReturnMethod = "exact") -> float:
    if t == 0:
        return float(return_series(quench, k, [0.0], method)[0])
    return float(return_series(quench, k, [0.0, t], method)[-1])


def rate_from_returns(g: np.ndarray) -> tuple[np.ndarray, int]:
    """G(t) = -(1/N) sum_k ln g(k, t); times with any g <= 0 become +inf."""
    bad = g <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        G = -np.mean(np.log(np.where(bad, 1.0, g)), axis=0)
    G[bad.any(axis=0)] = np.inf
    return G, int(bad.sum())


def rate_function(
    quench: QuenchSpec,
    k_grid: Sequence[float],
    t_grid,
    method: ReturnMethod = "exact",
    threads: int = 1,
) -> RateSeries:
    t = check_times(t_grid)
    ks = np.asarray(k_grid, dtype=float)
    if ks.size == 0:
        raise DomainError("k grid is empty")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(lambda k: return_series(quench, k, t, method), ks))
    else:
        rows = [return_series(quench, k, t, method) for k in ks]
    g = np.array(rows)
    G, flagged = rate_from_returns(g)
    meta = {"method": method, "flagged_samples": flagged, "n_k": int(ks.size)}
    return RateSeries(t, g, G, ks, meta)


def uniform_k_grid(n: int) -> np.ndarray:
    """Midpoint grid on [0, 2 pi)."""
    return 2 * np.pi * (np.arange(n) + 0.5) / n


def backflow_model(quench: QuenchSpec, k: float, orbital: str = "A"):
    """(L, U, blocks) for g_lambda = <<rho0| exp((L + lambda U) t) |rho0>>.

    L is the loss-only restricted Liouvillian (L0 + Ld); U = L_g kron L_g^* is
    the unit-strength gain jump term on ``orbital`` (Lu), so that lambda
    multiplies Lu alone.  ``blocks`` is the sector decomposition of L + U.
    """
    gl = quench.post.strength("loss", orbital)
    L = single_k_liouvillian(k, quench.post.with_dissipation(gl, 0.0, orbital))
    c_dag = creation(TWO_MODE_BASIS, 1 if orbital == "B" else 0)
    U = np.kron(c_dag, c_dag.conj())[np.ix_(L.support, L.support)]
    combined = LiouvillianMatrix(L.matrix + U, L.dim, charge_map=L.charge_map, support=L.support)
    return L, U, block_decompose(combined)


# --- cusp detection -------------------------------------------------------------


def cusp_statistic(G: np.ndarray, dt: float) -> np.ndarray:
    """|G[i+1] - 2 G[i] + G[i-1]| / dt, i.e. the jump in the discrete slope (NaN at the ends)."""
    s = np.full(G.shape, np.nan)
    s[1:-1] = np.abs(G[2:] - 2 * G[1:-1] + G[:-2]) / dt
    return s


def default_threshold(stat: np.ndarray, factor: float = 10.0) -> float:
    finite = stat[np.isfinite(stat)]
    return max(factor * float(np.median(finite)), 1e-6 * float(np.max(finite, initial=0.0)), 1e-300)


def detect_cusps(
    series: RateSeries | np.ndarray,
    times: Optional[np.ndarray] = None,
    window: int = 5,
    threshold: Optional[float] = None,
    factor: float = 10.0,
) -> list[float]:
    """Times where the slope-jump statistic exceeds the threshold and is the
    maximum of its ``window``-point neighbourhood (first index wins ties).
    Points whose neighbourhood runs past either end of the grid are skipped.

    The default threshold is ``factor`` times the median statistic of the series.
    """
    if isinstance(series, RateSeries):
        G, times = series.G_values, series.times
    else:
        G = np.asarray(series, dtype=float)
        if times is None:
            raise DomainError("times are required with a bare array")
    times = np.asarray(times, dtype=float)
    if G.size < window + 2:
        raise DomainError(f"series of {G.size} points is shorter than the window ({window})")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * abs(dts[0]):
        raise DomainError("cusp detection needs a uniform time grid")
    stat = cusp_statistic(G, dts[0])
    thr = default_threshold(stat, factor) if threshold is None else threshold
    half = window // 2
    found = []
    for i in range(half, G.size - half):
        if not np.isfinite(stat[i]) or stat[i] <= thr:
            continue
        lo, hi = max(1, i - half), min(G.size - 1, i + half + 1)
        nb = stat[lo:hi]
        nb = np.where(np.isfinite(nb), nb, -np.inf)
        if stat[i] >= nb.max() and not np.any(nb[: i - lo] == stat[i]):
            found.append(float(times[i]))
    return found


# --- toy nonanalyticity -----------------------------------------------------------


def toy_rate(delta: float, tau):
    """-(4D - 4 tau arctan(D/tau) - 2D ln(D^2 + tau^2)) / (2 pi), continued to tau = 0.

    This expression equals +(1/2 pi) int_{-D}^{D} ln(q^2 + tau^2) dq.
    """
    tau = np.asarray(tau, dtype=float)
    safe = np.where(tau == 0, 1.0, tau)
    arct = np.where(tau == 0, 0.0, tau * np.arctan(delta / safe))
    return -(4 * delta - 4 * arct - 2 * delta * np.log(delta**2 + tau**2)) / (2 * np.pi)


@dataclass(frozen=True)
class ToyCusp:
    tau: np.ndarray
    G: np.ndarray
    G0: float
    left_derivative: float  # tau -> 0^-
    right_derivative: float  # tau -> 0^+


def toy_nonanalyticity(delta: float, tau_grid=None, h: float = 1e-7) -> ToyCusp:
    """Closed-form toy rate function and its one-sided slopes at tau = 0."""
    if delta <= 0:
        raise DomainError("cutoff delta must be positive")
    tau = np.linspace(-1, 1, 401) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    G0 = float(toy_rate(delta, 0.0))
    left = float((G0 - toy_rate(delta, -h)) / h)
    right = float((toy_rate(delta, h) - G0) / h)
    return ToyCusp(tau, toy_rate(delta, tau), G0, left, right)


# --- HK model: return functions and Fisher zeros -------------------------------------


def hk_return_series(k: float, times, U: float, gamma_up_gain: float) -> np.ndarray:
    """|<Psi0| exp(-i Heff t) |Psi0>|^2 with the two-particle effective Hamiltonian."""
    psi0 = hk_initial_state(k)
    amp = nonhermitian_amplitudes(hk_two_particle_heff(k, U, gamma_up_gain), psi0, times)
    return np.abs(amp) ** 2


def hk_exact_return_series(k: float, times, U: float, gamma_up_gain: float, gamma_up_loss: float) -> np.ndarray:
    """tr[rho0 rho(t)] from the full 16-mode-state Fock Liouvillian (n_diff = 0 sector)."""
    model = hk_fock_model(k, U, gamma_up_gain, gamma_up_loss)
    L = restrict_weak_symmetry(build_liouvillian(model.H, model.jumps, model.basis), 0)
    psi = hk_fock_embedding() @ hk_initial_state(k)
    g = exact_overlaps(L, np.outer(psi, psi.conj()), times)
    return g.real


def hk_rate_function(k_grid, times, U: float, gamma_up_gain: float, gamma_up_loss: float = 0.0, engine: str = "auto") -> RateSeries:
    """Rate function of the HK quench; ``engine='auto'`` uses Heff when there is no loss."""
    t = check_times(times)
    ks = np.asarray(k_grid, dtype=float)
    if engine == "auto":
        engine = "nonhermitian" if gamma_up_loss == 0 else "exact"
    if engine == "nonhermitian":
        if gamma_up_loss:
            raise DomainError("the effective-Hamiltonian engine cannot include loss together with gain")
        g = np.array([hk_return_series(k, t, U, gamma_up_gain) for k in ks])
    elif engine == "exact":
        g = np.array([hk_exact_return_series(k, t, U, gamma_up_gain, gamma_up_loss) for k in ks])
    else:
        raise DomainError(f"unknown engine {engine!r}")
    G, flagged = rate_from_returns(g)
    meta = {"engine": engine, "U": U, "gamma_up_gain": gamma_up_gain, "gamma_up_loss": gamma_up_loss, "flagged_samples": flagged}
    return RateSeries(t, g, G, ks, meta)


@dataclass
class FisherZeroSet:
    k_grid: np.ndarray
    epsilon: np.ndarray
    c0: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    branches: dict  # (n, root) -> complex t over k
    residuals: dict
    flagged: np.ndarray  # k indices with ill-conditioned eigenbases
    crossings: list = field(default_factory=list)  # (t_c, k_c, n, root)

    def max_residual(self) -> float:
        return max(float(np.nanmax(r)) for r in self.residuals.values())

    def critical_times(self, t_max: float = np.inf) -> list[float]:
        return sorted(t for t, *_ in self.crossings if 0 <= t <= t_max)


def hk_loschmidt_coefficients(k: float, gamma_up_gain: float, cond_limit: float = 1e8):
    """(eps, c0, c+, c-, well_conditioned) for <psi0|exp(-i h t)|psi0> = c0 + c+ e^{-i eps t} + c- e^{i eps t}."""
    h, closed = hk_triplet_hamiltonian(k, gamma_up_gain)
    psi = TRIPLET_PROJECTOR @ hk_initial_state(k)
    ev, R = np.linalg.eig(h)
    ok = np.linalg.cond(R) < cond_limit
    Linv = np.linalg.inv(R)
    eps = closed[1]
    coeff = (psi.conj() @ R) * (Linv @ psi)
    order = [int(np.argmin(np.abs(ev - target))) for target in (0.0, eps, -eps)]
    if len(set(order)) < 3:
        ok = False
    c0, cp, cm = (coeff[i] for i in order)
    return eps, c0, cp, cm, ok


def _match_roots(prev: np.ndarray, roots: np.ndarray) -> np.ndarray:
    same = np.abs(prev - roots).sum()
    swap = np.abs(prev - roots[::-1]).sum()
    return roots if same <= swap else roots[::-1]


def fisher_zeros(k_grid, gamma_up_gain: float, branches=range(0, 4)) -> FisherZeroSet:
    """Complex-time zeros of the infinite-U triplet Loschmidt amplitude.

    With z = exp(-i eps t) the zeros solve c+ z^2 + c0 z + c- = 0; each root
    family gives t_n = (2 pi n + i log z) / eps with log z continued along k.
    """
    ks = np.asarray(k_grid, dtype=float)
    n_k = ks.size
    eps = np.empty(n_k, dtype=complex)
    c0 = np.empty(n_k, dtype=complex)
    cp = np.empty(n_k, dtype=complex)
    cm = np.empty(n_k, dtype=complex)
    roots = np.empty((n_k, 2), dtype=complex)
    flagged = []
    for i, k in enumerate(ks):
        eps[i], c0[i], cp[i], cm[i], ok = hk_loschmidt_coefficients(k, gamma_up_gain)
        if not ok:
            flagged.append(i)
        disc = np.sqrt(c0[i] ** 2 - 4 * cp[i] * cm[i] + 0j)
        r = np.array([(-c0[i] + disc) / (2 * cp[i]), (-c0[i] - disc) / (2 * cp[i])])
        roots[i] = r if i == 0 else _match_roots(roots[i - 1], r)
    logs = np.log(np.abs(roots)) + 1j * np.unwrap(np.angle(roots), axis=0)
    out, residuals = {}, {}
    for root in (0, 1):
        for n in branches:
            t = (2 * np.pi * n + 1j * logs[:, root]) / eps
            amp = c0 + cp * np.exp(-1j * eps * t) + cm * np.exp(1j * eps * t)
            out[(n, root)] = t
            residuals[(n, root)] = np.abs(amp)
    zs = FisherZeroSet(ks, eps, c0, cp, cm, out, residuals, np.array(flagged, dtype=int))
    zs.crossings = real_axis_crossings(zs)
    return zs


def real_axis_crossings(zs: FisherZeroSet) -> list[tuple[float, float, int, int]]:
    found = []
    for (n, root), t in zs.branches.items():
        im = t.imag
        for i in range(t.size - 1):
            if im[i] == 0 or im[i] * im[i + 1] < 0:
                frac = 0.0 if im[i] == 0 else im[i] / (im[i] - im[i + 1])
                tc = t[i].real + frac * (t[i + 1].real - t[i].real)
                kc = zs.k_grid[i] + frac * (zs.k_grid[i + 1] - zs.k_grid[i])
                # the two quadratic roots coincide when the amplitude is a perfect square
                if any(abs(tc - f[0]) < 1e-6 and abs(kc - f[1]) < 1e-6 for f in found):
                    continue
                found.append((float(tc), float(kc), n, root))
    return sorted(found)


# --- crossover time ------------------------------------------------------------------


@dataclass(frozen=True)
class CrossoverResult:
    gamma_gain: float
    t_star: Optional[float]  # None when the deviation never exceeds the offset
    predicted: float
    gap: complex


def liouvillian_gap(quench: QuenchSpec, k: float) -> complex:
    """Gap of the gain-free post-quench Liouvillian at momentum k."""
    loss_only = QuenchSpec(quench.pre, quench.post.with_dissipation(quench.post.strength("loss"), 0.0))
    return gap(spectrum(single_k_liouvillian(k, loss_only.post)))


def crossover_time(
    quench: QuenchSpec,
    k: float,
    times,
    offset: float = np.log(2.0),
    g_reference: Optional[np.ndarray] = None,
    delta: Optional[complex] = None,
) -> CrossoverResult:
    """First time the gain run's -ln g departs from the gain-free run by more than ``offset``."""
    t = check_times(times)
    gl, gg = quench.post.strength("loss"), quench.post.strength("gain")
    if g_reference is None:
        ref = QuenchSpec(quench.pre, quench.post.with_dissipation(gl, 0.0))
        g_reference = return_series(ref, k, t)
    delta = liouvillian_gap(quench, k) if delta is None else delta
    predicted = float(np.log(gg) / delta.real) if gg > 0 else np.inf
    if gg == 0:
        return CrossoverResult(gg, None, predicted, delta)
    g = return_series(quench, k, t)
    with np.errstate(divide="ignore"):
        dev = np.abs(np.log(g) - np.log(g_reference))
    hit = np.flatnonzero(dev > offset)
    t_star = float(t[hit[0]]) if hit.size else None
    return CrossoverResult(gg, t_star, predicted, delta)


def long_time_slope_difference(g_gain: np.ndarray, g_ref: np.ndarray, times: np.ndarray, window: tuple[float, float]) -> float:
    """Least-squares slope of (-ln g_ref) - (-ln g_gain) over a time window."""
    sel = (times >= window[0]) & (times <= window[1])
    y = np.log(g_gain[sel]) - np.log(g_ref[sel])
    return float(np.polyfit(times[sel], y, 1)[0])


# --- flux-averaged many-body rate -------------------------------------------------------


def flux_grid(samples: int) -> np.ndarray:
    if samples < 1:
        raise DomainError("flux_samples must be >= 1")
    return 2 * np.pi * np.arange(samples) / samples


def flux_averaged_rate(
    n_cells: int,
    pre: BlochModel,
    post: BlochModel,
    flux_samples: int,
    t_grid,
    engine: Literal["nonhermitian", "mcwf"] = "nonhermitian",
    *,
    trajectories: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> RateSeries:
    """G(t) = -(1/(N 2pi)) int dphi ln g_phi(t) with uniform flux sampling.

    g_phi is |<Psi0|exp(-i Heff(phi) t)|Psi0>|^2 (nonhermitian engine) or the
    trajectory-averaged return probability (mcwf engine).  Flux samples where
    g vanishes at some time are excluded from the average at that time and
    counted in the metadata.
    """
    from .mcwf import run_ensemble

    t = check_times(t_grid)
    phis = flux_grid(flux_samples)

    def one(idx_phi):
        idx, phi = idx_phi
        chain = many_body_chain(n_cells, post, phi)
        psi0 = slater_ground_state(n_cells, pre, phi)
        if engine == "nonhermitian":
            amp = nonhermitian_amplitudes(chain.sector_heff(n_cells), psi0, t)
            return np.abs(amp) ** 2, {}
        if engine == "mcwf":
            res = run_ensemble(
                chain.embed(psi0, n_cells), chain.heff, chain.jumps, t, trajectories, seed,
                stream_offset=idx * trajectories, charges=chain.basis.particle_numbers(),
            )
            return res.return_probability, {"aborted": res.aborted}
        raise DomainError(f"unknown engine {engine!r}")

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, enumerate(phis)))
    else:
        results = [one(p) for p in enumerate(phis)]
    g = np.array([r[0] for r in results])
    good = g > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(good, np.log(np.where(good, g, 1.0)), 0.0)
        G = -logs.sum(axis=0) / np.maximum(good.sum(axis=0), 1) / n_cells
    flagged = int((~good).sum())
    if flagged:
        log.warning("excluded %d vanishing (flux, time) samples from the flux average", flagged)
    meta = {
        "engine": engine,
        "n_cells": n_cells,
        "flux_samples": flux_samples,
        "flagged_samples": flagged,
        "gamma_loss": post.strength("loss"),
        "gamma_gain": post.strength("gain"),
    }
    if engine == "mcwf":
        meta.update(trajectories=trajectories, seed=seed, aborted=int(sum(r[1]["aborted"] for r in results)))
    return RateSeries(t, g, G, phis, meta)
