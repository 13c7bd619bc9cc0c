"""Independent oracles behind the frozen values in fixtures/reference.json.

Run ``python3 tests/oracles.py`` to regenerate the fast entries and
``python3 tests/oracles.py --many-body`` to also redo the many-body
reference run (several minutes).
"""

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from lindqpt.dqpt import cusp_statistic, detect_cusps, flux_averaged_rate
from lindqpt.models import (
    chain_model,
    topological_quench,
    single_k_hamiltonian,
    single_k_initial_density,
    single_k_jump_operators,
)

FIXTURE = Path(__file__).parent / "fixtures" / "reference.json"

# many-body reduced preset
MB_CELLS, MB_FLUX, MB_TRAJ, MB_DT, MB_TMAX = 5, 150, 200, 0.005, 5.0


def lindblad_return(k: float, t: float, quench) -> float:
    """tr[rho0 rho(t)] from the master equation integrated on 4x4 matrices."""
    H = single_k_hamiltonian(k, quench.post)
    jumps = single_k_jump_operators(quench.post)
    rho0 = single_k_initial_density(k, quench.pre)

    def rhs(_, y):
        r = y.reshape(4, 4)
        out = -1j * (H @ r - r @ H)
        for L in jumps:
            LdL = L.conj().T @ L
            out += L @ r @ L.conj().T - 0.5 * (LdL @ r + r @ LdL)
        return out.ravel()

    sol = solve_ivp(rhs, (0, t), rho0.ravel().astype(complex), rtol=1e-12, atol=1e-14, method="DOP853")
    return float(np.vdot(rho0.ravel(), sol.y[:, -1]).real)


def continuous_min_return(quench, start=(2.631, 1.98)) -> tuple[float, float, float]:
    res = minimize(
        lambda x: lindblad_return(x[0], x[1], quench), start, method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-14},
    )
    return float(res.fun), float(res.x[0]), float(res.x[1])


def window_max(stat: np.ndarray, i: int, half: int = 2) -> float:
    return float(np.nanmax(stat[i - half : i + half + 1]))


def many_body_statistics(gamma_gain: float, engine: str, seed: int = 0):
    t = np.arange(int(round(MB_TMAX / MB_DT)) + 1) * MB_DT
    r = flux_averaged_rate(
        MB_CELLS, chain_model(0.5), chain_model(1.5, 1.0, 0.4, gamma_gain), MB_FLUX, t, engine,
        trajectories=MB_TRAJ, seed=seed,
    )
    return r, cusp_statistic(r.G_values, MB_DT)


def derive(many_body: bool) -> dict:
    data = json.loads(FIXTURE.read_text()) if FIXTURE.exists() else {}
    gmin, kmin, tmin = continuous_min_return(topological_quench(0.2, 0.01))
    data["two_band_gain_min_g"] = {"value": gmin, "k": kmin, "t": tmin, "gamma_l": 0.2, "gamma_g": 0.01}
    if many_body:
        ref, s0 = many_body_statistics(0.0, "nonhermitian")
        cusps = detect_cusps(ref)
        tc = max(cusps, key=lambda c: s0[int(round(c / MB_DT))])
        i = int(round(tc / MB_DT))
        _, s1 = many_body_statistics(0.004, "mcwf", seed=1)
        _, sc = many_body_statistics(0.0, "mcwf", seed=0)
        data["many_body_reduced"] = {
            "critical_time": tc,
            "nonhermitian_statistic": window_max(s0, i),
            "reference_seed": 1,
            "reference_statistic": window_max(s1, i),
            "drop_factor": window_max(s0, i) / window_max(s1, i),
            "control_gain_free_mcwf_drop_factor": window_max(s0, i) / window_max(sc, i),
        }
    return data


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--many-body", action="store_true")
    data = derive(ap.parse_args().many_body)
    FIXTURE.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
