"""Monte-Carlo wavefunction (quantum trajectory) engine.

Each trajectory draws one uniform number per step from its own Philox
stream keyed by (seed, trajectory index), so results do not depend on how
trajectories are batched or spread over threads.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .errors import DomainError, TimestepTooLargeError
from .propagator import check_times, is_uniform

log = logging.getLogger(__name__)

CHUNK = 128  # trajectories per batch; fixed so results do not depend on threads
MAX_ABORTED_FRACTION = 0.01


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


@dataclass
class TrajectoryState:
    psi: np.ndarray
    time: float
    rng_stream: np.random.Generator
    seed: int = 0
    index: int = 0
    steps: int = 0
    jump_log: list = field(default_factory=list)  # (time, jump index)

    @classmethod
    def start(cls, psi0: np.ndarray, seed: int = 0, index: int = 0) -> "TrajectoryState":
        psi = np.asarray(psi0, dtype=complex)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise DomainError("initial state is the zero vector")
        return cls(psi / norm, 0.0, trajectory_rng(seed, index), seed, index)


def _matvec(op, v):
    return op @ v


def jump_probabilities(psi: np.ndarray, jumps: Sequence, dt: float) -> np.ndarray:
    """p_mu = <psi|L_mu^dag L_mu|psi> dt for a vector or a (D, M) batch."""
    return np.array([dt * np.sum(np.abs(_matvec(L, psi)) ** 2, axis=0) for L in jumps]).reshape(len(jumps), *psi.shape[1:])


def mcwf_step(state: TrajectoryState, heff, jumps: Sequence, dt: float) -> TrajectoryState:
    """One step of the jump/no-jump POVM with a single uniform draw.

    p0 = 1 - sum p_mu; the branch is the first j with u < q_j, q_j = p0 + ... + p_j.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    p = jump_probabilities(state.psi, jumps, dt) if jumps else np.zeros(0)
    total = float(p.sum())
    if total >= 1.0:
        raise TimestepTooLargeError(
            f"sum of jump probabilities {total:.4g} >= 1 at t={state.time:.6g} "
            f"(largest <L^dag L> dt = {p.max():.4g}); reduce dt"
        )
    u = state.rng_stream.random()
    q = (1.0 - total) + np.cumsum(p)
    if u < 1.0 - total:
        new = state.psi - 1j * dt * _matvec(heff, state.psi)
    else:
        hits = np.flatnonzero(u < q)
        nu = int(hits[0]) if hits.size else int(np.flatnonzero(p > 0)[-1])
        new = _matvec(jumps[nu], state.psi)
        state.jump_log.append((state.time + dt, nu))
    state.psi = new / np.linalg.norm(new)
    state.time += dt
    state.steps += 1
    return state


@dataclass
class EnsembleResult:
    M: int
    times: np.ndarray
    return_probability: np.ndarray
    return_stderr: np.ndarray
    observables: dict  # name -> (mean, stderr)
    rho: Optional[np.ndarray]  # (n_checkpoints, D, D) or None
    checkpoints: Optional[np.ndarray]
    jump_counts: np.ndarray  # (M, n_jumps)
    aborted: int
    seed: int
    dt: float
    jump_log: list = field(default_factory=list)  # (trajectory, time, jump index) when requested

    def mean_jumps(self) -> np.ndarray:
        return self.jump_counts.mean(axis=0)


def _diagonal_rates(jumps: Sequence) -> Optional[np.ndarray]:
    """Stack of diag(L^dag L) when every L^dag L is diagonal, else None."""
    rows = []
    for L in jumps:
        LdL = (L.conj().T @ L)
        LdL = LdL.tocsr() if sparse.issparse(LdL) else sparse.csr_matrix(LdL)
        off = LdL - sparse.diags(LdL.diagonal())
        if off.count_nonzero() and np.max(np.abs(off.data)) > 0:
            return None
        rows.append(LdL.diagonal().real)
    return np.array(rows)


def _no_jump_operator(heff, dt: float, scheme: str):
    """Callable applying the no-jump propagator to a batch of states."""
    if scheme == "euler":
        return lambda P: P - 1j * dt * _matvec(heff, P)
    if scheme == "expm":
        dense = heff.toarray() if sparse.issparse(heff) else np.asarray(heff)
        step = sla.expm(-1j * dt * dense)
        return lambda P: step @ P
    raise DomainError(f"unknown no-jump scheme {scheme!r}; use 'euler' or 'expm'")


@dataclass
class _Sector:
    idx: np.ndarray
    advance: object
    rates: Optional[np.ndarray]


MIXED = -1


def _prepare_sectors(heff, diag_rates, charges, dt, scheme):
    """Per-charge blocks of Heff; key MIXED covers states spanning several sectors."""
    D = heff.shape[0]
    full = _Sector(np.arange(D), _no_jump_operator(heff, dt, scheme), diag_rates)
    if charges is None:
        return {MIXED: full}
    charges = np.asarray(charges)
    coo = sparse.coo_matrix(heff)
    leak = coo.data[charges[coo.row] != charges[coo.col]]
    if leak.size and np.max(np.abs(leak)) > 0:
        raise DomainError("Heff couples different charge sectors; drop the charges argument")
    out = {MIXED: full}
    for c in np.unique(charges):
        idx = np.flatnonzero(charges == c)
        block = heff[idx][:, idx] if sparse.issparse(heff) else np.asarray(heff)[np.ix_(idx, idx)]
        rates = None if diag_rates is None else diag_rates[:, idx]
        out[int(c)] = _Sector(idx, _no_jump_operator(block, dt, scheme), rates)
    return out


def _sector_of(v: np.ndarray, charges) -> int:
    if charges is None:
        return MIXED
    present = np.unique(charges[np.abs(v) > 0])
    return int(present[0]) if present.size == 1 else MIXED


class _Group:
    """Trajectories currently in one sector, stored as columns on the sector's indices."""

    def __init__(self, sector: _Sector, cols: np.ndarray, block: np.ndarray):
        self.sector = sector
        self.cols = cols
        self.block = block

    def embed(self, D: int, c: slice | np.ndarray = slice(None)) -> np.ndarray:
        sub = self.block[:, c]
        full = np.zeros((D,) + sub.shape[1:], dtype=complex)
        full[self.sector.idx] = sub
        return full


def _run_chunk(psi0, sectors, charges, jumps, n_steps, sub, dt, seed, indices, observables, checkpoint_steps, keep_log):
    D = psi0.size
    M = len(indices)
    uniforms = np.stack([trajectory_rng(seed, int(i)).random(n_steps * sub) for i in indices], axis=1)
    psi = psi0 / np.linalg.norm(psi0)
    ref = psi.conj()
    start = sectors[_sector_of(psi, charges)]
    groups = {_sector_of(psi, charges): _Group(start, np.arange(M), np.repeat(psi[start.idx, None], M, axis=1))}
    alive = np.ones(M, dtype=bool)
    counts = np.zeros((M, len(jumps)), dtype=np.int64)
    n_out = n_steps + 1
    ret = np.empty((n_out, M))
    obs = {name: np.empty((n_out, M)) for name in observables}
    rho = np.zeros((len(checkpoint_steps), D, D), dtype=complex) if checkpoint_steps is not None else None
    log_entries = []

    def record(j):
        for grp in groups.values():
            ret[j, grp.cols] = np.abs(ref[grp.sector.idx] @ grp.block) ** 2
            if observables:
                full = grp.embed(D)
                for name, op in observables.items():
                    obs[name][j, grp.cols] = np.real(np.sum(full.conj() * _matvec(op, full), axis=0))
            if rho is not None and j in checkpoint_steps:
                live = grp.block[:, alive[grp.cols]]
                idx = grp.sector.idx
                rho[checkpoint_steps[j]][np.ix_(idx, idx)] += live @ live.conj().T

    record(0)
    step = 0
    for j in range(1, n_out):
        for _ in range(sub):
            u = uniforms[step]
            moves = []
            for key, grp in groups.items():
                sec, block = grp.sector, grp.block
                m_live = alive[grp.cols]
                if jumps:
                    if sec.rates is not None:
                        p = dt * (sec.rates @ (np.abs(block) ** 2))
                    else:
                        p = jump_probabilities(grp.embed(D), jumps, dt)
                    total = p.sum(axis=0)
                else:
                    p = np.zeros((0, block.shape[1]))
                    total = np.zeros(block.shape[1])
                bad = m_live & (total >= 1.0)
                for c in np.flatnonzero(bad):
                    log.warning("trajectory %d aborted: jump probability %.4g >= 1 at t=%.6g",
                                indices[grp.cols[c]], total[c], step * dt)
                    alive[grp.cols[c]] = False
                m_live &= ~bad
                q0 = 1.0 - total
                new = sec.advance(block)
                frozen = ~m_live
                if frozen.any():
                    new[:, frozen] = block[:, frozen]
                for c in np.flatnonzero(m_live & (u[grp.cols] >= q0)):
                    m = grp.cols[c]
                    cum = q0[c] + np.cumsum(p[:, c])
                    hits = np.flatnonzero(u[m] < cum)
                    nu = int(hits[0]) if hits.size else int(np.flatnonzero(p[:, c] > 0)[-1])
                    image = _matvec(jumps[nu], grp.embed(D, c))
                    counts[m, nu] += 1
                    if keep_log:
                        log_entries.append((int(indices[m]), (step + 1) * dt, nu))
                    dest = _sector_of(image, charges)
                    if dest == key:
                        new[:, c] = image[sec.idx]
                    else:
                        moves.append((key, c, dest, image))
                grp.block = new / np.linalg.norm(new, axis=0)
            if moves:
                _apply_moves(groups, sectors, moves)
            step += 1
        record(j)
    return ret, obs, rho, counts, alive, log_entries


def _apply_moves(groups: dict, sectors: dict, moves: list) -> None:
    leaving = {}
    for key, c, dest, image in moves:
        leaving.setdefault(key, []).append(c)
        vec = image / np.linalg.norm(image)
        target = groups.get(dest)
        col = groups[key].cols[c]
        piece = vec[sectors[dest].idx, None]
        if target is None:
            groups[dest] = _Group(sectors[dest], np.array([col]), piece)
        else:
            target.cols = np.append(target.cols, col)
            target.block = np.hstack([target.block, piece])
    for key, cs in leaving.items():
        grp = groups[key]
        keep = np.ones(grp.cols.size, dtype=bool)
        keep[cs] = False
        grp.cols, grp.block = grp.cols[keep], grp.block[:, keep]
        if grp.cols.size == 0:
            del groups[key]


def run_ensemble(
    psi0: np.ndarray,
    heff,
    jumps: Sequence,
    t_grid,
    M: int,
    seed: int = 0,
    *,
    dt: Optional[float] = None,
    observables: Optional[dict] = None,
    checkpoints: Optional[Sequence[float]] = None,
    stream_offset: int = 0,
    threads: int = 1,
    keep_log: bool = False,
    no_jump: str = "euler",
    charges: Optional[np.ndarray] = None,
) -> EnsembleResult:
    """Propagate M trajectories from psi0 and average over them.

    Trajectory m uses the stream keyed by (seed, stream_offset + m).  ``dt``
    defaults to the grid spacing and must divide it.  Averages (and the
    returned density matrices) run over trajectories that were not aborted.
    ``no_jump="expm"`` replaces the first-order step I - i Heff dt by the
    exact short-time propagator (an opt-in higher-order variant).
    ``charges`` (one integer per basis state, conserved by Heff) lets each
    trajectory be advanced with the Heff block of its current sector only;
    results agree with the unlabelled run up to floating-point round-off.
    """
    if M < 1:
        raise DomainError("M must be >= 1")
    t = check_times(t_grid)
    if not is_uniform(t):
        raise DomainError("run_ensemble needs a uniform time grid")
    spacing = float(t[1] - t[0]) if t.size > 1 else (dt or 1.0)
    dt = spacing if dt is None else float(dt)
    sub = int(round(spacing / dt))
    if sub < 1 or abs(sub * dt - spacing) > 1e-9 * spacing:
        raise DomainError(f"dt={dt} does not divide the grid spacing {spacing}")
    psi0 = np.asarray(psi0, dtype=complex)
    observables = dict(observables or {})
    checkpoint_steps = None
    if checkpoints is not None:
        checkpoint_steps = {}
        for c, tc in enumerate(checkpoints):
            hit = np.flatnonzero(np.abs(t - tc) <= 1e-9 * max(1.0, abs(tc)))
            if hit.size == 0:
                raise DomainError(f"checkpoint {tc} is not on the time grid")
            checkpoint_steps[int(hit[0])] = c
    jumps = list(jumps)
    diag_rates = _diagonal_rates(jumps) if jumps else None
    sectors = _prepare_sectors(heff, diag_rates, charges, dt, no_jump)
    charges = None if charges is None else np.asarray(charges)

    index = np.arange(M) + stream_offset
    chunks = [index[i : i + CHUNK] for i in range(0, M, CHUNK)]

    def work(idx):
        return _run_chunk(psi0, sectors, charges, jumps, t.size - 1, sub, dt, seed, idx, observables, checkpoint_steps, keep_log)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    alive = np.concatenate([p[4] for p in parts])
    aborted = int((~alive).sum())
    if aborted > MAX_ABORTED_FRACTION * M:
        raise TimestepTooLargeError(f"{aborted} of {M} trajectories aborted (jump probability >= 1); reduce dt")
    n_live = int(alive.sum())

    def reduce(arr):
        live = arr[:, alive]
        mean = live.mean(axis=1)
        err = live.std(axis=1, ddof=1) / np.sqrt(n_live) if n_live > 1 else np.full(mean.shape, np.nan)
        return mean, err

    ret = np.concatenate([p[0] for p in parts], axis=1)
    g, g_err = reduce(ret)
    obs = {name: reduce(np.concatenate([p[1][name] for p in parts], axis=1)) for name in observables}
    rho = None
    if checkpoint_steps is not None:
        rho = sum(p[2] for p in parts) / n_live
    counts = np.concatenate([p[3] for p in parts], axis=0)
    entries = [e for p in parts for e in p[5]]
    return EnsembleResult(
        M, t, g, g_err, obs, rho,
        None if checkpoints is None else np.asarray(checkpoints, dtype=float),
        counts, aborted, seed, dt, entries,
    )


def reconstruct_density(ensemble: EnsembleResult, checkpoint_times: Optional[Sequence[float]] = None) -> np.ndarray:
    """Trajectory-averaged density matrices at the requested checkpoints."""
    if ensemble.rho is None:
        raise DomainError("ensemble was run without checkpoints; pass checkpoints= to run_ensemble")
    if checkpoint_times is None:
        return ensemble.rho
    out = []
    for tc in checkpoint_times:
        hit = np.flatnonzero(np.abs(ensemble.checkpoints - tc) <= 1e-9 * max(1.0, abs(tc)))
        if hit.size == 0:
            raise DomainError(f"time {tc} was not stored as a checkpoint")
        out.append(ensemble.rho[hit[0]])
    return np.array(out)


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/2) || a - b ||_1 for Hermitian a, b."""
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))
