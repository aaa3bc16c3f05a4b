"""Euler-Maruyama integration of the diffusive stochastic master equation.

One step of the full (density-matrix) integrator applies

    rho <- rho + [ -i[H, rho] + sum_k (L_k rho L_k^dag - {L_k^dag L_k, rho}/2) ] dt
               + sum_k sqrt(zeta_k) (L_k rho + rho L_k^dag - <L_k + L_k^dag> rho) dW_k,

followed by Hermitization and (scheduled) trace renormalization.  The reduced
classical oracle integrates the closed overlap equation
``x <- clamp(x + 2 gamma x (1-x) dW)`` with the same grid and hitting rule, so
the two routes are directly comparable.

Ensembles are deterministic for a fixed ``(seed, n_traj)`` regardless of
batching, chunking, or worker count: trajectory ``i`` consumes the
counter-based stream ``stream_for(seed, i)`` in fixed blocks of
:data:`NOISE_BLOCK` standard-normal draws per channel.

Hitting detection is on the discrete grid: the recorded time is the first
grid point at which ``x >= 1 - eps`` (upper, side 1) or ``x <= eps`` (lower,
side 2).  Trajectories that never cross by ``t_max`` are reported censored,
never dropped.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .analytic import eta
from .errors import DivergenceError, ModelError
from .linalg import TOL, state_vector
from .stats import HittingRecord
from .subspaces import QuantumModel

__all__ = [
    "NOISE_BLOCK",
    "IntegratorConfig",
    "TrajectoryState",
    "OverlapTrace",
    "ReducedDiagnostics",
    "stream_for",
    "step_sme",
    "step_reduced",
    "simulate_trajectory",
    "simulate_ensemble",
    "simulate_reduced_ensemble",
    "ensemble_means",
    "lindblad_average",
    "default_t_max",
    "resolve_workers",
]

log = logging.getLogger(__name__)

#: Per-trajectory noise is drawn in fixed blocks of this many steps, making a
#: trajectory's realized path independent of batch membership and scheduling.
NOISE_BLOCK = 256

#: Abort an ensemble when more than this fraction of trajectories diverges.
MAX_DIVERGED_FRACTION = 1e-3


@dataclass(frozen=True)
class IntegratorConfig:
    """Discretization of the stochastic integrators.

    ``t_max = None`` resolves to 50x the worst-case mean exit time of the run
    (evaluated at overlap 1/2 with the partition's efficiency-adjusted noise
    strength).
    """

    dt: float = 1e-3
    t_max: float | None = None
    scheme: str = "euler_maruyama"
    renormalize_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ModelError(f"dt must be positive, got {self.dt}")
        if self.t_max is not None and self.dt > self.t_max:
            raise ModelError(f"dt = {self.dt} exceeds t_max = {self.t_max}")
        if self.scheme != "euler_maruyama":
            raise ModelError(f"unsupported scheme {self.scheme!r}")
        if self.renormalize_every < 1:
            raise ModelError("renormalize_every must be >= 1")


@dataclass
class TrajectoryState:
    """One realization: current density matrix, elapsed time, its noise stream."""

    rho: np.ndarray
    t: float
    rng: np.random.Generator | None = None


@dataclass
class OverlapTrace:
    """Recorded time series of one trajectory: overlap plus named observables."""

    times: np.ndarray
    x: np.ndarray
    observables: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ReducedDiagnostics:
    """Clamp diagnostics of a reduced-SDE run."""

    clamp_events: int
    total_steps: int

    @property
    def clamp_fraction(self):
        return self.clamp_events / self.total_steps if self.total_steps else 0.0


def stream_for(seed, trajectory_index):
    """Counter-based random stream of one trajectory, derived from (seed, index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trajectory_index),))
    return np.random.Generator(np.random.Philox(ss))


def default_t_max(gamma, epsilon):
    """50x the mean exit time from overlap 1/2 (its maximizer over starts)."""
    if gamma <= 0.0:
        raise ModelError("gamma is zero: the overlap does not diffuse, set t_max explicitly")
    return float(50.0 * (eta(0.5, gamma) - eta(epsilon, gamma)))


def resolve_workers(n_workers=None):
    """Worker count: explicit argument, else QFPT_THREADS, else CPU count."""
    if n_workers is not None:
        return max(1, int(n_workers))
    env = os.environ.get("QFPT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


# --- single-step operations -------------------------------------------------


def step_sme(state, model, dt, dW, renormalize=True):
    """One Euler-Maruyama step of the stochastic master equation.

    ``dW`` holds one Wiener increment per measurement channel.  The result is
    Hermitized; the trace is checked against the divergence threshold and, if
    ``renormalize`` (the point in the schedule), reset to one.
    """
    dW = np.atleast_1d(np.asarray(dW, dtype=float))
    if dW.shape != (model.n_channels,):
        raise ModelError(f"expected {model.n_channels} Wiener increments, got shape {dW.shape}")
    rho = np.asarray(state.rho, dtype=complex)
    H = model.H
    out = rho + dt * (-1j) * (H @ rho - rho @ H)
    for L, z, dw in zip(model.Ls, model.zetas, dW):
        Ld = L.conj().T
        K = Ld @ L
        Lr = L @ rho
        out = out + dt * (Lr @ Ld - 0.5 * (K @ rho + rho @ K))
        m = float(np.einsum("ij,ji->", L + Ld, rho).real)
        out = out + math.sqrt(z) * dw * (Lr + rho @ Ld - m * rho)
    out = 0.5 * (out + out.conj().T)
    tr = float(np.trace(out).real)
    if abs(tr - 1.0) > TOL.trace_divergence:
        raise DivergenceError(
            f"trace drifted to {tr!r} within one step; decrease dt (have dt={dt})"
        )
    if renormalize:
        out = out / tr
    return TrajectoryState(rho=out, t=state.t + dt, rng=state.rng)


def step_reduced(x, gamma, dt, dW):
    """One step of the closed overlap diffusion, clamped to [0, 1].

    The endpoints are fixed points; ``dt`` only fixes the scale of ``dW`` and
    does not appear explicitly.
    """
    del dt
    x_new = x + 2.0 * gamma * x * (1.0 - x) * dW
    return min(max(x_new, 0.0), 1.0)


# --- batched kernel ----------------------------------------------------------
#
# Batches are stored as R[i, b, k] = rho_b[i, k] so that both A @ rho_b and
# rho_b @ A over the whole batch are single GEMMs on contiguous views.


class _SmeKernel:
    def __init__(self, H, Ls, zetas, dt):
        d = H.shape[0]
        self.d = d
        self.dt = float(dt)
        K_sum = sum((L.conj().T @ L for L in Ls), np.zeros((d, d), dtype=complex))
        self.S = (-1j) * H - 0.5 * K_sum
        self.Ls = [np.ascontiguousarray(L) for L in Ls]
        self.Ldags = [np.ascontiguousarray(L.conj().T) for L in Ls]
        self.Ms = [L + L.conj().T for L in Ls]
        self.sqz = [math.sqrt(z) for z in zetas]

        # diagonal measurement operators admit an elementwise update: the
        # dissipator and noise terms become a Hermitian Hadamard mask,
        # leaving one GEMM per step for the Hamiltonian flow
        self.diagonal = bool(Ls) and all(
            np.count_nonzero(L - np.diag(np.diagonal(L))) == 0 for L in Ls
        )
        if self.diagonal:
            self.minus_i_dt_H = np.ascontiguousarray((-1j * self.dt) * H)
            self.plus_i_dt_H = np.ascontiguousarray((+1j * self.dt) * H)
            self.ls = [np.diagonal(L).copy() for L in Ls]
            mask = np.ones((d, d), dtype=complex)
            for lv in self.ls:
                mask += self.dt * (
                    np.outer(lv, lv.conj()) - 0.5 * (np.abs(lv) ** 2)[:, None] - 0.5 * (np.abs(lv) ** 2)[None, :]
                )
            self.C1 = mask
            self.C2 = [sz * (lv[:, None] + lv.conj()[None, :]) for sz, lv in zip(self.sqz, self.ls)]
            self.mvecs = [2.0 * lv.real for lv in self.ls]
            self._gbuf = None

    def step(self, R, dWs, out=None):
        """Advance the batch one step; the update is Hermitian by construction.

        ``out``, when given, receives the result (ping-pong buffering); it must
        not alias ``R``.
        """
        if self.diagonal:
            return self._step_diagonal(R, dWs, out)
        res = self._step_general(R, dWs)
        if out is not None:
            out[...] = res
            return out
        return res

    def _step_general(self, R, dWs):
        d = self.d
        B = R.shape[1]
        Rm = R.reshape(d, B * d)
        Y = self.dt * (self.S @ Rm).reshape(d, B, d)
        for L, Ld, M, sz, dW in zip(self.Ls, self.Ldags, self.Ms, self.sqz, dWs):
            LR = (L @ Rm).reshape(d, B, d)
            LRLd = (LR.reshape(d * B, d) @ Ld).reshape(d, B, d)
            m = np.einsum("ij,jbi->b", M, R).real
            w = sz * dW
            Y += (0.5 * self.dt) * LRLd
            Y += w[None, :, None] * LR
            Y -= (0.5 * w * m)[None, :, None] * R
        return R + Y + Y.conj().transpose(2, 1, 0)

    def _step_diagonal(self, R, dWs, out=None):
        d = self.d
        B = R.shape[1]
        diag = np.einsum("ibi->bi", R).real
        A = out if out is not None and out.shape == R.shape else np.empty_like(R)
        first = True
        for C2, mvec, sz, dW in zip(self.C2, self.mvecs, self.sqz, dWs):
            shift = sz * dW * (diag @ mvec)
            if first:
                np.multiply(dW[None, :, None], C2[:, None, :], out=A)
                first = False
            else:
                A += dW[None, :, None] * C2[:, None, :]
            A -= shift[None, :, None]
        if first:  # no channels
            A[...] = 0.0
        A += self.C1[:, None, :]
        np.multiply(R, A, out=A)
        if self._gbuf is None or self._gbuf.shape != (d, B, d):
            self._gbuf = np.empty_like(R)
        G = self._gbuf
        np.matmul(self.minus_i_dt_H, R.reshape(d, B * d), out=G.reshape(d, B * d))
        A += G
        np.matmul(R.reshape(d * B, d), self.plus_i_dt_H, out=G.reshape(d * B, d))
        A += G
        return A


def _batch_traces(R):
    return np.einsum("ibi->b", R).real


def _batch_overlaps(P1, R):
    return np.einsum("ij,jbi->b", P1, R).real


def _integrate_sme_chunk(
    H,
    Ls,
    zetas,
    P1,
    psi0,
    dt,
    n_steps,
    renorm_every,
    epsilon,
    seed,
    ids,
    observables=None,
):
    """Integrate one contiguous block of trajectory indices as a batch.

    Returns ``(rows, trace, diverged_ids)`` where rows are
    ``(trajectory_id, side, hit_step, censored)`` tuples and ``trace`` is the
    per-step recording for single-trajectory runs (None otherwise).
    """
    d = H.shape[0]
    ids = np.asarray(ids, dtype=np.int64)
    B0 = ids.size
    n_channels = len(Ls)
    kernel = _SmeKernel(H, Ls, zetas, dt)
    sqrt_dt = math.sqrt(dt)
    upper, lower = 1.0 - epsilon, epsilon

    rho0 = np.outer(psi0, psi0.conj())
    R = np.ascontiguousarray(np.broadcast_to(rho0[:, None, :], (d, B0, d)).copy())
    gens = [stream_for(seed, int(i)) for i in ids]
    buf = np.empty((B0, NOISE_BLOCK, n_channels))
    alive = np.ones(B0, dtype=bool)
    live_ids = ids.copy()

    rows = []
    diverged = []
    recording = observables is not None and B0 == 1
    rec_x, rec_obs = [], {name: [] for name in (observables or {})}

    def record_point(Rb):
        rec_x.append(float(_batch_overlaps(P1, Rb)[0]))
        for name, op in observables.items():
            rec_obs[name].append(float(np.einsum("ij,jbi->b", op, Rb).real[0]))

    # hits at t = 0 (start already past a threshold)
    x = _batch_overlaps(P1, R)
    if recording:
        record_point(R)
    hit0 = (x >= upper) | (x <= lower)
    for b in np.nonzero(hit0)[0]:
        side = 1 if x[b] >= upper else 2
        rows.append((int(live_ids[b]), side, 0, False))
        log.warning("trajectory %d starts beyond a threshold; hit recorded at t = 0", live_ids[b])
    alive &= ~hit0

    spare = np.empty_like(R)
    s = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while s < n_steps and alive.any():
            pos = s % NOISE_BLOCK
            if pos == 0:
                for b in np.nonzero(alive)[0]:
                    buf[b] = gens[b].standard_normal((NOISE_BLOCK, n_channels))
            dWs = buf[:, pos, :].T * sqrt_dt  # (K, B)
            if spare.shape != R.shape:
                spare = np.empty_like(R)
            R, spare = kernel.step(R, dWs, out=spare), R
            tr = _batch_traces(R)
            dev = np.where(alive, np.abs(tr - 1.0), 0.0)
            bad = dev > TOL.trace_divergence
            if bad.any():
                for b in np.nonzero(bad)[0]:
                    diverged.append(int(live_ids[b]))
                alive &= ~bad
            if (s + 1) % renorm_every == 0 and np.nanmax(dev) > 1e-13:
                # renormalizing by a factor within one ulp of 1 is a no-op;
                # skipping it then keeps the scheduled-repair semantics
                safe = np.where((tr == 0.0) | ~np.isfinite(tr), 1.0, tr)
                R /= safe[None, :, None]
            x = _batch_overlaps(P1, R)
            if recording and alive[0]:
                record_point(R)
            newly = alive & ((x >= upper) | (x <= lower))
            if newly.any():
                for b in np.nonzero(newly)[0]:
                    side = 1 if x[b] >= upper else 2
                    rows.append((int(live_ids[b]), side, s + 1, False))
                alive &= ~newly
            s += 1
            # prune finished rows once they are a sizeable fraction of the batch
            n_dead = int((~alive).sum())
            if n_dead and (n_dead > max(16, alive.size // 8) or not alive.any()):
                keep = alive
                R = np.ascontiguousarray(R[:, keep, :])
                buf = buf[keep]
                gens = [g for g, k in zip(gens, keep) if k]
                live_ids = live_ids[keep]
                alive = np.ones(live_ids.size, dtype=bool)

    for b in range(live_ids.size):
        if alive[b]:
            rows.append((int(live_ids[b]), 0, n_steps, True))

    trace = None
    if recording:
        times = np.arange(len(rec_x)) * dt
        trace = OverlapTrace(
            times=times,
            x=np.array(rec_x),
            observables={k: np.array(v) for k, v in rec_obs.items()},
        )
    return rows, trace, diverged


def _run_sme_chunk(payload):
    return _integrate_sme_chunk(*payload)


def _validate_run(model, partition, psi0, cfg, epsilon):
    if not 0.0 < epsilon < 0.5:
        raise ModelError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    psi0 = state_vector(psi0)
    if psi0.size != model.dim:
        raise ModelError(f"initial state has dim {psi0.size}, model has dim {model.dim}")
    p_comp = float(np.einsum("i,ij,j->", psi0.conj(), partition.P_P, psi0).real)
    if p_comp >= 1e-9:
        raise ModelError(
            f"initial state has weight {p_comp:.3e} outside the decoherence-free collection; "
            "the overlap diffusion starts only once the state is fully inside it"
        )
    t_max = cfg.t_max if cfg.t_max is not None else default_t_max(partition.gamma, epsilon)
    if cfg.dt > t_max:
        raise ModelError(f"dt = {cfg.dt} exceeds t_max = {t_max}")
    n_steps = max(1, int(round(t_max / cfg.dt)))
    return psi0, t_max, n_steps


def _records_from_rows(rows, dt, t_max):
    out = []
    for traj_id, side, hit_step, censored in rows:
        t = t_max if censored else hit_step * dt
        out.append(HittingRecord(trajectory_id=traj_id, side=side, hit_time=t, censored=censored))
    out.sort(key=lambda r: r.trajectory_id)
    return out


def simulate_trajectory(model, partition, psi0, cfg, epsilon, record=False, observables=None):
    """Integrate one trajectory until a threshold is crossed (or ``t_max``).

    Returns ``(record, trace)``; ``trace`` is ``None`` unless ``record`` is
    set, in which case the per-step overlap and any named observables
    (a mapping of name -> operator) are recorded.  Uses the stream of
    trajectory index 0, so this is exactly the first member of the
    corresponding ensemble.
    """
    psi0, t_max, n_steps = _validate_run(model, partition, psi0, cfg, epsilon)
    obs = dict(observables or {}) if record else None
    rows, trace, diverged = _integrate_sme_chunk(
        model.H,
        list(model.Ls),
        list(model.zetas),
        partition.P_Q1,
        psi0,
        cfg.dt,
        n_steps,
        cfg.renormalize_every,
        epsilon,
        cfg.seed,
        np.array([0]),
        observables=obs,
    )
    if diverged:
        raise DivergenceError(f"trajectory diverged (trace blow-up); decrease dt from {cfg.dt}")
    rec = _records_from_rows(rows, cfg.dt, t_max)[0]
    return rec, trace


def simulate_ensemble(model, partition, psi0, cfg, epsilon, n_traj, n_workers=None):
    """Integrate ``n_traj`` independent trajectories; deterministic for a seed.

    Work is distributed over a process pool in contiguous chunks of trajectory
    indices; results are identical for any worker count because trajectory
    ``i`` always consumes ``stream_for(cfg.seed, i)``.  Raises if more than
    0.1% of trajectories diverge; divergent trajectories are otherwise
    dropped from the returned records (with a warning).
    """
    if n_traj < 1:
        raise ModelError("n_traj must be >= 1")
    psi0, t_max, n_steps = _validate_run(model, partition, psi0, cfg, epsilon)
    workers = resolve_workers(n_workers)
    chunk = 4096 if model.dim <= 8 else 1024
    chunk = min(chunk, max(64, math.ceil(n_traj / max(workers, 1))))
    payloads = []
    for start in range(0, n_traj, chunk):
        ids = np.arange(start, min(start + chunk, n_traj))
        payloads.append(
            (
                model.H,
                list(model.Ls),
                list(model.zetas),
                partition.P_Q1,
                psi0,
                cfg.dt,
                n_steps,
                cfg.renormalize_every,
                epsilon,
                cfg.seed,
                ids,
                None,
            )
        )

    rows, diverged = [], []
    if workers == 1 or len(payloads) == 1:
        for p in payloads:
            r, _, dv = _run_sme_chunk(p)
            rows.extend(r)
            diverged.extend(dv)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r, _, dv in pool.map(_run_sme_chunk, payloads):
                rows.extend(r)
                diverged.extend(dv)

    if diverged:
        frac = len(diverged) / n_traj
        if frac > MAX_DIVERGED_FRACTION:
            raise DivergenceError(
                f"{len(diverged)}/{n_traj} trajectories diverged ({frac:.2%}); decrease dt"
            )
        log.warning("%d/%d trajectories diverged and were dropped", len(diverged), n_traj)
    return _records_from_rows(rows, cfg.dt, t_max)


# --- reduced classical oracle -------------------------------------------------


def _integrate_reduced_chunk(x0s, gamma, dt, n_steps, epsilon, seed, ids):
    B0 = ids.size
    sqrt_dt = math.sqrt(dt)
    upper, lower = 1.0 - epsilon, epsilon
    x = np.array(x0s, dtype=float)
    gens = [stream_for(seed, int(i)) for i in ids]
    buf = np.empty((B0, NOISE_BLOCK))
    alive = np.ones(B0, dtype=bool)
    live_ids = np.asarray(ids, dtype=np.int64).copy()
    rows = []
    clamps = 0
    total_steps = 0

    hit0 = (x >= upper) | (x <= lower)
    for b in np.nonzero(hit0)[0]:
        rows.append((int(live_ids[b]), 1 if x[b] >= upper else 2, 0, False))
    alive &= ~hit0

    s = 0
    while s < n_steps and alive.any():
        pos = s % NOISE_BLOCK
        if pos == 0:
            for b in np.nonzero(alive)[0]:
                buf[b] = gens[b].standard_normal(NOISE_BLOCK)
        dW = buf[:, pos] * sqrt_dt
        prop = x + 2.0 * gamma * x * (1.0 - x) * dW
        clamps += int(np.count_nonzero(alive & ((prop < 0.0) | (prop > 1.0))))
        total_steps += int(alive.sum())
        x = np.clip(prop, 0.0, 1.0)
        newly = alive & ((x >= upper) | (x <= lower))
        if newly.any():
            for b in np.nonzero(newly)[0]:
                rows.append((int(live_ids[b]), 1 if x[b] >= upper else 2, s + 1, False))
            alive &= ~newly
        s += 1
        n_dead = int((~alive).sum())
        if n_dead and (n_dead > max(64, alive.size // 8) or not alive.any()):
            keep = alive
            x = x[keep]
            buf = buf[keep]
            gens = [g for g, k in zip(gens, keep) if k]
            live_ids = live_ids[keep]
            alive = np.ones(live_ids.size, dtype=bool)

    for b in range(live_ids.size):
        if alive[b]:
            rows.append((int(live_ids[b]), 0, n_steps, True))
    return rows, clamps, total_steps


def simulate_reduced_ensemble(x0, gamma, cfg, epsilon, n_traj, n_workers=None):
    """Monte Carlo over the closed overlap diffusion (the classical oracle).

    ``x0`` may be a scalar or one value per trajectory (e.g. to average over a
    start distribution).  Returns ``(records, diagnostics)`` where the
    diagnostics report the clamp frequency of the [0, 1] projection.
    """
    del n_workers  # cheap enough to integrate in-process; kept for symmetry
    if n_traj < 1:
        raise ModelError("n_traj must be >= 1")
    if not 0.0 < epsilon < 0.5:
        raise ModelError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (n_traj,))
    if np.any((x0s < 0.0) | (x0s > 1.0)):
        raise ModelError("x0 must lie in [0, 1]")
    t_max = cfg.t_max if cfg.t_max is not None else default_t_max(gamma, epsilon)
    n_steps = max(1, int(round(t_max / cfg.dt)))
    chunk = 8192
    rows, clamps, total = [], 0, 0
    for start in range(0, n_traj, chunk):
        ids = np.arange(start, min(start + chunk, n_traj))
        r, c, t = _integrate_reduced_chunk(x0s[ids], gamma, cfg.dt, n_steps, epsilon, cfg.seed, ids)
        rows.extend(r)
        clamps += c
        total += t
    records = _records_from_rows(rows, cfg.dt, t_max)
    return records, ReducedDiagnostics(clamp_events=clamps, total_steps=total)


# --- fixed-time ensemble statistics (no absorption) ---------------------------


def ensemble_means(model, psi0, cfg, times, observables, n_traj, partition=None):
    """Ensemble means of observables at fixed times, with standard errors.

    Integrates ``n_traj`` trajectories (same streams as the hitting ensembles)
    *without* absorbing thresholds, accumulating the per-trajectory
    expectation of each named observable at the grid points nearest to
    ``times``.  When ``partition`` is given, the overlap with its Q1 is
    recorded under the name ``"x"``.  Returns ``{name: (means, ses)}``.
    """
    if n_traj < 2:
        raise ModelError("n_traj must be >= 2 for standard errors")
    psi0 = state_vector(psi0)
    times = np.asarray(times, dtype=float)
    steps = np.unique(np.round(times / cfg.dt).astype(np.int64))
    n_steps = int(steps.max())
    obs = dict(observables or {})
    if partition is not None:
        obs["x"] = partition.P_Q1

    kernel = _SmeKernel(model.H, list(model.Ls), list(model.zetas), cfg.dt)
    sqrt_dt = math.sqrt(cfg.dt)
    n_channels = model.n_channels
    d = model.dim
    names = sorted(obs)
    sums = {k: np.zeros(len(steps)) for k in names}
    sq_sums = {k: np.zeros(len(steps)) for k in names}

    chunk = 4096 if d <= 8 else 1024
    rho0 = np.outer(psi0, psi0.conj())
    step_index = {int(s): j for j, s in enumerate(steps)}
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_traj, chunk):
            ids = np.arange(start, min(start + chunk, n_traj))
            B = ids.size
            R = np.ascontiguousarray(np.broadcast_to(rho0[:, None, :], (d, B, d)).copy())
            spare = np.empty_like(R)
            gens = [stream_for(cfg.seed, int(i)) for i in ids]
            buf = np.empty((B, NOISE_BLOCK, n_channels))

            def collect(j, Rb):
                for k in names:
                    vals = np.einsum("ij,jbi->b", obs[k], Rb).real
                    sums[k][j] += vals.sum()
                    sq_sums[k][j] += (vals**2).sum()

            if 0 in step_index:
                collect(step_index[0], R)
            for s in range(n_steps):
                pos = s % NOISE_BLOCK
                if pos == 0:
                    for b in range(B):
                        buf[b] = gens[b].standard_normal((NOISE_BLOCK, n_channels))
                dWs = buf[:, pos, :].T * sqrt_dt
                R, spare = kernel.step(R, dWs, out=spare), R
                tr = _batch_traces(R)
                if np.max(np.abs(tr - 1.0)) > TOL.trace_divergence:
                    raise DivergenceError("trace blow-up in snapshot ensemble; decrease dt")
                if (s + 1) % cfg.renormalize_every == 0 and np.max(np.abs(tr - 1.0)) > 1e-13:
                    R /= tr[None, :, None]
                if (s + 1) in step_index:
                    collect(step_index[s + 1], R)

    out = {}
    for k in names:
        mean = sums[k] / n_traj
        var = np.maximum(sq_sums[k] / n_traj - mean**2, 0.0)
        out[k] = (mean, np.sqrt(var / n_traj))
    return out, steps * cfg.dt


# --- deterministic reference ---------------------------------------------------


def lindblad_average(model, rho0, times):
    """Ensemble-averaged evolution: deterministic integration without noise.

    Integrates ``drho/dt = -i[H, rho] + sum_k D[L_k] rho`` (the Wiener-free
    part of the trajectory equation) with a high-order adaptive scheme and
    returns the density matrix at each requested time.
    """
    d = model.dim
    H = model.H
    Ls = model.Ls
    Ks = [L.conj().T @ L for L in Ls]

    def rhs(_, y):
        rho = y.reshape(d, d)
        out = -1j * (H @ rho - rho @ H)
        for L, K in zip(Ls, Ks):
            out += L @ rho @ L.conj().T - 0.5 * (K @ rho + rho @ K)
        return out.ravel()

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(
        rhs,
        (times[0], times[-1]),
        np.asarray(rho0, dtype=complex).ravel(),
        t_eval=times,
        method="DOP853",
        rtol=1e-9,
        atol=1e-11,
    )
    if not sol.success:
        raise DivergenceError(f"deterministic reference integration failed: {sol.message}")
    return sol.y.T.reshape(len(times), d, d)
