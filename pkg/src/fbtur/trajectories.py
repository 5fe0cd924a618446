"""Quantum-jump Monte Carlo unravelling of the feedback master equation.

First-order Euler scheme with fixed ``dt``: in each step at most one jump
occurs, with probability ``p = dt sum_k tr(L_k rho L_k^+)``. A jump selects a
Kraus branch ``b`` of channel ``k`` with weight ``tr(B_b rho B_b^+)``,
``B_b = K^a_k L_k``; otherwise the state is propagated by
``M_0 = 1 - i H_eff dt`` and renormalised.

Each trajectory consumes ``n_steps + 1`` uniforms from its own Philox stream,
keyed by ``(base_seed, trajectory index)``. The first uniform picks an
eigenvector of the initial state (pure-state path); the rest drive the steps
(one uniform per step decides both whether and where to jump). Results are
therefore independent of batching and of the number of worker threads.
"""
import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .errors import InvalidParameter, StepTooCoarse
from .model import require_valid
from .superop import pack

log = logging.getLogger(__name__)

WARN_PROB = 0.1
DEFAULT_DT_SCALE = 1e-3
MAX_BATCH = 256


@dataclass(frozen=True)
class TrajectoryRecord:
    """One sampled trajectory.

    ``events`` holds ``(t, k, alpha)`` triples; ``alpha`` is ``None`` for
    channels whose feedback map has a single Kraus operator.
    """

    seed: int
    events: tuple
    current: float
    n_jumps: int


@dataclass(frozen=True)
class EnsembleStats:
    """Moments of the current over an ensemble of trajectories."""

    n_traj: int
    mean_J: float
    var_J: float
    se_mean: float
    se_var: float
    histogram: tuple
    mean_jumps: float
    se_jumps: float
    mean_state: np.ndarray = field(repr=False)
    dt: float
    tau: float
    base_seed: int
    max_jump_prob: float
    currents: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    records: Optional[tuple] = field(default=None, repr=False, compare=False)

    def z_mean(self, reference):
        return (self.mean_J - reference) / self.se_mean

    def z_var(self, reference):
        return (self.var_J - reference) / self.se_var


def stream(base_seed, index, n):
    """``n`` uniforms of trajectory ``index`` under ``base_seed``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss)).random(n)


def default_dt(spec, tau):
    """``1e-3 / max rate``, capped at ``1e-3 tau``."""
    gam = sum(ch.operator.conj().T @ ch.operator for ch in spec.channels)
    rate = float(np.linalg.eigvalsh(gam)[-1])
    return DEFAULT_DT_SCALE / max(rate, 1.0 / tau)


def _setup(spec, tau, dt, path):
    require_valid(spec)
    if not tau > 0:
        raise InvalidParameter(f"tau must be positive, got {tau}")
    dt = default_dt(spec, tau) if dt is None else float(dt)
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    n_steps = max(1, int(np.ceil(tau / dt - 1e-9)))
    dt = tau / n_steps
    gam = sum(ch.operator.conj().T @ ch.operator for ch in spec.channels)
    pmax = float(np.linalg.eigvalsh(gam)[-1]) * dt
    if pmax >= 1.0:
        raise StepTooCoarse(f"jump probability per step can reach {pmax:.3g} >= 1; reduce dt")
    if pmax > WARN_PROB:
        warnings.warn(f"jump probability per step can reach {pmax:.3g}; the Euler scheme is inaccurate", stacklevel=3)
    packed = pack(spec)
    if path == "auto":
        pure = packed.unitary_like
    elif path in ("pure", "mixed"):
        pure = path == "pure"
    else:
        raise InvalidParameter(f"unknown path {path!r}")
    w, v = np.linalg.eigh(0.5 * (spec.initial_state + spec.initial_state.conj().T))
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return dt, n_steps, packed, pure, w, v


def _run_batch(mod, km, dt, base_seed, start, stop, n_steps, init_p, init_v, rho0, pure, cap):
    U = np.empty((stop - start, n_steps + 1))
    for row, i in enumerate(range(start, stop)):
        U[row] = stream(base_seed, i, n_steps + 1)
    out = mod.jumps(km, dt, U, init_p, init_v, rho0, pure, cap)
    if out[-1] == mod.STATUS_STEP_TOO_COARSE:
        raise StepTooCoarse("a jump probability reached 1 during sampling; reduce dt")
    return out


def _records(out, start, dt, packed, spec, cap):
    J, nj, _, _, ev_count, ev_step, ev_branch, _ = out
    owner, alpha = packed.branch_owner()
    multi = np.diff(packed.first) > 1
    recs = []
    for row in range(len(J)):
        n = int(ev_count[row])
        if n > cap:
            return None
        events = tuple(
            (
                (int(ev_step[row, e]) + 1) * dt,
                spec.channels[owner[b]].k,
                int(alpha[b]) if multi[owner[b]] else None,
            )
            for e, b in ((e, int(ev_branch[row, e])) for e in range(n))
        )
        recs.append(TrajectoryRecord(start + row, events, float(J[row]), int(nj[row])))
    return recs


def simulate_trajectory(spec, tau, dt=None, rng_seed=0, path="auto", backend=None):
    """Sample a single trajectory deterministically from ``rng_seed``."""
    dt, n_steps, packed, pure, w, v = _setup(spec, tau, dt, path)
    mod = _backend.get(backend)
    km = _backend.kernel_model(packed, backend)
    ss = np.random.SeedSequence(int(rng_seed))
    U = np.random.Generator(np.random.Philox(ss)).random(n_steps + 1)[None, :]
    cap = 64
    while True:
        out = mod.jumps(km, dt, U, w, v, spec.initial_state, pure, cap)
        if out[-1] == mod.STATUS_STEP_TOO_COARSE:
            raise StepTooCoarse("a jump probability reached 1 during sampling; reduce dt")
        recs = _records(out, 0, dt, packed, spec, cap)
        if recs is not None:
            rec = recs[0]
            return TrajectoryRecord(int(rng_seed), rec.events, rec.current, rec.n_jumps)
        cap *= 4


def run_ensemble(
    spec,
    tau,
    dt=None,
    n_traj=1000,
    base_seed=0,
    threads=1,
    keep_records=False,
    bins=None,
    path="auto",
    backend=None,
    batch_size=None,
):
    """Sample ``n_traj`` trajectories and summarise the current ``J``.

    Standard errors: ``se_mean = sqrt(var/n)`` and
    ``se_var = sqrt((m4 - m2^2) / n)`` with central sample moments.
    Trajectory ``i`` always uses the stream ``(base_seed, i)``, so the
    result is bit-identical for any ``threads`` and ``batch_size``.
    """
    if n_traj < 2:
        raise InvalidParameter("n_traj must be at least 2")
    dt, n_steps, packed, pure, w, v = _setup(spec, tau, dt, path)
    mod = _backend.get(backend)
    km = _backend.kernel_model(packed, backend)
    if batch_size is None:
        batch_size = int(min(MAX_BATCH, max(1, 2**22 // (n_steps + 1))))
    bounds = [(s, min(s + batch_size, n_traj)) for s in range(0, n_traj, batch_size)]
    cap = 0
    if keep_records:
        cap = max(16, int(8 * np.sqrt(n_steps)))
    rho0 = np.ascontiguousarray(spec.initial_state)

    def work(b):
        return _run_batch(mod, km, dt, base_seed, b[0], b[1], n_steps, w, v, rho0, pure, cap)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, bounds))
    else:
        outs = [work(b) for b in bounds]

    J = np.concatenate([o[0] for o in outs])
    nj = np.concatenate([o[1] for o in outs]).astype(float)
    maxp = max(float(np.max(o[2])) for o in outs)
    mean_state = sum(o[3].sum(axis=0) for o in outs) / n_traj

    records = None
    if keep_records:
        records = []
        for (start, stop), out in zip(bounds, outs):
            recs = _records(out, start, dt, packed, spec, cap)
            if recs is None:
                recs = _records(
                    _run_batch(mod, km, dt, base_seed, start, stop, n_steps, w, v, rho0, pure, 64 * cap),
                    start, dt, packed, spec, 64 * cap,
                )
            records.extend(recs)
        records = tuple(records)

    n = len(J)
    mean = float(J.mean())
    dev = J - mean
    m2 = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    var = float(dev @ dev / (n - 1))
    if bins is None:
        lo, hi = np.floor(J.min()) - 0.5, np.ceil(J.max()) + 0.5
        edges = np.arange(lo, hi + 1.0)
    else:
        edges = np.histogram_bin_edges(J, bins=bins)
    counts, edges = np.histogram(J, bins=edges)
    return EnsembleStats(
        n_traj=n,
        mean_J=mean,
        var_J=var,
        se_mean=float(np.sqrt(var / n)),
        se_var=float(np.sqrt(max(m4 - m2 * m2, 0.0) / n)),
        histogram=(tuple(edges.tolist()), tuple(int(c) for c in counts)),
        mean_jumps=float(nj.mean()),
        se_jumps=float(nj.std(ddof=1) / np.sqrt(n)),
        mean_state=mean_state,
        dt=dt,
        tau=float(tau),
        base_seed=int(base_seed),
        max_jump_prob=maxp,
        currents=J,
        records=records,
    )


def write_trajectories_csv(records, path):
    """One row per jump event: trajectory, t, k, alpha (empty when single-branch)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj", "t", "k", "alpha"])
        for rec in records:
            for t, k, a in rec.events:
                w.writerow([rec.seed, format(t, ".17g"), k, "" if a is None else a])
