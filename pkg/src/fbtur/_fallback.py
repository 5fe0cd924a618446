"""Pure-numpy implementations of the hot kernels.

Same call signatures and return layouts as the compiled ``_kernels`` module.
Used when the extension is unavailable or ``FBTUR_BACKEND=python`` is set.
"""
import numpy as np

NAME = "python"

TINY_RATE = 1e-14
TINY_DENOM = 1e-15
POSITIVITY_TOL = 1e-6

STATUS_OK = 0
STATUS_POSITIVITY = 1
STATUS_STEP_TOO_COARSE = 2


class Model:
    def __init__(self, H, L, LdL, B, first, pair, weight, delta_s, trivial):
        self.H = np.ascontiguousarray(H, dtype=complex)
        self.L = np.ascontiguousarray(L, dtype=complex)
        self.LdL = np.ascontiguousarray(LdL, dtype=complex)
        self.B = np.ascontiguousarray(B, dtype=complex)
        self.Bd = np.conj(np.swapaxes(self.B, 1, 2))
        self.BdB = self.Bd @ self.B
        self.first = np.asarray(first, dtype=np.int32)
        self.pair = np.asarray(pair, dtype=np.int32)
        self.weight = np.asarray(weight, dtype=float)
        self.delta_s = np.asarray(delta_s, dtype=float)
        self.trivial = np.asarray(trivial, dtype=bool)
        self.d = self.H.shape[0]
        self.K = self.L.shape[0]
        self.NB = self.B.shape[0]
        self.Gam = self.LdL.sum(axis=0)
        self.owner = np.repeat(np.arange(self.K), np.diff(self.first))


def _chan_sandwich(m, x):
    per_branch = m.B @ x @ m.Bd
    return np.add.reduceat(per_branch, m.first[:-1], axis=0)


def _liou(m, x, S):
    return -1j * (m.H @ x - x @ m.H) + S.sum(axis=0) - 0.5 * (m.Gam @ x + x @ m.Gam)


def _entropies(xs, clip):
    lam = np.maximum(np.linalg.eigvalsh(xs), 0.0)
    return -np.sum(lam * np.log(np.maximum(lam, clip)), axis=-1)


def _rates(m, rho, Lrho, Srho, phi, clip):
    """Rates in the order s_env, activity, mi, fisher, sigma, j, j_phi, s_sys, entropy."""
    r = np.real(np.einsum("kab,ba->k", m.LdL, rho))
    rs = r[m.pair]
    den = r + rs
    safe = np.where(den >= TINY_DENOM, den, 1.0)
    ell = np.where(den >= TINY_DENOM, (r - rs) / safe, 0.0)

    lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    p = np.maximum(lam, 0.0)
    pc = np.maximum(p, clip)
    lnr = (V * np.log(pc)) @ V.conj().T
    entropy = -np.sum(p * np.log(pc))

    M = V.conj().T @ m.L @ V
    W = np.abs(M) ** 2
    x = W * p[None, None, :]
    y = np.swapaxes(W[m.pair], 1, 2) * p[None, :, None]
    xl = np.maximum(W * pc[None, None, :], 1e-300)
    yl = np.maximum(np.swapaxes(W[m.pair], 1, 2) * pc[None, :, None], 1e-300)
    keep = (x >= TINY_DENOM) | (y >= TINY_DENOM)
    sigma = 0.5 * np.sum(np.where(keep, (x - y) * np.log(xl / yl), 0.0))

    mi = 0.0
    active = np.flatnonzero((~m.trivial) & (r >= TINY_RATE))
    if active.size:
        X = m.L[active] @ rho @ np.conj(np.swapaxes(m.L[active], 1, 2))
        ra = r[active][:, None, None]
        post = X / ra
        fed = Srho[active] / ra
        s_post = _entropies(post, clip)
        s_fed = _entropies(fed, clip)
        cross = np.real(np.einsum("kab,ba->k", fed - post, lnr))
        mi = float(np.sum(r[active] * (-s_fed + s_post - cross)))

    s_sys = -np.real(np.sum(Lrho * lnr.T))
    j_phi = float(np.dot(m.weight, np.real(np.einsum("kab,ba->k", m.LdL, phi))))
    rates = np.array([
        np.dot(m.delta_s, r),
        r.sum(),
        mi,
        np.dot(ell * ell, r),
        sigma,
        np.dot(m.weight, r),
        j_phi,
        s_sys,
        entropy,
    ])
    return rates, ell, lam[0]


def deriv(m, y, clip):
    """Time derivative of the stacked state ``(rho, rho1, rho2, phi)`` and the rates at ``rho``."""
    rho, rho1, rho2, phi = y
    Srho = _chan_sandwich(m, rho)
    Lrho = _liou(m, rho, Srho)
    c = m.weight[:, None, None]
    S1 = _chan_sandwich(m, rho1)
    S2 = _chan_sandwich(m, rho2)
    Sphi = _chan_sandwich(m, phi)
    rates, ell, min_eig = _rates(m, rho, Lrho, Srho, phi, clip)
    anti = m.LdL @ rho + rho @ m.LdL
    drive = np.sum(ell[:, None, None] * (Srho - 0.5 * anti), axis=0)
    dy = np.empty_like(y)
    dy[0] = Lrho
    dy[1] = _liou(m, rho1, S1) + np.sum(c * Srho, axis=0)
    dy[2] = _liou(m, rho2, S2) + 2.0 * np.sum(c * S1, axis=0) + np.sum(c * c * Srho, axis=0)
    dy[3] = _liou(m, phi, Sphi) + drive
    return dy, rates, ell, min_eig


def rk4(m, y0, tau, n_steps, renormalize, clip, sample_every):
    """Fixed-step RK4 on the augmented system.

    Positivity is monitored on accepted states only; intermediate stage
    values are not states and may dip below zero at large ``h * rate``.

    Returns ``(y, acc, samples, trace_drift, min_eig, status, fail_step)``.
    ``samples`` has columns t, tr_rho, S, env, mi, sigma, activity, j, sys.
    """
    y = np.array(y0, dtype=complex)
    h = tau / n_steps
    acc = np.zeros(8)
    rows = []
    drift = 0.0
    min_eig = np.inf
    for n in range(n_steps):
        k1, R1, _, e1 = deriv(m, y, clip)
        min_eig = min(min_eig, e1)
        if min_eig < -POSITIVITY_TOL:
            return y, acc, _samples(rows), drift, min_eig, STATUS_POSITIVITY, n
        if sample_every > 0 and n % sample_every == 0:
            rows.append(_sample_row(n * h, y[0], R1))
        k2, R2, _, _ = deriv(m, y + 0.5 * h * k1, clip)
        k3, R3, _, _ = deriv(m, y + 0.5 * h * k2, clip)
        k4, R4, _, _ = deriv(m, y + h * k3, clip)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        acc += (h / 6.0) * (R1[:8] + 2.0 * R2[:8] + 2.0 * R3[:8] + R4[:8])
        y[0] = 0.5 * (y[0] + y[0].conj().T)
        if renormalize:
            tr = np.real(np.trace(y[0]))
            drift = max(drift, abs(tr - 1.0))
            y[0] /= tr
    _, R, _, e = deriv(m, y, clip)
    min_eig = min(min_eig, e)
    if sample_every > 0:
        rows.append(_sample_row(tau, y[0], R))
    status = STATUS_POSITIVITY if min_eig < -POSITIVITY_TOL else STATUS_OK
    return y, acc, _samples(rows), drift, min_eig, status, n_steps if status else -1


def _sample_row(t, rho, R):
    return [t, np.real(np.trace(rho)), R[8], R[0], R[2], R[4], R[1], R[5], R[7]]


def _samples(rows):
    return np.array(rows, dtype=float).reshape(-1, 9)


def _pick_initial(u0, init_p, init_vecs):
    cum = np.cumsum(init_p)
    idx = np.minimum(np.searchsorted(cum, u0, side="right"), len(init_p) - 1)
    return init_vecs[:, idx].T.copy()


def _choose_branch(weights, target):
    cum = np.cumsum(weights)
    b = int(np.searchsorted(cum, target, side="right"))
    if b >= len(weights):
        b = int(np.flatnonzero(weights > 0)[-1])
    return b


def jumps(m, dt, uniforms, init_p, init_vecs, rho0, pure, record_cap):
    """Euler quantum-jump sampling for a batch of trajectories.

    ``uniforms[i, 0]`` selects the initial eigenvector (pure path only) and
    ``uniforms[i, s + 1]`` drives step ``s``. Returns ``(J, n_jumps,
    max_prob, final, ev_count, ev_step, ev_branch, status)``.
    """
    U = np.asarray(uniforms, dtype=float)
    nb, n1 = U.shape
    n_steps = n1 - 1
    d = m.d
    Heff = m.H - 0.5j * m.Gam
    M0 = np.eye(d) - 1j * dt * Heff
    J = np.zeros(nb)
    nj = np.zeros(nb, dtype=np.int64)
    maxp = np.zeros(nb)
    ev_count = np.zeros(nb, dtype=np.int64)
    ev_step = np.zeros((nb, max(record_cap, 0)), dtype=np.int64)
    ev_branch = np.zeros((nb, max(record_cap, 0)), dtype=np.int32)
    c = m.weight[m.owner]
    status = STATUS_OK

    def record(i, s, b):
        nj[i] += 1
        J[i] += c[b]
        if record_cap > 0:
            if ev_count[i] < record_cap:
                ev_step[i, ev_count[i]] = s
                ev_branch[i, ev_count[i]] = b
            ev_count[i] += 1

    if pure:
        psi = _pick_initial(U[:, 0], init_p, init_vecs)
        for s in range(n_steps):
            # H_eff psi serves both the jump probability and the no-jump step
            hpsi = psi @ Heff.T
            pn = -2.0 * np.imag(np.sum(psi.conj() * hpsi, axis=1))
            p = pn * dt
            maxp = np.maximum(maxp, p)
            if np.any(p >= 1.0):
                status = STATUS_STEP_TOO_COARSE
                break
            u = U[:, s + 1]
            jumped = u < p
            nxt = psi - 1j * dt * hpsi
            nxt /= np.sqrt(np.sum(np.abs(nxt) ** 2, axis=1))[:, None]
            for i in np.flatnonzero(jumped):
                cand = psi[i] @ np.swapaxes(m.B, 1, 2)
                w = np.sum(np.abs(cand) ** 2, axis=1)
                b = _choose_branch(w, u[i] / dt)
                nxt[i] = cand[b] / np.sqrt(w[b])
                record(i, s, b)
            psi = nxt
        final = psi[:, :, None] * psi.conj()[:, None, :]
    else:
        rho = np.repeat(np.asarray(rho0, dtype=complex)[None], nb, axis=0)
        for s in range(n_steps):
            pn = np.real(np.einsum("ab,iba->i", m.Gam, rho))
            p = pn * dt
            maxp = np.maximum(maxp, p)
            if np.any(p >= 1.0):
                status = STATUS_STEP_TOO_COARSE
                break
            u = U[:, s + 1]
            jumped = u < p
            nxt = M0 @ rho @ M0.conj().T
            nxt /= np.real(np.trace(nxt, axis1=1, axis2=2))[:, None, None]
            for i in np.flatnonzero(jumped):
                w = np.real(np.einsum("bxy,yx->b", m.BdB, rho[i]))
                b = _choose_branch(w, u[i] / dt)
                x = m.B[b] @ rho[i] @ m.Bd[b]
                nxt[i] = x / np.real(np.trace(x))
                record(i, s, b)
            rho = nxt
        final = rho
    return J, nj, maxp, final, ev_count, ev_step, ev_branch, status
