# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: augmented RK4 propagation and quantum-jump sampling.

Mirrors ``_fallback`` function for function. Matrices are row-major
``double complex`` buffers of size ``d*d``; Hermitian eigenproblems go to
LAPACK ``zheev``. Because LAPACK is column-major, the eigenvector buffer it
returns for a row-major Hermitian matrix is exactly ``U^+`` in row-major
order, where ``U`` holds the eigenvectors as columns.
"""
import numpy as np

from libc.math cimport log, sqrt
from scipy.linalg.cython_lapack cimport zheev

ctypedef double complex cplx

NAME = "compiled"

cdef double TINY_RATE = 1e-14
cdef double TINY_DENOM = 1e-15
cdef double POSITIVITY_TOL = 1e-6

cdef enum:
    ST_OK = 0
    ST_POSITIVITY = 1
    ST_STEP_TOO_COARSE = 2

STATUS_OK = ST_OK
STATUS_POSITIVITY = ST_POSITIVITY
STATUS_STEP_TOO_COARSE = ST_STEP_TOO_COARSE


cdef class Model:
    cdef public object H, L, LdL, B, first, pair, weight, delta_s, trivial, Gam, BdB, owner
    cdef readonly int d, K, NB

    def __init__(self, H, L, LdL, B, first, pair, weight, delta_s, trivial):
        self.H = np.array(H, dtype=np.complex128, order="C", copy=True)
        self.L = np.array(L, dtype=np.complex128, order="C", copy=True)
        self.LdL = np.array(LdL, dtype=np.complex128, order="C", copy=True)
        self.B = np.array(B, dtype=np.complex128, order="C", copy=True)
        self.first = np.array(first, dtype=np.int32, order="C", copy=True)
        self.pair = np.array(pair, dtype=np.int32, order="C", copy=True)
        self.weight = np.array(weight, dtype=np.float64, order="C", copy=True)
        self.delta_s = np.array(delta_s, dtype=np.float64, order="C", copy=True)
        self.trivial = np.array(trivial, dtype=np.uint8, order="C", copy=True)
        self.Gam = np.ascontiguousarray(self.LdL.sum(axis=0))
        self.BdB = np.ascontiguousarray(np.conj(np.swapaxes(self.B, 1, 2)) @ self.B)
        self.d = self.H.shape[0]
        self.K = self.L.shape[0]
        self.NB = self.B.shape[0]
        self.owner = np.repeat(np.arange(self.K), np.diff(self.first)).astype(np.int32)


cdef struct Ctx:
    int d
    int dd
    int K
    double clip
    cplx* H
    cplx* L
    cplx* LdL
    cplx* B
    cplx* Gam
    int* first
    int* pair
    double* weight
    double* ds
    unsigned char* trivial
    # workspace
    cplx* S
    cplx* Srho
    cplx* D1r1
    cplx* tmp
    cplx* tmp2
    cplx* E
    cplx* lnr
    double* W
    double* w
    double* p
    double* pc
    double* r
    double* ell
    cplx* zwork
    int lwork
    double* rwork


cdef class _Workspace:
    """Owns the scratch buffers referenced by a :c:type:`Ctx`."""
    cdef object bufs
    cdef Ctx ctx

    def __init__(self, Model m, double clip):
        cdef int d = m.d, K = m.K, dd = m.d * m.d
        self.bufs = []
        cdef cplx[::1] zv
        cdef double[::1] dv
        cdef int[::1] iv
        cdef unsigned char[::1] uv
        self.ctx.d = d
        self.ctx.dd = dd
        self.ctx.K = K
        self.ctx.clip = clip
        self.ctx.H = self._z(m.H.reshape(-1))
        self.ctx.L = self._z(m.L.reshape(-1))
        self.ctx.LdL = self._z(m.LdL.reshape(-1))
        self.ctx.B = self._z(m.B.reshape(-1))
        self.ctx.Gam = self._z(m.Gam.reshape(-1))
        iv = m.first
        self.bufs.append(m.first)
        self.ctx.first = &iv[0]
        iv = m.pair
        self.bufs.append(m.pair)
        self.ctx.pair = &iv[0]
        self.ctx.weight = self._d(m.weight)
        self.ctx.ds = self._d(m.delta_s)
        uv = m.trivial
        self.bufs.append(m.trivial)
        self.ctx.trivial = &uv[0]
        self.ctx.S = self._z(np.zeros(K * dd, dtype=np.complex128))
        self.ctx.Srho = self._z(np.zeros(K * dd, dtype=np.complex128))
        self.ctx.D1r1 = self._z(np.zeros(dd, dtype=np.complex128))
        self.ctx.tmp = self._z(np.zeros(dd, dtype=np.complex128))
        self.ctx.tmp2 = self._z(np.zeros(dd, dtype=np.complex128))
        self.ctx.E = self._z(np.zeros(dd, dtype=np.complex128))
        self.ctx.lnr = self._z(np.zeros(dd, dtype=np.complex128))
        self.ctx.W = self._d(np.zeros(K * dd))
        self.ctx.w = self._d(np.zeros(d))
        self.ctx.p = self._d(np.zeros(d))
        self.ctx.pc = self._d(np.zeros(d))
        self.ctx.r = self._d(np.zeros(K))
        self.ctx.ell = self._d(np.zeros(K))
        self.ctx.lwork = 64 * d
        self.ctx.zwork = self._z(np.zeros(self.ctx.lwork, dtype=np.complex128))
        self.ctx.rwork = self._d(np.zeros(max(1, 3 * d - 2)))

    cdef cplx* _z(self, a):
        cdef cplx[::1] v = np.ascontiguousarray(a, dtype=np.complex128)
        self.bufs.append(v)
        return &v[0]

    cdef double* _d(self, a):
        cdef double[::1] v = np.ascontiguousarray(a, dtype=np.float64)
        self.bufs.append(v)
        return &v[0]


# -- small dense helpers -----------------------------------------------------

cdef inline cplx cj(cplx z) noexcept nogil:
    return z.conjugate()


cdef inline void mm(const cplx* A, const cplx* B, cplx* C, int d) noexcept nogil:
    """C = A B"""
    cdef int i, j, k
    cdef cplx s
    for i in range(d):
        for j in range(d):
            s = 0
            for k in range(d):
                s = s + A[i * d + k] * B[k * d + j]
            C[i * d + j] = s


cdef inline void mm_bd_acc(const cplx* A, const cplx* B, cplx* C, int d, double coef) noexcept nogil:
    """C += coef * A B^+"""
    cdef int i, j, k
    cdef cplx s
    for i in range(d):
        for j in range(d):
            s = 0
            for k in range(d):
                s = s + A[i * d + k] * cj(B[j * d + k])
            C[i * d + j] = C[i * d + j] + coef * s


cdef inline double re_tr_prod(const cplx* A, const cplx* B, int d) noexcept nogil:
    """Re tr(A B)"""
    cdef int a, b
    cdef double s = 0.0
    for a in range(d):
        for b in range(d):
            s += (A[a * d + b] * B[b * d + a]).real
    return s


cdef int heig(Ctx* c, cplx* A, double* w, char jobz) noexcept nogil:
    """Eigen-decomposition in place (A is overwritten with U^+ when jobz == 'V')."""
    cdef int n = c.d, lda = c.d, info = 0
    cdef char uplo = b'L'
    zheev(&jobz, &uplo, &n, A, &lda, w, c.zwork, &c.lwork, c.rwork, &info)
    return info


cdef double entropy_scaled(Ctx* c, const cplx* X, double scale) noexcept nogil:
    cdef int i
    cdef double lam, s = 0.0
    for i in range(c.dd):
        c.tmp2[i] = X[i] * scale
    heig(c, c.tmp2, c.p, b'N')
    for i in range(c.d):
        lam = c.p[i]
        if lam > 0.0:
            s -= lam * log(lam if lam > c.clip else c.clip)
    return s


cdef void chan_sandwich(Ctx* c, const cplx* X, cplx* out) noexcept nogil:
    """out[k] = sum over branches b of channel k of B_b X B_b^+"""
    cdef int k, b, i, dd = c.dd
    for i in range(c.K * dd):
        out[i] = 0
    for k in range(c.K):
        for b in range(c.first[k], c.first[k + 1]):
            mm(c.B + b * dd, X, c.tmp, c.d)
            mm_bd_acc(c.tmp, c.B + b * dd, out + k * dd, c.d, 1.0)


cdef void liou(Ctx* c, const cplx* X, const cplx* S, cplx* out) noexcept nogil:
    cdef int a, b, k, d = c.d, dd = c.dd
    cdef cplx s1, s2
    for a in range(d):
        for b in range(d):
            s1 = 0
            s2 = 0
            for k in range(d):
                s1 = s1 + c.H[a * d + k] * X[k * d + b] - X[a * d + k] * c.H[k * d + b]
                s2 = s2 + c.Gam[a * d + k] * X[k * d + b] + X[a * d + k] * c.Gam[k * d + b]
            out[a * d + b] = -1j * s1 - 0.5 * s2
    for k in range(c.K):
        for a in range(dd):
            out[a] = out[a] + S[k * dd + a]


cdef double rates(Ctx* c, const cplx* rho, const cplx* Lrho, const cplx* phi, double* R) noexcept nogil:
    """Fill R with s_env, activity, mi, fisher, sigma, j, j_phi, s_sys, entropy.

    Uses c.Srho (channel sandwiches of rho). Returns the smallest eigenvalue of rho.
    """
    cdef int d = c.d, dd = c.dd, K = c.K
    cdef int k, ks, m, n, a, b, i
    cdef double den, x, y, xl, yl, rk, sig, mi, ent, s_post, s_fed, cross, jphi, lam
    cdef cplx z
    for k in range(K):
        c.r[k] = re_tr_prod(c.LdL + k * dd, rho, d)
    for k in range(K):
        ks = c.pair[k]
        den = c.r[k] + c.r[ks]
        c.ell[k] = (c.r[k] - c.r[ks]) / den if den >= TINY_DENOM else 0.0

    for i in range(dd):
        c.E[i] = 0.5 * (rho[i] + cj(rho[(i % d) * d + i // d]))
    heig(c, c.E, c.w, b'V')
    ent = 0.0
    for i in range(d):
        c.p[i] = c.w[i] if c.w[i] > 0.0 else 0.0
        c.pc[i] = c.p[i] if c.p[i] > c.clip else c.clip
        ent -= c.p[i] * log(c.pc[i])
    # ln rho = E^+ diag(log pc) E
    for a in range(d):
        for b in range(d):
            z = 0
            for i in range(d):
                z = z + cj(c.E[i * d + a]) * log(c.pc[i]) * c.E[i * d + b]
            c.lnr[a * d + b] = z
    # W_k = |E L_k E^+|^2
    for k in range(K):
        mm(c.E, c.L + k * dd, c.tmp, d)
        for i in range(dd):
            c.tmp2[i] = 0
        mm_bd_acc(c.tmp, c.E, c.tmp2, d, 1.0)
        for i in range(dd):
            c.W[k * dd + i] = c.tmp2[i].real * c.tmp2[i].real + c.tmp2[i].imag * c.tmp2[i].imag
    sig = 0.0
    for k in range(K):
        ks = c.pair[k]
        for m in range(d):
            for n in range(d):
                x = c.W[k * dd + m * d + n] * c.p[n]
                y = c.W[ks * dd + n * d + m] * c.p[m]
                if x < TINY_DENOM and y < TINY_DENOM:
                    continue
                xl = c.W[k * dd + m * d + n] * c.pc[n]
                yl = c.W[ks * dd + n * d + m] * c.pc[m]
                if xl < 1e-300:
                    xl = 1e-300
                if yl < 1e-300:
                    yl = 1e-300
                sig += (x - y) * log(xl / yl)
    sig *= 0.5

    mi = 0.0
    for k in range(K):
        rk = c.r[k]
        if c.trivial[k] or rk < TINY_RATE:
            continue
        # post-jump state L rho L^+ (unnormalised) into c.S scratch slot 0
        mm(c.L + k * dd, rho, c.tmp, d)
        for i in range(dd):
            c.S[i] = 0
        mm_bd_acc(c.tmp, c.L + k * dd, c.S, d, 1.0)
        s_post = entropy_scaled(c, c.S, 1.0 / rk)
        s_fed = entropy_scaled(c, c.Srho + k * dd, 1.0 / rk)
        cross = 0.0
        for a in range(d):
            for b in range(d):
                cross += ((c.Srho[k * dd + a * d + b] - c.S[a * d + b]) * c.lnr[b * d + a]).real
        mi += rk * (-s_fed + s_post - cross / rk)

    jphi = 0.0
    for k in range(K):
        jphi += c.weight[k] * re_tr_prod(c.LdL + k * dd, phi, d)

    R[0] = 0.0
    R[1] = 0.0
    R[3] = 0.0
    R[5] = 0.0
    for k in range(K):
        R[0] += c.ds[k] * c.r[k]
        R[1] += c.r[k]
        R[3] += c.ell[k] * c.ell[k] * c.r[k]
        R[5] += c.weight[k] * c.r[k]
    R[2] = mi
    R[4] = sig
    R[6] = jphi
    R[7] = -re_tr_prod(Lrho, c.lnr, d)
    R[8] = ent
    return c.w[0]


cdef double deriv_c(Ctx* c, const cplx* y, cplx* dy, double* R) noexcept nogil:
    cdef int dd = c.dd, d = c.d, K = c.K, k, i, a, b, j
    cdef const cplx* rho = y
    cdef const cplx* rho1 = y + dd
    cdef const cplx* rho2 = y + 2 * dd
    cdef const cplx* phi = y + 3 * dd
    cdef double ck, lk, min_eig
    cdef cplx s

    chan_sandwich(c, rho, c.Srho)
    liou(c, rho, c.Srho, dy)

    chan_sandwich(c, rho1, c.S)
    liou(c, rho1, c.S, dy + dd)
    for i in range(dd):
        c.D1r1[i] = 0
    for k in range(K):
        ck = c.weight[k]
        if ck == 0.0:
            continue
        for i in range(dd):
            dy[dd + i] = dy[dd + i] + ck * c.Srho[k * dd + i]
            c.D1r1[i] = c.D1r1[i] + ck * c.S[k * dd + i]

    chan_sandwich(c, rho2, c.S)
    liou(c, rho2, c.S, dy + 2 * dd)
    for i in range(dd):
        dy[2 * dd + i] = dy[2 * dd + i] + 2.0 * c.D1r1[i]
    for k in range(K):
        ck = c.weight[k]
        if ck == 0.0:
            continue
        for i in range(dd):
            dy[2 * dd + i] = dy[2 * dd + i] + ck * ck * c.Srho[k * dd + i]

    chan_sandwich(c, phi, c.S)
    liou(c, phi, c.S, dy + 3 * dd)

    min_eig = rates(c, rho, dy, phi, R)

    for k in range(K):
        lk = c.ell[k]
        if lk == 0.0:
            continue
        for a in range(d):
            for b in range(d):
                s = 0
                for j in range(d):
                    s = s + c.LdL[k * dd + a * d + j] * rho[j * d + b] + rho[a * d + j] * c.LdL[k * dd + j * d + b]
                dy[3 * dd + a * d + b] = dy[3 * dd + a * d + b] + lk * (c.Srho[k * dd + a * d + b] - 0.5 * s)
    return min_eig


def deriv(Model m, y, double clip):
    """Derivative of the stacked ``(rho, rho1, rho2, phi)`` plus rates at ``rho``."""
    ws = _Workspace(m, clip)
    cdef cplx[::1] yv = np.ascontiguousarray(y, dtype=np.complex128).reshape(-1)
    dy = np.zeros(4 * m.d * m.d, dtype=np.complex128)
    R = np.zeros(9)
    cdef cplx[::1] dyv = dy
    cdef double[::1] Rv = R
    cdef double e
    with nogil:
        e = deriv_c(&ws.ctx, &yv[0], &dyv[0], &Rv[0])
    ell = np.array([ws.ctx.ell[k] for k in range(m.K)])
    return dy.reshape(4, m.d, m.d), R, ell, e


def rk4(Model m, y0, double tau, int n_steps, bint renormalize, double clip, int sample_every):
    """Fixed-step RK4 on the augmented system; see ``_fallback.rk4``."""
    ws = _Workspace(m, clip)
    cdef int d = m.d, dd = m.d * m.d, N = 4 * m.d * m.d
    y = np.ascontiguousarray(y0, dtype=np.complex128).reshape(-1).copy()
    kbuf = np.zeros((5, N), dtype=np.complex128)
    Rbuf = np.zeros((4, 9))
    acc = np.zeros(8)
    n_samples = (n_steps - 1) // sample_every + 2 if sample_every > 0 else 0
    samples = np.zeros((n_samples, 9))
    cdef cplx[::1] yv = y
    cdef cplx[:, ::1] kv = kbuf
    cdef double[:, ::1] Rv = Rbuf
    cdef double[::1] av = acc
    cdef double[:, ::1] sv = samples
    cdef double h = tau / n_steps, e, min_eig = 1e300, drift = 0.0, tr, t
    cdef int n, i, q, row = 0, status = 0, fail = -1
    cdef cplx* y_p = &yv[0]
    cdef cplx* k1 = &kv[0, 0]
    cdef cplx* k2 = &kv[1, 0]
    cdef cplx* k3 = &kv[2, 0]
    cdef cplx* k4 = &kv[3, 0]
    cdef cplx* yt = &kv[4, 0]
    cdef cplx z
    with nogil:
        for n in range(n_steps):
            e = deriv_c(&ws.ctx, y_p, k1, &Rv[0, 0])
            if e < min_eig:
                min_eig = e
            if min_eig < -POSITIVITY_TOL:
                status = ST_POSITIVITY
                fail = n
                break
            if sample_every > 0 and n % sample_every == 0:
                _sample(sv, row, n * h, y_p, d, &Rv[0, 0])
                row += 1
            for i in range(N):
                yt[i] = y_p[i] + 0.5 * h * k1[i]
            deriv_c(&ws.ctx, yt, k2, &Rv[1, 0])
            for i in range(N):
                yt[i] = y_p[i] + 0.5 * h * k2[i]
            deriv_c(&ws.ctx, yt, k3, &Rv[2, 0])
            for i in range(N):
                yt[i] = y_p[i] + h * k3[i]
            deriv_c(&ws.ctx, yt, k4, &Rv[3, 0])
            for i in range(N):
                y_p[i] = y_p[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            for q in range(8):
                av[q] += (h / 6.0) * (Rv[0, q] + 2.0 * Rv[1, q] + 2.0 * Rv[2, q] + Rv[3, q])
            for i in range(d):
                for q in range(i, d):
                    z = 0.5 * (y_p[i * d + q] + cj(y_p[q * d + i]))
                    y_p[i * d + q] = z
                    y_p[q * d + i] = cj(z)
            if renormalize:
                tr = 0.0
                for i in range(d):
                    tr += y_p[i * d + i].real
                if abs(tr - 1.0) > drift:
                    drift = abs(tr - 1.0)
                for i in range(dd):
                    y_p[i] = y_p[i] / tr
        if status == 0:
            e = deriv_c(&ws.ctx, y_p, k1, &Rv[0, 0])
            if e < min_eig:
                min_eig = e
            if sample_every > 0:
                _sample(sv, row, tau, y_p, d, &Rv[0, 0])
                row += 1
            if min_eig < -POSITIVITY_TOL:
                status = ST_POSITIVITY
                fail = n_steps
    return y.reshape(4, d, d), acc, samples[:row].copy(), drift, min_eig, status, fail


cdef inline void _sample(double[:, ::1] sv, int row, double t, const cplx* rho, int d, const double* R) noexcept nogil:
    cdef int i
    cdef double tr = 0.0
    for i in range(d):
        tr += rho[i * d + i].real
    sv[row, 0] = t
    sv[row, 1] = tr
    sv[row, 2] = R[8]
    sv[row, 3] = R[0]
    sv[row, 4] = R[2]
    sv[row, 5] = R[4]
    sv[row, 6] = R[1]
    sv[row, 7] = R[5]
    sv[row, 8] = R[7]


# -- quantum jumps -----------------------------------------------------------

def jumps(Model m, double dt, uniforms, init_p, init_vecs, rho0, bint pure, int record_cap):
    """Euler quantum-jump sampling for a batch; see ``_fallback.jumps``."""
    cdef int d = m.d, dd = m.d * m.d, NB = m.NB
    cdef double[:, ::1] U = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t nb = U.shape[0], n_steps = U.shape[1] - 1
    Jarr = np.zeros(nb)
    njarr = np.zeros(nb, dtype=np.int64)
    maxparr = np.zeros(nb)
    final = np.zeros((nb, d, d), dtype=np.complex128)
    cap = record_cap if record_cap > 0 else 0
    ev_count_a = np.zeros(nb, dtype=np.int64)
    ev_step_a = np.zeros((nb, max(cap, 1)), dtype=np.int64)
    ev_branch_a = np.zeros((nb, max(cap, 1)), dtype=np.int32)
    Heff = np.asarray(m.H) - 0.5j * np.asarray(m.Gam)
    M0a = np.ascontiguousarray(np.eye(d) - 1j * dt * Heff)
    cum = np.ascontiguousarray(np.cumsum(np.asarray(init_p, dtype=np.float64)))
    vecsT = np.ascontiguousarray(np.asarray(init_vecs, dtype=np.complex128).T)
    cw = np.ascontiguousarray(np.asarray(m.weight)[np.asarray(m.owner)], dtype=np.float64)

    cdef double[::1] J = Jarr
    cdef long long[::1] nj = njarr.view(np.longlong)
    cdef double[::1] maxp = maxparr
    cdef cplx[:, :, ::1] fin = final
    cdef long long[::1] evc = ev_count_a.view(np.longlong)
    cdef long long[:, ::1] evs = ev_step_a.view(np.longlong)
    cdef int[:, ::1] evb = ev_branch_a
    cdef cplx[:, ::1] M0 = M0a
    cdef cplx[:, ::1] Gam = m.Gam
    cdef cplx[:, :, ::1] B = m.B
    cdef cplx[:, :, ::1] BdB = m.BdB
    cdef double[::1] cumv = cum
    cdef cplx[:, ::1] vT = vecsT
    cdef double[::1] c = cw
    cdef cplx[:, ::1] r0 = np.array(rho0, dtype=np.complex128, order="C", copy=True)
    buf = np.zeros((7, dd), dtype=np.complex128)
    wts = np.zeros(max(NB, 1))
    cdef cplx[:, ::1] wk = buf
    cdef double[::1] wb = wts

    cdef Py_ssize_t i, s
    cdef int a, b, q, idx, bsel, status = 0, last
    cdef double u, pn, p, nrm, target, acc_w
    cdef cplx z
    cdef cplx* G = &Gam[0, 0]
    cdef cplx* M = &M0[0, 0]
    cdef cplx[:, ::1] Heffv = np.ascontiguousarray(Heff)
    cdef cplx* Hf = &Heffv[0, 0]
    cdef cplx* Bp = &B[0, 0, 0]
    cdef cplx* BdBp = &BdB[0, 0, 0]
    cdef double* urow
    cdef cplx* psi = &wk[0, 0]
    cdef cplx* nxt = &wk[1, 0]
    cdef cplx* cand = &wk[2, 0]
    cdef cplx* rho = &wk[3, 0]
    cdef cplx* t1 = &wk[4, 0]
    cdef cplx* t2 = &wk[5, 0]
    cdef cplx* hpsi = &wk[6, 0]

    with nogil:
        for i in range(nb):
            if status != 0:
                break
            urow = &U[i, 0]
            if pure:
                idx = 0
                while idx < d - 1 and U[i, 0] >= cumv[idx]:
                    idx += 1
                for a in range(d):
                    psi[a] = vT[idx, a]
            else:
                for a in range(dd):
                    rho[a] = r0[a // d, a % d]
            for s in range(n_steps):
                u = urow[s + 1]
                if pure:
                    # H_eff psi serves both the jump probability and the no-jump step
                    pn = 0.0
                    for a in range(d):
                        z = 0
                        for q in range(d):
                            z = z + Hf[a * d + q] * psi[q]
                        hpsi[a] = z
                        pn += (cj(psi[a]) * z).imag
                    pn = -2.0 * pn
                else:
                    pn = 0.0
                    for a in range(d):
                        for q in range(d):
                            pn += (G[a * d + q] * rho[q * d + a]).real
                p = pn * dt
                if p > maxp[i]:
                    maxp[i] = p
                if p >= 1.0:
                    status = ST_STEP_TOO_COARSE
                    break
                if u < p:
                    target = u / dt
                    acc_w = 0.0
                    bsel = -1
                    last = -1
                    for b in range(NB):
                        if pure:
                            wb[b] = 0.0
                            for a in range(d):
                                z = 0
                                for q in range(d):
                                    z = z + Bp[b * dd + a * d + q] * psi[q]
                                wb[b] += z.real * z.real + z.imag * z.imag
                        else:
                            wb[b] = 0.0
                            for a in range(d):
                                for q in range(d):
                                    wb[b] += (BdBp[b * dd + a * d + q] * rho[q * d + a]).real
                        if wb[b] > 0.0:
                            last = b
                        acc_w += wb[b]
                        if bsel < 0 and target < acc_w:
                            bsel = b
                    if bsel < 0:
                        bsel = last
                    if pure:
                        nrm = 0.0
                        for a in range(d):
                            z = 0
                            for q in range(d):
                                z = z + Bp[bsel * dd + a * d + q] * psi[q]
                            nxt[a] = z
                            nrm += z.real * z.real + z.imag * z.imag
                        nrm = sqrt(nrm)
                        for a in range(d):
                            psi[a] = nxt[a] / nrm
                    else:
                        _sandwich(Bp + bsel * dd, rho, t1, t2, d)
                    nj[i] += 1
                    J[i] += c[bsel]
                    if cap > 0:
                        if evc[i] < cap:
                            evs[i, evc[i]] = s
                            evb[i, evc[i]] = bsel
                        evc[i] += 1
                else:
                    if pure:
                        nrm = 0.0
                        for a in range(d):
                            z = psi[a] - 1j * dt * hpsi[a]
                            nxt[a] = z
                            nrm += z.real * z.real + z.imag * z.imag
                        nrm = sqrt(nrm)
                        for a in range(d):
                            psi[a] = nxt[a] / nrm
                    else:
                        _sandwich(M, rho, t1, t2, d)
            if pure:
                for a in range(d):
                    for q in range(d):
                        fin[i, a, q] = psi[a] * cj(psi[q])
            else:
                for a in range(d):
                    for q in range(d):
                        fin[i, a, q] = rho[a * d + q]
    return (Jarr, njarr, maxparr, final, ev_count_a, ev_step_a[:, :cap], ev_branch_a[:, :cap], status)


cdef inline void _sandwich(const cplx* A, cplx* rho, cplx* t1, cplx* t2, int d) noexcept nogil:
    """rho <- A rho A^+ / tr(A rho A^+)"""
    cdef int a, dd = d * d
    cdef double tr = 0.0
    mm(A, rho, t1, d)
    for a in range(dd):
        t2[a] = 0
    mm_bd_acc(t1, A, t2, d, 1.0)
    for a in range(d):
        tr += t2[a * d + a].real
    for a in range(dd):
        rho[a] = t2[a] / tr
