# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of ``_kernels_py``.

Same signatures and numerics; the resampling loops run without creating
intermediate arrays, which is where the numpy version spends its time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, NAN
from scipy.linalg.cython_lapack cimport dsyev

cnp.import_array()

BACKEND = "cython"

ctypedef cnp.int64_t i64

cdef double SCALE_RTOL = 1e-12
cdef double EIG_RTOL = 1e-10
cdef double TIE_RTOL = 1e-9
cdef double TIE_ATOL = 1e-14


cdef class _Work:
    """Scratch buffers sized for one (visits, pre_end) problem."""
    cdef double[::1] mean, scale, z, gram, evals, lwork_buf, ce, cb, ke, kb, tmp
    cdef double[::1] cross, proj, op
    cdef int lwork

    def __init__(self, Py_ssize_t visits, Py_ssize_t p):
        cdef Py_ssize_t q = visits - p
        self.mean = np.empty(visits)
        self.scale = np.empty(visits)
        self.z = np.empty(visits)
        self.gram = np.empty(p * p)
        self.evals = np.empty(p)
        self.lwork = <int>max(1, 3 * p - 1) * 4
        self.lwork_buf = np.empty(self.lwork)
        self.ce = np.empty(p)
        self.cb = np.empty(p)
        self.ke = np.empty(p)
        self.kb = np.empty(p)
        self.tmp = np.empty(p)
        self.cross = np.empty(max(1, p * q))
        self.proj = np.empty(max(1, p * q))
        self.op = np.empty(max(1, p * q))


cdef void _norm_stats(const double[:, ::1] x, const i64[::1] idx, Py_ssize_t n,
                      double[::1] mean, double[::1] scale) noexcept nogil:
    cdef Py_ssize_t v = x.shape[1], d, j
    cdef i64 row
    cdef double diff, s, m
    for j in range(v):
        mean[j] = 0.0
        scale[j] = 0.0
    for d in range(n):
        row = idx[d]
        for j in range(v):
            mean[j] += x[row, j]
    for j in range(v):
        mean[j] /= n
    for d in range(n):
        row = idx[d]
        for j in range(v):
            diff = x[row, j] - mean[j]
            scale[j] += diff * diff
    for j in range(v):
        s = sqrt(scale[j] / n)
        m = fabs(mean[j])
        if m < 1.0:
            m = 1.0
        if s <= SCALE_RTOL * m:
            s = 1.0
        scale[j] = s


cdef int _eig(_Work w, int p) noexcept nogil:
    """Eigendecompose ``w.gram`` in place (eigenvector k at gram[k*p:(k+1)*p])."""
    cdef char jobz = b'V'
    cdef char uplo = b'U'
    cdef int info = 0
    cdef int n = p
    cdef int lda = p
    dsyev(&jobz, &uplo, &n, &w.gram[0], &lda, &w.evals[0], &w.lwork_buf[0], &w.lwork, &info)
    return info


cdef double _eig_tol(_Work w, int p) noexcept nogil:
    cdef double emax = 0.0, e
    cdef int k
    for k in range(p):
        e = w.evals[k]
        if e > emax:
            emax = e
    return EIG_RTOL * emax


cdef inline double _h(double e, double lam, double tol) noexcept nogil:
    if e < 0.0:
        e = 0.0
    e = e + lam
    if e > tol:
        return 1.0 / e
    return 0.0


cdef void _apply_inverse(_Work w, int p, double lam, double tol,
                         double[::1] c, double[::1] out) noexcept nogil:
    """out = Q diag(h) Q^T c."""
    cdef int i, k
    cdef double acc
    for k in range(p):
        acc = 0.0
        for i in range(p):
            acc += w.gram[k * p + i] * c[i]
        w.tmp[k] = acc * _h(w.evals[k], lam, tol)
    for i in range(p):
        acc = 0.0
        for k in range(p):
            acc += w.gram[k * p + i] * w.tmp[k]
        out[i] = acc


cdef int _change_ites(const double[:, ::1] tx, const i64[::1] tidx, Py_ssize_t nt,
                      const double[:, ::1] dx, const i64[::1] didx, Py_ssize_t nd,
                      int p, int base, int end, double lam, double sign,
                      double[::1] out, Py_ssize_t offset, _Work w) noexcept nogil:
    cdef Py_ssize_t d, t, i, j
    cdef i64 row
    cdef double ze, zb, xi, pe, pb, cf_end, cf_base, tol
    cdef bint base_in_pre = base < p
    cdef int info

    _norm_stats(dx, didx, nd, w.mean, w.scale)
    for i in range(p * p):
        w.gram[i] = 0.0
    for i in range(p):
        w.ce[i] = 0.0
        w.cb[i] = 0.0
    for d in range(nd):
        row = didx[d]
        for i in range(p):
            w.z[i] = (dx[row, i] - w.mean[i]) / w.scale[i]
        ze = (dx[row, end] - w.mean[end]) / w.scale[end]
        zb = 0.0
        if not base_in_pre:
            zb = (dx[row, base] - w.mean[base]) / w.scale[base]
        for i in range(p):
            for j in range(i + 1):
                w.gram[i * p + j] += w.z[i] * w.z[j]
            w.ce[i] += w.z[i] * ze
            w.cb[i] += w.z[i] * zb
    for i in range(p):
        for j in range(i):
            w.gram[j * p + i] = w.gram[i * p + j]
    info = _eig(w, p)
    if info != 0:
        return info
    tol = _eig_tol(w, p)
    _apply_inverse(w, p, lam, tol, w.ce, w.ke)
    if not base_in_pre:
        _apply_inverse(w, p, lam, tol, w.cb, w.kb)

    for t in range(nt):
        row = tidx[t]
        pe = 0.0
        pb = 0.0
        for i in range(p):
            xi = (tx[row, i] - w.mean[i]) / w.scale[i]
            pe += xi * w.ke[i]
            pb += xi * w.kb[i]
        cf_end = w.mean[end] + w.scale[end] * pe
        if base_in_pre:
            cf_base = tx[row, base]
        else:
            cf_base = w.mean[base] + w.scale[base] * pb
        out[offset + t] = sign * ((cf_end - cf_base) - (tx[row, end] - tx[row, base]))
    return 0


cdef double _tune(const double[:, ::1] dx, const i64[::1] didx, Py_ssize_t nd,
                  const i64[::1] perm, Py_ssize_t n_train, int p,
                  const double[::1] grid, double[::1] errors, _Work w) noexcept nogil:
    cdef Py_ssize_t v = dx.shape[1]
    cdef Py_ssize_t q = v - p
    cdef Py_ssize_t d, i, j, k, g, ng = grid.shape[0]
    cdef i64 row
    cdef double acc, resid, err, tol, best, lam, chosen
    cdef Py_ssize_t n_val = nd - n_train

    _norm_stats(dx, didx, nd, w.mean, w.scale)
    for i in range(p * p):
        w.gram[i] = 0.0
    for i in range(p * q):
        w.cross[i] = 0.0
    for d in range(n_train):
        row = didx[perm[d]]
        for j in range(v):
            w.z[j] = (dx[row, j] - w.mean[j]) / w.scale[j]
        for i in range(p):
            for j in range(i + 1):
                w.gram[i * p + j] += w.z[i] * w.z[j]
            for j in range(q):
                w.cross[i * q + j] += w.z[i] * w.z[p + j]
    for i in range(p):
        for j in range(i):
            w.gram[j * p + i] = w.gram[i * p + j]
    if _eig(w, p) != 0:
        return NAN
    tol = _eig_tol(w, p)
    # proj = Q^T cross  (p x q)
    for k in range(p):
        for j in range(q):
            acc = 0.0
            for i in range(p):
                acc += w.gram[k * p + i] * w.cross[i * q + j]
            w.proj[k * q + j] = acc

    for g in range(ng):
        lam = grid[g]
        # op = Q diag(h) proj
        for i in range(p):
            for j in range(q):
                acc = 0.0
                for k in range(p):
                    acc += w.gram[k * p + i] * _h(w.evals[k], lam, tol) * w.proj[k * q + j]
                w.op[i * q + j] = acc
        err = 0.0
        for d in range(n_train, nd):
            row = didx[perm[d]]
            for j in range(v):
                w.z[j] = (dx[row, j] - w.mean[j]) / w.scale[j]
            for j in range(q):
                acc = 0.0
                for i in range(p):
                    acc += w.z[i] * w.op[i * q + j]
                resid = acc - w.z[p + j]
                err += resid * resid
        errors[g] = err / (n_val * q)

    best = errors[0]
    for g in range(1, ng):
        if errors[g] < best:
            best = errors[g]
    chosen = -1.0
    for g in range(ng):
        if errors[g] <= best * (1.0 + TIE_RTOL) + TIE_ATOL:
            if chosen < 0.0 or grid[g] > chosen:
                chosen = grid[g]
    return chosen


def tune_lambda(donors, int pre_end, grid, perm, Py_ssize_t n_train):
    cdef const double[:, ::1] dx = np.ascontiguousarray(donors, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef const i64[::1] pm = np.ascontiguousarray(perm, dtype=np.int64)
    cdef const i64[::1] idx = np.arange(dx.shape[0], dtype=np.int64)
    cdef double[::1] errors = np.empty(g.shape[0])
    cdef _Work w = _Work(dx.shape[1], pre_end)
    cdef double lam
    with nogil:
        lam = _tune(dx, idx, dx.shape[0], pm, n_train, pre_end, g, errors, w)
    if lam != lam:
        raise np.linalg.LinAlgError("eigendecomposition failed")
    return float(lam)


def change_ites(targets, donors, int pre_end, int base, int end, double lam):
    cdef const double[:, ::1] tx = np.ascontiguousarray(targets, dtype=np.float64)
    cdef const double[:, ::1] dx = np.ascontiguousarray(donors, dtype=np.float64)
    cdef const i64[::1] tidx = np.arange(tx.shape[0], dtype=np.int64)
    cdef const i64[::1] didx = np.arange(dx.shape[0], dtype=np.int64)
    out = np.empty(tx.shape[0])
    cdef double[::1] o = out
    cdef _Work w = _Work(dx.shape[1], pre_end)
    cdef int info
    with nogil:
        info = _change_ites(tx, tidx, tx.shape[0], dx, didx, dx.shape[0],
                            pre_end, base, end, lam, 1.0, o, 0, w)
    if info != 0:
        raise np.linalg.LinAlgError("eigendecomposition failed")
    return out


def resampled_ite_moments(ctrl, treat, idx_c, idx_t, int pre_end, int base, int end,
                          double lam_tdon, double lam_cdon, grid, perm_c, perm_t,
                          Py_ssize_t n_train_c, Py_ssize_t n_train_t, bint retune):
    cdef const double[:, ::1] cx = np.ascontiguousarray(ctrl, dtype=np.float64)
    cdef const double[:, ::1] tx = np.ascontiguousarray(treat, dtype=np.float64)
    cdef const i64[:, ::1] ic = np.ascontiguousarray(idx_c, dtype=np.int64)
    cdef const i64[:, ::1] it = np.ascontiguousarray(idx_t, dtype=np.int64)
    cdef const double[::1] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t n_rep = ic.shape[0], nc = ic.shape[1], nt = it.shape[1]
    cdef const i64[:, ::1] pc
    cdef const i64[:, ::1] pt
    if retune:
        pc = np.ascontiguousarray(perm_c, dtype=np.int64)
        pt = np.ascontiguousarray(perm_t, dtype=np.int64)
    else:
        pc = np.zeros((n_rep, 1), dtype=np.int64)
        pt = np.zeros((n_rep, 1), dtype=np.int64)
    cdef double[::1] errors = np.empty(max(1, g.shape[0]))
    cdef double[::1] pooled = np.empty(nc + nt)
    out = np.empty((n_rep, 2))
    cdef double[:, ::1] o = out
    cdef _Work w = _Work(cx.shape[1], pre_end)
    cdef Py_ssize_t r, i, n_all = nc + nt
    cdef double lt, lc, mean, var, diff
    cdef int info = 0

    with nogil:
        for r in range(n_rep):
            if retune:
                lt = _tune(tx, it[r], nt, pt[r], n_train_t, pre_end, g, errors, w)
                lc = _tune(cx, ic[r], nc, pc[r], n_train_c, pre_end, g, errors, w)
                if lt != lt or lc != lc:
                    info = -1
                    break
            else:
                lt = lam_tdon
                lc = lam_cdon
            info = _change_ites(cx, ic[r], nc, tx, it[r], nt, pre_end, base, end,
                                lt, 1.0, pooled, 0, w)
            if info != 0:
                break
            info = _change_ites(tx, it[r], nt, cx, ic[r], nc, pre_end, base, end,
                                lc, -1.0, pooled, nc, w)
            if info != 0:
                break
            mean = 0.0
            for i in range(n_all):
                mean += pooled[i]
            mean /= n_all
            var = 0.0
            for i in range(n_all):
                diff = pooled[i] - mean
                var += diff * diff
            o[r, 0] = mean
            o[r, 1] = var / (n_all - 1) if n_all > 1 else NAN
    if info != 0:
        raise np.linalg.LinAlgError("eigendecomposition failed")
    return out
