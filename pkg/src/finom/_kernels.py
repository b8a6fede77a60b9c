"""Hot numerical loops, written once and optionally compiled with numba.

Nothing here ever stores the n-by-m kernel matrix.  A 1D kernel between
a row mesh ``x`` (length n) and a column mesh ``y`` (length m) is split
along the staircase drawn by the dividing index ``z`` (int64, length n,
``z[i]`` = number of columns with ``y[j] <= x[i]``) into a lower part
(columns j with y_j <= x_i) and an upper part (the rest).  Each part is
carried as

* per-row edge segments, flattened: lower row i owns flat columns
  ``[z[i-1], z[i])`` with ``z[-1]`` read as 0; upper row i owns columns
  ``[z[i], z[i+1])`` with ``z[n]`` read as m, stored with offset
  ``-z[0]``;
* row-to-row ratios of length n-1: ``r_lo[i]`` advances row i to row
  i+1 in the lower part, ``r_hi[i]`` advances row i+1 back to row i in
  the upper part.

Within one part, any row is the previous row scaled by one ratio plus
its own edge segment, so a matvec is a forward scan (lower) plus a
backward scan (upper) touching every stored entry once.  The scans skip
the ratio step while the running sum is still structurally zero, which
keeps the stored ratio values at those positions out of the arithmetic
entirely (they are conventional placeholders) and keeps the operation
tally at its minimum.

The ``*_dyn`` variants take base distances instead of baked edge
values and fold per-row / per-column log-domain shifts ``a``, ``b``
into each exponent on the fly.  They exist for the 2D path, where the
absorption arrays vary from column to column and row to row and so
cannot be baked into a single pair of edge tables.

Python-level callers go through the dispatch wrappers at the bottom,
which route to the compiled twin unless the numpy fallback is selected
(see :mod:`finom._backend`).
"""

import numpy as np

from ._backend import jit, numba_available, numba_enabled

if numba_available():
    from numba.extending import register_jitable
else:  # pragma: no cover - exercised only without numba installed
    def register_jitable(func):
        return func

# status codes returned by the iteration kernels
OK = 0
ZERO_DENOM = 1
NONFINITE = 2


@register_jitable
def _dp_apply(z, r_lo, r_hi, lo, hi, psi, m, out):
    # forward scan over the lower part
    n = z.shape[0]
    zprev = 0
    pv = 0.0
    for i in range(n):
        zi = z[i]
        acc = 0.0
        for t in range(zprev, zi):
            acc += lo[t] * psi[t]
        if zprev > 0:
            pv = r_lo[i - 1] * pv
            if zi > zprev:
                pv += acc
        else:
            pv = acc
        out[i] = pv
        zprev = zi
    # backward scan over the upper part, accumulated on top
    z0 = z[0]
    znext = m
    qv = 0.0
    for i in range(n - 1, -1, -1):
        zi = z[i]
        acc = 0.0
        for t in range(zi, znext):
            acc += hi[t - z0] * psi[t]
        if znext < m:
            qv = r_hi[i] * qv
            if znext > zi:
                qv += acc
        else:
            qv = acc
        out[i] += qv
        znext = zi


@register_jitable
def _dp_blocks(z, r_lo, r_hi, lo, hi, psi, m, p, q):
    # same two scans, lower and upper parts kept separate
    n = z.shape[0]
    zprev = 0
    pv = 0.0
    for i in range(n):
        zi = z[i]
        acc = 0.0
        for t in range(zprev, zi):
            acc += lo[t] * psi[t]
        if zprev > 0:
            pv = r_lo[i - 1] * pv
            if zi > zprev:
                pv += acc
        else:
            pv = acc
        p[i] = pv
        zprev = zi
    z0 = z[0]
    znext = m
    qv = 0.0
    for i in range(n - 1, -1, -1):
        zi = z[i]
        acc = 0.0
        for t in range(zi, znext):
            acc += hi[t - z0] * psi[t]
        if znext < m:
            qv = r_hi[i] * qv
            if znext > zi:
                qv += acc
        else:
            qv = acc
        q[i] = qv
        znext = zi


@register_jitable
def _dp_apply_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, out):
    # edge values and ratios materialized from exponents per entry:
    # edge (i, t) carries exp((a[i] + b[t] - distance) / eps)
    n = z.shape[0]
    zprev = 0
    pv = 0.0
    for i in range(n):
        zi = z[i]
        ai = a[i]
        acc = 0.0
        for t in range(zprev, zi):
            acc += np.exp((ai + b[t] - lo_d[t]) * inv_eps) * psi[t]
        if zprev > 0:
            pv = np.exp((ai - a[i - 1] - dx[i - 1]) * inv_eps) * pv
            if zi > zprev:
                pv += acc
        else:
            pv = acc
        out[i] = pv
        zprev = zi
    z0 = z[0]
    znext = m
    qv = 0.0
    for i in range(n - 1, -1, -1):
        zi = z[i]
        ai = a[i]
        acc = 0.0
        for t in range(zi, znext):
            acc += np.exp((ai + b[t] - hi_d[t - z0]) * inv_eps) * psi[t]
        if znext < m:
            qv = np.exp((ai - a[i + 1] - dx[i]) * inv_eps) * qv
            if znext > zi:
                qv += acc
        else:
            qv = acc
        out[i] += qv
        znext = zi


@register_jitable
def _dp_blocks_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, p, q):
    n = z.shape[0]
    zprev = 0
    pv = 0.0
    for i in range(n):
        zi = z[i]
        ai = a[i]
        acc = 0.0
        for t in range(zprev, zi):
            acc += np.exp((ai + b[t] - lo_d[t]) * inv_eps) * psi[t]
        if zprev > 0:
            pv = np.exp((ai - a[i - 1] - dx[i - 1]) * inv_eps) * pv
            if zi > zprev:
                pv += acc
        else:
            pv = acc
        p[i] = pv
        zprev = zi
    z0 = z[0]
    znext = m
    qv = 0.0
    for i in range(n - 1, -1, -1):
        zi = z[i]
        ai = a[i]
        acc = 0.0
        for t in range(zi, znext):
            acc += np.exp((ai + b[t] - hi_d[t - z0]) * inv_eps) * psi[t]
        if znext < m:
            qv = np.exp((ai - a[i + 1] - dx[i]) * inv_eps) * qv
            if znext > zi:
                qv += acc
        else:
            qv = acc
        q[i] = qv
        znext = zi


def _dp_apply_counted_body(z, r_lo, r_hi, lo, hi, psi, m, out):
    # instrumented copy of _dp_apply; tallies one multiplication per
    # edge-times-input product and per ratio step actually taken, and
    # one addition per two terms actually combined
    n = z.shape[0]
    mult = 0
    add = 0
    zprev = 0
    pv = 0.0
    for i in range(n):
        zi = z[i]
        seg = zi - zprev
        acc = 0.0
        for t in range(zprev, zi):
            acc += lo[t] * psi[t]
        mult += seg
        if seg > 0:
            add += seg - 1
        if zprev > 0:
            pv = r_lo[i - 1] * pv
            mult += 1
            if seg > 0:
                pv += acc
                add += 1
        else:
            pv = acc
        out[i] = pv
        zprev = zi
    z0 = z[0]
    znext = m
    qv = 0.0
    for i in range(n - 1, -1, -1):
        zi = z[i]
        seg = znext - zi
        acc = 0.0
        for t in range(zi, znext):
            acc += hi[t - z0] * psi[t]
        mult += seg
        if seg > 0:
            add += seg - 1
        if znext < m:
            qv = r_hi[i] * qv
            mult += 1
            if seg > 0:
                qv += acc
                add += 1
        else:
            qv = acc
        out[i] += qv
        znext = zi
    add += n  # joining the lower and upper partial results
    return mult, add


def _iter_1d_body(zf, rlof, rhif, lof, hif, rowlof, rowhif,
                  zt, rlot, rhit, lot, hit, rowlot, rowhit,
                  u, v, phi, psi, t, qm, s, qn):
    # One full scaling iteration in place.  t/qm (length m) and s/qn
    # (length n) are work buffers.  Returns (err, status, extremes...)
    # where err is the marginal error of the iterates as they came in,
    # read off in the same pass that overwrites psi.
    #
    # Unlike the row-segmented scans above, the matvecs here run as
    # flat passes: scatter-add each stored edge to its owning row
    # (row owners are precomputed and non-decreasing, so the stores
    # walk forward), then resolve the row recurrence in a separate
    # sweep.  Every loop has a fixed trip count and a branch-free body,
    # which is what keeps large instances out of branch-miss stalls;
    # the ratio factors at structurally empty positions multiply an
    # exact zero, so no guard is needed.
    n = u.shape[0]
    m = v.shape[0]
    # t = K^T phi: lower part into t, upper part into qm
    for j in range(m):
        t[j] = 0.0
        qm[j] = 0.0
    for k in range(lot.shape[0]):
        t[rowlot[k]] += lot[k] * phi[k]
    for j in range(1, m):
        t[j] += rlot[j - 1] * t[j - 1]
    z0t = zt[0]
    for k in range(hit.shape[0]):
        qm[rowhit[k]] += hit[k] * phi[k + z0t]
    err = 0.0
    psmax = 0.0
    psmin = np.inf
    qv = 0.0
    for j in range(m - 1, -1, -1):
        if j == m - 1:
            qv = qm[j]
        else:
            qv = qm[j] + rhit[j] * qv
        tj = t[j] + qv
        vj = v[j]
        err += abs(psi[j] * tj - vj)
        if tj == 0.0:
            if vj > 0.0:
                return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
            psi[j] = 0.0
        else:
            w = vj / tj
            if not np.isfinite(w):
                return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
            psi[j] = w
            if vj > 0.0:
                if w > psmax:
                    psmax = w
                if w < psmin:
                    psmin = w
    # s = K psi, then the phi update, same layout
    for i in range(n):
        s[i] = 0.0
        qn[i] = 0.0
    for k in range(lof.shape[0]):
        s[rowlof[k]] += lof[k] * psi[k]
    for i in range(1, n):
        s[i] += rlof[i - 1] * s[i - 1]
    z0f = zf[0]
    for k in range(hif.shape[0]):
        qn[rowhif[k]] += hif[k] * psi[k + z0f]
    phmax = 0.0
    phmin = np.inf
    qv = 0.0
    for i in range(n - 1, -1, -1):
        if i == n - 1:
            qv = qn[i]
        else:
            qv = qn[i] + rhif[i] * qv
        si = s[i] + qv
        ui = u[i]
        if si == 0.0:
            if ui > 0.0:
                return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
            phi[i] = 0.0
        else:
            w = ui / si
            if not np.isfinite(w):
                return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
            phi[i] = w
            if ui > 0.0:
                if w > phmax:
                    phmax = w
                if w < phmin:
                    phmin = w
    return err, OK, psmax, psmin, phmax, phmin


def _iter_2d_baked_body(zxf, rloxf, rhixf, loxf, hixf,
                        zxt, rloxt, rhixt, loxt, hixt,
                        zyf, rloyf, rhiyf, loyf, hiyf,
                        zyt, rloyt, rhiyt, loyt, hiyt,
                        U, V, PHI, PSI, S1, T2, S2, T1):
    # Grid iteration via one column sweep and one row sweep per matvec.
    # Shapes: PHI, U, T1 are (n1, m1); PSI, V, T2 are (n2, m2);
    # S1 is (n2, m1); S2 is (n1, m2); all Fortran ordered so that
    # columns are contiguous.
    n1 = PHI.shape[0]
    m1 = PHI.shape[1]
    n2 = PSI.shape[0]
    m2 = PSI.shape[1]
    for j in range(m1):
        _dp_apply(zxt, rloxt, rhixt, loxt, hixt, PHI[:, j], n1, S1[:, j])
    rin = np.empty(m1)
    rout = np.empty(m2)
    for k in range(n2):
        for j in range(m1):
            rin[j] = S1[k, j]
        _dp_apply(zyt, rloyt, rhiyt, loyt, hiyt, rin, m1, rout)
        for j in range(m2):
            T2[k, j] = rout[j]
    err = 0.0
    psmax = 0.0
    psmin = np.inf
    for j in range(m2):
        for k in range(n2):
            vkj = V[k, j]
            tkj = T2[k, j]
            err += abs(PSI[k, j] * tkj - vkj)
            if tkj == 0.0:
                if vkj > 0.0:
                    return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
                PSI[k, j] = 0.0
            else:
                w = vkj / tkj
                if not np.isfinite(w):
                    return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
                PSI[k, j] = w
                if vkj > 0.0:
                    if w > psmax:
                        psmax = w
                    if w < psmin:
                        psmin = w
    for j in range(m2):
        _dp_apply(zxf, rloxf, rhixf, loxf, hixf, PSI[:, j], n2, S2[:, j])
    rin2 = np.empty(m2)
    rout2 = np.empty(m1)
    for k in range(n1):
        for j in range(m2):
            rin2[j] = S2[k, j]
        _dp_apply(zyf, rloyf, rhiyf, loyf, hiyf, rin2, m2, rout2)
        for j in range(m1):
            T1[k, j] = rout2[j]
    phmax = 0.0
    phmin = np.inf
    for j in range(m1):
        for k in range(n1):
            ukj = U[k, j]
            tkj = T1[k, j]
            if tkj == 0.0:
                if ukj > 0.0:
                    return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
                PHI[k, j] = 0.0
            else:
                w = ukj / tkj
                if not np.isfinite(w):
                    return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
                PHI[k, j] = w
                if ukj > 0.0:
                    if w > phmax:
                        phmax = w
                    if w < phmin:
                        phmin = w
    return err, OK, psmax, psmin, phmax, phmin


def _iter_2d_dyn_body(zxf, dxf, lodxf, hidxf,
                      zxt, dxt, lodxt, hidxt,
                      zyf, dyf, lodyf, hidyf,
                      zyt, dyt, lodyt, hidyt,
                      A, B, U, V, PHI, PSI, S1, T2, S2, T1,
                      inv_eps):
    # Same sweep order as the baked variant, but with the shift arrays
    # A (source grid) and B (target grid) folded into the exponents.
    # The column factor absorbs the shift of its input array, the row
    # factor the shift of its output array.
    n1 = PHI.shape[0]
    m1 = PHI.shape[1]
    n2 = PSI.shape[0]
    m2 = PSI.shape[1]
    zn1 = np.zeros(n1)
    zm1 = np.zeros(m1)
    zn2 = np.zeros(n2)
    zm2 = np.zeros(m2)
    for j in range(m1):
        _dp_apply_dyn(zxt, dxt, lodxt, hidxt, zn2, A[:, j], inv_eps,
                      PHI[:, j], n1, S1[:, j])
    rin = np.empty(m1)
    rout = np.empty(m2)
    babs = np.empty(m2)
    for k in range(n2):
        for j in range(m1):
            rin[j] = S1[k, j]
        for j in range(m2):
            babs[j] = B[k, j]
        _dp_apply_dyn(zyt, dyt, lodyt, hidyt, babs, zm1, inv_eps,
                      rin, m1, rout)
        for j in range(m2):
            T2[k, j] = rout[j]
    err = 0.0
    psmax = 0.0
    psmin = np.inf
    for j in range(m2):
        for k in range(n2):
            vkj = V[k, j]
            tkj = T2[k, j]
            err += abs(PSI[k, j] * tkj - vkj)
            if tkj == 0.0:
                if vkj > 0.0:
                    return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
                PSI[k, j] = 0.0
            else:
                w = vkj / tkj
                if not np.isfinite(w):
                    return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
                PSI[k, j] = w
                if vkj > 0.0:
                    if w > psmax:
                        psmax = w
                    if w < psmin:
                        psmin = w
    for j in range(m2):
        _dp_apply_dyn(zxf, dxf, lodxf, hidxf, zn1, B[:, j], inv_eps,
                      PSI[:, j], n2, S2[:, j])
    rin2 = np.empty(m2)
    rout2 = np.empty(m1)
    aabs = np.empty(m1)
    for k in range(n1):
        for j in range(m2):
            rin2[j] = S2[k, j]
        for j in range(m1):
            aabs[j] = A[k, j]
        _dp_apply_dyn(zyf, dyf, lodyf, hidyf, aabs, zm2, inv_eps,
                      rin2, m2, rout2)
        for j in range(m1):
            T1[k, j] = rout2[j]
    phmax = 0.0
    phmin = np.inf
    for j in range(m1):
        for k in range(n1):
            ukj = U[k, j]
            tkj = T1[k, j]
            if tkj == 0.0:
                if ukj > 0.0:
                    return err, ZERO_DENOM, 0.0, 0.0, 0.0, 0.0
                PHI[k, j] = 0.0
            else:
                w = ukj / tkj
                if not np.isfinite(w):
                    return err, NONFINITE, 0.0, 0.0, 0.0, 0.0
                PHI[k, j] = w
                if ukj > 0.0:
                    if w > phmax:
                        phmax = w
                    if w < phmin:
                        phmin = w
    return err, OK, psmax, psmin, phmax, phmin


def _dp_apply_body(z, r_lo, r_hi, lo, hi, psi, m, out):
    _dp_apply(z, r_lo, r_hi, lo, hi, psi, m, out)


def _dp_blocks_body(z, r_lo, r_hi, lo, hi, psi, m, p, q):
    _dp_blocks(z, r_lo, r_hi, lo, hi, psi, m, p, q)


def _dp_apply_dyn_body(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, out):
    _dp_apply_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, out)


def _dp_blocks_dyn_body(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, p, q):
    _dp_blocks_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, p, q)


_compiled = {
    "dp_apply": jit(_dp_apply_body),
    "dp_blocks": jit(_dp_blocks_body),
    "dp_apply_dyn": jit(_dp_apply_dyn_body),
    "dp_blocks_dyn": jit(_dp_blocks_dyn_body),
    "dp_apply_counted": jit(_dp_apply_counted_body),
    "iter_1d": jit(_iter_1d_body),
    "iter_2d_baked": jit(_iter_2d_baked_body),
    "iter_2d_dyn": jit(_iter_2d_dyn_body),
}

_plain = {
    "dp_apply": _dp_apply_body,
    "dp_blocks": _dp_blocks_body,
    "dp_apply_dyn": _dp_apply_dyn_body,
    "dp_blocks_dyn": _dp_blocks_dyn_body,
    "dp_apply_counted": _dp_apply_counted_body,
    "iter_1d": _iter_1d_body,
    "iter_2d_baked": _iter_2d_baked_body,
    "iter_2d_dyn": _iter_2d_dyn_body,
}


def _route(name):
    return _compiled[name] if numba_enabled() else _plain[name]


def dp_apply(z, r_lo, r_hi, lo, hi, psi, m, out):
    return _route("dp_apply")(z, r_lo, r_hi, lo, hi, psi, m, out)


def dp_blocks(z, r_lo, r_hi, lo, hi, psi, m, p, q):
    return _route("dp_blocks")(z, r_lo, r_hi, lo, hi, psi, m, p, q)


def dp_apply_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, out):
    return _route("dp_apply_dyn")(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, out)


def dp_blocks_dyn(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, p, q):
    return _route("dp_blocks_dyn")(z, dx, lo_d, hi_d, a, b, inv_eps, psi, m, p, q)


def dp_apply_counted(z, r_lo, r_hi, lo, hi, psi, m, out):
    return _route("dp_apply_counted")(z, r_lo, r_hi, lo, hi, psi, m, out)


def iter_1d(*args):
    return _route("iter_1d")(*args)


def iter_2d_baked(*args):
    return _route("iter_2d_baked")(*args)


def iter_2d_dyn(*args):
    return _route("iter_2d_dyn")(*args)


def warmup_1d():
    """Force compilation of the 1D kernels on a toy instance."""
    z = np.array([1, 2], dtype=np.int64)
    r = np.array([0.5])
    e2 = np.array([0.5, 0.5])
    psi = np.array([0.3, 0.7])
    buf = np.empty(2)
    dp_apply(z, r, r, e2, e2, psi, 2, buf)
    dp_blocks(z, r, r, e2, e2, psi, 2, buf.copy(), buf.copy())
    dp_apply_counted(z, r, r, e2, e2, psi, 2, buf)
    zero = np.zeros(2)
    dp_apply_dyn(z, e2, e2, e2, zero, zero, 1.0, psi, 2, buf)
    dp_blocks_dyn(z, e2, e2, e2, zero, zero, 1.0, psi, 2, buf.copy(), buf.copy())
    # upper part of the toy case has a single edge (row 0, column 1)
    e1 = np.array([0.5])
    rowlo = np.array([0, 1], dtype=np.int64)
    rowhi = np.array([0], dtype=np.int64)
    iter_1d(z, r, r, e2, e1, rowlo, rowhi, z, r, r, e2, e1, rowlo, rowhi,
            psi, psi, psi.copy(), psi.copy(),
            buf, buf.copy(), buf.copy(), buf.copy())


def warmup_2d():
    """Force compilation of the 2D iteration kernels on a toy instance."""
    z = np.array([1, 2], dtype=np.int64)
    r = np.array([0.5])
    e2 = np.array([0.5, 0.5])
    M = np.asfortranarray(np.full((2, 2), 0.25))
    bufs = [np.asfortranarray(np.empty((2, 2))) for _ in range(4)]
    iter_2d_baked(z, r, r, e2, e2, z, r, r, e2, e2,
                  z, r, r, e2, e2, z, r, r, e2, e2,
                  M, M, M.copy(order="F"), M.copy(order="F"),
                  bufs[0], bufs[1], bufs[2], bufs[3])
    Z = np.asfortranarray(np.zeros((2, 2)))
    iter_2d_dyn(z, e2, e2, e2, z, e2, e2, e2,
                z, e2, e2, e2, z, e2, e2, e2,
                Z, Z, M, M, M.copy(order="F"), M.copy(order="F"),
                bufs[0], bufs[1], bufs[2], bufs[3], 1.0)
