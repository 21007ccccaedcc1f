# cython: language_level=3
"""Compiled point-SOR sweep for the Winslow system.

Must stay operation-for-operation identical to ``_sor_py.sor_sweep``.
"""
from libc.math cimport fabs


def sor_sweep(double[:, ::1] x, double[:, ::1] y, double omega, bint periodic):
    """One in-place sweep in lattice order (eta outer, xi inner).

    Returns the largest absolute coordinate update (NaN if one appeared).
    """
    cdef Py_ssize_t n_xi = x.shape[0], n_eta = x.shape[1]
    cdef Py_ssize_t i, j, ip, im, i0, i1
    cdef double xe, xw, xn, xs, ye, yw, yn, ys
    cdef double xxi, yxi, xeta, yeta, alpha, beta, gamma, xc, yc, denom, dx, dy, d
    cdef double maxd = 0.0
    if periodic:
        i0, i1 = 0, n_xi
    else:
        i0, i1 = 1, n_xi - 1
    with nogil:
        for j in range(1, n_eta - 1):
            for i in range(i0, i1):
                ip = i + 1
                im = i - 1
                if ip == n_xi:
                    ip = 0
                if im < 0:
                    im = n_xi - 1
                xe = x[ip, j]
                xw = x[im, j]
                xn = x[i, j + 1]
                xs = x[i, j - 1]
                ye = y[ip, j]
                yw = y[im, j]
                yn = y[i, j + 1]
                ys = y[i, j - 1]
                xxi = 0.5 * (xe - xw)
                yxi = 0.5 * (ye - yw)
                xeta = 0.5 * (xn - xs)
                yeta = 0.5 * (yn - ys)
                alpha = xeta * xeta + yeta * yeta
                beta = xxi * xeta + yxi * yeta
                gamma = xxi * xxi + yxi * yxi
                xc = 0.25 * (x[ip, j + 1] - x[ip, j - 1] - x[im, j + 1] + x[im, j - 1])
                yc = 0.25 * (y[ip, j + 1] - y[ip, j - 1] - y[im, j + 1] + y[im, j - 1])
                denom = 2.0 * (alpha + gamma)
                dx = omega * ((alpha * (xe + xw) + gamma * (xn + xs) - 2.0 * beta * xc) / denom - x[i, j])
                dy = omega * ((alpha * (ye + yw) + gamma * (yn + ys) - 2.0 * beta * yc) / denom - y[i, j])
                x[i, j] = x[i, j] + dx
                y[i, j] = y[i, j] + dy
                d = fabs(dx)
                if fabs(dy) > d:
                    d = fabs(dy)
                if d > maxd or d != d:
                    maxd = d
    return maxd
