"""Pure-Python point-SOR sweep; reference and fallback for ``_sor.pyx``."""
import math


def sor_sweep(x, y, omega, periodic):
    n_xi, n_eta = x.shape
    X = x.tolist()
    Y = y.tolist()
    fabs = math.fabs
    maxd = 0.0
    irange = range(0, n_xi) if periodic else range(1, n_xi - 1)
    for j in range(1, n_eta - 1):
        jp = j + 1
        jm = j - 1
        for i in irange:
            ip = i + 1
            im = i - 1
            if ip == n_xi:
                ip = 0
            if im < 0:
                im = n_xi - 1
            Xp, Xm, Xi = X[ip], X[im], X[i]
            Yp, Ym, Yi = Y[ip], Y[im], Y[i]
            xe = Xp[j]
            xw = Xm[j]
            xn = Xi[jp]
            xs = Xi[jm]
            ye = Yp[j]
            yw = Ym[j]
            yn = Yi[jp]
            ys = Yi[jm]
            xxi = 0.5 * (xe - xw)
            yxi = 0.5 * (ye - yw)
            xeta = 0.5 * (xn - xs)
            yeta = 0.5 * (yn - ys)
            alpha = xeta * xeta + yeta * yeta
            beta = xxi * xeta + yxi * yeta
            gamma = xxi * xxi + yxi * yxi
            xc = 0.25 * (Xp[jp] - Xp[jm] - Xm[jp] + Xm[jm])
            yc = 0.25 * (Yp[jp] - Yp[jm] - Ym[jp] + Ym[jm])
            denom = 2.0 * (alpha + gamma)
            try:
                dx = omega * ((alpha * (xe + xw) + gamma * (xn + xs) - 2.0 * beta * xc) / denom - Xi[j])
                dy = omega * ((alpha * (ye + yw) + gamma * (yn + ys) - 2.0 * beta * yc) / denom - Yi[j])
            except ZeroDivisionError:
                dx = dy = math.nan
            Xi[j] = Xi[j] + dx
            Yi[j] = Yi[j] + dy
            d = fabs(dx)
            if fabs(dy) > d:
                d = fabs(dy)
            if d > maxd or d != d:
                maxd = d
    x[...] = X
    y[...] = Y
    return maxd
