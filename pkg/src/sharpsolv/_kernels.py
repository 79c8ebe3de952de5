"""Compiled stencil loops shared by the grid and solver modules.

Face-coefficient arrays follow the staggered layout used throughout the
package: ``ex[i, j, k]`` is the coefficient on the face between cells
``(i - 1, j, k)`` and ``(i, j, k)``, so ``ex`` has shape ``(nx + 1, ny, nz)``
and faces ``0`` and ``nx`` touch the ghost layer (value 0).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def apply_operator(psi, ex, ey, ez, shift, coef, out):
    # out = coef * sum_f eps_f (psi_c - psi_nb) + shift * psi, ghosts = 0
    nx, ny, nz = psi.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = psi[i, j, k]
                lo = psi[i - 1, j, k] if i > 0 else 0.0
                hi = psi[i + 1, j, k] if i < nx - 1 else 0.0
                acc = ex[i, j, k] * (c - lo) + ex[i + 1, j, k] * (c - hi)
                lo = psi[i, j - 1, k] if j > 0 else 0.0
                hi = psi[i, j + 1, k] if j < ny - 1 else 0.0
                acc += ey[i, j, k] * (c - lo) + ey[i, j + 1, k] * (c - hi)
                lo = psi[i, j, k - 1] if k > 0 else 0.0
                hi = psi[i, j, k + 1] if k < nz - 1 else 0.0
                acc += ez[i, j, k] * (c - lo) + ez[i, j, k + 1] * (c - hi)
                out[i, j, k] = coef * acc + shift[i, j, k] * c
    return out


@njit(cache=True)
def operator_diagonal(ex, ey, ez, shift, coef):
    nx, ny, nz = shift.shape
    d = np.empty_like(shift)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                s = (ex[i, j, k] + ex[i + 1, j, k] + ey[i, j, k] + ey[i, j + 1, k]
                     + ez[i, j, k] + ez[i, j, k + 1])
                d[i, j, k] = coef * s + shift[i, j, k]
    return d


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    fa = a.ravel()
    fb = b.ravel()
    for n in range(fa.size):
        s += fa[n] * fb[n]
    return s


@njit(cache=True)
def pcg(b, x, ex, ey, ez, shift, coef, tol, maxiter, trace):
    """Jacobi-preconditioned CG; ``x`` is the initial guess, updated in place.

    Stops when ||b - A x|| <= tol * ||b||.  ``trace`` receives the relative
    residual per iteration (length >= maxiter + 1).  Returns
    (iterations, relative residual).
    """
    dinv = 1.0 / operator_diagonal(ex, ey, ez, shift, coef)
    fx = x.ravel()
    fb = b.ravel()
    fd = dinv.ravel()
    r = np.empty_like(b)
    apply_operator(x, ex, ey, ez, shift, coef, r)
    fr = r.ravel()
    for n in range(fr.size):
        fr[n] = fb[n] - fr[n]
    bnorm = np.sqrt(_dot(b, b))
    if bnorm == 0.0:
        for n in range(fx.size):
            fx[n] = 0.0
        trace[0] = 0.0
        return 0, 0.0
    z = np.empty_like(b)
    fz = z.ravel()
    for n in range(fz.size):
        fz[n] = fd[n] * fr[n]
    p = z.copy()
    fp = p.ravel()
    q = np.empty_like(b)
    fq = q.ravel()
    rz = _dot(r, z)
    res = np.sqrt(_dot(r, r)) / bnorm
    trace[0] = res
    it = 0
    while res > tol and it < maxiter:
        apply_operator(p, ex, ey, ez, shift, coef, q)
        alpha = rz / _dot(p, q)
        rr = 0.0
        for n in range(fx.size):
            fx[n] += alpha * fp[n]
            fr[n] -= alpha * fq[n]
            rr += fr[n] * fr[n]
        it += 1
        res = np.sqrt(rr) / bnorm
        trace[it] = res
        if res <= tol:
            break
        rz_new = 0.0
        for n in range(fz.size):
            fz[n] = fd[n] * fr[n]
            rz_new += fr[n] * fz[n]
        beta = rz_new / rz
        rz = rz_new
        for n in range(fp.size):
            fp[n] = fz[n] + beta * fp[n]
    return it, res


@njit(cache=True)
def face_energy_sum(psi, ex, ey, ez):
    # sum over all faces of eps_f * (jump of psi)^2, ghosts = 0
    nx, ny, nz = psi.shape
    s = 0.0
    for i in range(nx + 1):
        for j in range(ny):
            for k in range(nz):
                a = psi[i - 1, j, k] if i > 0 else 0.0
                b = psi[i, j, k] if i < nx else 0.0
                s += ex[i, j, k] * (b - a) ** 2
    for i in range(nx):
        for j in range(ny + 1):
            for k in range(nz):
                a = psi[i, j - 1, k] if j > 0 else 0.0
                b = psi[i, j, k] if j < ny else 0.0
                s += ey[i, j, k] * (b - a) ** 2
    for i in range(nx):
        for j in range(ny):
            for k in range(nz + 1):
                a = psi[i, j, k - 1] if k > 0 else 0.0
                b = psi[i, j, k] if k < nz else 0.0
                s += ez[i, j, k] * (b - a) ** 2
    return s


@njit(cache=True)
def uniform_face_energy_sum(psi):
    nx, ny, nz = psi.shape
    s = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = psi[i, j, k]
                lo = psi[i - 1, j, k] if i > 0 else 0.0
                s += (c - lo) ** 2
                lo = psi[i, j - 1, k] if j > 0 else 0.0
                s += (c - lo) ** 2
                lo = psi[i, j, k - 1] if k > 0 else 0.0
                s += (c - lo) ** 2
    # upper ghost faces
    for j in range(ny):
        for k in range(nz):
            s += psi[nx - 1, j, k] ** 2
    for i in range(nx):
        for k in range(nz):
            s += psi[i, ny - 1, k] ** 2
    for i in range(nx):
        for j in range(ny):
            s += psi[i, j, nz - 1] ** 2
    return s


@njit(cache=True)
def cell_gradient_sq(psi, h):
    # half the sum of squared face differences around each cell, / h^2
    nx, ny, nz = psi.shape
    out = np.empty_like(psi)
    inv = 0.5 / (h * h)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = psi[i, j, k]
                lo = psi[i - 1, j, k] if i > 0 else 0.0
                hi = psi[i + 1, j, k] if i < nx - 1 else 0.0
                acc = (c - lo) ** 2 + (c - hi) ** 2
                lo = psi[i, j - 1, k] if j > 0 else 0.0
                hi = psi[i, j + 1, k] if j < ny - 1 else 0.0
                acc += (c - lo) ** 2 + (c - hi) ** 2
                lo = psi[i, j, k - 1] if k > 0 else 0.0
                hi = psi[i, j, k + 1] if k < nz - 1 else 0.0
                acc += (c - lo) ** 2 + (c - hi) ** 2
                out[i, j, k] = inv * acc
    return out


@njit(cache=True)
def uniform_residual_sq(psi, rhs, coef, shift):
    # ||rhs - (coef * (-lap_h) + shift) psi||^2 without temporaries
    nx, ny, nz = psi.shape
    s = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = psi[i, j, k]
                acc = 6.0 * c
                if i > 0:
                    acc -= psi[i - 1, j, k]
                if i < nx - 1:
                    acc -= psi[i + 1, j, k]
                if j > 0:
                    acc -= psi[i, j - 1, k]
                if j < ny - 1:
                    acc -= psi[i, j + 1, k]
                if k > 0:
                    acc -= psi[i, j, k - 1]
                if k < nz - 1:
                    acc -= psi[i, j, k + 1]
                d = rhs[i, j, k] - (coef * acc + shift * c)
                s += d * d
    return s
