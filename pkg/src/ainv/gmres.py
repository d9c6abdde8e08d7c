"""Restarted GMRES for a batch of independent complex systems.

Each row of ``b`` is a separate right-hand side; the Arnoldi processes run
side by side so one call to ``matvec`` serves every active system.
"""

import numpy as np


class GMRESError(RuntimeError):
    """Raised when GMRES stops before reaching the requested tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _norms(v):
    return np.sqrt(np.einsum("mn,mn->m", v.real, v.real) + np.einsum("mn,mn->m", v.imag, v.imag))


def gmres(matvec, b, x0=None, tol=1e-8, restart=50, maxiter=2000):
    """Solve ``A x_r = b_r`` for every row ``r`` of ``b``.

    Parameters
    ----------
    matvec : callable
        Maps an ``(m, n)`` array of row vectors to ``A`` applied row-wise.
        Must accept any number of rows.
    b : array, shape (m, n) or (n,)
    tol : float
        Relative residual target ``||b - A x|| <= tol * ||b||`` per row.
    restart : int
        Krylov dimension before restarting.
    maxiter : int
        Cap on inner iterations (matvecs) per row.

    Returns
    -------
    x : array like ``b``
    info : dict with ``residuals`` (relative, per row) and ``iterations``.
    """
    b = np.asarray(b, dtype=complex)
    single = b.ndim == 1
    B = np.atleast_2d(b)
    m, n = B.shape
    X = np.zeros_like(B) if x0 is None else np.array(np.atleast_2d(x0), dtype=complex)
    bnorm = _norms(B)
    bnorm_safe = np.where(bnorm == 0, 1.0, bnorm)
    iters = np.zeros(m, dtype=int)

    R = B - matvec(X)
    rel = _norms(R) / bnorm_safe
    while True:
        active = np.flatnonzero(rel > tol)
        if active.size == 0:
            break
        if np.all(iters[active] >= maxiter):
            raise GMRESError(
                f"GMRES did not converge in {maxiter} iterations "
                f"(worst relative residual {rel.max():.3e})",
                float(rel.max()),
            )
        steps = int(min(restart, maxiter - iters[active].max()))
        steps = max(steps, 1)
        dx, done = _cycle(matvec, R[active], steps, tol * bnorm_safe[active])
        X[active] += dx
        iters[active] += done
        R = B - matvec(X)
        rel = _norms(R) / bnorm_safe

    info = {"residuals": rel, "iterations": iters}
    return (X[0] if single else X), info


def _cycle(matvec, r0, steps, abs_tol):
    """One GMRES(steps) cycle from residual ``r0``.

    Returns the correction and the number of Arnoldi steps taken.
    """
    m, n = r0.shape
    beta = _norms(r0)
    V = np.zeros((steps + 1, m, n), dtype=complex)
    H = np.zeros((m, steps + 1, steps), dtype=complex)
    cs = np.zeros((steps, m), dtype=complex)
    sn = np.zeros((steps, m), dtype=complex)
    g = np.zeros((steps + 1, m), dtype=complex)
    g[0] = beta
    V[0] = r0 / beta[:, None]

    k = 0
    for j in range(steps):
        w = matvec(V[j])
        # classical Gram-Schmidt applied twice
        h = np.zeros((j + 1, m), dtype=complex)
        for _ in range(2):
            proj = np.einsum("imn,mn->im", V[: j + 1].conj(), w)
            w = w - np.einsum("im,imn->mn", proj, V[: j + 1])
            h += proj
        hnext = _norms(w)
        H[:, : j + 1, j] = h.T
        H[:, j + 1, j] = hnext
        V[j + 1] = w / np.where(hnext == 0, 1.0, hnext)[:, None]

        for i in range(j):
            a, c = H[:, i, j].copy(), H[:, i + 1, j].copy()
            H[:, i, j] = cs[i].conj() * a + sn[i].conj() * c
            H[:, i + 1, j] = -sn[i] * a + cs[i] * c
        a, c = H[:, j, j], H[:, j + 1, j]
        rho = np.sqrt(np.abs(a) ** 2 + np.abs(c) ** 2)
        rho_safe = np.where(rho == 0, 1.0, rho)
        cs[j] = np.where(rho == 0, 1.0, a / rho_safe)
        sn[j] = np.where(rho == 0, 0.0, c / rho_safe)
        H[:, j, j] = rho
        H[:, j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j].conj() * g[j]
        k = j + 1
        if np.all(np.abs(g[j + 1]) <= abs_tol):
            break

    Hk = H[:, :k, :k]
    diag = np.einsum("mii->mi", Hk)
    # a zero pivot means that system converged exactly earlier in the cycle
    bad = np.abs(diag) == 0
    if bad.any():
        Hk = Hk.copy()
        idx = np.nonzero(bad)
        Hk[idx[0], idx[1], idx[1]] = 1.0
    y = np.linalg.solve(Hk, g[:k].T[:, :, None])[:, :, 0]
    return np.einsum("km,kmn->mn", y.T, V[:k]), k
