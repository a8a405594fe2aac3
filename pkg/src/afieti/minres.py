"""Preconditioned MINRES for symmetric indefinite systems.

Lanczos three-term recurrence in the preconditioner inner product with
Givens-rotation updates of the residual estimate (Paige and Saunders).
The stopping test uses the recurrence's preconditioned residual norm,
relative to that of the right-hand side; the true residual is reported.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure

__all__ = ["SolveReport", "minres"]

CONVERGED = "converged"
NOT_CONVERGED = "not_converged"
BREAKDOWN = "breakdown"


@dataclass
class SolveReport:
    iterations: int
    history: list = field(default_factory=list)
    relres_true: float = float("nan")
    converged: bool = False
    elapsed: float = 0.0
    flag: str = NOT_CONVERGED


def minres(apply_A, apply_Binv, b, tol: float = 1e-8, max_iter: int | None = None, callback=None):
    """Solve ``A x = b`` with a symmetric positive (semi)definite preconditioner.

    Parameters
    ----------
    apply_A, apply_Binv : callable
        Symmetric operator and preconditioner (the inverse is applied).
    b : ndarray
    tol : float
        Bound on the relative preconditioned residual.
    max_iter : int, optional
        Defaults to ``10 * len(b) + 100``; drivers pass ``10 N_c + 100``.
    callback : callable, optional
        Called as ``callback(x)`` after every iteration.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = 10 * n + 100 if max_iter is None else int(max_iter)
    x = np.zeros(n)
    report = SolveReport(iterations=0)

    r1 = b.copy()
    y = apply_Binv(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise NumericalFailure("preconditioner is not positive semidefinite")
    beta1 = np.sqrt(beta1)
    if beta1 == 0.0:
        report.history.append(0.0)
        report.relres_true = 0.0
        report.converged = True
        report.flag = CONVERGED
        report.elapsed = time.perf_counter() - t0
        return x, report

    eps = np.finfo(float).eps
    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    report.history.append(1.0)
    flag = NOT_CONVERGED
    for itn in range(1, max_iter + 1):
        v = y / beta
        y = apply_A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_Binv(r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            if bb < -1e-10 * beta1 ** 2:
                raise NumericalFailure("preconditioner is not positive semidefinite")
            bb = 0.0
        beta = np.sqrt(bb)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        rel = phibar / beta1
        report.history.append(float(rel))
        report.iterations = itn
        if callback is not None:
            callback(x)
        if rel <= tol:
            flag = CONVERGED
            break
        if beta == 0.0:
            flag = BREAKDOWN
            break

    res = b - apply_A(x)
    report.relres_true = float(np.linalg.norm(res) / np.linalg.norm(b))
    if flag == BREAKDOWN and report.relres_true <= tol:
        flag = CONVERGED
    report.flag = flag
    report.converged = flag == CONVERGED
    report.elapsed = time.perf_counter() - t0
    return x, report
