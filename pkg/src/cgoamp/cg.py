"""Unpreconditioned conjugate gradient for SPD systems ``Xi z = g``.

The operator is a callable so callers can apply ``Xi`` in factored form.  A
leading batch axis on ``g`` runs independent solves side by side; every
system follows its own iteration schedule and stops on its own residual.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 50
    tol: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


class CgBreakdown(ArithmeticError):
    pass


def cg_solve(apply_xi, g, cfg: CgConfig = CgConfig(), history: list | None = None):
    """Solve ``Xi z = g``; returns ``(z, iters, final_residual_norm)``.

    ``apply_xi`` maps arrays shaped like ``g`` to arrays of the same shape.
    With a 1-D ``g`` the iteration count and residual are scalars.  If
    ``history`` is a list, the iterate ``x_i`` after each step is appended.
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise CgBreakdown("non-finite right-hand side")
    if g.ndim == 1:
        return _cg_single(apply_xi, g, cfg, history)
    op = apply_xi

    x = np.zeros_like(g)
    rho = g.copy()
    p = rho.copy()
    rr = np.einsum("bi,bi->b", rho, rho)
    # a zero right-hand side is already solved by x_0 = 0
    active = rr > 0
    iters = np.zeros(g.shape[0], dtype=int)
    res = np.sqrt(rr)

    for i in range(1, cfg.max_iters + 1):
        if not active.any():
            break
        xp = op(p)
        pxp = np.einsum("bi,bi->b", p, xp)
        if np.any(active & ~(pxp > 0)):
            bad = np.flatnonzero(active & ~(pxp > 0))
            raise _breakdown(i, pxp[bad[0]], bad[0])
        alpha = np.where(active, rr / np.where(active, pxp, 1.0), 0.0)
        x = x + alpha[:, None] * p
        rho = rho - alpha[:, None] * xp
        rr_new = np.einsum("bi,bi->b", rho, rho)
        if not np.all(np.isfinite(rr_new)):
            raise CgBreakdown(f"non-finite residual at CG iteration {i}")
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        p = np.where(active[:, None], rho + beta[:, None] * p, p)
        iters[active] = i
        res = np.where(active, np.sqrt(rr_new), res)
        rr = np.where(active, rr_new, rr)
        if history is not None:
            history.append(x.copy())
        active &= ~(res < cfg.tol)
    return x, iters, res


def _breakdown(i, pxp, system=0):
    return CgBreakdown(f"CG breakdown at iteration {i}: p^T Xi p = {pxp!r} "
                       f"(operator not SPD or numerical failure) for system {system}")


def _cg_single(apply_xi, g, cfg: CgConfig, history):
    # same recursion as the batched loop with scalar bookkeeping, which keeps
    # per-iteration overhead small next to the operator cost
    x = np.zeros_like(g)
    rho = g.copy()
    p = rho.copy()
    rr = float(rho @ rho)
    res = np.sqrt(rr)
    iters = 0
    if rr == 0.0:
        return x, 0, 0.0
    for i in range(1, cfg.max_iters + 1):
        xp = np.asarray(apply_xi(p))
        pxp = float(p @ xp)
        if not pxp > 0:
            raise _breakdown(i, pxp)
        alpha = rr / pxp
        x += alpha * p
        rho -= alpha * xp
        rr_new = float(rho @ rho)
        if not np.isfinite(rr_new):
            raise CgBreakdown(f"non-finite residual at CG iteration {i}")
        p = rho + (rr_new / rr) * p
        rr, res, iters = rr_new, np.sqrt(rr_new), i
        if history is not None:
            history.append(x.copy())
        if res < cfg.tol:
            break
    return x, iters, float(res)
