"""Limited-memory BFGS with backtracking line search.

Plain two-loop recursion over the (s, y) history, initial inverse-Hessian
scaling gamma = s.y / y.y, Armijo backtracking.  Curvature pairs with
s.y <= 1e-12 ||s|| ||y|| are skipped so the implicit inverse Hessian stays
positive definite.  memory=0 disables the history entirely and leaves
plain gradient descent with the same line search (sanity mode).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class LbfgsOptions:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-7  # on the max-norm of the gradient
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    init_step: float = 1.0

    def __post_init__(self):
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")
        if not 0 < self.armijo < 1 or not 0 < self.shrink < 1:
            raise ValueError("bad line search constants")
        if self.max_backtracks < 1 or self.init_step <= 0:
            raise ValueError("bad line search constants")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    value: float
    grad_inf: float
    step: float
    evals: int  # cumulative objective evaluations
    elapsed: float


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    status: str
    history: list = field(default_factory=list)


def _finite_or_raise(fx, g, where):
    if not np.isfinite(fx) or not np.isfinite(g).all():
        raise ValueError("objective returned non-finite value/gradient at %s" % where)


def minimize(f, x0, opts: LbfgsOptions | None = None, callback=None) -> MinimizeResult:
    """Minimize f: x -> (value, gradient) from x0.

    Every accepted step satisfies the Armijo decrease condition, so the
    recorded values are monotone nonincreasing.  ``callback``, if given,
    is invoked after each accepted iteration with (record, x).
    """
    opts = opts or LbfgsOptions()
    x = np.array(x0, dtype=np.float64, copy=True)
    fx, g = f(x)
    g = np.asarray(g, dtype=np.float64)
    _finite_or_raise(fx, g, "the starting point")
    evals = 1
    svecs, yvecs, rhos = [], [], []
    gamma = 1.0
    history = []
    status = STATUS_MAX_ITERS
    start = time.perf_counter()

    for it in range(1, opts.max_iters + 1):
        if np.abs(g).max() <= opts.grad_tol:
            status = STATUS_CONVERGED
            break

        # two-loop recursion, newest pair first
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(svecs), reversed(yvecs), reversed(rhos)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        q *= gamma
        for (s, y, rho), a in zip(zip(svecs, yvecs, rhos), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        gd = g @ d
        if gd >= 0.0:
            # not a descent direction (stale curvature); restart from steepest descent
            svecs, yvecs, rhos = [], [], []
            gamma = 1.0
            d = -g
            gd = g @ d

        step = opts.init_step
        accepted = False
        for _ in range(opts.max_backtracks):
            xn = x + step * d
            fn, gn = f(xn)
            gn = np.asarray(gn, dtype=np.float64)
            _finite_or_raise(fn, gn, "iteration %d" % it)
            evals += 1
            if fn <= fx + opts.armijo * step * gd:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            status = STATUS_LINE_SEARCH_FAILED
            break

        if opts.memory > 0:
            s = xn - x
            y = gn - g
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                svecs.append(s)
                yvecs.append(y)
                rhos.append(1.0 / sy)
                if len(svecs) > opts.memory:
                    svecs.pop(0)
                    yvecs.pop(0)
                    rhos.pop(0)
                gamma = sy / (y @ y)
            else:
                # curvature test failed: the stored model is no longer
                # trustworthy (Armijo alone cannot guarantee s'y > 0), and
                # keeping it can freeze progress near indefinite regions.
                svecs, yvecs, rhos = [], [], []
                gamma = 1.0
        x, fx, g = xn, fn, gn
        record = IterationRecord(
            iteration=it,
            value=float(fx),
            grad_inf=float(np.abs(g).max()),
            step=float(step),
            evals=evals,
            elapsed=time.perf_counter() - start,
        )
        history.append(record)
        if callback is not None:
            callback(record, x)
    else:
        status = STATUS_MAX_ITERS
        if np.abs(g).max() <= opts.grad_tol:
            status = STATUS_CONVERGED

    return MinimizeResult(x=x, value=float(fx), status=status, history=history)
