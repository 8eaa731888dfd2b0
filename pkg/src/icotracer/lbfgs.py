"""Limited-memory BFGS with a strong Wolfe line search and restarts.

The minimizer sees the problem only through evaluate(x) -> (J, breakdown,
gradient); transport methods and limiters are opaque to it.  When the
line search burns through its attempt budget the run is restarted: the
problem is told to move its prior to the current iterate, the curvature
memory is cleared, and iteration counting simply continues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class LbfgsConfig:
    memory: int = 10
    c1: float = 1.0e-4
    c2: float = 0.9
    max_attempts: int = 5   # line-search evaluations before a restart
    max_iters: int = 50
    gtol: float = 0.0       # stop when the gradient norm falls below this

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.max_attempts < 1:
            raise ValueError("need at least one line-search attempt")


@dataclass
class IterationRecord:
    iteration: int
    j_total: float
    j_b: float
    j_o: float
    gnorm: float
    alpha: float
    restart: bool = False
    fallback: bool = False  # steepest-descent substitution this iteration


@dataclass
class _Evaluation:
    j: float
    breakdown: object
    grad: np.ndarray


class _CountedProblem:
    """Wraps problem.evaluate with the fixed method and counts calls."""

    def __init__(self, problem, method: str):
        self.problem = problem
        self.method = method
        self.n_evals = 0

    def __call__(self, x: np.ndarray) -> _Evaluation:
        self.n_evals += 1
        j, breakdown, grad = self.problem.evaluate(x, self.method)
        return _Evaluation(j=float(j), breakdown=breakdown, grad=grad)


def _two_loop(grad: np.ndarray, pairs: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Standard two-loop recursion; H0 = gamma*I from the newest pair."""
    q = grad.copy()
    alphas = []
    for s, y in reversed(pairs):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(pairs, reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return -q


def _interp_alpha(a_lo, a_hi, f_lo, g_lo, f_hi, g_hi) -> float:
    """Minimizer of the cubic Hermite fit over the bracket.

    Reproduces quadratic costs exactly, which is what makes the line
    search behave like an exact one there; falls back to a quadratic fit
    and then bisection as the data degenerates.
    """
    d1 = g_lo + g_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - g_lo * g_hi
    if disc >= 0.0:
        d2 = math.copysign(math.sqrt(disc), a_hi - a_lo)
        denom = g_hi - g_lo + 2.0 * d2
        if denom != 0.0:
            a = a_hi - (a_hi - a_lo) * (g_hi + d2 - d1) / denom
            if _inside(a, a_lo, a_hi):
                return a
    denom = f_hi - f_lo - g_lo * (a_hi - a_lo)
    if denom > 0.0:
        a = a_lo - 0.5 * g_lo * (a_hi - a_lo) ** 2 / denom
        if _inside(a, a_lo, a_hi):
            return a
    return 0.5 * (a_lo + a_hi)


def _inside(a, a_lo, a_hi) -> bool:
    # strictly interior; the low margin is loose on purpose, steep costs
    # legitimately want steps many decades below the bracket width
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    width = hi - lo
    return lo + 1e-12 * width <= a <= hi - 1e-3 * width


def _wolfe_search(evaluate, x, d, j0, dphi0, cfg: LbfgsConfig, alpha0=1.0):
    """Strong Wolfe search along d; returns (alpha, evaluation) or None.

    Every call to evaluate counts as one attempt against cfg.max_attempts;
    None means the budget ran out, which triggers a restart upstream.
    """
    budget = cfg.max_attempts

    def phi(alpha):
        nonlocal budget
        budget -= 1
        ev = evaluate(x + alpha * d)
        return ev, float(ev.grad @ d)

    a_prev, f_prev, g_prev = 0.0, j0, dphi0
    alpha = alpha0
    bracket = None
    while budget > 0:
        ev, dphi = phi(alpha)
        if ev.j > j0 + cfg.c1 * alpha * dphi0 or (a_prev > 0.0 and ev.j >= f_prev):
            bracket = (a_prev, f_prev, g_prev, alpha, ev.j, dphi)
            break
        if abs(dphi) <= cfg.c2 * abs(dphi0):
            return alpha, ev
        if dphi >= 0.0:
            bracket = (alpha, ev.j, dphi, a_prev, f_prev, g_prev)
            break
        a_prev, f_prev, g_prev = alpha, ev.j, dphi
        alpha *= 2.0

    if bracket is None:
        return None
    a_lo, f_lo, g_lo, a_hi, f_hi, g_hi = bracket
    while budget > 0:
        alpha = _interp_alpha(a_lo, a_hi, f_lo, g_lo, f_hi, g_hi)
        ev, dphi = phi(alpha)
        if ev.j > j0 + cfg.c1 * alpha * dphi0 or ev.j >= f_lo:
            a_hi, f_hi, g_hi = alpha, ev.j, dphi
            continue
        if abs(dphi) <= cfg.c2 * abs(dphi0):
            return alpha, ev
        if dphi * (a_hi - a_lo) >= 0.0:
            a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
        a_lo, f_lo, g_lo = alpha, ev.j, dphi
    return None


def minimize(problem, method: str = "standard",
             config: LbfgsConfig | None = None,
             x0: np.ndarray | None = None):
    """Minimize the problem's cost; returns (best iterate, history).

    The first guess is the problem's background unless x0 overrides it.
    History carries one record per accepted iterate (plus the initial
    state at iteration 0 and one flagged record per restart); the best
    iterate by total cost is returned, not necessarily the last.
    """
    cfg = config or LbfgsConfig()
    evaluate = _CountedProblem(problem, method)
    x = np.array(problem.background if x0 is None else x0, dtype=np.float64)
    ev = evaluate(x)

    def record(it, alpha, restart=False, fallback=False):
        bd = ev.breakdown
        return IterationRecord(iteration=it, j_total=ev.j,
                               j_b=float(bd.j_b), j_o=float(bd.j_o),
                               gnorm=float(np.linalg.norm(ev.grad)),
                               alpha=alpha, restart=restart, fallback=fallback)

    history = [record(0, 0.0)]
    best_j, best_x = ev.j, x.copy()
    pairs: list[tuple[np.ndarray, np.ndarray]] = []

    it = 0
    failed_restarts = 0
    while it < cfg.max_iters:
        gnorm = np.linalg.norm(ev.grad)
        if gnorm <= cfg.gtol:
            break
        d = _two_loop(ev.grad, pairs)
        fallback = False
        dphi0 = float(ev.grad @ d)
        if dphi0 >= 0.0:
            d = -ev.grad
            dphi0 = float(ev.grad @ d)
            fallback = True
        # with an empty memory the direction is bare steepest descent and
        # has no natural scale; shrink the first trial toward unit length
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / float(np.linalg.norm(d, np.inf)))
        found = _wolfe_search(evaluate, x, d, ev.j, dphi0, cfg, alpha0)
        if found is None:
            # restart: the prior moves to the current iterate and the
            # curvature memory is dropped; iteration numbers keep counting
            # accepted steps, so the flagged record reuses the current one
            problem.on_restart(x)
            pairs.clear()
            ev = evaluate(x)  # the cost changed with the prior
            history.append(record(it, 0.0, restart=True))
            if ev.j < best_j:
                best_j, best_x = ev.j, x.copy()
            failed_restarts += 1
            if failed_restarts >= 2:
                break  # restarting did not unblock the search; give up
            continue
        failed_restarts = 0
        it += 1
        alpha, ev_new = found
        _assert_wolfe(ev.j, dphi0, alpha, ev_new, d, cfg)
        s = alpha * np.asarray(d)
        y = ev_new.grad - ev.grad
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y))
            if len(pairs) > cfg.memory:
                pairs.pop(0)
        x = x + s
        ev = ev_new
        history.append(record(it, alpha, fallback=fallback))
        if ev.j < best_j:
            best_j, best_x = ev.j, x.copy()
    return best_x, history


def _assert_wolfe(j0, dphi0, alpha, ev, d, cfg):
    # belt and braces: a step the search returns must satisfy strong Wolfe
    slack = 1e-10 * max(1.0, abs(j0))
    if ev.j > j0 + cfg.c1 * alpha * dphi0 + slack:
        raise AssertionError("accepted step violates sufficient decrease")
    if abs(float(ev.grad @ d)) > cfg.c2 * abs(dphi0) * (1.0 + 1e-10):
        raise AssertionError("accepted step violates the curvature condition")


def save_history(path, history: list[IterationRecord]) -> None:
    with open(path, "w") as fh:
        fh.write("iter,J,Jb,Jo,gnorm,alpha,restart\n")
        for r in history:
            fh.write(f"{r.iteration},{r.j_total!r},{r.j_b!r},{r.j_o!r},"
                     f"{r.gnorm!r},{r.alpha!r},{int(r.restart)}\n")


def load_history(path) -> list[IterationRecord]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "iter,J,Jb,Jo,gnorm,alpha,restart":
            raise ValueError(f"unexpected history header {header!r}")
        for line in fh:
            i, j, jb, jo, gn, al, rs = line.strip().split(",")
            out.append(IterationRecord(iteration=int(i), j_total=float(j),
                                       j_b=float(jb), j_o=float(jo),
                                       gnorm=float(gn), alpha=float(al),
                                       restart=bool(int(rs))))
    return out
