"""Limited-memory quasi-Newton minimiser with backtracking line search.

The synthesis problem is a smooth unconstrained minimisation over the
image tensor, which this module treats as a flat float64 vector.  Search
directions come from the two-loop recursion over a short history of
(step, gradient-change) pairs with the usual scaled-identity seed
matrix; step lengths come from Armijo backtracking, so every accepted
iteration strictly decreases the loss.  Objectives expose two entry
points so that rejected line-search trials only pay for a loss
evaluation, not a gradient:

    value(x)          -> (loss, per-kind losses)
    value_and_grad(x) -> (loss, per-kind losses, gradient)

The minimiser is fully deterministic: it draws no random numbers and
touches no global state, so identical inputs give identical iterates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    history_size: int = 10
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_step_halvings: int = 20
    convergence_rtol: float = 1e-6
    convergence_window: int = 5

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be non-negative")
        if self.history_size < 1:
            raise ConfigurationError("history_size must be at least 1")
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ConfigurationError("armijo_c1 must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ConfigurationError("backtrack_factor must lie in (0, 1)")
        if self.max_step_halvings < 1:
            raise ConfigurationError("max_step_halvings must be at least 1")
        if self.convergence_window < 1:
            raise ConfigurationError("convergence_window must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """One accepted iterate.  Iteration 0 is the starting point."""

    iteration: int
    total_loss: float
    term_losses: dict[str, float]
    step_size: float
    gradient_norm: float


@dataclass
class RunReport:
    """Everything a caller needs to audit one optimisation run."""

    iterations: list[IterationRecord] = field(default_factory=list)
    termination: str = ""
    wall_time_s: float = 0.0
    settings: dict = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.iterations[0].total_loss

    @property
    def final_loss(self) -> float:
        return self.iterations[-1].total_loss

    @property
    def n_iterations(self) -> int:
        return self.iterations[-1].iteration

    def is_monotone(self) -> bool:
        totals = [r.total_loss for r in self.iterations]
        return all(b <= a for a, b in zip(totals, totals[1:]))


def _two_loop(grad, s_list, y_list, rho_list):
    """Search direction from the stored curvature pairs."""
    q = -grad
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * float(np.dot(s, q))
        q -= a * y
        alphas.append(a)
    if s_list:
        gamma = float(np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1]))
        q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def minimise(objective, x0: np.ndarray, config: OptimizerConfig, callback=None):
    """Minimise the objective from x0.

    Returns (best x, RunReport).  The report's iterations list records the
    initial point and every accepted step; callback, if given, receives
    each IterationRecord as it is produced.  Gradients and iterates use
    float64 internally regardless of x0's dtype; the returned array has
    x0's shape and dtype float64.
    """
    start = time.perf_counter()
    shape = x0.shape
    x = np.asarray(x0, dtype=np.float64).reshape(-1).copy()

    def evaluate(v, with_grad):
        vt = v.reshape(shape)
        if with_grad:
            f, terms, g = objective.value_and_grad(vt)
            return float(f), terms, np.asarray(g, dtype=np.float64).reshape(-1)
        f, terms = objective.value(vt)
        return float(f), terms, None

    f, terms, g = evaluate(x, with_grad=True)
    if not np.isfinite(f):
        raise NumericError(f"initial loss is not finite: {f}")
    if not np.all(np.isfinite(g)):
        raise NumericError("initial gradient contains non-finite values")

    report = RunReport(settings={})
    def record(i, f_val, terms_val, step, gnorm):
        rec = IterationRecord(
            iteration=i,
            total_loss=f_val,
            term_losses=dict(terms_val),
            step_size=step,
            gradient_norm=gnorm,
        )
        report.iterations.append(rec)
        if callback is not None:
            callback(rec)

    gnorm = float(np.linalg.norm(g))
    record(0, f, terms, 0.0, gnorm)
    best_f, best_x = f, x.copy()

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    recent = [f]
    termination = "max_iterations"

    for it in range(1, config.max_iterations + 1):
        g_abs_sum = float(np.sum(np.abs(g)))
        if g_abs_sum == 0.0:
            termination = "zero_gradient"
            break

        d = _two_loop(g, s_list, y_list, rho_list)
        gtd = float(np.dot(g, d))
        if gtd >= 0.0:
            # The curvature memory produced a non-descent direction;
            # fall back to steepest descent and start the memory over.
            s_list.clear(); y_list.clear(); rho_list.clear()
            d = -g
            gtd = float(np.dot(g, d))

        # A conservative first-iteration step; afterwards the scaled
        # memory makes the unit step well-sized.
        t = min(1.0, 1.0 / g_abs_sum) if not s_list else 1.0

        accepted = False
        f_new = f
        terms_new = terms
        for _ in range(config.max_step_halvings):
            f_try, terms_try, _ = evaluate(x + t * d, with_grad=False)
            if np.isfinite(f_try) and f_try <= f + config.armijo_c1 * t * gtd:
                accepted, f_new, terms_new = True, f_try, terms_try
                break
            t *= config.backtrack_factor
        if not accepted:
            termination = "line_search_failed"
            break

        x_new = x + t * d
        f_new, terms_new, g_new = evaluate(x_new, with_grad=True)
        if not np.all(np.isfinite(g_new)):
            termination = "line_search_failed"
            break

        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > config.history_size:
                s_list.pop(0); y_list.pop(0); rho_list.pop(0)

        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        record(it, f, terms_new, t, gnorm)
        if f < best_f:
            best_f, best_x = f, x.copy()

        recent.append(f)
        if len(recent) > config.convergence_window + 1:
            recent.pop(0)
        if len(recent) == config.convergence_window + 1:
            drop = recent[0] - recent[-1]
            if drop <= config.convergence_rtol * max(abs(recent[0]), 1e-12):
                termination = "converged"
                break

    report.termination = termination
    report.wall_time_s = time.perf_counter() - start
    return best_x.reshape(shape), report
