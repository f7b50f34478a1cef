"""SCOPF solve orchestration: warm starts, h continuation, exact audit.

The curve sharpness h is continued from smooth to sharp: each stage solves
the NLP at one h value and warm-starts the next, ending at the target
parameters.  Multi-scenario problems default to a power-flow warm start:
the base block comes from a base-only solve and every contingency block
from the exact-response Newton solver, which lands close to feasibility of
the smooth model by construction.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .curves import SigmoidKind, SmoothCurveParams
from .errors import PowerFlowError, SolverError
from .ipm import IpmModel, IpmOptions, IpmResult, WarmStart, solve_ipm
from .nlp import NlpInstance, ScopfProblem, ScopfSolution, assemble
from .powerflow import PfOptions, audit_solution, solve_contingency_response

log = logging.getLogger("scopfkit.solver")


@dataclass
class SolverOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    mu_init: float = 0.1
    mu_restart: float = 1e-2
    max_iter: int = 300
    h_schedule: list[float] | None = None
    warm_start: str = "auto"          # auto | flat
    threads: int = 1

    def __post_init__(self):
        if self.feas_tol <= 0.0 or self.opt_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.h_schedule is not None:
            if not self.h_schedule:
                raise ValueError("h schedule must be non-empty")
            if any(b <= a for a, b in zip(self.h_schedule, self.h_schedule[1:])):
                raise ValueError("h schedule must increase")
        if self.warm_start not in ("auto", "flat"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")


def default_h_schedule(h_target: float) -> list[float]:
    stages = [h for h in (5.0, 15.0) if h < h_target]
    return stages + [h_target]


def _with_h(problem: ScopfProblem, h: float) -> ScopfProblem:
    return ScopfProblem(
        network=problem.network, scenarios=problem.scenarios,
        active_curve=replace(problem.active_curve, h=h),
        reactive_curve=replace(problem.reactive_curve, h=h),
        alpha_mode=problem.alpha_mode, delta_bound=problem.delta_bound)


def _ipm_options(options: SolverOptions, mu0: float,
                 push: float) -> IpmOptions:
    return IpmOptions(opt_tol=options.opt_tol, feas_tol=options.feas_tol,
                      mu_init=mu0, max_iter=options.max_iter,
                      bound_push=push)


def _run_stage(instance: NlpInstance, x0: np.ndarray, options: SolverOptions,
               mu0: float, push: float,
               warm: WarmStart | None = None) -> IpmResult:
    model = IpmModel(
        n=instance.n, lo=instance.lo, hi=instance.hi,
        ineq_lo=instance.ineq_lo, ineq_hi=instance.ineq_hi,
        eval_values=instance.constraint_values,
        eval_derivs=instance.constraint_derivatives,
        hessian=instance.lagrangian_hessian)
    return solve_ipm(model, x0, _ipm_options(options, mu0, push), warm)


def warm_start_point(problem: ScopfProblem, instance: NlpInstance,
                     options: SolverOptions) -> np.ndarray:
    """Power-flow based start: solve the base OPF, then each contingency."""
    if len(problem.scenarios) == 1 or options.warm_start == "flat":
        return instance.initial_point()

    base_problem = ScopfProblem(
        network=problem.network, scenarios=problem.scenarios[:1],
        active_curve=problem.active_curve,
        reactive_curve=problem.reactive_curve,
        alpha_mode="uniform", delta_bound=problem.delta_bound)
    base_solution = solve(base_problem, replace(options, h_schedule=None,
                                                warm_start="flat"),
                          audit=False)
    base_state = base_solution.states[0]

    states = [base_state]
    alphas = [np.zeros(problem.network.n_gen)]
    pf_options = PfOptions(tol=1e-10, max_iter=40)
    for c in range(1, len(problem.scenarios)):
        alpha = problem.uniform_alpha(c)
        try:
            result = solve_contingency_response(
                base_state, problem.scenarios[c], alpha, pf_options)
            states.append(result.state)
        except PowerFlowError as exc:
            log.warning("warm start for scenario %d fell back to base: %s",
                        c, exc)
            fallback = base_state.copy()
            fallback.pg = np.where(problem.scenarios[c].gen_in_service,
                                   base_state.pg, 0.0)
            fallback.qg = np.where(problem.scenarios[c].gen_in_service,
                                   base_state.qg, 0.0)
            states.append(fallback)
        alphas.append(alpha)
    return instance.pack_states(states, alphas)


def solve(problem: ScopfProblem, options: SolverOptions = SolverOptions(),
          audit: bool = True) -> ScopfSolution:
    """Solve the SCOPF with h continuation and audit the final iterate."""
    t0 = time.perf_counter()
    target_h = problem.active_curve.h
    if len(problem.scenarios) == 1:
        # No coupling rows, so the sharpness is inert; skip the continuation.
        schedule = [target_h]
    else:
        schedule = options.h_schedule or default_h_schedule(target_h)
    if abs(schedule[-1] - target_h) > 1e-12:
        raise SolverError(
            f"h schedule must end at the target sharpness {target_h}")

    stage_logs = []
    stage_violations = []
    x = None
    result = None
    instance = None
    warm = None
    for stage, h in enumerate(schedule):
        stage_problem = _with_h(problem, h)
        instance = assemble(stage_problem)
        instance.threads = options.threads
        if x is None:
            x = (warm_start_point(stage_problem, instance, options)
                 if options.warm_start == "auto" else instance.initial_point())
        mu0 = options.mu_init if stage == 0 else options.mu_restart
        push = 1e-2 if stage == 0 else 1e-8
        result = _run_stage(instance, x, options, mu0, push, warm)
        x = result.x
        warm = result.warm
        states, alphas = instance.unpack(x)
        probe = ScopfSolution(stage_problem, 0.0, states, alphas)
        report = audit_solution(stage_problem, probe, tol=options.feas_tol)
        exact_gap = max(report.families["active_coupling"],
                        report.families["reactive_coupling"])
        stage_violations.append(exact_gap)
        stage_logs.append({"h": h, "iterations": result.iterations,
                           "kkt_error": result.kkt_error,
                           "feasibility": result.constraint_violation,
                           "exact_coupling_gap": exact_gap})
        log.info("stage h=%g: %d iterations, feas %.2e, exact gap %.3e",
                 h, result.iterations, result.constraint_violation, exact_gap)

    states, alphas = instance.unpack(x)
    objective, _ = instance.objective_and_gradient(x)
    stats = {
        "iterations": int(sum(s["iterations"] for s in stage_logs)),
        "kkt_error": result.kkt_error,
        "constraint_violation": result.constraint_violation,
        "wall_time": time.perf_counter() - t0,
        "stages": stage_logs,
        "stage_exact_gaps": stage_violations,
        "iteration_log": result.log,
    }
    solution = ScopfSolution(problem, float(objective), states, alphas, stats)
    if audit:
        report = audit_solution(problem, solution, tol=options.feas_tol)
        stats["audit"] = report.to_document()
        stats["exact_violation"] = max(
            report.families[k] for k in ("power_balance", "p_box", "q_box",
                                         "vm_box", "line_flow", "outed_zero"))
    return solution


@dataclass
class SigmoidRun:
    kind: SigmoidKind
    objective: float | None
    wall_time: float
    converged: bool
    iterations: int | None = None
    error: str | None = None


def compare_sigmoids(problem: ScopfProblem, kinds=None,
                     options: SolverOptions = SolverOptions()) -> list[SigmoidRun]:
    """One solve per sigmoid kind with identical options."""
    rows = []
    for kind in (kinds or list(SigmoidKind)):
        variant = ScopfProblem(
            network=problem.network, scenarios=problem.scenarios,
            active_curve=replace(problem.active_curve, kind=kind),
            reactive_curve=replace(problem.reactive_curve, kind=kind),
            alpha_mode=problem.alpha_mode, delta_bound=problem.delta_bound)
        start = time.perf_counter()
        try:
            solution = solve(variant, options)
            rows.append(SigmoidRun(kind, solution.objective,
                                   time.perf_counter() - start, True,
                                   solution.stats["iterations"]))
        except (SolverError, PowerFlowError) as exc:
            rows.append(SigmoidRun(kind, None, time.perf_counter() - start,
                                   False, None, str(exc)))
    return rows


def sigmoid_comparison_csv(rows: list[SigmoidRun]) -> str:
    lines = ["function,objective,time_s,converged,iterations"]
    for row in rows:
        obj = f"{row.objective:.4f}" if row.objective is not None else ""
        iters = str(row.iterations) if row.iterations is not None else ""
        lines.append(f"{row.kind.value},{obj},{row.wall_time:.3f},"
                     f"{str(row.converged).lower()},{iters}")
    return "\n".join(lines) + "\n"
