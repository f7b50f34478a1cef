"""Primal-dual log-barrier interior-point solver for sparse NLPs.

Solves

    min f(x)   s.t.  cE(x) = 0,   l <= h(x) <= u,   lo <= x <= hi

by introducing bounded slacks for the inequalities and applying a damped
Newton method to the perturbed KKT conditions of the log-barrier problem:
a monotone barrier schedule, fraction-to-boundary step control, an
l1-penalty merit line search, and inertia-style regularization of the
condensed KKT system (delta bumping until the step has positive
curvature).  First derivatives are analytic and sparse; the Hessian of the
Lagrangian is exact.  The linear algebra is a sparse LU of the saddle
system.  Deterministic throughout: no randomness, fixed orderings.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CurveDomainError, SolverError

log = logging.getLogger("scopfkit.ipm")

_BIG_BOUND = 1e19


@dataclass
class IpmOptions:
    opt_tol: float = 1e-6
    feas_tol: float = 1e-6
    mu_init: float = 0.1
    mu_min_factor: float = 0.01       # mu floor = mu_min_factor * opt_tol
    sigma_center: float = 0.1         # centering: mu tracks this fraction of
                                      # the average complementarity
    tau_min: float = 0.99
    max_iter: int = 300
    max_backtracks: int = 30
    bound_push: float = 1e-2
    obj_scale_target: float = 100.0

    def __post_init__(self):
        if self.opt_tol <= 0.0 or self.feas_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class WarmStart:
    """Multiplier state carried between continuation stages."""

    lam: np.ndarray
    zl: np.ndarray
    zu: np.ndarray


@dataclass
class IpmResult:
    x: np.ndarray
    f: float
    lam_eq: np.ndarray
    lam_ineq: np.ndarray
    iterations: int
    kkt_error: float
    constraint_violation: float
    mu: float
    wall_time: float
    converged: bool
    warm: WarmStart | None = None
    log: list[dict] = field(default_factory=list)


class IpmModel:
    """Adapter the solver works against.

    ``eval_values(x) -> (f, c_eq, h)`` is called in the line search;
    ``eval_derivs(x) -> (grad, j_eq, j_ineq)`` once per iteration;
    ``hessian(x, sigma, lam_eq, lam_ineq)`` returns the exact Lagrangian
    Hessian as a sparse matrix.
    """

    def __init__(self, n: int, lo: np.ndarray, hi: np.ndarray,
                 ineq_lo: np.ndarray, ineq_hi: np.ndarray,
                 eval_values: Callable, eval_derivs: Callable,
                 hessian: Callable):
        self.n = n
        self.lo = lo
        self.hi = hi
        self.ineq_lo = ineq_lo
        self.ineq_hi = ineq_hi
        self.eval_values = eval_values
        self.eval_derivs = eval_derivs
        self.hessian = hessian


def _push_inside(x, lo, hi, kappa):
    """Move a point strictly inside its finite bounds by a small margin."""
    x = np.clip(x, lo, hi)
    span = np.where(np.isfinite(lo) & np.isfinite(hi), hi - lo, np.inf)
    with np.errstate(invalid="ignore"):
        p_lo = np.minimum(kappa * np.maximum(1.0, np.abs(lo)), 1e-1 * span)
        p_hi = np.minimum(kappa * np.maximum(1.0, np.abs(hi)), 1e-1 * span)
        free_span = span > 0
        x = np.where(np.isfinite(lo) & free_span, np.maximum(x, lo + p_lo), x)
        x = np.where(np.isfinite(hi) & free_span, np.minimum(x, hi - p_hi), x)
    return x


class _Iterate:
    """Mutable solver state over the combined primal z = [x_free; s]."""

    def __init__(self, model: IpmModel, x0, options, warm: WarmStart | None):
        self.model = model
        self.fixed = model.hi - model.lo <= 0.0
        self.free = ~self.fixed
        self.nx_free = int(np.sum(self.free))
        self.m_ineq = len(model.ineq_lo)
        self.m_eq = None  # known after first evaluation

        x = np.where(self.fixed, model.lo, np.asarray(x0, dtype=float))
        x[self.free] = _push_inside(x, model.lo, model.hi,
                                    options.bound_push)[self.free]
        self.x = x

        f, c_eq, h_val = model.eval_values(x)
        self.m_eq = len(c_eq)
        s = np.clip(h_val, model.ineq_lo, model.ineq_hi)
        s = _push_inside(s, model.ineq_lo, model.ineq_hi, options.bound_push)
        self.s = s
        self.f, self.c_eq, self.h_val = f, c_eq, h_val

        self.z_lo = np.concatenate([model.lo[self.free], model.ineq_lo])
        self.z_hi = np.concatenate([model.hi[self.free], model.ineq_hi])
        self.has_lo = self.z_lo > -_BIG_BOUND
        self.has_hi = self.z_hi < _BIG_BOUND
        self.nz = len(self.z_lo)

        mu = options.mu_init
        z = self.z()
        if warm is not None:
            self.lam = warm.lam.copy()
            self.zl = np.where(self.has_lo, np.maximum(warm.zl, 1e-10), 0.0)
            self.zu = np.where(self.has_hi, np.maximum(warm.zu, 1e-10), 0.0)
        else:
            with np.errstate(divide="ignore", over="ignore"):
                self.zl = np.where(self.has_lo,
                                   np.minimum(mu / (z - self.z_lo), 1e4), 0.0)
                self.zu = np.where(self.has_hi,
                                   np.minimum(mu / (self.z_hi - z), 1e4), 0.0)
            self.lam = np.zeros(self.m_eq + self.m_ineq)

        self.grad, self.j_eq, self.j_ineq = model.eval_derivs(x)

    def z(self) -> np.ndarray:
        return np.concatenate([self.x[self.free], self.s])

    def cons(self) -> np.ndarray:
        return np.concatenate([self.c_eq, self.h_val - self.s])

    def set_primal(self, x, s, values):
        self.x, self.s = x, s
        self.f, self.c_eq, self.h_val = values

    def jac(self, obj_scale) -> tuple[sp.csr_matrix, np.ndarray]:
        j = sp.vstack([
            sp.hstack([self.j_eq[:, self.free],
                       sp.csr_matrix((self.m_eq, self.m_ineq))]),
            sp.hstack([self.j_ineq[:, self.free],
                       -sp.identity(self.m_ineq, format="csr")]),
        ]).tocsr()
        grad_z = np.concatenate([obj_scale * self.grad[self.free],
                                 np.zeros(self.m_ineq)])
        return j, grad_z


def solve_ipm(model: IpmModel, x0: np.ndarray,
              options: IpmOptions = IpmOptions(),
              warm: WarmStart | None = None) -> IpmResult:
    t0 = time.perf_counter()
    it = _Iterate(model, x0, options, warm)
    z_lo, z_hi, has_lo, has_hi = it.z_lo, it.z_hi, it.has_lo, it.has_hi
    nz, m_eq, m_ineq = it.nz, it.m_eq, it.m_ineq
    m = m_eq + m_ineq

    obj_scale = min(1.0, options.obj_scale_target /
                    max(1.0, float(np.max(np.abs(it.grad), initial=1.0))))
    mu = options.mu_init
    mu_final = options.mu_min_factor * options.opt_tol
    nu = 1.0
    delta_last = 0.0
    last_alpha = 0.0
    history: list[dict] = []
    n_iter = 0
    ls_failures = 0

    def barrier_value(f_val, z_vec):
        dl = (z_vec - z_lo)[has_lo]
        du = (z_hi - z_vec)[has_hi]
        if np.any(dl <= 0.0) or np.any(du <= 0.0):
            return np.inf
        return obj_scale * f_val - mu * (np.sum(np.log(dl)) + np.sum(np.log(du)))

    n_bounded = int(np.sum(has_lo)) + int(np.sum(has_hi))

    while True:
        z = it.z()
        cons = it.cons()
        jac, grad_z = it.jac(obj_scale)
        lam, zl, zu = it.lam, it.zl, it.zu

        r_dual = grad_z + jac.T @ lam - zl + zu
        comp_l = np.where(has_lo, (z - z_lo) * zl, 0.0)
        comp_u = np.where(has_hi, (z_hi - z) * zu, 0.0)
        s_d = max(1.0, (np.sum(np.abs(lam)) + np.sum(zl) + np.sum(zu))
                  / max(1, m + 2 * nz) / 100.0)
        err_dual = float(np.max(np.abs(r_dual), initial=0.0)) / s_d
        err_feas = float(np.max(np.abs(cons), initial=0.0))
        err_comp0 = max(
            float(np.max(np.abs(comp_l[has_lo]), initial=0.0)),
            float(np.max(np.abs(comp_u[has_hi]), initial=0.0))) / s_d
        kkt_err = max(err_dual, err_feas, err_comp0)

        # Centering: the barrier parameter tracks the measured average
        # complementarity instead of following a fixed schedule, so the
        # barrier can never run away from the iterate.
        if n_bounded:
            avg_comp = (float(np.sum(comp_l[has_lo]))
                        + float(np.sum(comp_u[has_hi]))) / n_bounded
            mu = max(mu_final, min(options.sigma_center * avg_comp, 1e3))

        history.append({"iteration": n_iter, "mu": mu, "objective": it.f,
                        "feas": err_feas, "dual": err_dual,
                        "comp": err_comp0, "delta": delta_last,
                        "alpha": last_alpha})
        log.debug("it=%d mu=%.2e f=%.8g feas=%.2e dual=%.2e comp=%.2e d=%.1e "
                  "a=%.2e", n_iter, mu, it.f, err_feas, err_dual, err_comp0,
                  delta_last, last_alpha)

        if kkt_err <= options.opt_tol and err_feas <= options.feas_tol:
            return IpmResult(it.x, it.f, lam[:m_eq], lam[m_eq:], n_iter,
                             kkt_err, err_feas, mu,
                             time.perf_counter() - t0, True,
                             WarmStart(lam.copy(), zl.copy(), zu.copy()),
                             history)

        if n_iter >= options.max_iter:
            raise SolverError(
                f"interior point hit the iteration limit ({options.max_iter}) "
                f"with KKT error {kkt_err:.3e}",
                iterate=it.x, stats={"log": history})
        n_iter += 1

        # Condensed Newton system on (dz, dlam).
        sigma = np.zeros(nz)
        sigma[has_lo] += zl[has_lo] / (z - z_lo)[has_lo]
        sigma[has_hi] += zu[has_hi] / (z_hi - z)[has_hi]
        h_lag = model.hessian(it.x, obj_scale, lam[:m_eq], lam[m_eq:])
        w = sp.bmat([[h_lag[it.free][:, it.free], None],
                     [None, sp.csr_matrix((m_ineq, m_ineq))]],
                    format="csr") + sp.diags(sigma)

        rhs1 = -(grad_z + jac.T @ lam)
        rhs1[has_lo] += mu / (z - z_lo)[has_lo]
        rhs1[has_hi] -= mu / (z_hi - z)[has_hi]

        accepted = False
        delta = 0.0 if delta_last == 0.0 else max(1e-20, delta_last / 3.0)
        gamma = 0.0
        for attempt in range(16):
            kkt = sp.bmat([
                [w + sp.diags(np.full(nz, delta)), jac.T],
                [jac, -sp.diags(np.full(m, gamma)) if gamma else
                 sp.csr_matrix((m, m))],
            ], format="csc")
            try:
                lu = spla.splu(kkt)
                sol = lu.solve(np.concatenate([rhs1, -cons]))
            except RuntimeError:
                sol = None
            good = sol is not None and np.all(np.isfinite(sol))
            if good:
                dz = sol[:nz]
                curv = float(dz @ (w @ dz)) + delta * float(dz @ dz)
                good = curv > -1e-10 * max(1.0, float(dz @ dz))
            if good:
                ok, alpha, trial = _line_search(
                    model, it, sol, lu, mu, nu, obj_scale, barrier_value,
                    options)
                if ok:
                    nu = trial["nu"]
                    accepted = True
                    break
            delta = 1e-4 * max(mu, 1e-8) if delta == 0.0 else delta * 10.0
            if attempt >= 11 and gamma == 0.0:
                gamma = 1e-8
            if delta > 1e14:
                break
        if not accepted:
            ls_failures += 1
            if ls_failures > 3:
                raise SolverError("merit line search failed",
                                  iterate=it.x, stats={"log": history})
            delta_last = max(delta_last * 100.0, 1e-2)
            mu = min(10.0 * mu, options.mu_init)
            continue
        ls_failures = 0
        delta_last = delta
        last_alpha = alpha

        dz, dlam = sol[:nz], sol[nz:]
        alpha_z = trial["alpha_dual"]
        it.set_primal(trial["x"], trial["s"], trial["values"])
        it.lam = lam + alpha * dlam
        it.zl = zl + alpha_z * trial["dzl"]
        it.zu = zu + alpha_z * trial["dzu"]
        it.grad, it.j_eq, it.j_ineq = model.eval_derivs(it.x)

        # Keep bound multipliers near mu / distance (complementarity box).
        z = it.z()
        kappa_sigma = 1e10
        with np.errstate(divide="ignore", over="ignore"):
            base_l = mu / np.maximum(z - z_lo, 1e-300)
            base_u = mu / np.maximum(z_hi - z, 1e-300)
        it.zl[has_lo] = np.clip(it.zl[has_lo], base_l[has_lo] / kappa_sigma,
                                np.minimum(base_l[has_lo] * kappa_sigma, 1e16))
        it.zu[has_hi] = np.clip(it.zu[has_hi], base_u[has_hi] / kappa_sigma,
                                np.minimum(base_u[has_hi] * kappa_sigma, 1e16))


def _fraction_to_boundary(z, dz, z_lo, z_hi, has_lo, has_hi, tau):
    alpha = 1.0
    neg = (dz < 0.0) & has_lo
    if np.any(neg):
        alpha = min(alpha, float(np.min(-tau * (z - z_lo)[neg] / dz[neg])))
    pos = (dz > 0.0) & has_hi
    if np.any(pos):
        alpha = min(alpha, float(np.min(tau * (z_hi - z)[pos] / dz[pos])))
    return alpha


def _line_search(model, it, sol, lu, mu, nu, obj_scale, barrier_value,
                 options):
    """Fraction-to-boundary limits plus an Armijo l1-merit backtrack.

    A second-order correction reuses the KKT factorization when the first
    trial raises the constraint violation, which keeps near-unit steps
    acceptable on strongly curved constraint manifolds.
    """
    z_lo, z_hi, has_lo, has_hi = it.z_lo, it.z_hi, it.has_lo, it.has_hi
    z = it.z()
    nz = it.nz
    dz = sol[:nz]
    dlam = sol[nz:]
    zl, zu = it.zl, it.zu

    comp_l = np.where(has_lo, (z - z_lo) * zl, 0.0)
    comp_u = np.where(has_hi, (z_hi - z) * zu, 0.0)
    dzl = np.zeros(nz)
    dzu = np.zeros(nz)
    dzl[has_lo] = ((mu - comp_l[has_lo]) - zl[has_lo] * dz[has_lo]) \
        / (z - z_lo)[has_lo]
    dzu[has_hi] = ((mu - comp_u[has_hi]) + zu[has_hi] * dz[has_hi]) \
        / (z_hi - z)[has_hi]

    tau = max(options.tau_min, 1.0 - mu)
    alpha_max = _fraction_to_boundary(z, dz, z_lo, z_hi, has_lo, has_hi, tau)
    alpha_dual = 1.0
    for vec, dvec, mask in ((zl, dzl, has_lo), (zu, dzu, has_hi)):
        negd = (dvec < 0.0) & mask
        if np.any(negd):
            alpha_dual = min(alpha_dual,
                             float(np.min(-tau * vec[negd] / dvec[negd])))
    if alpha_max < 1e-14:
        return False, 0.0, None

    cons0 = it.cons()
    theta0 = float(np.sum(np.abs(cons0)))
    lam_trial_inf = float(np.max(np.abs(it.lam + dlam), initial=0.0))
    nu = max(nu, 1.2 * lam_trial_inf + 1e-4)
    phi0 = barrier_value(it.f, z) + nu * theta0

    # Directional derivative of the barrier merit; the linearized
    # constraint model contributes the full -nu * theta0.
    grad_bar = np.concatenate([obj_scale * it.grad[it.free],
                               np.zeros(it.m_ineq)])
    grad_bar[has_lo] -= mu / (z - z_lo)[has_lo]
    grad_bar[has_hi] += mu / (z_hi - z)[has_hi]
    dphi = float(grad_bar @ dz) - nu * theta0
    if dphi >= 0.0:
        if theta0 > 1e-12:
            dphi = -nu * theta0
        else:
            return False, 0.0, None

    nfx = it.nx_free

    def try_point(z_t):
        x_trial = it.x.copy()
        x_trial[it.free] = z_t[:nfx]
        s_trial = z_t[nfx:]
        try:
            values = model.eval_values(x_trial)
        except (CurveDomainError, FloatingPointError, ValueError):
            return None
        f_t, ce_t, h_t = values
        cons_t = np.concatenate([ce_t, h_t - s_trial])
        theta_t = float(np.sum(np.abs(cons_t)))
        phi_t = barrier_value(f_t, z_t) + nu * theta_t
        return x_trial, s_trial, values, theta_t, phi_t

    def accept(alpha, point):
        x_trial, s_trial, values, _, _ = point
        return True, alpha, {"x": x_trial, "s": s_trial, "values": values,
                             "dzl": dzl, "dzu": dzu, "nu": nu,
                             "alpha_dual": alpha_dual}

    alpha = alpha_max
    soc_done = False
    for _ in range(options.max_backtracks):
        point = try_point(z + alpha * dz)
        if point is not None:
            _, _, _, theta_t, phi_t = point
            if np.isfinite(phi_t) and phi_t <= phi0 + 1e-4 * alpha * dphi:
                return accept(alpha, point)
            if not soc_done and theta_t >= theta0:
                # Second-order correction: re-solve for the constraint
                # residual at the trial point with the same factorization.
                soc_done = True
                _, _, values_t, _, _ = point
                f_t, ce_t, h_t = values_t
                cons_t = np.concatenate([ce_t, h_t - (z + alpha * dz)[nfx:]])
                rhs = np.concatenate([np.zeros(it.nz), -cons_t])
                corr = lu.solve(rhs)
                dz_c = corr[:it.nz]
                if np.all(np.isfinite(dz_c)):
                    z_base = z + alpha * dz
                    a_c = _fraction_to_boundary(z_base, dz_c, z_lo, z_hi,
                                                has_lo, has_hi, tau)
                    point_c = try_point(z_base + a_c * dz_c)
                    if point_c is not None:
                        _, _, _, theta_c, phi_c = point_c
                        if (np.isfinite(phi_c)
                                and phi_c <= phi0 + 1e-4 * alpha * dphi):
                            return accept(alpha, point_c)
        alpha *= 0.5
    return False, 0.0, None
