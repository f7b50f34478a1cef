"""AC power flow in polar coordinates and the exact-model feasibility audit.

Contains the plain Newton solver (fixed bus-type assignment), the
post-contingency solver with a distributed slack unknown and iterative
PV/PQ switching, and the audit that measures a candidate solution against
the exact piecewise response model rather than its smooth surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .curves import membership_violation, normalize_active, reactive_minmax_residual
from .errors import PowerFlowError
from .network import Scenario, check_connectivity


@dataclass
class OperatingState:
    """One scenario's operating point.  Angles in radians, rest in pu."""

    vm: np.ndarray
    va: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    delta: float = 0.0

    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def copy(self) -> "OperatingState":
        return OperatingState(self.vm.copy(), self.va.copy(), self.pg.copy(),
                              self.qg.copy(), self.delta)


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 30
    max_switch_rounds: int = 20

    def __post_init__(self):
        if not self.tol > 0.0:
            raise ValueError("tolerance must be positive")


@dataclass
class PfResult:
    state: OperatingState
    iterations: int
    max_mismatch: float
    switch_rounds: int = 0
    log: list[dict] = field(default_factory=list)


def bus_injection(scenario: Scenario, voltage: np.ndarray) -> np.ndarray:
    """Complex power injected into the network at each bus."""
    return voltage * np.conj(scenario.ybus @ voltage)


def mismatch(scenario: Scenario, state: OperatingState) -> np.ndarray:
    """Per-bus complex power-balance residual (zero at a balanced state)."""
    v = state.voltage()
    sgen = scenario.gen_incidence.T @ (state.pg + 1j * state.qg)
    return sgen - scenario.network.demand - bus_injection(scenario, v)


def branch_flow_complex(scenario: Scenario, state: OperatingState):
    v = state.voltage()
    sf = (scenario.lf @ v) * np.conj(scenario.yf @ v)
    st = (scenario.lt @ v) * np.conj(scenario.yt @ v)
    return sf, st


def branch_flows(scenario: Scenario, state: OperatingState):
    """Apparent-power magnitude at both ends of each in-service branch."""
    sf, st = branch_flow_complex(scenario, state)
    return np.abs(sf), np.abs(st)


# ---------------------------------------------------------------------------
# Analytic derivatives of the complex injection (polar voltage variables)


def dSbus_dV(ybus, v: np.ndarray):
    """Partials of the complex bus injections wrt angle and magnitude."""
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ibus)
    diag_e = sp.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_e) + np.conj(diag_i) @ diag_e
    return ds_dva.tocsr(), ds_dvm.tocsr()


def d2Sbus_dV2(ybus, v: np.ndarray, lam: np.ndarray):
    """Hessian blocks of lam . S(V) wrt (va, vm), complex valued.

    Taking the real part gives the active-power weighting, the imaginary
    part the reactive one.
    """
    ibus = ybus @ v
    diag_lam = sp.diags(lam)
    diag_v = sp.diags(v)
    a = sp.diags(lam * v)
    b = ybus @ diag_v
    c = a @ b.conj()
    d = ybus.conj().T @ diag_v
    e = diag_v.conj() @ (d @ diag_lam - sp.diags(d @ lam))
    f = c - a @ sp.diags(np.conj(ibus))
    g = sp.diags(1.0 / np.abs(v))
    haa = e + f
    hva = 1j * g @ (e - f)
    hav = hva.T
    hvv = g @ (c + c.T) @ g
    return haa.tocsr(), hav.tocsr(), hva.tocsr(), hvv.tocsr()


def _live_component_mask(scenario: Scenario, seed_bus: int) -> np.ndarray:
    adj = (scenario.lf.T @ scenario.lt).tocoo()
    nb = scenario.network.n_bus
    graph = sp.csr_matrix((np.ones(adj.nnz), (adj.row, adj.col)), shape=(nb, nb))
    _, labels = connected_components(graph, directed=False)
    return labels == labels[seed_bus]


# ---------------------------------------------------------------------------
# Plain Newton power flow with a fixed bus-type assignment


@dataclass
class PfAssignment:
    """Bus-type assignment: one slack, PV setpoints, fixed injections."""

    slack: int
    pv_buses: np.ndarray
    vm_setpoint: np.ndarray        # used at slack and PV buses
    pg: np.ndarray                 # per-generator fixed active output
    qg: np.ndarray                 # per-generator reactive (used at PQ rows)


def solve_powerflow(scenario: Scenario, assignment: PfAssignment,
                    options: PfOptions = PfOptions()) -> PfResult:
    """Newton power flow; PV buses hold vm, the slack absorbs residuals."""
    if not check_connectivity(scenario):
        raise PowerFlowError("scenario is disconnected")
    net = scenario.network
    nb = net.n_bus
    live = _live_component_mask(scenario, assignment.slack)

    is_slack = np.zeros(nb, dtype=bool)
    is_slack[assignment.slack] = True
    is_pv = np.zeros(nb, dtype=bool)
    is_pv[assignment.pv_buses] = True
    is_pv &= live
    is_pq = live & ~is_slack & ~is_pv

    vm = np.where(is_slack | is_pv, assignment.vm_setpoint, 1.0).astype(float)
    va = np.zeros(nb)
    state = OperatingState(vm=vm, va=va, pg=assignment.pg.copy(),
                           qg=assignment.qg.copy())

    p_rows = np.flatnonzero(live & ~is_slack)
    q_rows = np.flatnonzero(is_pq)
    log: list[dict] = []

    for it in range(options.max_iter + 1):
        mis = mismatch(scenario, state)
        f = np.concatenate([mis.real[p_rows], mis.imag[q_rows]])
        norm = float(np.max(np.abs(f))) if len(f) else 0.0
        log.append({"iteration": it, "max_mismatch": norm})
        if norm <= options.tol:
            _recover_slack_and_q(scenario, state, assignment.slack,
                                 np.flatnonzero(is_pv | is_slack))
            return PfResult(state, it, norm, log=log)
        if it == options.max_iter:
            break
        v = state.voltage()
        ds_dva, ds_dvm = dSbus_dV(scenario.ybus, v)
        j11 = -ds_dva.real[np.ix_(p_rows, p_rows)]
        j12 = -ds_dvm.real[np.ix_(p_rows, q_rows)]
        j21 = -ds_dva.imag[np.ix_(q_rows, p_rows)]
        j22 = -ds_dvm.imag[np.ix_(q_rows, q_rows)]
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")
        try:
            dx = spla.spsolve(jac, -f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular power-flow Jacobian")
        state.va[p_rows] += dx[:len(p_rows)]
        state.vm[q_rows] += dx[len(p_rows):]
    raise PowerFlowError(
        f"no convergence after {options.max_iter} iterations "
        f"(mismatch {norm:.3e})")


def _recover_slack_and_q(scenario: Scenario, state: OperatingState,
                         slack: int, voltage_buses: np.ndarray) -> None:
    """Back out slack P and PV/slack bus Q onto the generators."""
    net = scenario.network
    v = state.voltage()
    inj = bus_injection(scenario, v) + net.demand
    for bus in voltage_buses:
        gens = [g for g in net.gens_at_bus(bus) if scenario.gen_in_service[g]]
        if not gens:
            continue
        state.qg[gens] = allocate_bus_quantity(
            inj[bus].imag, net.qmin[gens], net.qmax[gens])
    gens = [g for g in net.gens_at_bus(slack) if scenario.gen_in_service[g]]
    if gens:
        fixed = sum(state.pg[g] for g in gens[1:])
        state.pg[gens[0]] = inj[slack].real - fixed


def allocate_bus_quantity(total: float, lows: np.ndarray,
                          highs: np.ndarray) -> np.ndarray:
    """Split a bus-level quantity among units by equal range fraction.

    All units share one fraction of their [low, high] range, so the split
    respects every box exactly when the total respects the aggregate box.
    """
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    span = float(np.sum(highs - lows))
    if span <= 0.0:
        return lows + (total - np.sum(lows)) / len(lows)
    frac = (total - np.sum(lows)) / span
    return lows + frac * (highs - lows)


# ---------------------------------------------------------------------------
# Post-contingency response solve (distributed slack, PV/PQ switching)


def solve_contingency_response(base: OperatingState, scenario: Scenario,
                               alpha: np.ndarray,
                               options: PfOptions = PfOptions()) -> PfResult:
    """Solve one contingency case holding the exact response rules.

    Active injections follow the clipped redispatch ``clip(p0 + alpha *
    delta)`` with the scalar ``delta`` as a Newton unknown; every in-service
    generator bus tries to hold its base voltage magnitude and switches to
    PQ at a binding reactive limit.  The outer loop revisits the PV/PQ
    assignment and the clip set until neither changes, with a visited-set
    guard against cycling.
    """
    if not check_connectivity(scenario):
        raise PowerFlowError("scenario is disconnected")
    net = scenario.network
    nb, ng = net.n_bus, net.n_gen
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha[~scenario.gen_in_service] != 0.0):
        raise PowerFlowError("alpha must be zero on outed generators")

    ref = _reference_bus(scenario)
    live_bus = _live_component_mask(scenario, ref)
    in_service = scenario.gen_in_service
    gen_buses = np.unique(net.gen_bus_idx[in_service])
    gen_buses = gen_buses[live_bus[gen_buses]]

    # Aggregate reactive limits per in-service generator bus.
    q_lo = {b: float(np.sum(net.qmin[[g for g in net.gens_at_bus(b)
                                      if in_service[g]]])) for b in gen_buses}
    q_hi = {b: float(np.sum(net.qmax[[g for g in net.gens_at_bus(b)
                                      if in_service[g]]])) for b in gen_buses}

    clip_hi: set[int] = set()
    clip_lo: set[int] = set()
    pq_at_max: set[int] = set()
    pq_at_min: set[int] = set()
    visited: set[tuple] = set()
    state = base.copy()
    state.delta = 0.0
    total_iters = 0
    log: list[dict] = []

    for round_no in range(options.max_switch_rounds + 1):
        key = (frozenset(clip_hi), frozenset(clip_lo), frozenset(pq_at_max),
               frozenset(pq_at_min))
        if key in visited:
            raise PowerFlowError("PV/PQ and clip-set switching cycles")
        visited.add(key)

        state, iters = _solve_fixed_regime(
            base, scenario, alpha, ref, live_bus, gen_buses,
            clip_hi, clip_lo, pq_at_max, pq_at_min, q_lo, q_hi, state, options)
        total_iters += iters

        new_clip_hi, new_clip_lo = set(), set()
        desired = base.pg + alpha * state.delta
        for g in np.flatnonzero(in_service):
            if desired[g] > net.pmax[g]:
                new_clip_hi.add(g)
            elif desired[g] < net.pmin[g]:
                new_clip_lo.add(g)

        v = state.voltage()
        inj = bus_injection(scenario, v) + net.demand
        new_pq_max, new_pq_min = set(), set()
        for b in gen_buses:
            if b in pq_at_max:
                # Stay switched only while the voltage sits at or below base.
                if state.vm[b] <= base.vm[b] + options.tol:
                    new_pq_max.add(b)
            elif b in pq_at_min:
                if state.vm[b] >= base.vm[b] - options.tol:
                    new_pq_min.add(b)
            else:
                qbus = inj[b].imag
                if qbus > q_hi[b] + options.tol:
                    new_pq_max.add(b)
                elif qbus < q_lo[b] - options.tol:
                    new_pq_min.add(b)

        log.append({"round": round_no, "iterations": iters,
                    "clip_hi": sorted(new_clip_hi), "clip_lo": sorted(new_clip_lo),
                    "pq_at_max": sorted(new_pq_max),
                    "pq_at_min": sorted(new_pq_min)})
        if (new_clip_hi == clip_hi and new_clip_lo == clip_lo
                and new_pq_max == pq_at_max and new_pq_min == pq_at_min):
            mis = mismatch(scenario, state)
            norm = float(np.max(np.abs(mis[live_bus]))) if live_bus.any() else 0.0
            return PfResult(state, total_iters, norm, switch_rounds=round_no,
                            log=log)
        clip_hi, clip_lo = new_clip_hi, new_clip_lo
        pq_at_max, pq_at_min = new_pq_max, new_pq_min
    raise PowerFlowError(
        f"switching did not settle within {options.max_switch_rounds} rounds")


def _reference_bus(scenario: Scenario) -> int:
    """Base slack bus, or the lowest-indexed live generator bus if outed."""
    net = scenario.network
    slack = net.slack_index
    for g in net.gens_at_bus(slack):
        if scenario.gen_in_service[g]:
            return slack
    live = np.flatnonzero(scenario.gen_in_service)
    if len(live) == 0:
        raise PowerFlowError("no in-service generator to anchor the angle")
    return int(net.gen_bus_idx[live[0]])


def _solve_fixed_regime(base, scenario, alpha, ref, live_bus, gen_buses,
                        clip_hi, clip_lo, pq_at_max, pq_at_min, q_lo, q_hi,
                        start, options):
    """Newton solve with frozen clip and PV/PQ sets; delta is an unknown."""
    net = scenario.network
    nb, ng = net.n_bus, net.n_gen
    in_service = scenario.gen_in_service

    pv_buses = np.array([b for b in gen_buses
                         if b not in pq_at_max and b not in pq_at_min],
                        dtype=int)
    is_pv = np.zeros(nb, dtype=bool)
    is_pv[pv_buses] = True
    is_pq = live_bus & ~is_pv
    is_pq[ref] = False
    va_vars = np.flatnonzero(live_bus & (np.arange(nb) != ref))
    vm_vars = np.flatnonzero(is_pq)
    p_rows = np.flatnonzero(live_bus)
    q_rows = vm_vars

    # Unclipped in-service units track alpha * delta.
    responsive = np.zeros(ng)
    for g in np.flatnonzero(in_service):
        if g not in clip_hi and g not in clip_lo:
            responsive[g] = alpha[g]
    d_dp_delta = np.asarray(
        (scenario.gen_incidence.T @ responsive)).ravel()

    state = start.copy()
    state.vm[is_pv] = base.vm[is_pv]
    state.vm[ref] = base.vm[ref]
    state.va[ref] = base.va[ref]
    state.vm[~live_bus] = 1.0
    state.va[~live_bus] = 0.0

    def set_injections(st):
        desired = base.pg + alpha * st.delta
        pg = np.clip(desired, net.pmin, net.pmax)
        pg[list(clip_hi)] = net.pmax[list(clip_hi)]
        pg[list(clip_lo)] = net.pmin[list(clip_lo)]
        pg[~in_service] = 0.0
        st.pg = pg
        qg = np.zeros(ng)
        for b in pq_at_max.union(pq_at_min):
            gens = [g for g in net.gens_at_bus(b) if in_service[g]]
            pin = q_hi[b] if b in pq_at_max else q_lo[b]
            qg[gens] = allocate_bus_quantity(pin, net.qmin[gens],
                                             net.qmax[gens])
        st.qg = qg

    for it in range(options.max_iter + 1):
        set_injections(state)
        mis = mismatch(scenario, state)
        f = np.concatenate([mis.real[p_rows], mis.imag[q_rows]])
        norm = float(np.max(np.abs(f))) if len(f) else 0.0
        if norm <= options.tol:
            _recover_contingency_q(scenario, state, pv_buses, ref)
            return state, it
        if it == options.max_iter:
            raise PowerFlowError(
                f"contingency Newton stalled at mismatch {norm:.3e}")
        v = state.voltage()
        ds_dva, ds_dvm = dSbus_dV(scenario.ybus, v)
        j11 = -ds_dva.real[np.ix_(p_rows, va_vars)]
        j12 = -ds_dvm.real[np.ix_(p_rows, vm_vars)]
        j13 = d_dp_delta[p_rows].reshape(-1, 1)
        j21 = -ds_dva.imag[np.ix_(q_rows, va_vars)]
        j22 = -ds_dvm.imag[np.ix_(q_rows, vm_vars)]
        j23 = np.zeros((len(q_rows), 1))
        jac = sp.bmat([[j11, j12, j13], [j21, j22, j23]], format="csc")
        try:
            dx = spla.spsolve(jac, -f)
        except RuntimeError as exc:
            raise PowerFlowError(f"singular contingency Jacobian: {exc}") from exc
        if not np.all(np.isfinite(dx)):
            raise PowerFlowError("singular contingency Jacobian")
        na = len(va_vars)
        state.va[va_vars] += dx[:na]
        state.vm[vm_vars] += dx[na:na + len(vm_vars)]
        state.delta += dx[-1]


def _recover_contingency_q(scenario: Scenario, state: OperatingState,
                           pv_buses: np.ndarray, ref: int) -> None:
    net = scenario.network
    v = state.voltage()
    inj = bus_injection(scenario, v) + net.demand
    targets = set(pv_buses.tolist())
    targets.add(ref)
    for b in targets:
        gens = [g for g in net.gens_at_bus(b) if scenario.gen_in_service[g]]
        if gens:
            state.qg[gens] = allocate_bus_quantity(
                inj[b].imag, net.qmin[gens], net.qmax[gens])


# ---------------------------------------------------------------------------
# Exact-model audit


@dataclass
class ViolationReport:
    """Per-family worst violations of the exact model."""

    passed: bool
    tol: float
    curve_tol_active: float
    curve_tol_reactive: float
    families: dict[str, float]
    worst: dict[str, str]
    scenarios: list[dict]

    def to_document(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "curve_tol_active": self.curve_tol_active,
            "curve_tol_reactive": self.curve_tol_reactive,
            "families": self.families,
            "worst": self.worst,
            "scenarios": self.scenarios,
        }


def audit_solution(problem, solution, tol: float = 1e-6,
                   curve_tol_active: float | None = None,
                   curve_tol_reactive: float | None = None) -> ViolationReport:
    """Check a candidate solution against the exact piecewise model.

    Power balance, box and line-flow violations compare against ``tol``;
    the coupling families compare against the measured smooth-vs-exact gap
    of the problem's curve parameters unless explicit bounds are given.
    """
    from .curves import curve_gap_bound

    net = problem.network
    if curve_tol_active is None:
        curve_tol_active = curve_gap_bound(problem.active_curve)
    if curve_tol_reactive is None:
        curve_tol_reactive = curve_gap_bound(problem.reactive_curve)

    families = {k: 0.0 for k in ("power_balance", "line_flow", "p_box",
                                 "q_box", "vm_box", "outed_zero",
                                 "active_coupling", "reactive_coupling")}
    worst = {k: "" for k in families}
    per_scenario = []

    def bump(family: str, value: float, where: str):
        if value > families[family]:
            families[family] = float(value)
            worst[family] = where

    base = solution.states[0]
    for c, scenario in enumerate(problem.scenarios):
        state = solution.states[c]
        live_bus = _live_component_mask(scenario, _reference_bus(scenario))
        mis = mismatch(scenario, state)
        bal = float(np.max(np.abs(mis[live_bus])))
        bump("power_balance", bal, f"scenario {c}")

        smax = scenario.s_max()
        rated = np.isfinite(smax)
        if rated.any():
            fmag, tmag = branch_flows(scenario, state)
            over = np.maximum(fmag - smax, tmag - smax)[rated]
            if len(over):
                l = int(np.argmax(over))
                bump("line_flow", float(np.max(over, initial=0.0)),
                     f"scenario {c} branch {scenario.branch_idx[rated][l]}")

        vm_over = np.maximum(net.vmin - state.vm, state.vm - net.vmax)[live_bus]
        bump("vm_box", float(np.max(vm_over, initial=0.0)), f"scenario {c}")

        in_service = scenario.gen_in_service
        for g in range(net.n_gen):
            where = f"scenario {c} gen {g}"
            if not in_service[g]:
                bump("outed_zero", abs(state.pg[g]), where)
                bump("outed_zero", abs(state.qg[g]), where)
                continue
            bump("p_box", max(net.pmin[g] - state.pg[g],
                              state.pg[g] - net.pmax[g], 0.0), where)
            bump("q_box", max(net.qmin[g] - state.qg[g],
                              state.qg[g] - net.qmax[g], 0.0), where)
            if c == 0:
                continue
            dv = base.vm[net.gen_bus_idx[g]] - state.vm[net.gen_bus_idx[g]]
            if net.pmax[g] - net.pmin[g] > 1e-12:
                desired = base.pg[g] + solution.alpha[c][g] * state.delta
                x = normalize_active(state.pg[g], net.pmin[g], net.pmax[g])
                y = normalize_active(desired, net.pmin[g], net.pmax[g])
                bump("active_coupling",
                     membership_violation(np.pi / 4.0, x, y), where)
            if net.qmax[g] - net.qmin[g] > 1e-12:
                r_plus, r_minus = reactive_minmax_residual(
                    state.qg[g], net.qmin[g], net.qmax[g], dv)
                bump("reactive_coupling", max(abs(r_plus), abs(r_minus)), where)
        per_scenario.append({"id": c, "power_balance": bal})

    hard = ("power_balance", "line_flow", "p_box", "q_box", "vm_box",
            "outed_zero")
    passed = all(families[k] <= tol for k in hard)
    passed = passed and families["active_coupling"] <= curve_tol_active
    passed = passed and families["reactive_coupling"] <= curve_tol_reactive
    return ViolationReport(passed, tol, curve_tol_active, curve_tol_reactive,
                           families, worst, per_scenario)
