"""Assembly of the security-constrained OPF nonlinear program.

Variable layout (participation weights fixed):

    [p0, vm0, va0 | p_c, q_c, vm_c, va_c, delta_c | ...]        c = 1..|C|-1

Base-case reactive generation is not a variable: the imaginary balance at
generator buses defines it, and aggregate box limits on that recovered
quantity enter as inequalities.  Contingency blocks carry the full state
plus the scalar redispatch, coupled to the base block through the smooth
response curves.  With weights optimized, each contingency block appends
per-generator alpha variables plus a normalization row.

Equalities: power balance per scenario, smooth couplings per in-service
generator with usable range, one reference-angle pin per contingency
block.  Inequalities: squared line-flow limits and the recovered base
reactive bounds.  All first derivatives are analytic and sparse; exact
second derivatives back the interior-point solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .curves import SmoothCurveParams, smooth_curve_g2
from .errors import GridModelError
from .network import Contingency, Network, Scenario, build_scenario
from .powerflow import OperatingState, allocate_bus_quantity, dSbus_dV, d2Sbus_dV2

_RANGE_EPS = 1e-12
_INTERIOR_GUARD = 1e-6


@dataclass
class ScopfProblem:
    """The SCOPF model: network, scenarios, curves and weight policy."""

    network: Network
    scenarios: list[Scenario]
    active_curve: SmoothCurveParams
    reactive_curve: SmoothCurveParams
    alpha_mode: str = "uniform"
    delta_bound: float | None = None

    def __post_init__(self):
        if not self.scenarios or self.scenarios[0].contingency.element is not None:
            raise GridModelError("scenario 0 must be the base case")
        if self.alpha_mode not in ("uniform", "optimize"):
            raise GridModelError(f"unknown alpha mode {self.alpha_mode!r}")
        if self.delta_bound is None:
            total = float(np.sum(self.network.pmax))
            self.delta_bound = total if np.isfinite(total) else np.inf
        if self.alpha_mode == "optimize" and not np.isfinite(self.delta_bound):
            raise GridModelError("optimized weights need a finite delta bound")

    @staticmethod
    def build(network: Network, contingencies: list[Contingency],
              active_curve: SmoothCurveParams,
              reactive_curve: SmoothCurveParams,
              alpha_mode: str = "uniform",
              delta_bound: float | None = None) -> "ScopfProblem":
        scenarios = [build_scenario(network, Contingency.base())]
        scenarios += [build_scenario(network, c) for c in contingencies]
        return ScopfProblem(network, scenarios, active_curve, reactive_curve,
                            alpha_mode, delta_bound)

    def uniform_alpha(self, c: int) -> np.ndarray:
        """Equal weights over in-service units with usable active range."""
        live = self.scenarios[c].gen_in_service.copy()
        live &= (self.network.pmax - self.network.pmin) > _RANGE_EPS
        alpha = np.zeros(self.network.n_gen)
        if c > 0 and live.any():
            alpha[live] = 1.0 / live.sum()
        return alpha


@dataclass
class ScopfSolution:
    problem: ScopfProblem
    objective: float
    states: list[OperatingState]
    alpha: list[np.ndarray]
    stats: dict = field(default_factory=dict)


class _BlockIndex:
    """Variable offsets of one scenario block."""

    def __init__(self, offset: int, ng: int, nb: int, base: bool,
                 with_alpha: bool):
        self.base = base
        self.p = offset + np.arange(ng)
        cursor = offset + ng
        if not base:
            self.q = cursor + np.arange(ng)
            cursor += ng
        self.vm = cursor + np.arange(nb)
        cursor += nb
        self.va = cursor + np.arange(nb)
        cursor += nb
        if not base:
            self.delta = cursor
            cursor += 1
            if with_alpha:
                self.alpha = cursor + np.arange(ng)
                cursor += ng
        self.end = cursor


class _FlowData:
    """Per-scenario arrays for rated in-service branches."""

    def __init__(self, scenario: Scenario):
        net = scenario.network
        entries, f_idx, t_idx, smax = [], [], [], []
        for pos, br_idx in enumerate(scenario.branch_idx):
            branch = net.branches[br_idx]
            if not np.isfinite(branch.s_max):
                continue
            entries.append(branch.admittance_entries())
            f_idx.append(net.bus_index(branch.from_bus))
            t_idx.append(net.bus_index(branch.to_bus))
            smax.append(branch.s_max)
        self.n = len(f_idx)
        self.f = np.array(f_idx, dtype=int)
        self.t = np.array(t_idx, dtype=int)
        ym = np.array(entries, dtype=complex).reshape(self.n, 4)
        self.yff, self.yft, self.ytf, self.ytt = (ym[:, i] for i in range(4))
        self.smax2 = np.array(smax) ** 2


def _end_flow(y_own, y_other, v_own, v_other, phase):
    """Complex flow at one branch end plus first/second partials.

    Arguments follow the end's own bus first; ``phase`` is the angle of the
    own bus minus the other bus.  Returns S and derivatives with respect to
    (v_own, v_other, phase).
    """
    rot = np.exp(1j * phase)
    cross = np.conj(y_other) * rot
    s = np.conj(y_own) * v_own ** 2 + cross * v_own * v_other
    ds = (2.0 * np.conj(y_own) * v_own + cross * v_other,
          cross * v_own,
          1j * cross * v_own * v_other)
    d2 = {
        (0, 0): 2.0 * np.conj(y_own),
        (0, 1): cross,
        (0, 2): 1j * cross * v_other,
        (1, 1): np.zeros_like(cross),
        (1, 2): 1j * cross * v_own,
        (2, 2): -cross * v_own * v_other,
    }
    return s, ds, d2


class NlpInstance:
    """Flat NLP with precomputed sparsity and analytic derivatives."""

    def __init__(self, problem: ScopfProblem):
        self.problem = problem
        net = problem.network
        ng, nb = net.n_gen, net.n_bus
        self.ng, self.nb = ng, nb
        with_alpha = problem.alpha_mode == "optimize"
        self.with_alpha = with_alpha

        self.blocks: list[_BlockIndex] = []
        offset = 0
        for c, scenario in enumerate(problem.scenarios):
            block = _BlockIndex(offset, ng, nb, base=(c == 0),
                                with_alpha=with_alpha)
            self.blocks.append(block)
            offset = block.end
        self.n = offset

        p_range = net.pmax - net.pmin
        q_range = net.qmax - net.qmin
        self.p_ok = p_range > _RANGE_EPS
        self.q_ok = q_range > _RANGE_EPS

        genbus = sorted(set(net.gen_bus_idx.tolist()))
        self.genbus = np.array(genbus, dtype=int)
        self.nongen = np.array([b for b in range(nb) if b not in set(genbus)],
                               dtype=int)
        self.q_lo_bus = np.array([np.sum(net.qmin[net.gens_at_bus(b)])
                                  for b in self.genbus])
        self.q_hi_bus = np.array([np.sum(net.qmax[net.gens_at_bus(b)])
                                  for b in self.genbus])

        self.act_gens = [np.array([], dtype=int)]
        self.rea_gens = [np.array([], dtype=int)]
        self.ref_bus = [net.slack_index]
        self.alpha_fixed = [problem.uniform_alpha(0)]
        for c in range(1, len(problem.scenarios)):
            scenario = problem.scenarios[c]
            live = scenario.gen_in_service
            self.act_gens.append(np.flatnonzero(live & self.p_ok))
            self.rea_gens.append(np.flatnonzero(live & self.q_ok))
            self.ref_bus.append(self._scenario_ref(scenario))
            self.alpha_fixed.append(problem.uniform_alpha(c))
        self.flows = [_FlowData(s) for s in problem.scenarios]

        self._build_bounds()
        self._build_row_layout()

    def _scenario_ref(self, scenario: Scenario) -> int:
        net = scenario.network
        for g in net.gens_at_bus(net.slack_index):
            if scenario.gen_in_service[g]:
                return net.slack_index
        live = np.flatnonzero(scenario.gen_in_service)
        if len(live) == 0:
            raise GridModelError("scenario leaves no generator in service")
        return int(net.gen_bus_idx[live[0]])

    # -- variable bounds ----------------------------------------------------

    def _build_bounds(self):
        net = self.problem.network
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        guard_p = 0.5 * _INTERIOR_GUARD * (net.pmax - net.pmin)
        guard_q = 0.5 * _INTERIOR_GUARD * (net.qmax - net.qmin)

        for c, block in enumerate(self.blocks):
            scenario = self.problem.scenarios[c]
            lo[block.vm], hi[block.vm] = net.vmin, net.vmax
            if block.base:
                lo[block.p], hi[block.p] = net.pmin, net.pmax
                lo[block.va[self.ref_bus[0]]] = 0.0
                hi[block.va[self.ref_bus[0]]] = 0.0
                continue
            live = scenario.gen_in_service
            plo = np.where(live, net.pmin + guard_p, 0.0)
            phi = np.where(live, net.pmax - guard_p, 0.0)
            fixed_p = live & ~self.p_ok
            plo[fixed_p] = net.pmin[fixed_p]
            phi[fixed_p] = net.pmin[fixed_p]
            lo[block.p], hi[block.p] = plo, phi
            qlo = np.where(live, net.qmin + guard_q, 0.0)
            qhi = np.where(live, net.qmax - guard_q, 0.0)
            fixed_q = live & ~self.q_ok
            qlo[fixed_q] = net.qmin[fixed_q]
            qhi[fixed_q] = net.qmin[fixed_q]
            lo[block.q], hi[block.q] = qlo, qhi
            bound = self.problem.delta_bound
            lo[block.delta], hi[block.delta] = -bound, bound
            if self.with_alpha:
                alo = np.where(live & self.p_ok, 0.0, 0.0)
                ahi = np.where(live & self.p_ok, 1.0, 0.0)
                lo[block.alpha], hi[block.alpha] = alo, ahi
        self.lo, self.hi = lo, hi

    # -- constraint row layout ----------------------------------------------

    def _build_row_layout(self):
        rows = 0
        self.eq_layout = []
        for c, block in enumerate(self.blocks):
            layout = {"p_bal": rows}
            rows += self.nb
            if block.base:
                layout["q_bal"] = rows
                rows += len(self.nongen)
            else:
                layout["q_bal"] = rows
                rows += self.nb
                layout["act"] = rows
                rows += len(self.act_gens[c])
                layout["rea"] = rows
                rows += len(self.rea_gens[c])
                layout["pin"] = rows
                rows += 1
                if self.with_alpha:
                    layout["alpha_sum"] = rows
                    rows += 1
            self.eq_layout.append(layout)
        self.n_eq = rows

        self.ineq_layout = []
        rows = 0
        self.ineq_layout.append({"q_rec": rows})
        rows += len(self.genbus)
        for c in range(len(self.blocks)):
            self.ineq_layout[0].setdefault("flows", []).append(rows)
            rows += 2 * self.flows[c].n
        self.n_ineq = rows
        il = np.full(rows, -np.inf)
        iu = np.full(rows, np.inf)
        il[:len(self.genbus)] = self.q_lo_bus
        iu[:len(self.genbus)] = self.q_hi_bus
        for c in range(len(self.blocks)):
            start = self.ineq_layout[0]["flows"][c]
            nfl = self.flows[c].n
            iu[start:start + 2 * nfl] = np.concatenate([self.flows[c].smax2] * 2) \
                if nfl else iu[start:start]
        self.ineq_lo, self.ineq_hi = il, iu

    # -- initial point --------------------------------------------------------

    def initial_point(self) -> np.ndarray:
        """Flat voltages, midpoint dispatch, zero redispatch."""
        net = self.problem.network
        x = np.zeros(self.n)
        mid_p = 0.5 * (net.pmin + net.pmax)
        mid_q = 0.5 * (net.qmin + net.qmax)
        vm_flat = np.clip(np.ones(self.nb), net.vmin, net.vmax)
        for c, block in enumerate(self.blocks):
            scenario = self.problem.scenarios[c]
            x[block.vm] = vm_flat
            x[block.va] = 0.0
            if block.base:
                x[block.p] = mid_p
                continue
            live = scenario.gen_in_service
            x[block.p] = np.where(live, mid_p, 0.0)
            x[block.q] = np.where(live, mid_q, 0.0)
            x[block.delta] = 0.0
            if self.with_alpha:
                x[block.alpha] = self.alpha_fixed[c]
        return x

    def pack_states(self, states: list[OperatingState],
                    alpha: list[np.ndarray] | None = None) -> np.ndarray:
        """Embed per-scenario operating states as a full variable vector."""
        x = np.zeros(self.n)
        for c, block in enumerate(self.blocks):
            state = states[c]
            x[block.vm] = state.vm
            x[block.va] = state.va
            x[block.p] = state.pg
            if block.base:
                continue
            x[block.q] = state.qg
            x[block.delta] = state.delta
            if self.with_alpha:
                x[block.alpha] = (alpha[c] if alpha is not None
                                  else self.alpha_fixed[c])
        return x

    def scenario_alpha(self, c: int, x: np.ndarray) -> np.ndarray:
        if c == 0:
            return np.zeros(self.ng)
        if self.with_alpha:
            return x[self.blocks[c].alpha].copy()
        return self.alpha_fixed[c].copy()

    def unpack(self, x: np.ndarray) -> tuple[list[OperatingState], list[np.ndarray]]:
        """Per-scenario states (base reactive recovered) and weights."""
        net = self.problem.network
        states, alphas = [], []
        for c, block in enumerate(self.blocks):
            vm = x[block.vm].copy()
            va = x[block.va].copy()
            pg = x[block.p].copy()
            if block.base:
                v = vm * np.exp(1j * va)
                inj = v * np.conj(self.problem.scenarios[0].ybus @ v) + net.demand
                qg = np.zeros(self.ng)
                for b in self.genbus:
                    gens = net.gens_at_bus(b)
                    qg[gens] = allocate_bus_quantity(
                        inj[b].imag, net.qmin[gens], net.qmax[gens])
                states.append(OperatingState(vm, va, pg, qg, 0.0))
            else:
                states.append(OperatingState(vm, va, pg, x[block.q].copy(),
                                             float(x[block.delta])))
            alphas.append(self.scenario_alpha(c, x))
        return states, alphas

    # -- objective ------------------------------------------------------------

    def objective_and_gradient(self, x: np.ndarray):
        net = self.problem.network
        p0 = x[self.blocks[0].p]
        value = 0.0
        grad = np.zeros(self.n)
        for g, gen in enumerate(net.generators):
            value += gen.cost.value(p0[g])
            grad[self.blocks[0].p[g]] = gen.cost.derivative(p0[g])
        return float(value), grad

    # -- constraints and Jacobian ----------------------------------------------

    def constraints_and_jacobian(self, x: np.ndarray):
        """Equality/inequality residuals and their sparse Jacobians."""
        c_eq = np.zeros(self.n_eq)
        c_ineq = np.zeros(self.n_ineq)
        eq_trip: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        iq_trip: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

        for c, block in enumerate(self.blocks):
            self._scenario_rows(c, block, x, c_eq, c_ineq, eq_trip, iq_trip)

        j_eq = self._coo(eq_trip, self.n_eq)
        j_ineq = self._coo(iq_trip, self.n_ineq)
        return c_eq, c_ineq, j_eq, j_ineq

    def constraint_values(self, x: np.ndarray):
        """Objective and residuals only (line-search evaluations)."""
        c_eq = np.zeros(self.n_eq)
        c_ineq = np.zeros(self.n_ineq)
        for c, block in enumerate(self.blocks):
            self._scenario_rows(c, block, x, c_eq, c_ineq, None, None)
        f, _ = self.objective_and_gradient(x)
        return f, c_eq, c_ineq

    def constraint_derivatives(self, x: np.ndarray):
        """Objective gradient plus both Jacobians."""
        _, grad = self.objective_and_gradient(x)
        _, _, j_eq, j_ineq = self.constraints_and_jacobian(x)
        return grad, j_eq, j_ineq

    def _coo(self, triples, n_rows):
        if triples:
            rows = np.concatenate([t[0] for t in triples])
            cols = np.concatenate([t[1] for t in triples])
            vals = np.concatenate([t[2] for t in triples])
        else:
            rows = cols = vals = np.zeros(0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, self.n))

    @staticmethod
    def _scatter(triples, rows, matrix, col_map):
        m = matrix.tocoo()
        if m.nnz:
            triples.append((rows[m.row], col_map[m.col], m.data))

    def _scenario_rows(self, c, block, x, c_eq, c_ineq, eq_trip, iq_trip):
        net = self.problem.network
        scenario = self.problem.scenarios[c]
        layout = self.eq_layout[c]
        vm, va = x[block.vm], x[block.va]
        v = vm * np.exp(1j * va)
        ybus = scenario.ybus
        s_inj = v * np.conj(ybus @ v)
        want_jac = eq_trip is not None
        if want_jac:
            ds_dva, ds_dvm = dSbus_dV(ybus, v)
        gt = scenario.gen_incidence.T.tocsr()

        # Power balance rows.
        pg = x[block.p]
        if block.base:
            res = gt @ pg - net.demand - s_inj
            rows_p = layout["p_bal"] + np.arange(self.nb)
            c_eq[rows_p] = res.real
            rows_q = layout["q_bal"] + np.arange(len(self.nongen))
            c_eq[rows_q] = res.imag[self.nongen]
            # Recovered base reactive output per generator bus.
            rows_qr = np.arange(len(self.genbus))
            qrec = net.demand.imag[self.genbus] + s_inj.imag[self.genbus]
            c_ineq[rows_qr] = qrec
            if want_jac:
                self._scatter(eq_trip, rows_p, -ds_dva.real, block.va)
                self._scatter(eq_trip, rows_p, -ds_dvm.real, block.vm)
                self._scatter(eq_trip, rows_p, gt, block.p)
                self._scatter(eq_trip, rows_q, -ds_dva.imag[self.nongen],
                              block.va)
                self._scatter(eq_trip, rows_q, -ds_dvm.imag[self.nongen],
                              block.vm)
                self._scatter(iq_trip, rows_qr, ds_dva.imag[self.genbus],
                              block.va)
                self._scatter(iq_trip, rows_qr, ds_dvm.imag[self.genbus],
                              block.vm)
        else:
            qg = x[block.q]
            res = gt @ (pg + 1j * qg) - net.demand - s_inj
            rows_p = layout["p_bal"] + np.arange(self.nb)
            rows_q = layout["q_bal"] + np.arange(self.nb)
            c_eq[rows_p] = res.real
            c_eq[rows_q] = res.imag
            if want_jac:
                self._scatter(eq_trip, rows_p, -ds_dva.real, block.va)
                self._scatter(eq_trip, rows_p, -ds_dvm.real, block.vm)
                self._scatter(eq_trip, rows_p, gt, block.p)
                self._scatter(eq_trip, rows_q, -ds_dva.imag, block.va)
                self._scatter(eq_trip, rows_q, -ds_dvm.imag, block.vm)
                self._scatter(eq_trip, rows_q, gt, block.q)

            self._coupling_rows(c, block, x, c_eq, eq_trip)

            pin = layout["pin"]
            ref = self.ref_bus[c]
            base_block = self.blocks[0]
            c_eq[pin] = x[block.va[ref]] - x[base_block.va[ref]]
            if want_jac:
                eq_trip.append((np.array([pin, pin]),
                                np.array([block.va[ref], base_block.va[ref]]),
                                np.array([1.0, -1.0])))
            if self.with_alpha:
                row = layout["alpha_sum"]
                gens = self.act_gens[c]
                c_eq[row] = float(np.sum(x[block.alpha[gens]])) - 1.0
                if want_jac:
                    eq_trip.append((np.full(len(gens), row),
                                    block.alpha[gens], np.ones(len(gens))))

        self._flow_rows(c, block, x, c_ineq, iq_trip)

    def _coupling_rows(self, c, block, x, c_eq, eq_trip):
        net = self.problem.network
        layout = self.eq_layout[c]
        base = self.blocks[0]
        act = self.act_gens[c]
        if len(act):
            pmin, pmax = net.pmin[act], net.pmax[act]
            span = pmax - pmin
            scale = 2.0 / span
            t_c = (2.0 * x[block.p[act]] - pmax - pmin) / span
            alpha = (x[block.alpha[act]] if self.with_alpha
                     else self.alpha_fixed[c][act])
            delta = x[block.delta]
            desired = x[base.p[act]] + alpha * delta
            t_d = (2.0 * desired - pmax - pmin) / span
            g, dg, _ = smooth_curve_g2(self.problem.active_curve, t_c)
            rows = layout["act"] + np.arange(len(act))
            c_eq[rows] = t_d - g
            if eq_trip is not None:
                eq_trip.append((rows, block.p[act], -dg * scale))
                eq_trip.append((rows, base.p[act], scale))
                eq_trip.append((rows, np.full(len(act), block.delta),
                                scale * alpha))
                if self.with_alpha:
                    eq_trip.append((rows, block.alpha[act], scale * delta))
        rea = self.rea_gens[c]
        if len(rea):
            qmin, qmax = net.qmin[rea], net.qmax[rea]
            span = qmax - qmin
            scale = 2.0 / span
            t_q = (2.0 * x[block.q[rea]] - qmax - qmin) / span
            g, dg, _ = smooth_curve_g2(self.problem.reactive_curve, t_q)
            buses = net.gen_bus_idx[rea]
            rows = layout["rea"] + np.arange(len(rea))
            c_eq[rows] = (x[base.vm[buses]] - x[block.vm[buses]]) - g
            if eq_trip is not None:
                eq_trip.append((rows, block.q[rea], -dg * scale))
                eq_trip.append((rows, base.vm[buses], np.ones(len(rea))))
                eq_trip.append((rows, block.vm[buses], -np.ones(len(rea))))

    def _flow_rows(self, c, block, x, c_ineq, iq_trip):
        flow = self.flows[c]
        if flow.n == 0:
            return
        start = self.ineq_layout[0]["flows"][c]
        vm, va = x[block.vm], x[block.va]
        for end, (y_own, y_other, own, other) in enumerate(
                ((flow.yff, flow.yft, flow.f, flow.t),
                 (flow.ytt, flow.ytf, flow.t, flow.f))):
            phase = va[own] - va[other]
            s, ds, _ = _end_flow(y_own, y_other, vm[own], vm[other], phase)
            rows = start + end * flow.n + np.arange(flow.n)
            c_ineq[rows] = np.abs(s) ** 2
            if iq_trip is not None:
                d_own = 2.0 * (np.conj(s) * ds[0]).real
                d_other = 2.0 * (np.conj(s) * ds[1]).real
                d_phase = 2.0 * (np.conj(s) * ds[2]).real
                iq_trip.append((rows, block.vm[own], d_own))
                iq_trip.append((rows, block.vm[other], d_other))
                iq_trip.append((rows, block.va[own], d_phase))
                iq_trip.append((rows, block.va[other], -d_phase))

    # -- Hessian of the Lagrangian ---------------------------------------------

    def lagrangian_hessian(self, x: np.ndarray, sigma: float,
                           lam_eq: np.ndarray, lam_ineq: np.ndarray):
        """sigma * H(f) + sum lam_i H(c_i), exact, as a CSR matrix."""
        net = self.problem.network
        trip: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

        p0 = x[self.blocks[0].p]
        d2 = np.array([sigma * gen.cost.second_derivative(p0[g])
                       for g, gen in enumerate(net.generators)])
        trip.append((self.blocks[0].p, self.blocks[0].p, d2))

        for c, block in enumerate(self.blocks):
            scenario = self.problem.scenarios[c]
            layout = self.eq_layout[c]
            vm, va = x[block.vm], x[block.va]
            v = vm * np.exp(1j * va)

            # Complex weights on the injection S(V): balance rows carry -S,
            # the recovered-reactive rows +Im(S).
            w_p = -lam_eq[layout["p_bal"]:layout["p_bal"] + self.nb]
            w_q = np.zeros(self.nb)
            if block.base:
                w_q[self.nongen] = -lam_eq[layout["q_bal"]:
                                           layout["q_bal"] + len(self.nongen)]
                w_q[self.genbus] += lam_ineq[:len(self.genbus)]
            else:
                w_q = -lam_eq[layout["q_bal"]:layout["q_bal"] + self.nb].copy()
            for weights, take in ((w_p, "real"), (w_q, "imag")):
                if not np.any(weights):
                    continue
                haa, hav, hva, hvv = d2Sbus_dV2(scenario.ybus, v, weights)
                for mat, r_idx, c_idx in ((haa, block.va, block.va),
                                          (hav, block.va, block.vm),
                                          (hva, block.vm, block.va),
                                          (hvv, block.vm, block.vm)):
                    coo = mat.tocoo()
                    vals = coo.data.real if take == "real" else coo.data.imag
                    trip.append((r_idx[coo.row], c_idx[coo.col], vals))

            if not block.base:
                self._coupling_hessian(c, block, x, lam_eq, trip)
            self._flow_hessian(c, block, x, lam_ineq, trip)

        rows = np.concatenate([t[0] for t in trip])
        cols = np.concatenate([t[1] for t in trip])
        vals = np.concatenate([t[2] for t in trip])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def _coupling_hessian(self, c, block, x, lam_eq, trip):
        net = self.problem.network
        layout = self.eq_layout[c]
        act = self.act_gens[c]
        if len(act):
            lam = lam_eq[layout["act"]:layout["act"] + len(act)]
            pmin, pmax = net.pmin[act], net.pmax[act]
            span = pmax - pmin
            scale = 2.0 / span
            t_c = (2.0 * x[block.p[act]] - pmax - pmin) / span
            _, _, d2g = smooth_curve_g2(self.problem.active_curve, t_c)
            trip.append((block.p[act], block.p[act], -lam * d2g * scale ** 2))
            if self.with_alpha:
                cross = lam * scale
                dcol = np.full(len(act), block.delta)
                trip.append((block.alpha[act], dcol, cross))
                trip.append((dcol, block.alpha[act], cross))
        rea = self.rea_gens[c]
        if len(rea):
            lam = lam_eq[layout["rea"]:layout["rea"] + len(rea)]
            qmin, qmax = net.qmin[rea], net.qmax[rea]
            span = qmax - qmin
            scale = 2.0 / span
            t_q = (2.0 * x[block.q[rea]] - qmax - qmin) / span
            _, _, d2g = smooth_curve_g2(self.problem.reactive_curve, t_q)
            trip.append((block.q[rea], block.q[rea], -lam * d2g * scale ** 2))

    def _flow_hessian(self, c, block, x, lam_ineq, trip):
        flow = self.flows[c]
        if flow.n == 0:
            return
        start = self.ineq_layout[0]["flows"][c]
        vm, va = x[block.vm], x[block.va]
        for end, (y_own, y_other, own, other) in enumerate(
                ((flow.yff, flow.yft, flow.f, flow.t),
                 (flow.ytt, flow.ytf, flow.t, flow.f))):
            lam = lam_ineq[start + end * flow.n:start + (end + 1) * flow.n]
            if not np.any(lam):
                continue
            phase = va[own] - va[other]
            s, ds, d2s = _end_flow(y_own, y_other, vm[own], vm[other], phase)
            # Variables: (v_own, v_other, phase); phase expands to +-va.
            for i in range(3):
                for j in range(3):
                    key = (min(i, j), max(i, j))
                    term = np.conj(s) * d2s[key] + np.conj(ds[i]) * ds[j]
                    h = 2.0 * lam * term.real
                    self._scatter_phase(trip, block, own, other, i, j, h)

    def _scatter_phase(self, trip, block, own, other, i, j, h):
        """Scatter one (i, j) flow-Hessian block, expanding phase to angles."""
        axes_i = self._axis_cols(block, own, other, i)
        axes_j = self._axis_cols(block, own, other, j)
        for cols_i, sign_i in axes_i:
            for cols_j, sign_j in axes_j:
                trip.append((cols_i, cols_j, sign_i * sign_j * h))

    @staticmethod
    def _axis_cols(block, own, other, axis):
        if axis == 0:
            return ((block.vm[own], 1.0),)
        if axis == 1:
            return ((block.vm[other], 1.0),)
        return ((block.va[own], 1.0), (block.va[other], -1.0))


def assemble(problem: ScopfProblem) -> NlpInstance:
    """Build the flat NLP for a problem (spec operation name)."""
    return NlpInstance(problem)


def objective_and_gradient(instance: NlpInstance, x: np.ndarray):
    return instance.objective_and_gradient(x)


def constraints_and_jacobian(instance: NlpInstance, x: np.ndarray):
    return instance.constraints_and_jacobian(x)
