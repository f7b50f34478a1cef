"""Static grid model and per-contingency derived matrices.

The network is an immutable description of buses, branches and generators
in per-unit on the system MVA base.  A :class:`Scenario` augments it with
the in-service masks and admittance/incidence matrices of one contingency
case (or of the base case).  Branches follow the standard pi model with an
off-nominal tap and phase shift applied at the from end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import GridModelError, IslandingError


@dataclass(frozen=True)
class CostPolynomial:
    """Generation cost in $/h as a polynomial in active output (pu).

    Coefficients are stored constant term first.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise GridModelError("cost polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def value(self, p: float) -> float:
        return float(np.polynomial.polynomial.polyval(p, self.coeffs))

    def derivative(self, p: float) -> float:
        der = np.polynomial.polynomial.polyder(self.coeffs)
        return float(np.polynomial.polynomial.polyval(p, der)) if len(der) else 0.0

    def second_derivative(self, p: float) -> float:
        der2 = np.polynomial.polynomial.polyder(self.coeffs, 2)
        return float(np.polynomial.polynomial.polyval(p, der2)) if len(der2) else 0.0

    def scaled(self, factor: float) -> "CostPolynomial":
        return CostPolynomial(tuple(factor * c for c in self.coeffs))


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    vmin: float
    vmax: float
    demand_p: float = 0.0
    demand_q: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.vmin <= self.vmax):
            raise GridModelError(f"bus {self.id}: need 0 < vmin <= vmax")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    s_max: float = float("inf")

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise GridModelError("branch endpoints must differ")
        if self.r == 0.0 and self.x == 0.0:
            raise GridModelError("branch needs nonzero series impedance")
        if not self.s_max > 0.0:
            raise GridModelError("branch rating must be positive or infinite")

    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    def admittance_entries(self) -> tuple[complex, complex, complex, complex]:
        """The (yff, yft, ytf, ytt) entries of the 2x2 branch model."""
        ys = self.series_admittance()
        ysh = 1j * self.b_charging / 2.0
        tap = self.tap if self.tap != 0.0 else 1.0
        t = tap * np.exp(1j * self.shift)
        yff = (ys + ysh) / (t * np.conj(t))
        yft = -ys / np.conj(t)
        ytf = -ys / t
        ytt = ys + ysh
        return yff, yft, ytf, ytt


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: CostPolynomial

    def __post_init__(self):
        if self.pmin > self.pmax or self.qmin > self.qmax:
            raise GridModelError(f"generator at bus {self.bus}: inverted limits")


class ContingencyKind(Enum):
    NONE = "base"
    GENERATOR = "gen"
    BRANCH = "branch"


@dataclass(frozen=True)
class Contingency:
    """One outage (or the base case).  ``element`` is a 0-based index."""

    kind: ContingencyKind = ContingencyKind.NONE
    element: int | None = None

    def __post_init__(self):
        if self.kind is ContingencyKind.NONE and self.element is not None:
            raise GridModelError("base case carries no element index")
        if self.kind is not ContingencyKind.NONE and self.element is None:
            raise GridModelError(f"{self.kind.value} outage needs an element index")

    @staticmethod
    def base() -> "Contingency":
        return Contingency(ContingencyKind.NONE, None)

    def label(self) -> str:
        if self.kind is ContingencyKind.NONE:
            return "base"
        return f"{self.kind.value} {self.element + 1}"


class Network:
    """Immutable per-unit network with index lookups cached at build time."""

    def __init__(self, buses: Sequence[Bus], branches: Sequence[Branch],
                 generators: Sequence[Generator], base_mva: float = 100.0,
                 slack_bus: int | None = None):
        self.buses = tuple(buses)
        self.branches = tuple(branches)
        self.generators = tuple(generators)
        self.base_mva = float(base_mva)

        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridModelError("bus ids must be unique")
        self._bus_index = {b.id: i for i, b in enumerate(self.buses)}
        for br in self.branches:
            if br.from_bus not in self._bus_index or br.to_bus not in self._bus_index:
                raise GridModelError(f"branch {br.from_bus}-{br.to_bus}: unknown bus")
        for g in self.generators:
            if g.bus not in self._bus_index:
                raise GridModelError(f"generator bus {g.bus} unknown")
        if slack_bus is not None and slack_bus not in self._bus_index:
            raise GridModelError(f"slack bus {slack_bus} unknown")
        self.slack_bus = slack_bus if slack_bus is not None else (
            self.generators[0].bus if self.generators else self.buses[0].id)

        self.n_bus = len(self.buses)
        self.n_branch = len(self.branches)
        self.n_gen = len(self.generators)
        self.demand = np.array([complex(b.demand_p, b.demand_q) for b in self.buses])
        self.shunt = np.array([complex(b.shunt_g, b.shunt_b) for b in self.buses])
        self.vmin = np.array([b.vmin for b in self.buses])
        self.vmax = np.array([b.vmax for b in self.buses])
        self.gen_bus_idx = np.array([self._bus_index[g.bus] for g in self.generators],
                                    dtype=int)
        self.pmin = np.array([g.pmin for g in self.generators])
        self.pmax = np.array([g.pmax for g in self.generators])
        self.qmin = np.array([g.qmin for g in self.generators])
        self.qmax = np.array([g.qmax for g in self.generators])

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._bus_index[bus_id]
        except KeyError:
            raise GridModelError(f"unknown bus id {bus_id}") from None

    @property
    def slack_index(self) -> int:
        return self.bus_index(self.slack_bus)

    def gens_at_bus(self, bus_idx: int) -> list[int]:
        return [g for g in range(self.n_gen) if self.gen_bus_idx[g] == bus_idx]

    def with_scaled_costs(self, factor: float) -> "Network":
        gens = [Generator(g.bus, g.pmin, g.pmax, g.qmin, g.qmax, g.cost.scaled(factor))
                for g in self.generators]
        return Network(self.buses, self.branches, gens, self.base_mva, self.slack_bus)


@dataclass
class Scenario:
    """Derived matrices of one contingency case.  Treat as read-only."""

    network: Network
    contingency: Contingency
    gen_in_service: np.ndarray          # bool, (n_gen,)
    branch_in_service: np.ndarray       # bool, (n_branch,)
    gen_incidence: sp.csr_matrix        # (n_gen, n_bus), zero row when outed
    ybus: sp.csc_matrix                 # (n_bus, n_bus)
    yf: sp.csr_matrix                   # (n_live_branch, n_bus)
    yt: sp.csr_matrix
    lf: sp.csr_matrix                   # from/to incidence over live branches
    lt: sp.csr_matrix
    branch_idx: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def n_live_branch(self) -> int:
        return len(self.branch_idx)

    def s_max(self) -> np.ndarray:
        return np.array([self.network.branches[i].s_max for i in self.branch_idx])


def _branch_matrices(network: Network, live: np.ndarray):
    nb = network.n_bus
    idx = np.flatnonzero(live)
    nl = len(idx)
    f = np.array([network.bus_index(network.branches[i].from_bus) for i in idx],
                 dtype=int)
    t = np.array([network.bus_index(network.branches[i].to_bus) for i in idx],
                 dtype=int)
    entries = np.array([network.branches[i].admittance_entries() for i in idx],
                       dtype=complex).reshape(nl, 4) if nl else np.zeros((0, 4),
                                                                         complex)
    rows = np.arange(nl)
    yf = sp.csr_matrix((np.concatenate([entries[:, 0], entries[:, 1]]),
                        (np.concatenate([rows, rows]), np.concatenate([f, t]))),
                       shape=(nl, nb))
    yt = sp.csr_matrix((np.concatenate([entries[:, 2], entries[:, 3]]),
                        (np.concatenate([rows, rows]), np.concatenate([f, t]))),
                       shape=(nl, nb))
    lf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, nb))
    lt = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, nb))
    ybus = (lf.T @ yf + lt.T @ yt + sp.diags(network.shunt)).tocsc()
    return ybus, yf, yt, lf, lt, idx


def build_scenario(network: Network, contingency: Contingency,
                   require_connected: bool = True) -> Scenario:
    """Build masks and admittance matrices for one contingency case.

    Raises :class:`GridModelError` for an unknown element index and
    :class:`IslandingError` when a branch outage disconnects buses that
    carry demand or in-service generation (unless ``require_connected`` is
    disabled, e.g. to probe connectivity explicitly).
    """
    gen_live = np.ones(network.n_gen, dtype=bool)
    branch_live = np.ones(network.n_branch, dtype=bool)
    if contingency.kind is ContingencyKind.GENERATOR:
        if not 0 <= contingency.element < network.n_gen:
            raise GridModelError(f"generator index {contingency.element} out of range")
        gen_live[contingency.element] = False
    elif contingency.kind is ContingencyKind.BRANCH:
        if not 0 <= contingency.element < network.n_branch:
            raise GridModelError(f"branch index {contingency.element} out of range")
        branch_live[contingency.element] = False

    ybus, yf, yt, lf, lt, idx = _branch_matrices(network, branch_live)
    rows = np.flatnonzero(gen_live)
    cols = network.gen_bus_idx[rows]
    gen_incidence = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                                  shape=(network.n_gen, network.n_bus))
    scenario = Scenario(network, contingency, gen_live, branch_live,
                        gen_incidence, ybus, yf, yt, lf, lt, idx)
    if require_connected and not check_connectivity(scenario):
        raise IslandingError(
            f"contingency {contingency.label()} islands the network")
    return scenario


def check_connectivity(scenario: Scenario) -> bool:
    """True when all buses with injection capability share one component.

    Injection capability means nonzero demand or an in-service generator;
    passive buses may be stranded without failing the check.
    """
    net = scenario.network
    active = np.abs(net.demand) > 0.0
    for g in np.flatnonzero(scenario.gen_in_service):
        active[net.gen_bus_idx[g]] = True
    if active.sum() <= 1:
        return True
    adj = (scenario.lf.T @ scenario.lt).tocoo()
    graph = sp.csr_matrix((np.ones(adj.nnz), (adj.row, adj.col)),
                          shape=(net.n_bus, net.n_bus))
    _, labels = connected_components(graph, directed=False)
    return len(set(labels[active])) == 1


def admittance_row(scenario: Scenario, branch: int):
    """The four 2x2 branch-admittance entries of an in-service branch.

    ``branch`` indexes the network's branch list; the branch must be in
    service in this scenario.
    """
    net = scenario.network
    if not 0 <= branch < net.n_branch:
        raise GridModelError(f"branch index {branch} out of range")
    if not scenario.branch_in_service[branch]:
        raise GridModelError(f"branch {branch} is out of service in this scenario")
    return net.branches[branch].admittance_entries()
