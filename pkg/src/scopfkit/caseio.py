"""MATPOWER-format case parsing and result serialization.

Supports the subset of the ``.m`` case format needed here: ``mpc.baseMVA``
plus the ``bus``, ``gen``, ``branch`` and ``gencost`` matrices, with MATLAB
``%`` comments.  Unknown assignments are collected on the document's
warning list instead of failing the parse.  Also provides the line-oriented
contingency list format, CSV result tables and the JSON solution document.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import CaseFormatError, GridModelError
from .network import (Branch, Bus, Contingency, ContingencyKind,
                      CostPolynomial, Generator, Network)

# MATPOWER column positions (0-based).
BUS_I, BUS_TYPE, BUS_PD, BUS_QD, BUS_GS, BUS_BS = 0, 1, 2, 3, 4, 5
BUS_KV, BUS_VMAX, BUS_VMIN = 9, 11, 12
GEN_BUS, GEN_PG, GEN_QG, GEN_QMAX, GEN_QMIN, GEN_VG = 0, 1, 2, 3, 4, 5
GEN_STATUS, GEN_PMAX, GEN_PMIN = 7, 8, 9
BR_F, BR_T, BR_R, BR_X, BR_B, BR_RATE_A = 0, 1, 2, 3, 4, 5
BR_TAP, BR_SHIFT, BR_STATUS = 8, 9, 10
COST_MODEL, COST_NCOST, COST_COEFF0 = 0, 3, 4

_REQUIRED_COLUMNS = {"bus": 13, "gen": 10, "branch": 13, "gencost": 4}


@dataclass
class CaseDocument:
    """Raw numeric tables of one case, before per-unit conversion."""

    base_mva: float
    bus_table: np.ndarray
    gen_table: np.ndarray
    branch_table: np.ndarray
    gencost_table: np.ndarray
    name: str = "case"
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for label, width in _REQUIRED_COLUMNS.items():
            table = getattr(self, f"{label}_table")
            if table.ndim != 2 or table.shape[1] < width:
                raise CaseFormatError(
                    f"table {label!r} needs at least {width} columns")
        bus_ids = set(self.bus_table[:, BUS_I].astype(int))
        for bus in self.gen_table[:, GEN_BUS].astype(int):
            if bus not in bus_ids:
                raise CaseFormatError(f"gen references unknown bus {bus}")
        for row in self.branch_table:
            for bus in (int(row[BR_F]), int(row[BR_T])):
                if bus not in bus_ids:
                    raise CaseFormatError(f"branch references unknown bus {bus}")

    @property
    def n_bus(self) -> int:
        return self.bus_table.shape[0]

    @property
    def n_gen(self) -> int:
        return self.gen_table.shape[0]

    @property
    def n_branch(self) -> int:
        return self.branch_table.shape[0]


_ASSIGN_RE = re.compile(
    r"mpc\.(\w+)\s*=\s*(\[[^\]]*\]|'[^']*'|[^;]+);", re.DOTALL)


def _strip_comments(text: str) -> str:
    return re.sub(r"%[^\n]*", "", text)


def _parse_matrix(name: str, body: str) -> np.ndarray:
    rows = []
    width = None
    for raw in re.split(r"[;\n]", body.strip().strip("[]")):
        raw = raw.strip().rstrip(",")
        if not raw:
            continue
        entries = []
        for token in re.split(r"[\s,]+", raw):
            if not token:
                continue
            try:
                entries.append(float(token.replace("Inf", "inf")))
            except ValueError:
                raise CaseFormatError(
                    f"table {name!r}: non-numeric entry {token!r}") from None
        if width is None:
            width = len(entries)
        elif len(entries) != width:
            raise CaseFormatError(f"table {name!r}: ragged matrix rows")
        rows.append(entries)
    return np.array(rows, dtype=float) if rows else np.zeros((0, 0))


def parse_matpower(text: str, name: str = "case") -> CaseDocument:
    """Parse a MATPOWER ``.m`` function body into numeric tables."""
    clean = _strip_comments(text)
    tables: dict[str, np.ndarray] = {}
    base_mva = None
    warnings: list[str] = []
    for match in _ASSIGN_RE.finditer(clean):
        key, value = match.group(1), match.group(2).strip()
        if key == "baseMVA":
            base_mva = float(value)
        elif key in _REQUIRED_COLUMNS:
            tables[key] = _parse_matrix(key, value)
        else:
            warnings.append(f"ignored assignment mpc.{key}")
    if base_mva is None:
        raise CaseFormatError("missing mpc.baseMVA")
    for key in _REQUIRED_COLUMNS:
        if key not in tables:
            raise CaseFormatError(f"missing table mpc.{key}")
    return CaseDocument(base_mva, tables["bus"], tables["gen"],
                        tables["branch"], tables["gencost"], name=name,
                        warnings=warnings)


def serialize_case(doc: CaseDocument) -> str:
    """Emit the supported subset back as a MATPOWER function body."""
    out = [f"function mpc = {doc.name}", "mpc.version = '2';",
           f"mpc.baseMVA = {doc.base_mva:.17g};"]
    for label in ("bus", "gen", "branch", "gencost"):
        table = getattr(doc, f"{label}_table")
        out.append(f"mpc.{label} = [")
        for row in table:
            out.append("\t" + "\t".join(f"{v:.17g}" for v in row) + ";")
        out.append("];")
    return "\n".join(out) + "\n"


def _cost_from_row(row: np.ndarray, base_mva: float) -> CostPolynomial:
    model = int(row[COST_MODEL])
    if model != 2:
        raise CaseFormatError(f"unsupported cost model {model} (need polynomial)")
    n = int(row[COST_NCOST])
    coeffs_desc = row[COST_COEFF0:COST_COEFF0 + n]
    if len(coeffs_desc) < n:
        raise CaseFormatError("gencost row shorter than its declared order")
    # MATPOWER stores highest order first with power in MW; convert to
    # constant-first coefficients of power in pu.
    coeffs = []
    for k, c in enumerate(reversed(coeffs_desc.tolist())):
        coeffs.append(c * base_mva ** k)
    return CostPolynomial(tuple(coeffs))


def to_network(doc: CaseDocument, demand_scale: float = 1.0) -> Network:
    """Convert a parsed case to a per-unit :class:`Network`.

    Demands (active and reactive) are multiplied by ``demand_scale``.
    Out-of-service generator and branch rows are dropped; the attributes
    ``gen_case_rows`` and ``branch_case_rows`` on the returned network map
    network element order back to case rows.
    """
    base = doc.base_mva
    buses = []
    for row in doc.bus_table:
        buses.append(Bus(
            id=int(row[BUS_I]), base_kv=float(row[BUS_KV]),
            vmin=float(row[BUS_VMIN]), vmax=float(row[BUS_VMAX]),
            demand_p=demand_scale * row[BUS_PD] / base,
            demand_q=demand_scale * row[BUS_QD] / base,
            shunt_g=row[BUS_GS] / base, shunt_b=row[BUS_BS] / base))

    if doc.gencost_table.shape[0] not in (doc.n_gen, 2 * doc.n_gen):
        raise CaseFormatError("gencost row count does not match gen table")

    generators, gen_rows = [], []
    for i, row in enumerate(doc.gen_table):
        if row[GEN_STATUS] <= 0:
            continue
        generators.append(Generator(
            bus=int(row[GEN_BUS]),
            pmin=row[GEN_PMIN] / base, pmax=row[GEN_PMAX] / base,
            qmin=row[GEN_QMIN] / base, qmax=row[GEN_QMAX] / base,
            cost=_cost_from_row(doc.gencost_table[i], base)))
        gen_rows.append(i)

    branches, branch_rows = [], []
    for i, row in enumerate(doc.branch_table):
        if row[BR_STATUS] <= 0:
            continue
        rate = float(row[BR_RATE_A])
        branches.append(Branch(
            from_bus=int(row[BR_F]), to_bus=int(row[BR_T]),
            r=float(row[BR_R]), x=float(row[BR_X]),
            b_charging=float(row[BR_B]),
            tap=float(row[BR_TAP]) if row[BR_TAP] != 0.0 else 1.0,
            shift=math.radians(float(row[BR_SHIFT])),
            s_max=rate / base if rate > 0.0 else float("inf")))
        branch_rows.append(i)

    slack_rows = np.flatnonzero(doc.bus_table[:, BUS_TYPE].astype(int) == 3)
    slack_bus = int(doc.bus_table[slack_rows[0], BUS_I]) if len(slack_rows) else None
    network = Network(buses, branches, generators, base_mva=base,
                      slack_bus=slack_bus)
    network.gen_case_rows = tuple(gen_rows)
    network.branch_case_rows = tuple(branch_rows)
    return network


@dataclass(frozen=True)
class ContingencyList:
    """Ordered outage entries; scenario 0 (the base case) stays implicit.

    Elements are 1-based row indices into the case's gen/branch tables,
    matching the text format.
    """

    entries: tuple[Contingency, ...]

    def __len__(self) -> int:
        return len(self.entries)


def parse_contingencies(text: str) -> ContingencyList:
    """Parse ``gen <idx>`` / ``branch <idx>`` lines (``#`` comments)."""
    entries: list[Contingency] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("gen", "branch"):
            raise CaseFormatError(
                f"line {lineno}: expected 'gen <idx>' or 'branch <idx>', got {raw!r}")
        try:
            idx = int(parts[1])
        except ValueError:
            raise CaseFormatError(f"line {lineno}: bad index {parts[1]!r}") from None
        if idx < 1:
            raise CaseFormatError(f"line {lineno}: indices are 1-based")
        kind = (ContingencyKind.GENERATOR if parts[0] == "gen"
                else ContingencyKind.BRANCH)
        if (kind, idx) in seen:
            raise CaseFormatError(f"line {lineno}: duplicate entry {line!r}")
        seen.add((kind, idx))
        entries.append(Contingency(kind, idx - 1))
    return ContingencyList(tuple(entries))


def resolve_contingency(network: Network, entry: Contingency) -> Contingency:
    """Map a case-row contingency onto network element indices."""
    if entry.kind is ContingencyKind.NONE:
        return entry
    rows = (network.gen_case_rows if entry.kind is ContingencyKind.GENERATOR
            else network.branch_case_rows) if hasattr(network, "gen_case_rows") \
        else None
    if rows is None:
        return entry
    try:
        return Contingency(entry.kind, rows.index(entry.element))
    except ValueError:
        raise GridModelError(
            f"contingency {entry.label()} references an out-of-service row"
        ) from None


# ---------------------------------------------------------------------------
# Result serialization


def _gen_bus_groups(network: Network) -> list[tuple[int, list[int]]]:
    groups: dict[int, list[int]] = {}
    order: list[int] = []
    for g, bus_idx in enumerate(network.gen_bus_idx):
        bus_id = network.buses[bus_idx].id
        if bus_id not in groups:
            groups[bus_id] = []
            order.append(bus_id)
        groups[bus_id].append(g)
    return [(bus_id, groups[bus_id]) for bus_id in order]


def write_tables(solution, layout: str, switch_tol: float = 1e-3) -> str:
    """Render one of the per-scenario result tables as CSV text.

    ``layout`` selects active power, reactive power or voltage magnitude;
    rows follow generator buses in case order, columns follow scenarios
    0..|C|.  The voltage layout appends one boolean column per scenario
    flagging buses whose magnitude left the base-case value beyond
    ``switch_tol`` (PV/PQ switches).
    """
    if layout not in ("active", "reactive", "voltage"):
        raise ValueError(f"unknown table layout {layout!r}")
    network = solution.problem.network
    states = solution.states
    groups = _gen_bus_groups(network)
    ids = list(range(len(states)))

    buf = io.StringIO()
    writer = csv.writer(buf)
    header = ["bus"] + [str(i) for i in ids]
    if layout == "voltage":
        header += [f"switched_{i}" for i in ids]
    writer.writerow(header)
    base_vm = states[0].vm
    for bus_id, gens in groups:
        bus_idx = network.bus_index(bus_id)
        row: list[str] = [str(bus_id)]
        for c in ids:
            state = states[c]
            if layout == "active":
                value = float(np.sum(state.pg[gens]))
            elif layout == "reactive":
                value = float(np.sum(state.qg[gens]))
            else:
                value = float(state.vm[bus_idx])
            row.append(f"{value:.4f}")
        if layout == "voltage":
            for c in ids:
                moved = abs(states[c].vm[bus_idx] - base_vm[bus_idx]) > switch_tol
                row.append(str(bool(moved)).lower())
        writer.writerow(row)
    return buf.getvalue()


def solution_to_document(solution) -> dict:
    """The JSON solution document: objective plus per-scenario blocks."""
    scenarios = []
    for c, state in enumerate(solution.states):
        scenarios.append({
            "id": c,
            "delta": float(state.delta),
            "p": [float(v) for v in state.pg],
            "q": [float(v) for v in state.qg],
            "vm": [float(v) for v in state.vm],
            "va": [float(v) for v in state.va],
            "alpha": [float(v) for v in solution.alpha[c]],
        })
    return {"objective": float(solution.objective), "scenarios": scenarios}


def solution_to_json(solution, indent: int = 2) -> str:
    return json.dumps(solution_to_document(solution), indent=indent)


def solution_from_document(doc: dict, problem):
    """Rebuild a solution object from its JSON document for auditing."""
    from .powerflow import OperatingState
    from .nlp import ScopfSolution

    network = problem.network
    scenarios = doc.get("scenarios")
    if not isinstance(scenarios, list) or len(scenarios) != len(problem.scenarios):
        raise CaseFormatError("solution scenario count does not match problem")
    states, alpha = [], []
    for c, block in enumerate(scenarios):
        arrays = {}
        for key, size in (("p", network.n_gen), ("q", network.n_gen),
                          ("vm", network.n_bus), ("va", network.n_bus),
                          ("alpha", network.n_gen)):
            values = block.get(key)
            if not isinstance(values, list) or len(values) != size:
                raise CaseFormatError(
                    f"scenario {c}: field {key!r} needs {size} entries")
            arrays[key] = np.asarray(values, dtype=float)
        states.append(OperatingState(vm=arrays["vm"], va=arrays["va"],
                                     pg=arrays["p"], qg=arrays["q"],
                                     delta=float(block.get("delta", 0.0))))
        alpha.append(arrays["alpha"])
    return ScopfSolution(problem=problem, objective=float(doc["objective"]),
                         states=states, alpha=alpha, stats={})
