"""Big-M mixed-integer encoding of the exact contingency response.

Exports the binary-indicator formulation of the active and reactive
response rules as a CPLEX LP-format model (export only; nothing here
solves it).  Mode binaries xPp/xPm pick the active-power regime (clipped
high, clipped low, or tracking the redispatch target) and xQp/xQm pick the
voltage/reactive regime.  A small LP reader is included so exported files
can be grammar-checked and inspected in-process.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import CaseFormatError, GridModelError
from .network import ContingencyKind, Network

_ALPHA_BOUND = 1.0


@dataclass(frozen=True)
class BigMConfig:
    """Big-M multipliers per (scenario, generator).

    ``delta_bound`` bounds the redispatch magnitude; the per-generator M of
    ``(pmax - pmin) + alpha_bound * delta_bound`` is the smallest constant
    making the indicator rows equivalent to the clipped response.
    """

    delta_bound: float
    alpha_bound: float = _ALPHA_BOUND

    def __post_init__(self):
        if not np.isfinite(self.delta_bound) or self.delta_bound <= 0.0:
            raise GridModelError("delta_bound must be finite and positive")

    def m_value(self, pmin: float, pmax: float) -> float:
        if not np.isfinite(pmin) or not np.isfinite(pmax):
            raise GridModelError("big-M derivation needs finite power limits")
        return (pmax - pmin) + abs(self.alpha_bound) * self.delta_bound


def default_delta_bound(network: Network) -> float:
    total = float(np.sum(network.pmax))
    if not np.isfinite(total) or total <= 0.0:
        raise GridModelError("total capacity must be finite and positive")
    return total


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _terms(coeffs: list[tuple[float, str]]) -> str:
    parts = []
    for coef, name in coeffs:
        sign = "-" if coef < 0 else "+"
        if not parts and sign == "+":
            parts.append(f"{_fmt(abs(coef))} {name}")
        else:
            parts.append(f"{sign} {_fmt(abs(coef))} {name}")
    return " ".join(parts) if parts else "0 dummy"


def export_bigm_milp(network: Network, contingencies, config: BigMConfig,
                     alpha=None) -> str:
    """Write the big-M model for the given outage list as LP-format text.

    ``contingencies`` lists the non-base scenarios.  ``alpha`` optionally
    fixes participation weights per scenario (defaults to uniform over
    in-service units).  Every contingency generator pair gets its four mode
    binaries; response rows are emitted for in-service units and outed
    units are pinned to zero output through their bounds.
    """
    ng = network.n_gen
    rows: list[str] = []
    bounds: list[str] = []
    binaries: list[str] = []

    obj = [(network.generators[g].cost.coeffs[1]
            if len(network.generators[g].cost.coeffs) > 1 else 0.0,
            f"p0_g{g + 1}") for g in range(ng)]
    for g in range(ng):
        bounds.append(f" {_fmt(network.pmin[g])} <= p0_g{g + 1} <= "
                      f"{_fmt(network.pmax[g])}")

    for c, cont in enumerate(contingencies, start=1):
        live = np.ones(ng, dtype=bool)
        if cont.kind is ContingencyKind.GENERATOR:
            if not 0 <= cont.element < ng:
                raise GridModelError(f"generator index {cont.element} out of range")
            live[cont.element] = False
        elif cont.kind is ContingencyKind.BRANCH:
            if not 0 <= cont.element < network.n_branch:
                raise GridModelError(f"branch index {cont.element} out of range")
        n_live = int(live.sum())
        if alpha is not None:
            a_c = np.asarray(alpha[c - 1], dtype=float)
        else:
            a_c = np.where(live, 1.0 / max(n_live, 1), 0.0)

        dmax = config.delta_bound
        bounds.append(f" {_fmt(-dmax)} <= delta_c{c} <= {_fmt(dmax)}")
        for g in range(ng):
            tag = f"c{c}_g{g + 1}"
            pc, qc, dv = f"pc_{tag}", f"qc_{tag}", f"dv_{tag}"
            pmin, pmax = network.pmin[g], network.pmax[g]
            qmin, qmax = network.qmin[g], network.qmax[g]
            bus = network.buses[network.gen_bus_idx[g]]
            vrange = bus.vmax - bus.vmin
            for name in (f"xPp_{tag}", f"xPm_{tag}", f"xQp_{tag}", f"xQm_{tag}"):
                binaries.append(name)
            if not live[g]:
                bounds.append(f" {pc} = 0")
                bounds.append(f" {qc} = 0")
                bounds.append(f" {_fmt(-vrange)} <= {dv} <= {_fmt(vrange)}")
                continue

            m = config.m_value(pmin, pmax)
            prange = pmax - pmin
            qrange = qmax - qmin
            a = a_c[g]
            p0 = f"p0_g{g + 1}"
            rows.append(f" act_hi_{tag}: {_terms([(1.0, p0), (a, f'delta_c{c}'), (-1.0, pc), (m, f'xPp_{tag}')])} <= {_fmt(m)}")
            rows.append(f" act_lo_{tag}: {_terms([(1.0, pc), (-1.0, p0), (-a, f'delta_c{c}'), (m, f'xPm_{tag}')])} <= {_fmt(m)}")
            rows.append(f" act_up_{tag}: {_terms([(-1.0, pc), (-prange, f'xPp_{tag}')])} <= {_fmt(-pmax)}")
            rows.append(f" act_dn_{tag}: {_terms([(1.0, pc), (-prange, f'xPm_{tag}')])} <= {_fmt(pmin)}")
            rows.append(f" rea_hi_{tag}: {_terms([(1.0, dv), (vrange, f'xQp_{tag}')])} <= {_fmt(vrange)}")
            rows.append(f" rea_lo_{tag}: {_terms([(-1.0, dv), (vrange, f'xQm_{tag}')])} <= {_fmt(vrange)}")
            rows.append(f" rea_up_{tag}: {_terms([(-1.0, qc), (-qrange, f'xQp_{tag}')])} <= {_fmt(-qmax)}")
            rows.append(f" rea_dn_{tag}: {_terms([(1.0, qc), (-qrange, f'xQm_{tag}')])} <= {_fmt(qmin)}")
            bounds.append(f" {_fmt(pmin)} <= {pc} <= {_fmt(pmax)}")
            bounds.append(f" {_fmt(qmin)} <= {qc} <= {_fmt(qmax)}")
            bounds.append(f" {_fmt(-vrange)} <= {dv} <= {_fmt(vrange)}")

    lines = ["\\ big-M contingency response model", "Minimize",
             f" obj: {_terms(obj)}", "Subject To"]
    lines += rows
    lines.append("Bounds")
    lines += bounds
    if binaries:
        lines.append("Binaries")
        for i in range(0, len(binaries), 6):
            lines.append(" " + " ".join(binaries[i:i + 6]))
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Minimal LP-format reader (grammar check and round-trip inspection)


@dataclass
class LpConstraint:
    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float


@dataclass
class LpModel:
    minimize: bool = True
    objective: dict[str, float] = field(default_factory=dict)
    constraints: list[LpConstraint] = field(default_factory=list)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    binaries: set[str] = field(default_factory=set)

    def variables(self) -> set[str]:
        names = set(self.objective)
        for con in self.constraints:
            names.update(con.coeffs)
        names.update(self.bounds)
        names.update(self.binaries)
        return names


_TERM_RE = re.compile(r"([+-])?\s*(\d+\.?\d*(?:[eE][+-]?\d+)?)?\s*([A-Za-z_][\w.]*)")


def _parse_terms(expr: str) -> dict[str, float]:
    coeffs: dict[str, float] = {}
    pos = 0
    expr = expr.strip()
    while pos < len(expr):
        match = _TERM_RE.match(expr, pos)
        if not match:
            raise CaseFormatError(f"cannot parse LP expression near {expr[pos:]!r}")
        sign = -1.0 if match.group(1) == "-" else 1.0
        coef = float(match.group(2)) if match.group(2) else 1.0
        name = match.group(3)
        coeffs[name] = coeffs.get(name, 0.0) + sign * coef
        pos = match.end()
        while pos < len(expr) and expr[pos].isspace():
            pos += 1
    return coeffs


def read_lp_model(text: str) -> LpModel:
    """Parse the LP-format subset produced by :func:`export_bigm_milp`."""
    model = LpModel()
    section = None
    pending = ""
    lines = [ln for ln in text.splitlines() if not ln.lstrip().startswith("\\")]

    def flush_constraint(chunk: str):
        if not chunk.strip():
            return
        if ":" in chunk:
            name, body = chunk.split(":", 1)
            name = name.strip()
        else:
            name, body = f"c{len(model.constraints)}", chunk
        match = re.search(r"(<=|>=|=)", body)
        if not match:
            raise CaseFormatError(f"constraint {name!r} has no sense")
        lhs, rhs = body[:match.start()], body[match.end():]
        model.constraints.append(LpConstraint(
            name, _parse_terms(lhs), match.group(1), float(rhs)))

    for raw in lines:
        line = raw.strip()
        lowered = line.lower()
        if lowered in ("minimize", "maximize", "subject to", "st", "s.t.",
                       "bounds", "binaries", "binary", "generals", "general",
                       "end"):
            if section == "subject to" and pending:
                flush_constraint(pending)
                pending = ""
            section = "subject to" if lowered in ("st", "s.t.") else lowered
            if lowered == "maximize":
                model.minimize = False
            continue
        if not line or section is None:
            continue
        if section in ("minimize", "maximize"):
            body = line.split(":", 1)[1] if ":" in line else line
            for name, coef in _parse_terms(body).items():
                model.objective[name] = model.objective.get(name, 0.0) + coef
        elif section == "subject to":
            pending += " " + line
            if re.search(r"(<=|>=|=)\s*[-+]?\d", pending):
                flush_constraint(pending)
                pending = ""
        elif section == "bounds":
            free = re.match(r"(\S+)\s+free", line, re.IGNORECASE)
            if free:
                model.bounds[free.group(1)] = (-np.inf, np.inf)
                continue
            two = re.match(r"([-+eE\d.]+)\s*<=\s*(\S+)\s*<=\s*([-+eE\d.]+)", line)
            if two:
                model.bounds[two.group(2)] = (float(two.group(1)),
                                              float(two.group(3)))
                continue
            one = re.match(r"(\S+)\s*(<=|>=|=)\s*([-+eE\d.]+)", line)
            if not one:
                raise CaseFormatError(f"cannot parse bound line {line!r}")
            name, sense, value = one.group(1), one.group(2), float(one.group(3))
            lo, hi = model.bounds.get(name, (0.0, np.inf))
            if sense == "=":
                model.bounds[name] = (value, value)
            elif sense == "<=":
                model.bounds[name] = (lo, value)
            else:
                model.bounds[name] = (value, hi)
        elif section in ("binaries", "binary"):
            model.binaries.update(line.split())
    if pending:
        flush_constraint(pending)
    return model
