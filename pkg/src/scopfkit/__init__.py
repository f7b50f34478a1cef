"""Security-constrained optimal power flow toolkit.

Core pieces: MATPOWER case parsing, per-contingency grid models, exact and
smooth generator response curves, Newton AC power flow with distributed
slack and PV/PQ switching, an interior-point SCOPF solver with curve
continuation, a big-M MILP exporter, and a FastAPI service plus CLI on
top.
"""

__version__ = "0.1.0"

from .curves import SigmoidKind, SmoothCurveParams
from .network import (Branch, Bus, Contingency, ContingencyKind,
                      CostPolynomial, Generator, Network, Scenario,
                      build_scenario, check_connectivity)
from .caseio import parse_matpower, parse_contingencies, to_network
from .nlp import ScopfProblem, ScopfSolution, assemble
from .powerflow import OperatingState, PfOptions, audit_solution
from .solver import SolverOptions, compare_sigmoids, solve

__all__ = [
    "Branch", "Bus", "Contingency", "ContingencyKind", "CostPolynomial",
    "Generator", "Network", "OperatingState", "PfOptions", "Scenario",
    "ScopfProblem", "ScopfSolution", "SigmoidKind", "SmoothCurveParams",
    "SolverOptions", "assemble", "audit_solution", "build_scenario",
    "check_connectivity", "compare_sigmoids", "parse_contingencies",
    "parse_matpower", "solve", "to_network", "__version__",
]
