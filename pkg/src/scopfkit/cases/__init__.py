"""Bundled grid data files.

``case30`` is the standard 30-bus, 41-branch, 6-generator benchmark in
MATPOWER format.  ``case30_costx12`` is the same network with every
polynomial cost coefficient multiplied by 12 (a cost-scale vintage that
leaves the optimal dispatch unchanged).  ``case30_outages`` is the
12-entry contingency list used by the acceptance suite.
"""

from importlib import resources


def case_path(name: str):
    """Return a filesystem path to a bundled data file by stem name."""
    suffix = ".txt" if name.endswith("_outages") else ".m"
    res = resources.files(__package__).joinpath(name + suffix)
    if not res.is_file():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return res


def case_text(name: str) -> str:
    """Return the contents of a bundled data file by stem name."""
    return case_path(name).read_text()
