"""Structured-text (TOML) documents for species, configurations and experiments.

Length- and energy-valued keys accept either a bare number (already in the
document's base units) or a string ``"<value> <unit>"``.  The base units are
declared in a ``[units]`` table::

    schema_version = 1
    [units]
    length = "nm"      # every length is converted to nanometres
    energy = "kT"

See ``docs/config_schema.md`` for the full list of keys.
"""

from __future__ import annotations

from pathlib import Path

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .grid import Grid3D
from .model import (BModel, ChargeProfile, Ion, LennardJones, ModelParams,
                    SoluteConfiguration, SoluteSpecies)

SCHEMA_VERSION = 1

LENGTH_UNITS = {"m": 1.0, "nm": 1e-9, "A": 1e-10, "angstrom": 1e-10, "pm": 1e-12,
                "um": 1e-6}
# energies relative to joules; kT taken at 298.15 K
_KB = 1.380649e-23
_NA = 6.02214076e23
ENERGY_UNITS = {"J": 1.0, "kT": _KB * 298.15, "eV": 1.602176634e-19,
                "kJ/mol": 1e3 / _NA, "kcal/mol": 4184.0 / _NA}


class ConfigError(ValueError):
    """Malformed document; carries ``line``/``column`` when known."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnitError(ConfigError):
    pass


def load_document(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg}", getattr(exc, "lineno", None),
                          getattr(exc, "colno", None)) from None
    return parse_units(doc)


def parse_units(doc: dict) -> dict:
    ver = doc.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {ver!r}")
    units = doc.get("units", {})
    base_len = units.get("length", "nm")
    base_en = units.get("energy", "kT")
    if base_len not in LENGTH_UNITS:
        raise UnitError(f"unknown length unit {base_len!r}")
    if base_en not in ENERGY_UNITS:
        raise UnitError(f"unknown energy unit {base_en!r}")
    doc = dict(doc)
    doc["_units"] = (base_len, base_en)
    return doc


def _quantity(value, table: dict, base: str, what: str) -> float:
    if isinstance(value, bool):
        raise UnitError(f"{what}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        parts = value.split()
        if len(parts) != 2:
            raise UnitError(f"{what}: expected '<value> <unit>', got {value!r}")
        try:
            num = float(parts[0])
        except ValueError:
            raise UnitError(f"{what}: bad number {parts[0]!r}") from None
        if parts[1] not in table:
            raise UnitError(f"{what}: unknown unit {parts[1]!r}")
        return num * table[parts[1]] / table[base]
    raise UnitError(f"{what}: expected a number or quantity string, got {value!r}")


def length(doc: dict, value, what: str = "length") -> float:
    return _quantity(value, LENGTH_UNITS, doc["_units"][0], what)


def energy(doc: dict, value, what: str = "energy") -> float:
    return _quantity(value, ENERGY_UNITS, doc["_units"][1], what)


def model_params(doc: dict) -> ModelParams:
    m = doc.get("model", {})
    return ModelParams(beta=float(m.get("beta", 1.0)), gamma=float(m.get("gamma", 0.0)),
                       a=float(m.get("a", 0.0)), eps0=float(m.get("eps0", 1.0)),
                       eps1=float(m.get("eps1", 1.0)), M=float(m.get("M", 1.0)))


def b_model(doc: dict) -> BModel:
    b = doc.get("B", {"variant": "zero"})
    v = b.get("variant", "zero")
    if v == "zero":
        return BModel.zero()
    if v == "quadratic":
        return BModel.quadratic(float(b.get("stiffness", 1.0)))
    if v == "ionic":
        ions = [Ion(float(i["concentration"]), float(i["charge"])) for i in b.get("ions", [])]
        return BModel.ionic(ions, energy(doc, b.get("kBT", 1.0), "B.kBT"))
    raise ConfigError(f"unknown B variant {v!r}")


def species_table(doc: dict) -> dict[int, SoluteSpecies]:
    """``[species.<id>]`` tables; lengths here are reference (dimensionless) units."""
    out = {}
    for key, s in doc.get("species", {}).items():
        sid = int(key)
        kind = s.get("profile", "uniform_ball")
        radius = float(s.get("radius", 1.0))
        spacing = s.get("profile_spacing")
        if kind == "uniform_ball":
            prof = ChargeProfile.uniform_ball(radius, float(s.get("charge", 1.0)),
                                              None if spacing is None else float(spacing))
        elif kind == "dipole":
            prof = ChargeProfile.dipole(float(s.get("separation", 1.0)), radius,
                                        float(s.get("charge", 1.0)),
                                        None if spacing is None else float(spacing))
        elif kind == "neutral":
            prof = ChargeProfile.neutral(radius)
        else:
            raise ConfigError(f"species {sid}: unknown profile {kind!r}")
        lj = LennardJones(energy(doc, s.get("well_depth", 0.0), f"species.{sid}.well_depth"),
                          float(s.get("core_radius", 1.0)),
                          float(s.get("cutoff_radius", 2.5)))
        out[sid] = SoluteSpecies(sid, prof, lj, s.get("name", f"species{sid}"))
    return out


def configuration(doc: dict) -> tuple[SoluteConfiguration, Grid3D]:
    """``[box]``, ``[grid]`` and ``[[solute]]`` entries to a configuration and grid."""
    box = doc.get("box")
    if box is None:
        raise ConfigError("missing [box] table")
    origin = [length(doc, x, "box.origin") for x in box.get("origin", [0.0, 0.0, 0.0])]
    extents = [length(doc, x, "box.extents") for x in box["extents"]]
    r = length(doc, box["r"], "box.r")
    g = doc.get("grid", {})
    h = length(doc, g["spacing"], "grid.spacing") if "spacing" in g else r / float(
        g.get("cells_per_r", 4))
    dims = tuple(max(2, int(round(e / h))) for e in extents)
    grid = Grid3D(tuple(origin), h, dims)
    species = species_table(doc)
    solutes = [(int(s["species"]), tuple(length(doc, x, "solute.position")
                                         for x in s["position"]))
               for s in doc.get("solute", [])]
    M = float(doc.get("model", {}).get("M", 1.0))
    cfg = SoluteConfiguration(tuple(origin), tuple(float(x) for x in grid.extents), r,
                              species, solutes, M)
    return cfg, grid
