"""Experiment configuration: YAML sections, defaults and validation."""

from __future__ import annotations

import copy
from fractions import Fraction
from pathlib import Path

import yaml

from .coefficients import (
    FAMILIES,
    MacroFactor,
    MaterialModel,
    Phase,
    WeightFunction,
    product_composite,
    sum_composite,
)
from .macro import BoundaryData, Sources
from .mesh import FIELD_TAGS, Circle, MeshError, cells_per_axis, normalize_tagging

STAGES = ("cell", "homogenize", "macro", "reconstruct", "reference", "compare", "convergence")

DEFAULTS = {
    "name": "experiment",
    "material": {"preset": "product", "psi": "example1_product"},
    "geometry": {
        "domain": [[0.0, 0.0], [1.0, 1.0]],
        "inclusion": {"center": [0.5, 0.5], "radius": 0.25},
        "epsilon": 0.1,
    },
    "meshes": {"cell_div": 20, "macro_div": 50, "fine_per_cell": 20, "boundary": None},
    "representative_grid": {"n_rep": 5, "path": "auto"},
    "sources": {"h": 500.0, "m": 500.0, "f": [1000.0, 1000.0]},
    "bcs": {"T": 273.15, "q": 0.0, "c": 0.0, "d": 0.0, "u": [0.0, 0.0], "sigma": [0.0, 0.0]},
    "stages": ["cell", "homogenize", "macro", "reconstruct", "reference", "compare"],
    "convergence": {"eps": [0.25, 0.125, 0.0625], "field": "T"},
    "outputs": {"vtk": True, "cache_dir": None},
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def parse_fraction(s) -> float:
    return float(Fraction(str(s).strip()))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return validate_config(raw)


def validate_config(config: dict) -> dict:
    """Fill defaults and check the schema; raises ``ConfigError`` listing all problems."""
    unknown = set(config) - set(DEFAULTS)
    errors = [f"unknown section {k!r}" for k in sorted(unknown)]
    cfg = _merge(DEFAULTS, {k: v for k, v in config.items() if k in DEFAULTS})
    geo, mesh = cfg["geometry"], cfg["meshes"]
    try:
        geo["epsilon"] = parse_fraction(geo["epsilon"])
        lo, hi = geo["domain"]
        cells_per_axis(lo, hi, geo["epsilon"])
    except (MeshError, ValueError, ZeroDivisionError) as exc:
        errors.append(f"geometry: {exc}")
    try:
        tags = normalize_tagging(mesh["boundary"])
        present = set().union(*tags.values())
        for fld, (dtag, _) in FIELD_TAGS.items():
            if dtag not in present:
                errors.append(f"meshes.boundary: field {fld!r} has no Dirichlet edge (tag {dtag!r})")
    except (MeshError, ValueError) as exc:
        errors.append(f"meshes.boundary: {exc}")
    for key, lo_ in (("cell_div", 2), ("macro_div", 1), ("fine_per_cell", 4)):
        if not isinstance(mesh[key], int) or mesh[key] < lo_:
            errors.append(f"meshes.{key} must be an integer >= {lo_}")
    inc = geo["inclusion"]
    if inc is not None:
        c = Circle(tuple(inc["center"]), float(inc["radius"]))
        if not c.inside_unit_cell():
            errors.append("geometry.inclusion must lie inside the unit cell")
    stages = cfg["stages"]
    if isinstance(stages, str):
        stages = [s.strip() for s in stages.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        errors.append(f"unknown stages {bad}")
    cfg["stages"] = [s for s in STAGES if s in stages]
    rg = cfg["representative_grid"]
    if rg["path"] not in ("auto", "general", "separated"):
        errors.append(f"representative_grid.path {rg['path']!r} not in auto/general/separated")
    try:
        cfg["convergence"]["eps"] = [parse_fraction(e) for e in cfg["convergence"]["eps"]]
    except (ValueError, ZeroDivisionError) as exc:
        errors.append(f"convergence.eps: {exc}")
    if cfg["material"].get("preset") not in ("product", "sum", "custom"):
        errors.append("material.preset must be product, sum or custom")
    if not errors:
        try:
            build_model(cfg)
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(f"material: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


def inclusion_of(cfg: dict) -> Circle | None:
    inc = cfg["geometry"]["inclusion"]
    return None if inc is None else Circle(tuple(map(float, inc["center"])), float(inc["radius"]))


def build_model(cfg: dict) -> MaterialModel:
    mat = cfg["material"]
    geometry = inclusion_of(cfg)
    if mat["preset"] == "product":
        return product_composite(mat.get("psi", "example1_product"), geometry)
    if mat["preset"] == "sum":
        return sum_composite(mat.get("psi", "example1_sum"), geometry)
    macro = {}
    for fam, spec in (mat.get("macro") or {}).items():
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {fam!r}")
        scale, weighted = spec
        macro[fam] = MacroFactor(float(scale), bool(weighted))
    return MaterialModel(
        mode=mat.get("mode", "product"),
        matrix=Phase(**mat["matrix"]),
        inclusion_phase=Phase(**mat["inclusion"]),
        psi=WeightFunction(mat.get("psi", "constant")),
        macro=macro,
        geometry=geometry,
        name=cfg["name"],
    )


def build_sources(cfg: dict) -> Sources:
    s = cfg["sources"]
    return Sources(float(s["h"]), float(s["m"]), tuple(map(float, s["f"])))


def build_bcs(cfg: dict) -> BoundaryData:
    b = cfg["bcs"]
    return BoundaryData(float(b["T"]), float(b["q"]), float(b["c"]), float(b["d"]),
                        tuple(map(float, b["u"])), tuple(map(float, b["sigma"])))


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))
