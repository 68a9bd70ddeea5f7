"""Offline/online experiment pipeline with a content-hashed cell cache."""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import cells, reconstruct as rc
from .config import STAGES, build_bcs, build_model, build_sources, inclusion_of
from .homogenize import ScaledField, write_homogenized_csv
from .io import file_hash, load_cell_sets, save_cell_sets, solution_point_data, stable_hash, write_vtk
from .macro import prepare_macro_derivatives, solve_homogenized
from .mesh import build_fine_mesh, build_macro_mesh, build_unit_cell_mesh
from .metrics import ErrorReport, fit_convergence_rate, residual_diagnostic
from .reference import solve_reference

log = logging.getLogger(__name__)

ORDER_NAMES = ("homogenized", "loms", "homs")


class MissingCacheError(RuntimeError):
    pass


class Pipeline:
    def __init__(self, cfg: dict, out, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.model = build_model(cfg)
        self.sources, self.bcs = build_sources(cfg), build_bcs(cfg)
        self.domain = tuple(tuple(map(float, p)) for p in cfg["geometry"]["domain"])
        self.inclusion = inclusion_of(cfg)
        self.cell_mesh = build_unit_cell_mesh(cfg["meshes"]["cell_div"], self.inclusion)
        path = cfg["representative_grid"]["path"]
        if path == "auto":
            path = "separated" if self.model.separable else "general"
        self.path = path
        key_src = {
            "material": cfg["material"], "inclusion": cfg["geometry"]["inclusion"],
            "cell_div": cfg["meshes"]["cell_div"], "domain": cfg["geometry"]["domain"], "path": path,
            "n_rep": cfg["representative_grid"]["n_rep"] if path == "general" else None,
        }
        self.cache_key = stable_hash(key_src)
        cache_root = Path(cfg["outputs"]["cache_dir"] or self.out / "cache")
        self.cache_file = cache_root / self.cache_key / "cells.npz"
        self.timings: dict[str, float] = {}
        self.cache_hit: bool | None = None
        self.files: list[Path] = []
        self._memo: dict = {}

    # -- helpers -----------------------------------------------------------

    def _timed(self, stage: str, fn, *args):
        t = time.perf_counter()
        r = fn(*args)
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t
        return r

    def _csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        p = self.out / name
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.10e}" if isinstance(v, float) else v for v in r])
        self.files.append(p)
        return p

    @property
    def eps(self) -> float:
        return self.cfg["geometry"]["epsilon"]

    # -- offline -----------------------------------------------------------

    def solve_cells(self):
        if self.path == "separated":
            return cells.solve_separated(self.cell_mesh, self.model)
        from .homogenize import build_representative_grid

        grid = build_representative_grid(self.domain, self.cfg["representative_grid"]["n_rep"])
        return cells.solve_grid(self.cell_mesh, self.model, grid, order=2, threads=self.threads)

    def cell_sets(self, allow_compute: bool):
        if "cells" in self._memo:
            return self._memo["cells"]
        if self.cache_file.exists():
            self.cache_hit = True
            sets = load_cell_sets(self.cache_file)
        elif allow_compute:
            self.cache_hit = False
            sets = self._timed("cell", self.solve_cells)
            save_cell_sets(self.cache_file, sets)
        else:
            raise MissingCacheError(f"no cell cache at {self.cache_file}; run the 'cell' stage first")
        self._memo["cells"] = sets
        return sets

    # -- online ------------------------------------------------------------

    def homogenized(self):
        sets = self._memo["cells"]
        if self.path == "separated":
            return ScaledField(self.model.psi, sets.star)
        return sets.homogenized

    def provider(self):
        sets = self._memo["cells"]
        if self.path == "separated":
            return rc.SeparatedProvider(sets, self.cell_mesh, self.model.psi)
        return rc.GridProvider(sets, self.cell_mesh)

    def write_homogenized(self):
        sets = self._memo["cells"]
        if self.path == "separated":
            pts = np.zeros((1, 2))
            vals = {k: v[None] for k, v in sets.star.items()}
            name = "homogenized_star.csv"
        else:
            pts, vals, name = sets.grid.points, sets.homogenized.values, "homogenized.csv"
        p = self.out / name
        write_homogenized_csv(p, pts, vals)
        self.files.append(p)

    def macro(self):
        if "macro" not in self._memo:
            mm = build_macro_mesh(self.domain, self.cfg["meshes"]["macro_div"], self.cfg["meshes"]["boundary"])
            sol = self._timed("macro", lambda: prepare_macro_derivatives(
                solve_homogenized(mm, self.homogenized(), self.sources, self.bcs)))
            self._memo["macro"] = sol
        return self._memo["macro"]

    def fine_mesh(self, eps: float):
        key = ("fine", eps)
        if key not in self._memo:
            self._memo[key] = build_fine_mesh(self.domain, eps, self.cfg["meshes"]["fine_per_cell"],
                                              self.inclusion, self.cfg["meshes"]["boundary"])
        return self._memo[key]

    def reconstructions(self, eps: float) -> dict:
        key = ("rec", eps)
        if key not in self._memo:
            fm, ms, prov = self.fine_mesh(eps), self.macro(), self.provider()
            self._memo[key] = self._timed("reconstruct", lambda: {
                o: rc.reconstruct(rc.ReconstructionInputs(eps, fm, ms, prov, n, self.path))
                for o, n in enumerate(ORDER_NAMES)})
        return self._memo[key]

    def reference(self, eps: float):
        key = ("ref", eps)
        if key not in self._memo:
            fm = self.fine_mesh(eps)
            self._memo[key] = self._timed("reference", solve_reference, fm, self.model, eps, self.sources, self.bcs)
        return self._memo[key]

    def report(self, eps: float) -> ErrorReport:
        rep = ErrorReport.from_fields(self.reconstructions(eps), self.reference(eps), label=f"eps={eps:g}")
        fm = self.fine_mesh(eps)
        rep.sizes = {"fine_nodes": fm.n_nodes, "fine_elements": fm.n_elements}
        return rep

    def residuals(self, eps: float) -> dict[int, float]:
        fm = self.fine_mesh(eps)
        return {o: residual_diagnostic(fm, self.model, eps, s.T, self.sources, "T")
                for o, s in self.reconstructions(eps).items()}

    # -- stages ------------------------------------------------------------

    def run(self, stages, eps_list=None) -> dict:
        stages = [s for s in STAGES if s in stages]
        online = [s for s in stages if s != "cell"]
        self.cell_sets(allow_compute="cell" in stages)
        if "cell" in stages and self.cache_hit:
            log.info("warm cell cache %s: offline stage skipped", self.cache_key)
        if "homogenize" in online:
            self.write_homogenized()
        if "macro" in online and self.cfg["outputs"]["vtk"]:
            ms = self.macro()
            self.files.append(write_vtk(self.out / "macro.vtk", ms.mesh, solution_point_data(ms)))
        if "reconstruct" in online and self.cfg["outputs"]["vtk"]:
            recs = self.reconstructions(self.eps)
            data = {}
            for o, s in recs.items():
                data.update({f"{k}_{ORDER_NAMES[o]}": v for k, v in solution_point_data(s).items()})
            self.files.append(write_vtk(self.out / "multiscale.vtk", self.fine_mesh(self.eps), data))
        if "reference" in online:
            ref = self.reference(self.eps)
            if self.cfg["outputs"]["vtk"]:
                self.files.append(write_vtk(self.out / "reference.vtk", ref.mesh, solution_point_data(ref)))
        if "compare" in online:
            rep = self.report(self.eps)
            rep.write_csv(self.out / "errors.csv")
            self.files.append(self.out / "errors.csv")
            res = self.residuals(self.eps)
            self._csv("residuals.csv", ["order", "name", "residual_T"],
                      [[o, ORDER_NAMES[o], r] for o, r in res.items()])
            self._memo["report"] = rep
        if "convergence" in online:
            self.convergence(eps_list or self.cfg["convergence"]["eps"])
        self.write_cost_table()
        return self.write_manifest(stages)

    def convergence(self, eps_list) -> dict:
        fld = self.cfg["convergence"]["field"]
        rows, errs = [], {o: [] for o in range(3)}
        for e in sorted(eps_list, reverse=True):
            rep = self.report(e)
            for o in range(3):
                errs[o].append((e, rep[f"{fld}errorH1{o}"]))
            rows.append([f"{e:.10g}", rep.sizes["fine_nodes"]] + [rep[f"{fld}errorH1{o}"] for o in range(3)])
            for k in [k for k in self._memo if isinstance(k, tuple) and k[1] == e]:
                del self._memo[k]
        slopes = {o: fit_convergence_rate(errs[o]) if len(errs[o]) > 1 else float("nan") for o in range(3)}
        rows.append(["slope", ""] + [slopes[o] for o in range(3)])
        self._csv("convergence.csv", ["eps", "fine_nodes"] + [f"{fld}errorH1{o}" for o in range(3)], rows)
        self._memo["slopes"] = slopes
        return slopes

    def cost_rows(self) -> list[tuple]:
        cm = self.cell_mesh
        rows = [("cell mesh", cm.n_nodes, cm.n_elements)]
        if "macro" in self._memo:
            m = self._memo["macro"].mesh
            rows.append(("homogenized mesh", m.n_nodes, m.n_elements))
        if ("fine", self.eps) in self._memo:
            f = self._memo[("fine", self.eps)]
            rows.append(("fine mesh", f.n_nodes, f.n_elements))
        return rows

    def write_cost_table(self) -> Path:
        """Table of mesh sizes and stage wall times (not part of the bitwise-stable CSV set)."""
        lines = ["| mesh | nodes | elements |", "|---|---|---|"]
        lines += [f"| {n} | {a} | {b} |" for n, a, b in self.cost_rows()]
        lines += ["", "| stage | wall time (s) |", "|---|---|"]
        for s in ("cell", "macro", "reconstruct", "reference"):
            v = self.timings.get(s)
            note = "skipped (warm cache)" if s == "cell" and self.cache_hit else ("-" if v is None else f"{v:.3f}")
            lines.append(f"| {s} | {note} |")
        p = self.out / "cost_table.md"
        p.write_text("\n".join(lines) + "\n")
        return p

    def write_manifest(self, stages) -> dict:
        man = {
            "name": self.cfg["name"],
            "config_hash": stable_hash(self.cfg),
            "cache_key": self.cache_key,
            "cache_file": str(self.cache_file),
            "cache_hit": self.cache_hit,
            "path": self.path,
            "stages": list(stages),
            "timings": {k: round(v, 4) for k, v in sorted(self.timings.items())},
            "files": {p.name: file_hash(p) for p in sorted(set(self.files))},
        }
        if "slopes" in self._memo:
            man["slopes"] = self._memo["slopes"]
        (self.out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
        return man
