import json
import shutil
from pathlib import Path

import pytest
import yaml

from homsfem.cli import main
from homsfem.config import ConfigError, validate_config

ROOT = Path(__file__).resolve().parents[1]
SMOKE = ROOT / "configs" / "smoke.yaml"


def write_cfg(tmp_path, **over):
    cfg = yaml.safe_load(SMOKE.read_text())
    cfg.update(over)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_defaults_are_filled_in():
    cfg = validate_config({"geometry": {"epsilon": "1/5"}})
    assert cfg["geometry"]["epsilon"] == 0.2
    assert cfg["meshes"]["cell_div"] == 20 and cfg["bcs"]["T"] == 273.15
    assert cfg["representative_grid"]["path"] == "auto"


def test_validation_collects_errors():
    with pytest.raises(ConfigError) as exc:
        validate_config({"geometry": {"epsilon": 0.3}, "meshes": {"cell_div": 1}, "stages": ["bake"], "extra": 1})
    msg = " ".join(exc.value.errors)
    assert "unknown section 'extra'" in msg
    assert "geometry" in msg and "cell_div" in msg and "bake" in msg


def test_missing_dirichlet_tag_names_the_field():
    b = {f: ["T", "u", "d"] for f in ("left", "right", "bottom", "top")}
    with pytest.raises(ConfigError, match=r"\bc\b"):
        validate_config({"meshes": {"boundary": b}})


def test_inclusion_outside_cell_rejected():
    with pytest.raises(ConfigError, match="inclusion"):
        validate_config({"geometry": {"inclusion": {"center": [0.9, 0.5], "radius": 0.3}}})


def test_custom_material():
    cfg = validate_config({"material": {
        "preset": "custom", "mode": "product", "psi": "1 + x1",
        "matrix": {"E": 1, "nu": 0.3, "k": 2, "g": 1, "alpha": 0.1, "beta": 0.1},
        "inclusion": {"E": 2, "nu": 0.3, "k": 1, "g": 1, "alpha": 0.1, "beta": 0.1},
        "macro": {"k": [1.0, True]}}})
    assert cfg["material"]["preset"] == "custom"
    with pytest.raises(ConfigError, match="material"):
        validate_config({"material": {"preset": "custom", "matrix": {"E": 1}}})


def test_bad_config_exit_code(tmp_path, capsys):
    p = write_cfg(tmp_path, geometry={"epsilon": 0.3})
    assert main(["--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_stage_filter_cell_only(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", str(SMOKE), "--out", str(out), "--stages", "cell"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["cache_hit"] is False
    assert Path(man["cache_file"]).exists()
    data = {p.name for p in out.iterdir() if p.is_file()}
    assert data == {"manifest.json", "cost_table.md", "config.normalized.yaml"}


def test_online_only_without_cache_fails(tmp_path, capsys):
    assert main(["compare", "--config", str(SMOKE), "--out", str(tmp_path / "o")]) == 3
    assert "cell" in capsys.readouterr().err


def test_full_run_is_deterministic_and_reuses_cache(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", str(SMOKE), "--out", str(a)]) == 0
    shutil.copytree(a / "cache", b / "cache")
    assert main(["--config", str(SMOKE), "--out", str(b)]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["cache_hit"] is False and mb["cache_hit"] is True
    assert "cell" not in mb["timings"]
    for name in ("errors.csv", "residuals.csv", "homogenized_star.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
        assert ma["files"][name] == mb["files"][name]
    for name in ("macro.vtk", "multiscale.vtk", "reference.vtk"):
        assert (a / name).stat().st_size > 0
    assert "skipped (warm cache)" in (b / "cost_table.md").read_text()


def test_convergence_stage_emits_slope(tmp_path, capsys):
    p = write_cfg(tmp_path, meshes={"cell_div": 4, "macro_div": 8, "fine_per_cell": 4},
                  outputs={"vtk": False})
    out = tmp_path / "o"
    assert main(["cell", "convergence", "--config", str(p), "--out", str(out), "--eps", "1/2,1/4"]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0].startswith("eps,fine_nodes,TerrorH10")
    assert rows[-1].startswith("slope")
    assert "fitted slopes" in capsys.readouterr().out


def test_general_path_run(tmp_path):
    p = write_cfg(tmp_path, material={"preset": "sum"}, representative_grid={"n_rep": 2, "path": "general"},
                  meshes={"cell_div": 4, "macro_div": 8, "fine_per_cell": 4}, outputs={"vtk": False},
                  stages=["cell", "homogenize", "compare"])
    out = tmp_path / "o"
    assert main(["--config", str(p), "--out", str(out), "--threads", "2"]) == 0
    assert (out / "homogenized.csv").exists() and (out / "errors.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["path"] == "general"
