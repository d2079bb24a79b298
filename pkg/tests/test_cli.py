import csv
import json
from importlib import resources

import numpy as np
import pytest

from chainrec.chains import validate_shadow
from chainrec.cli import main
from chainrec.core import Curve
from chainrec.semiflow import builtin

CONFIGS = resources.files("chainrec") / "configs"


def cfg(name):
    return str(CONFIGS / name)


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_compare_exit_codes(tmp_path):
    assert run(tmp_path / "rest", "compare", "--config", cfg("circle_rest.json")) == 0
    report = json.loads((tmp_path / "rest" / "report.json").read_text())
    assert report["recurrent_match"] and report["sym_diff"] == []
    assert run(tmp_path / "mis", "compare", "--config", cfg("doublewell1d_mismatched.json")) == 1


def test_unknown_config_key_is_an_error(tmp_path):
    raw = json.loads((CONFIGS / "circle.json").read_text())
    raw["params"]["epsilon"] = 0.1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(raw))
    assert run(tmp_path, "analyze", "--config", str(path)) == 2


def test_bad_arguments_are_errors(tmp_path):
    assert main(["analyze"]) == 2
    assert run(tmp_path, "analyze", "--config", str(tmp_path / "missing.json")) == 2


def test_analyze_doublewell_chain_graph(tmp_path):
    assert run(tmp_path, "analyze", "--config", cfg("doublewell1d.json")) == 0
    dot = (tmp_path / "chaingraph.dot").read_text()
    assert dot.count("->") == 2
    cg = json.loads((tmp_path / "chaingraph.json").read_text())
    assert len(cg["nodes"]) == 3 and len(cg["edges"]) == 2
    grid_boxes = json.loads((tmp_path / "graph_conley.json").read_text())["n"]
    assert grid_boxes == 1024
    with (tmp_path / "recurrent.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    centers = np.array([float(r["center_0"]) for r in rows])
    assert np.all(np.minimum.reduce([abs(centers + 1), abs(centers), abs(centers - 1)]) < 0.05)


def test_analyze_circle_single_node(tmp_path):
    assert run(tmp_path, "analyze", "--config", cfg("circle.json")) == 0
    cg = json.loads((tmp_path / "chaingraph.json").read_text())
    assert len(cg["nodes"]) == 1 and cg["edges"] == []
    assert len(cg["nodes"][0]) == 256
    assert "->" not in (tmp_path / "chaingraph.dot").read_text()


def test_validate_exact_orbit(tmp_path):
    spec = builtin("circle")
    t = np.linspace(0.0, 4.0, 401)
    curve = Curve(t, (0.3 + t)[:, None], metric=spec.metric)
    path = tmp_path / "orbit.json"
    path.write_text(curve.to_json())
    assert run(tmp_path, "validate", str(path), "--config", cfg("circle_convert.json")) == 0
    out = json.loads((tmp_path / "validation.json").read_text())
    assert out["kind"] == "curve" and out["passed"] and out["max_defect"] < 1e-9


def test_validate_broken_curve_exits_one(tmp_path):
    spec = builtin("circle")
    t = np.linspace(0.0, 4.0, 401)
    curve = Curve(t, (0.3 + 1.2 * t)[:, None], metric=spec.metric)
    path = tmp_path / "bad.json"
    path.write_text(curve.to_json())
    assert run(tmp_path, "validate", str(path), "--config", cfg("circle_convert.json")) == 1


def test_convert_shipped_chain(tmp_path):
    assert run(tmp_path, "convert", "--config", cfg("circle_convert.json")) == 0
    spec = builtin("circle")
    curve = Curve.from_json(json.loads((tmp_path / "curve.json").read_text()), metric=spec.metric)
    assert validate_shadow(curve, spec, 0.011).passed


def test_convert_round_trip(tmp_path):
    assert run(tmp_path / "a", "convert", "--config", cfg("circle_convert.json")) == 0
    spec = builtin("circle")
    curve_path = tmp_path / "a" / "curve.json"
    curve = Curve.from_json(json.loads(curve_path.read_text()), metric=spec.metric)
    # without a loop at the endpoint a non-integer duration cannot be rounded up
    args = ["convert", str(curve_path), "--config", cfg("circle_convert.json"),
            "--direction", "shadow-to-conley"]
    assert run(tmp_path / "b", *args) == 2
    t = np.linspace(0.0, 2 * np.pi, 629)
    loop = Curve(t, (curve.end[0] + t)[:, None], metric=spec.metric)
    loop_path = tmp_path / "loop.json"
    loop_path.write_text(loop.to_json())
    assert run(tmp_path / "c", *args, "--loop", str(loop_path)) == 0
    chain = json.loads((tmp_path / "c" / "chain.json").read_text())
    assert min(chain["times"]) >= 1.0


def test_perturb_reports_violation_without_failing(tmp_path):
    assert run(tmp_path, "perturb", "--config", cfg("perturb_violating.json")) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["budget_violated"] is True


def test_perturb_compliant_certificate(tmp_path):
    assert run(tmp_path, "perturb", "--config", cfg("perturb_contraction.json")) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["budget_violated"] is False and cert["min_slack"] >= 0
    assert cert["validation"]["passed"]


@pytest.mark.parametrize("seed", [None, 7])
def test_seed_is_recorded(tmp_path, seed):
    args = ["compare", "--config", cfg("circle_rest.json")]
    if seed is not None:
        args += ["--seed", str(seed)]
    run(tmp_path, *args)
    report = json.loads((tmp_path / "report.json").read_text())
    assert "seed" in report["params"]
    if seed is not None:
        assert report["params"]["seed"] == seed
