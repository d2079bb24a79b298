"""Chain-recurrence analysis of semiflows from the command line.

Exit codes: 0 success, 1 mismatch or failed validation, 2 usage/config/IO error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chains import conley_to_shadow, shadow_to_conley, validate_conley, validate_shadow
from .control import ControlSignal, certificate, perturbed_orbit
from .core import ChainrecError, ConleyChain, Curve
from .discretization import BoxGrid, conley_transition_graph, shadow_transition_graph
from .recurrence import chain_graph, compare_semantics_graphs
from .semiflow import SemiflowSpec, system_from_config

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2

_TOP_KEYS = {"system", "grid", "params", "seed", "output", "validate", "convert", "perturb"}
_GRID_KEYS = {"subdivisions", "domain"}
_PARAM_KEYS = {"eps", "eps_widths", "eps_conley", "T_min", "tau_step", "samples_per_box",
               "time_samples", "semantics", "h"}
_VALIDATE_KEYS = {"path", "type"}
_CONVERT_KEYS = {"path", "direction", "loop"}
_PERTURB_KEYS = {"x0", "T", "h", "signal"}


class ConfigError(ChainrecError):
    pass


def _strict(section: dict, allowed: set, where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return section


@dataclass
class RunConfig:
    spec: SemiflowSpec
    grid: BoxGrid | None
    eps: float | None
    eps_conley: float | None = None
    T_min: float = 1.0
    tau_step: float = 1.0 / 16.0
    samples_per_box: object = None
    time_samples: int = 9
    semantics: str = "conley"
    h: float = 0.01
    seed: int = 0
    output: str | None = None
    sections: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    _strict(raw, _TOP_KEYS, "config")
    if "system" not in raw:
        raise ConfigError("config needs a 'system' section")
    spec = system_from_config(raw["system"])
    grid = None
    if "grid" in raw:
        g = _strict(raw["grid"], _GRID_KEYS, "grid")
        if "subdivisions" not in g:
            raise ConfigError("grid needs 'subdivisions'")
        domain = g.get("domain", spec.domain)
        subs = np.atleast_1d(g["subdivisions"]).astype(int)
        if subs.size == 1:
            subs = np.repeat(subs, len(domain))
        grid = BoxGrid(tuple(tuple(a) for a in domain), tuple(subs), spec.metric)
    p = _strict(raw.get("params", {}), _PARAM_KEYS, "params")
    if "eps" in p and "eps_widths" in p:
        raise ConfigError("give either 'eps' or 'eps_widths', not both")
    eps = p.get("eps")
    if "eps_widths" in p:
        if grid is None:
            raise ConfigError("'eps_widths' needs a grid")
        eps = float(p["eps_widths"]) * float(grid.width.min())
    eps_conley = p.get("eps_conley")
    if eps_conley is not None and "eps_widths" in p and grid is not None:
        # flagged mode follows the unit convention of eps
        eps_conley = float(eps_conley) * float(grid.width.min())
    sections = {}
    for name, allowed in (("validate", _VALIDATE_KEYS), ("convert", _CONVERT_KEYS),
                          ("perturb", _PERTURB_KEYS)):
        if name in raw:
            sections[name] = _strict(raw[name], allowed, name)
    semantics = p.get("semantics", "conley")
    if semantics not in ("conley", "shadow"):
        raise ConfigError("params.semantics must be 'conley' or 'shadow'")
    return RunConfig(
        spec=spec,
        grid=grid,
        eps=None if eps is None else float(eps),
        eps_conley=None if eps_conley is None else float(eps_conley),
        T_min=float(p.get("T_min", 1.0)),
        tau_step=float(p.get("tau_step", 1.0 / 16.0)),
        samples_per_box=p.get("samples_per_box"),
        time_samples=int(p.get("time_samples", 9)),
        semantics=semantics,
        h=float(p.get("h", 0.01)),
        seed=int(raw.get("seed", 0)),
        output=raw.get("output"),
        sections=sections,
        base_dir=base_dir,
    )


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _need(cfg: RunConfig, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(f"config is missing '{n}'")


def _write_recurrent_csv(path: Path, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(rows)


def _recurrent_rows(grid: BoxGrid, cg, semantics: str):
    rows = []
    for k, node in enumerate(cg.nodes):
        centers = grid.centers(node)
        for b, c in zip(node, centers):
            rows.append([int(b), *[repr(float(x)) for x in c], k, semantics])
    rows.sort(key=lambda r: r[0])
    return rows


def _csv_header(dim: int):
    return ["box_index", *[f"center_{i}" for i in range(dim)], "node_id", "semantics"]


def cmd_analyze(cfg: RunConfig, out: Path, workers: int) -> int:
    _need(cfg, "grid", "eps")
    if cfg.semantics == "conley":
        graph = conley_transition_graph(cfg.spec, cfg.grid, cfg.eps, cfg.T_min, cfg.time_samples,
                                        cfg.samples_per_box, workers)
    else:
        graph = shadow_transition_graph(cfg.spec, cfg.grid, cfg.eps, cfg.samples_per_box,
                                        cfg.time_samples, workers)
    cg = chain_graph(graph)
    (out / f"graph_{cfg.semantics}.json").write_text(json.dumps(graph.to_json()) + "\n")
    (out / "chaingraph.dot").write_text(cg.to_dot())
    (out / "chaingraph.json").write_text(_dump(cg.to_json()))
    rows = [_csv_header(cfg.grid.dim)] + _recurrent_rows(cfg.grid, cg, cfg.semantics)
    _write_recurrent_csv(out / "recurrent.csv", rows)
    print(f"{cg.n_nodes} nodes, {len(cg.edges)} edges ({cfg.semantics})")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path, workers: int) -> int:
    _need(cfg, "grid", "eps")
    report, gc, gs = compare_semantics_graphs(cfg.spec, cfg.grid, cfg.eps, cfg.T_min,
                                              cfg.samples_per_box, cfg.time_samples,
                                              eps_conley=cfg.eps_conley, workers=workers)
    (out / "graph_conley.json").write_text(json.dumps(gc.to_json()) + "\n")
    (out / "graph_shadow.json").write_text(json.dumps(gs.to_json()) + "\n")
    cg = chain_graph(gc)
    (out / "chaingraph.dot").write_text(cg.to_dot())
    (out / "chaingraph.json").write_text(_dump(cg.to_json()))
    rows = [_csv_header(cfg.grid.dim)]
    rows += _recurrent_rows(cfg.grid, cg, "conley")
    rows += _recurrent_rows(cfg.grid, chain_graph(gs), "shadow")
    _write_recurrent_csv(out / "recurrent.csv", rows)
    payload = report.to_json()
    payload["params"]["seed"] = cfg.seed
    (out / "report.json").write_text(_dump(payload))
    ok = report.all_match
    print("match" if ok else f"mismatch: {len(report.sym_diff)} boxes differ")
    return EXIT_OK if ok else EXIT_MISMATCH


def _load_object(path: Path):
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _read_chain_or_curve(path: Path, spec: SemiflowSpec):
    data = _load_object(path)
    if "samples" in data:
        return "curve", Curve.from_json(data, metric=spec.metric)
    if "points" in data:
        return "chain", ConleyChain.from_json(data)
    raise ConfigError(f"{path} holds neither a curve nor a chain")


def cmd_validate(cfg: RunConfig, out: Path, path: str | None) -> int:
    _need(cfg, "eps")
    sec = cfg.sections.get("validate", {})
    target = path or sec.get("path")
    if target is None:
        raise ConfigError("validate needs a file path")
    kind, obj = _read_chain_or_curve(cfg.resolve(target) if path is None else Path(target), cfg.spec)
    expected = sec.get("type")
    if expected is not None and expected != kind:
        raise ConfigError(f"expected a {expected}, found a {kind}")
    if kind == "curve":
        report = validate_shadow(obj, cfg.spec, cfg.eps, cfg.tau_step)
    else:
        report = validate_conley(obj, cfg.spec, cfg.eps, cfg.T_min)
    text = _dump({"kind": kind, **report.to_json()})
    sys.stdout.write(text)
    (out / "validation.json").write_text(text)
    return EXIT_OK if report.passed else EXIT_MISMATCH


def cmd_convert(cfg: RunConfig, out: Path, path: str | None, direction: str | None,
                loop: str | None) -> int:
    _need(cfg, "eps")
    sec = cfg.sections.get("convert", {})
    src = Path(path) if path else (cfg.resolve(sec["path"]) if "path" in sec else None)
    if src is None:
        raise ConfigError("convert needs a file path")
    direction = direction or sec.get("direction")
    if direction not in ("conley-to-shadow", "shadow-to-conley"):
        raise ConfigError("direction must be 'conley-to-shadow' or 'shadow-to-conley'")
    kind, obj = _read_chain_or_curve(src, cfg.spec)
    if direction == "conley-to-shadow":
        if kind != "chain":
            raise ConfigError("conley-to-shadow needs a chain file")
        curve = conley_to_shadow(obj, cfg.spec, cfg.h)
        (out / "curve.json").write_text(curve.to_json() + "\n")
        report = validate_shadow(curve, cfg.spec, cfg.eps, cfg.tau_step)
    else:
        if kind != "curve":
            raise ConfigError("shadow-to-conley needs a curve file")
        loop_path = Path(loop) if loop else (cfg.resolve(sec["loop"]) if "loop" in sec else None)
        loop_curve = None
        if loop_path is not None:
            _, loop_curve = _read_chain_or_curve(loop_path, cfg.spec)
        chain = shadow_to_conley(obj, loop_curve, cfg.spec, cfg.eps, cfg.T_min)
        (out / "chain.json").write_text(chain.to_json() + "\n")
        report = validate_conley(chain, cfg.spec, cfg.eps, cfg.T_min)
    text = _dump({"direction": direction, **report.to_json()})
    sys.stdout.write(text)
    (out / "validation.json").write_text(text)
    return EXIT_OK if report.passed else EXIT_MISMATCH


def cmd_perturb(cfg: RunConfig, out: Path) -> int:
    sec = cfg.sections.get("perturb")
    if sec is None:
        raise ConfigError("perturb needs a 'perturb' section")
    for k in ("x0", "T", "signal"):
        if k not in sec:
            raise ConfigError(f"perturb section needs '{k}'")
    u = ControlSignal.from_json(sec["signal"])
    h = float(sec.get("h", cfg.h))
    orbit = perturbed_orbit(cfg.spec, u, sec["x0"], float(sec["T"]), h, eps=cfg.eps)
    (out / "curve.json").write_text(orbit.curve.to_json() + "\n")
    cert = certificate(orbit, cfg.spec, u, cfg.tau_step)
    if cfg.eps is not None:
        cert["validation"] = validate_shadow(orbit.curve, cfg.spec, cfg.eps, cfg.tau_step).to_json()
    (out / "certificate.json").write_text(_dump(cert))
    print(f"budget_violated: {json.dumps(cert['budget_violated'])}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="threads for graph construction")

    parser = argparse.ArgumentParser(prog="chainrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="transition graph and chain graph")
    sub.add_parser("compare", parents=[common], help="compare Conley and shadow semantics")
    v = sub.add_parser("validate", parents=[common], help="check a curve or chain")
    v.add_argument("path", nargs="?")
    c = sub.add_parser("convert", parents=[common], help="convert between chain notions")
    c.add_argument("path", nargs="?")
    c.add_argument("--direction", choices=("conley-to-shadow", "shadow-to-conley"))
    c.add_argument("--loop", default=None, help="loop curve at the endpoint (shadow-to-conley)")
    sub.add_parser("perturb", parents=[common], help="perturbed orbit with a budget certificate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out or cfg.output or ".")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "analyze":
            return cmd_analyze(cfg, out, args.workers)
        if args.command == "compare":
            return cmd_compare(cfg, out, args.workers)
        if args.command == "validate":
            return cmd_validate(cfg, out, args.path)
        if args.command == "convert":
            return cmd_convert(cfg, out, args.path, args.direction, args.loop)
        return cmd_perturb(cfg, out)
    except (ChainrecError, ValueError, KeyError, OSError) as exc:
        print(f"chainrec: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
