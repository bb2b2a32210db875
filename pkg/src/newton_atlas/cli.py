"""Command-line front end: ``render``, ``pipeline`` and ``validate``.

Exit codes: 0 ok, 1 validation failure, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .basins import ROOT_TOL, Viewport, channel_diagram, render_basins, trace_to_pixels, write_image
from .core import load_roots, newton_map_from_roots
from .errors import ConfigError, NumericError
from .planar import INFINITY, PlanarGraph, graph_map_from_json
from .planar import validate_abstract_channel_diagram, validate_abstract_newton_graph
from .report import ValidationReport

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

TOLERANCE_KEYS = {"root": ROOT_TOL, "hausdorff": 1e-5}
OVERLAYS = ("channel", "newton-graph", "trees", "rays", "extended")


@dataclass
class RunConfig:
    roots: Path | None = None
    viewport: str = "0,0,4"
    res: int = 512
    max_iter: int = 100
    level: int = 6
    seed: int = 0
    out: Path | None = None
    overlays: list = field(default_factory=list)
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_KEYS))
    threads: int | None = None

    def check(self) -> "RunConfig":
        if self.res < 64:
            raise ConfigError(f"--res must be at least 64, got {self.res}")
        if self.max_iter < 1:
            raise ConfigError("--max-iter must be positive")
        if self.level < 0:
            raise ConfigError("--level must be non-negative")
        for k, v in self.tolerances.items():
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"tolerance {k} must be positive, got {v}")
        for name, _ in self.parsed_overlays():
            if name not in OVERLAYS:
                raise ConfigError(f"unknown overlay {name!r}; choose from {', '.join(OVERLAYS)}")
        self.viewport_at(self.res)
        return self

    def parsed_overlays(self) -> list:
        out = []
        for item in self.overlays:
            name, _, arg = item.partition(":")
            if arg and not arg.isdigit():
                raise ConfigError(f"overlay argument must be a level, got {item!r}")
            out.append((name, int(arg) if arg else None))
        return out

    def viewport_at(self, res: int) -> Viewport:
        try:
            vp = Viewport.parse(self.viewport, res)
        except ValueError as exc:
            raise ConfigError(f"--viewport expects cx,cy,w: {exc}") from exc
        if not vp.width > 0:
            raise ConfigError("viewport width must be positive")
        return vp


def _tolerance(text: str) -> tuple:
    key, sep, val = text.partition("=")
    if not sep or key not in TOLERANCE_KEYS:
        raise ConfigError(f"--tolerance expects one of {sorted(TOLERANCE_KEYS)} as key=value, got {text!r}")
    try:
        return key, float(val)
    except ValueError as exc:
        raise ConfigError(f"bad tolerance value {val!r}") from exc


def _threads() -> int | None:
    raw = os.environ.get("NEWTON_ATLAS_THREADS")
    if raw is None or raw == "":
        return None
    if not raw.isdigit() or int(raw) < 1:
        raise ConfigError(f"NEWTON_ATLAS_THREADS must be a positive integer, got {raw!r}")
    return int(raw)


def _cap_threads(n: int | None) -> None:
    """Cap BLAS/OpenMP pools; the package itself runs in one thread."""
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    threadpool_limits(n)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def dumps(data) -> str:
    """Deterministic JSON: sorted keys, fixed separators, numpy scalars unwrapped."""
    return json.dumps(data, sort_keys=True, indent=1, default=_jsonable)


def _write(path: Path, text: str) -> None:
    path.write_text(text + "\n")


def _newton_map(cfg: RunConfig):
    if cfg.roots is None:
        raise ConfigError("--roots is required")
    return newton_map_from_roots(load_roots(cfg.roots))


# ---------------------------------------------------------------------------
# render


def _shade(level: int, top: int) -> tuple:
    # level 0 white, deeper levels fade toward grey
    t = 0 if top == 0 else level / top
    v = int(round(255 - 110 * t))
    return (v, v, v)


def cmd_render(cfg: RunConfig) -> int:
    nmap = _newton_map(cfg)
    vp = cfg.viewport_at(cfg.res)
    grid = render_basins(nmap, vp, cfg.max_iter, cfg.tolerances["root"])
    layers, summary = [], []
    ext = None
    for name, arg in cfg.parsed_overlays():
        if name == "channel":
            g = channel_diagram(nmap)
            for e in g.edges.values():
                layers += [(run, {"color": (255, 255, 255), "width": 2}) for run in trace_to_pixels(vp, e.trace)]
            summary.append({"overlay": "channel", "edges": len(g.edges)})
        elif name == "newton-graph":
            from .newton_graph import NewtonGraphBuilder, _edge_level

            n = cfg.level if arg is None else arg
            g = NewtonGraphBuilder(nmap).level(n).graph
            classes = {}
            for e in sorted(g.edges.values(), key=lambda e: -_edge_level(e.id)):
                k = _edge_level(e.id)
                style = {"color": _shade(k, n), "width": max(1, n + 1 - k)}
                classes.setdefault(k, style["width"])
                layers += [(run, style) for run in trace_to_pixels(vp, e.trace)]
            summary.append({"overlay": f"newton-graph:{n}", "edges": len(g.edges),
                            "line_weights": {str(k): w for k, w in sorted(classes.items())}})
        else:
            if ext is None:
                from .extended import end_to_end, ensure_postcritically_finite

                nmap, _ = ensure_postcritically_finite(nmap)
                ext = end_to_end(nmap, seed=cfg.seed, max_level=cfg.level)
            want = {"trees": ("H",), "rays": ("R",), "extended": ("N", "H", "R")}[name]
            colors = {"N": (255, 255, 255), "H": (40, 200, 60), "R": (220, 40, 40)}
            count = 0
            for e in ext.graph.edges.values():
                if e.etype in want:
                    count += 1
                    layers += [(run, {"color": colors[e.etype], "width": 2}) for run in trace_to_pixels(vp, e.trace)]
            summary.append({"overlay": name, "edges": count})
    out = cfg.out or Path("basins.png")
    write_image(grid.colors(), out, layers)
    print(dumps({"image": str(out), "shape": list(vp.shape), "overlays": summary}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline


def cmd_pipeline(cfg: RunConfig) -> int:
    from .core import verify_head
    from .extended import edge_dynamics, end_to_end, ensure_postcritically_finite, validate_extended
    from .renormalization import validate_abstract_extended_hubbard_tree

    nmap = _newton_map(cfg)
    nmap, pcf = ensure_postcritically_finite(nmap)
    ext = end_to_end(nmap, seed=cfg.seed, max_level=cfg.level)
    out = cfg.out or Path("atlas-out")
    out.mkdir(parents=True, exist_ok=True)

    _write(out / "roots.json", dumps({"roots": [[float(z.real), float(z.imag)] for z in nmap.roots]}))
    _write(out / "channel.json", dumps(ext.builder.levels[0].graph.to_json()))
    for n in range(ext.level + 1):
        lev = ext.builder.level(n)
        data = lev.graph.to_json()
        data["maps"] = [lev.self_map().to_json()]
        _write(out / f"newton-graph-{n}.json", dumps(data))
    for t in ext.trees:
        _write(out / f"hubbard-tree-{t.index}.json", dumps(t.spec.to_json()))
    _write(out / "extended.json", dumps(ext.to_json()))

    reports = [verify_head(nmap)]
    reports += [validate_abstract_extended_hubbard_tree(t.spec) for t in ext.trees]
    reports += [validate_extended(ext, cfg.tolerances["hausdorff"]), edge_dynamics(ext, cfg.tolerances["hausdorff"])]
    verdict = all(r.verdict for r in reports)
    report = {
        "verdict": verdict,
        "level": ext.level,
        "pcf": {"refined": pcf["refined"], "orbits": {str(k): v for k, v in pcf["orbits"].items()}},
        "reports": [r.to_dict() for r in reports],
    }
    _write(out / "report.json", dumps(report))
    for r in reports:
        print(r.summary())
    print(f"verdict: {'PASS' if verdict else 'FAIL'}")
    return EXIT_OK if verdict else EXIT_INVALID


# ---------------------------------------------------------------------------
# validate


def validate_json(data: dict) -> ValidationReport:
    """Run the validator matching the graph's declared kind."""
    kind = data.get("kind")
    try:
        g = PlanarGraph.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed graph JSON: {exc}") from exc
    maps = data.get("maps") or []
    if kind == "channel-diagram":
        d = sum(1 for v in g.vertices.values() if v.kind != INFINITY)
        return validate_abstract_channel_diagram(g, d)
    if kind == "newton-graph":
        if not maps:
            raise ConfigError("newton-graph file carries no self map")
        f = graph_map_from_json(g, g, maps[0])
        delta = [e for e in g.edges if g.edges[e].data.get("level", e.count("/")) == 0]
        return validate_abstract_newton_graph(g, f, int(data.get("level", 0)), delta)
    if kind == "hubbard-tree":
        from .renormalization import HubbardTreeSpec, validate_abstract_extended_hubbard_tree

        if not maps:
            raise ConfigError("hubbard-tree file carries no tree map")
        spec = HubbardTreeSpec(g, graph_map_from_json(g, g, maps[0]), int(data.get("degree", 1)),
                               int(data.get("cycle_type", 1)), bool(data.get("degenerate", False)))
        return validate_abstract_extended_hubbard_tree(spec)
    if kind == "extended-newton-graph":
        from .extended import validate_extended_json

        return validate_extended_json(data)
    raise ConfigError(f"unknown graph kind {kind!r}")


def cmd_validate(path: Path) -> int:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not hold a graph object")
    rep = validate_json(data)
    print(rep.summary())
    return EXIT_OK if rep.verdict else EXIT_INVALID


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="newton-atlas", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--roots", type=Path, help="JSON file {\"roots\": [[re, im], ...]}")
        sp.add_argument("--viewport", default="0,0,4", help="cx,cy,w")
        sp.add_argument("--res", type=int, default=512)
        sp.add_argument("--max-iter", type=int, default=100)
        sp.add_argument("--level", type=int, default=6)
        sp.add_argument("--seed", type=int, default=0, help="which admissible ray to use")
        sp.add_argument("--out", type=Path, help=out_help)
        sp.add_argument("--overlay", action="append", default=[],
                        help="channel | newton-graph[:N] | trees | rays | extended (repeatable)")
        sp.add_argument("--tolerance", action="append", default=[], metavar="K=V",
                        help=f"override a tolerance ({', '.join(sorted(TOLERANCE_KEYS))})")

    common(sub.add_parser("render", help="basin image with optional overlays"), "image path (.png or .ppm)")
    common(sub.add_parser("pipeline", help="build and validate the extended Newton graph"), "bundle directory")
    v = sub.add_parser("validate", help="validate a graph JSON file by its declared kind")
    v.add_argument("graph", type=Path)
    return p


def config_from_args(args) -> RunConfig:
    tol = dict(TOLERANCE_KEYS)
    tol.update(_tolerance(t) for t in args.tolerance)
    return RunConfig(
        roots=args.roots,
        viewport=args.viewport,
        res=args.res,
        max_iter=args.max_iter,
        level=args.level,
        seed=args.seed,
        out=args.out,
        overlays=list(args.overlay),
        tolerances=tol,
        threads=_threads(),
    ).check()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            _cap_threads(_threads())
            return cmd_validate(args.graph)
        cfg = config_from_args(args)
        _cap_threads(cfg.threads)
        return cmd_render(cfg) if args.command == "render" else cmd_pipeline(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
