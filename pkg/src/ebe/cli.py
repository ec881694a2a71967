"""Command-line entry point.

Heavy modules are imported inside the subcommands so that ``--threads`` (or
EBE_THREADS) can set the BLAS/OpenMP thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

GRID_KEYS = ("L", "y_min", "Y", "n2", "n3", "ny", "q")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    grid: dict = field(default_factory=dict)
    schedule: list[float] | None = None
    tol: float | None = None
    out: str | None = None
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)


def parse_grid(spec: str) -> dict:
    """``default``, ``solve`` or comma-separated key=value pairs, optionally after a preset.

    ``n=33`` sets all three sizes.
    """
    from .acceptance import GRIDS

    out: dict = {}
    for i, item in enumerate(p.strip() for p in spec.split(",") if p.strip()):
        if "=" not in item:
            if i or item not in GRIDS:
                raise UsageError(f"unknown grid preset {item!r}")
            out.update(GRIDS[item])
            continue
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            if key == "n":
                out.update(n2=int(value), n3=int(value), ny=int(value))
            elif key in ("n2", "n3", "ny"):
                out[key] = int(value)
            elif key in GRID_KEYS:
                out[key] = float(value)
            else:
                raise UsageError(f"unknown grid key {key!r}")
        except ValueError as exc:
            raise UsageError(f"bad grid value {item!r}") from exc
    return out


def parse_schedule(spec: str | None) -> list[float] | None:
    if spec is None or spec == "default":
        return None
    if spec.startswith("steps="):
        from .solver import default_schedule

        return default_schedule(int(spec[6:]))
    try:
        ts = [float(v) for v in spec.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad schedule {spec!r}") from exc
    if any(b >= a for a, b in zip(ts, ts[1:])) or ts[-1] != 0.0 or not 0 < ts[0] <= 1:
        raise UsageError("schedule must decrease from (0, 1] to 0")
    return ts


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("EBE_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be positive")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _load_data(path: str):
    from .polynomials import validate

    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict) or not {"P", "Q", "R"} <= set(raw):
        raise UsageError(f"{path} must hold an object with keys P, Q, R")
    return validate(raw["P"], raw["Q"], raw["R"])


def _grid(cfg: RunConfig):
    from .geometry import build_grid

    return build_grid(**cfg.grid)


def _grid_from_coords(coords: dict):
    from .geometry import Grid3

    y = coords["y"]
    q = float((y[2] - y[1]) / (y[1] - y[0])) if len(y) > 2 else 1.0
    return Grid3(coords["x2"], coords["x3"], y, float(coords["x2"][-1]), float(y[0]), float(y[-1]), q)


def _out_dir(cfg: RunConfig, default: str) -> Path:
    path = Path(cfg.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_matrix(path: Path, grid, M) -> None:
    from .geometry import write_field

    write_field(path, grid, M.reshape(grid.shape + (4,)))


def _read_matrix(path: Path):
    from .geometry import read_field

    coords, vals = read_field(path)
    v = vals[..., 0::2] + 1j * vals[..., 1::2]
    return coords, v.reshape(v.shape[:3] + (2, 2))


# --- subcommands ---------------------------------------------------------------------------


def cmd_charges(args, cfg: RunConfig) -> int:
    from .polynomials import charges

    data = _load_data(args.data)
    _emit({"data": data.to_json(), "charges": charges(data).to_json()})
    return EXIT_OK


def cmd_model(args, cfg: RunConfig) -> int:
    import numpy as np

    from .geometry import write_field
    from .model import model_residual, model_u, model_unitary_triple

    if args.k < 0:
        raise UsageError("--k must be non-negative")
    grid = _grid(cfg)
    X2, X3, Y = grid.mesh
    r, theta = np.hypot(X2, X3), np.arctan2(X3, X2)
    u = model_u(args.k, r, Y)
    res = model_residual(args.k, grid)
    A_theta, phiz, phi1 = model_unitary_triple(args.k, r, Y, theta)
    out = _out_dir(cfg, "ebe-model")
    write_field(out / "u.field", grid, u)
    write_field(out / "residual.field", grid, res)
    for name, arr in (("A_theta", A_theta), ("phi_z", phiz), ("phi_1", phi1)):
        write_field(out / f"{name}.field", grid, np.asarray(arr))
    report = {
        "k": args.k,
        "grid": grid.metadata(),
        "sup_residual_interior": float(np.max(np.abs(res[grid.interior]))),
        "sup_u_minus_log_y": float(np.max(np.abs(u - np.log(Y)))) if args.k == 0 else None,
        "out": str(out),
    }
    _emit(report)
    return EXIT_OK


def cmd_approx(args, cfg: RunConfig) -> int:
    import numpy as np

    from .approx import build_approx, error_report

    data = _load_data(args.data)
    grid = _grid(cfg)
    metric, _ = build_approx(data, grid)
    rep = error_report(metric, grid)
    out = _out_dir(cfg, "ebe-approx")
    _write_matrix(out / "H0.field", grid, metric.H)
    report = {"data": data.to_json(), "grid": grid.metadata(), "error_report": _jsonable(rep), "out": str(out)}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    _emit(report)
    ok = np.isfinite(rep["sup_yM"])
    return EXIT_OK if ok else EXIT_FAIL


def _jsonable(x):
    from .acceptance import _plain

    import numpy as np

    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "to_json"):
        return x.to_json()
    return _plain(x)


def _problem(data, cfg: RunConfig):
    from .approx import build_approx
    from .solver import ContinuityProblem

    grid = _grid(cfg)
    metric, _ = build_approx(data, grid)
    return ContinuityProblem(data, metric.H, grid)


def _hard_invariants(problem, s, tol: float, recorded: float | None = None) -> dict:
    import numpy as np

    from . import matrices as mx
    from .solver import extract_triple, sup_norm

    sym = float(np.max(np.abs(s - mx.herm_traceless(s))))
    fresh = sup_norm(problem.residual(s, 0.0))
    defect = extract_triple(problem.metric(s), problem.data.P, problem.grid)["unitarity_defect"]
    checks = {
        "traceless_hermitian": {"value": sym, "limit": 1e-12},
        "residual": {"value": fresh, "limit": tol},
        "unitarity_defect": {"value": defect, "limit": 1e-8},
    }
    if recorded is not None:
        checks["recorded_residual"] = {"value": abs(fresh - recorded), "limit": 1e-13}
    for c in checks.values():
        c["passed"] = bool(c["value"] <= c["limit"])
    return checks


def cmd_solve(args, cfg: RunConfig) -> int:
    from .errors import ContinuationStall
    from .solver import continuity_solve

    data = _load_data(args.data)
    problem = _problem(data, cfg)
    out = _out_dir(cfg, "ebe-solve")
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    try:
        rec = continuity_solve(data, problem.H0, problem.grid, schedule=cfg.schedule, tol=cfg.tol, s_init=args.init, log=log)
    except ContinuationStall as exc:
        _emit({"error": str(exc), "last_t": exc.last_t})
        return EXIT_FAIL
    (out / "config.json").write_text(cfg.to_json())
    _write_matrix(out / "s.field", problem.grid, rec.s)
    _write_matrix(out / "H.field", problem.grid, rec.H)
    for name in ("A_theta", "A_y", "phi_z", "phi_1"):
        _write_matrix(out / f"{name}.field", problem.grid, rec.triple[name])
    checks = _hard_invariants(problem, rec.s, rec.tol, rec.state.residual)
    report = {**_jsonable(rec.to_json()), "invariants": checks, "out": str(out)}
    (out / "record.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    _emit(report)
    return EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_FAIL


def _load_solution(path: str):
    d = Path(path)
    try:
        cfg = RunConfig.from_json((d / "config.json").read_text())
        record = json.loads((d / "record.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path} is not a solution directory: {exc}") from exc
    return cfg, record


def cmd_verify(args, cfg_cli: RunConfig) -> int:
    import numpy as np

    from . import matrices as mx
    from .donaldson import DonaldsonPath
    from .operators import linearize_apply, linearize_fd
    from .polynomials import validate

    cfg, record = _load_solution(args.solution)
    data = validate(*(record["data"][k] for k in "PQR"))
    problem = _problem(data, cfg)
    _, s = _read_matrix(Path(args.solution) / "s.field")
    checks = _hard_invariants(problem, s, record["tol"], record["final"]["residual"])
    rng = np.random.default_rng(cfg_cli.seed)
    H = problem.metric(s)
    g = mx.cholesky_upper(H)
    lin, convex = [], []
    for _ in range(3):
        sig = mx.herm_traceless(rng.normal(size=s.shape) + 1j * rng.normal(size=s.shape))
        sig[~problem.grid.interior] = 0.0
        S = mx.mul3(mx.inv(g), sig, g)
        exact = linearize_apply(H, problem.phi, problem.grid, S)
        lin.append(float(np.max(np.abs(exact - linearize_fd(H, problem.phi, problem.grid, S))) / np.max(np.abs(exact))))
        convex.append(DonaldsonPath(H, 1e-2 * S, data.P, problem.grid).second(0.0).direct)
    checks["linearization_fd"] = {"value": max(lin), "limit": 1e-5, "passed": max(lin) <= 1e-5}
    worst = min(convex) / record["scale"]
    checks["second_variation"] = {"value": worst, "limit": -1e-8, "passed": worst >= -1e-8}
    _emit({"solution": args.solution, "invariants": checks})
    return EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_FAIL


def cmd_donaldson(args, cfg: RunConfig) -> int:
    from .donaldson import donaldson
    from .polynomials import validate

    _, rec1 = _load_solution(args.first)
    _, rec2 = _load_solution(args.second)
    if rec1["data"] != rec2["data"]:
        raise UsageError("solutions belong to different data")
    data = validate(*(rec1["data"][k] for k in "PQR"))
    coords, H1 = _read_matrix(Path(args.first) / "H.field")
    _, H2 = _read_matrix(Path(args.second) / "H.field")
    if H1.shape != H2.shape:
        raise UsageError("solutions live on different grids")
    grid = _grid_from_coords(coords)
    rep = donaldson(H1, H2, data.P, grid)
    import numpy as np

    _emit({"F": rep.value, "report": rep.to_json(), "sup_H_difference": float(np.max(np.abs(H1 - H2)))})
    return EXIT_OK


def cmd_greens(args, cfg: RunConfig) -> int:
    import numpy as np

    from .analysis import apriori_decay_check, greens_solve
    from .geometry import read_field, write_field

    coords, vals = read_field(args.f)
    grid = _grid_from_coords(coords)
    f = vals[..., 0]
    u = greens_solve(args.t, f, grid)
    out = _out_dir(cfg, "ebe-greens")
    write_field(out / "u.field", grid, u)
    report = {"t": args.t, "sup_u": float(np.max(np.abs(u))), "grid": grid.metadata(), "out": str(out)}
    if args.beta is not None:
        report["decay"] = apriori_decay_check(args.t, f, grid, args.beta)
    _emit(report)
    return EXIT_OK


def cmd_fit(args, cfg: RunConfig) -> int:
    import numpy as np
    from scipy.interpolate import RegularGridInterpolator

    from .analysis import decay_fit, ray
    from .geometry import read_field

    coords, vals = read_field(args.field)
    mag = np.sqrt(np.sum(vals**2, axis=-1))
    interp = RegularGridInterpolator((coords["x2"], coords["x3"], coords["y"]), mag)
    try:
        parts = [float(v) for v in args.ray.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad ray {args.ray!r}") from exc
    if args.vertical:
        if len(parts) != 2:
            raise UsageError("vertical transects take x2,x3")
        ys = coords["y"][: max(4, len(coords["y"]) // 3)]
        pts = np.stack([np.full_like(ys, parts[0]), np.full_like(ys, parts[1]), ys], axis=-1)
        fit = decay_fit(interp(pts), ys, min_decades=0.0)
    else:
        if len(parts) != 3:
            raise UsageError("rays take three direction components")
        lo, hi, n = args.rho
        pts = ray(parts, np.geomspace(lo, hi, int(n)))
        rhos = np.linalg.norm(pts, axis=-1)
        lows = [coords[k][0] for k in ("x2", "x3", "y")]
        highs = [coords[k][-1] for k in ("x2", "x3", "y")]
        if np.any(pts < lows) or np.any(pts > highs):
            raise UsageError("the ray leaves the grid; lower --rho")
        fit = decay_fit(interp(pts), rhos, part=args.part)
    _emit({"field": args.field, "ray": parts, "vertical": args.vertical, "fit": fit.to_json()})
    return EXIT_OK


def cmd_accept(args, cfg: RunConfig) -> int:
    from . import acceptance

    numbers = None
    if args.only:
        try:
            numbers = [int(v) for v in args.only.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --only {args.only!r}") from exc
        if not set(numbers) <= set(acceptance.CRITERIA):
            raise UsageError(f"criteria are numbered 1..{len(acceptance.CRITERIA)}")
    results = acceptance.run(numbers)
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        # wall times vary between runs and are left out of the file
        payload = [{k: v for k, v in r.to_json().items() if k != "seconds"} for r in results]
        out.write_text(json.dumps(payload, sort_keys=True, indent=2))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_FAIL


# --- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", default="default", help="preset (default, solve) and/or key=value pairs")
    common.add_argument("--schedule", default=None, help="default, steps=N or comma-separated t values")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="RunConfig JSON file; explicit flags override it")

    parser = argparse.ArgumentParser(prog="ebe", description="Extended Bogomolny equation solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("charges", parents=[common], help="charge points of holomorphic data")
    p.add_argument("data")
    p.set_defaults(func=cmd_charges)

    p = sub.add_parser("model", parents=[common], help="dump a model solution")
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("approx", parents=[common], help="approximate metric and its error report")
    p.add_argument("data")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("solve", parents=[common], help="continuity-method solve")
    p.add_argument("data")
    p.add_argument("--init", choices=["zero", "warm"], default="zero")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", parents=[common], help="re-check a solution directory")
    p.add_argument("solution")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("donaldson", parents=[common], help="functional between two solutions")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=cmd_donaldson)

    p = sub.add_parser("greens", parents=[common], help="half-space Green's solve of a field dump")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--f", required=True)
    p.add_argument("--beta", type=float, default=None, help="also run the decay check with this beta")
    p.set_defaults(func=cmd_greens)

    p = sub.add_parser("fit", parents=[common], help="decay fit of a field dump along a ray")
    p.add_argument("--field", required=True)
    p.add_argument("--ray", required=True, help="d2,d3,dy (ray) or x2,x3 with --vertical")
    p.add_argument("--rho", type=float, nargs=3, default=(1.0, 8.0, 16), metavar=("MIN", "MAX", "N"))
    p.add_argument("--part", choices=["all", "outer", "lower"], default="all")
    p.add_argument("--vertical", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("accept", parents=[common], help="run the acceptance criteria")
    p.add_argument("--only", default=None, help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_accept)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_json(Path(args.config).read_text())
    argv_flags = set(getattr(args, "_explicit", ()))
    if not args.config or "grid" in argv_flags:
        cfg.grid = parse_grid(args.grid)
    if not args.config or "schedule" in argv_flags:
        cfg.schedule = parse_schedule(args.schedule)
    for key in ("tol", "out"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    if not args.config or "seed" in argv_flags:
        cfg.seed = args.seed
    cfg.data = getattr(args, "data", None)
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._explicit = [a[2:].split("=")[0] for a in argv if a.startswith("--")]
    try:
        _set_threads(args.threads)
        cfg = _config(args)
        if args.command == "solve" and args.init == "zero":
            args.init = None
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"ebe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        from .errors import BadGrading, InvalidData

        if isinstance(exc, (InvalidData, BadGrading, FileNotFoundError)):
            print(f"ebe: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
