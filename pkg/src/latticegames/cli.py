"""Batch command-line front end.

Four subcommands: ``solve`` writes value-slice CSVs plus a bounds report,
``converge`` sweeps mesh or noise levels against a reference value,
``simulate`` runs the feedback-coupling replica panel and writes a guarantee
verdict, ``bounds`` emits the constants report alone.

Every output file embeds the resolved-config hash and the seed; reruns with
the same config are bit-identical.  Exit codes: 0 success, 2 usage/config
error, 3 numerical or runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from .errors import GameSpecError, LatticeGamesError
from .games import GameSpec, load_game
from .shift import (Partition, run_extremal_shift, run_extremal_shift_batch,
                    standard_adversaries)
from .simulate import OutcomeEstimate, replica_rng
from .solver import (read_slice_csv, solve_backward, truncate_domain,
                     write_slice_csv)
from .viscous import solve_viscous

_CONFIG_KEYS = ("command", "game", "h", "sigma", "dt_policy", "partition_diam",
                "replicas", "seed", "x0", "kind", "checkpoints", "pad",
                "reference", "adversaries", "dump_trajectories")
_HASH_EXCLUDED = ("out", "threads", "config")

_DEFAULTS = {
    "h": [0.05],
    "sigma": None,
    "dt_policy": "auto",
    "partition_diam": 0.01,
    "replicas": 10000,
    "seed": 0,
    "out": ".",
    "threads": 1,
    "x0": None,
    "kind": "upper",
    "checkpoints": [0.0],
    "pad": 0.5,
    "reference": "closed_form",
    "adversaries": "constant,bang_bang,random,worst_case",
    "dump_trajectories": 0,
}


class UsageError(Exception):
    """Config or flag problem; maps to exit code 2."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _label(x: float) -> str:
    return f"{float(x):g}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latticegames",
                                description="Lattice-chain value solvers and "
                                            "feedback-coupling experiments for "
                                            "zero-sum differential games.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, doc in (("solve", "solve value slices and write CSVs"),
                      ("converge", "sweep h or sigma against a reference"),
                      ("simulate", "replica panel with guarantee verdict"),
                      ("bounds", "write the constants report")):
        s = sub.add_parser(name, help=doc)
        s.add_argument("--game", help="catalog name or JSON game file")
        s.add_argument("--h", nargs="+", type=float, default=None,
                       help="lattice mesh values (spatial step for viscous runs)")
        s.add_argument("--sigma", nargs="+", type=float, default=None,
                       help="viscosity levels; presence selects the PDE model")
        s.add_argument("--dt-policy", dest="dt_policy", default=None,
                       help="'auto' or an explicit time step")
        s.add_argument("--partition-diam", dest="partition_diam", type=float, default=None)
        s.add_argument("--replicas", type=int, default=None)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default=None, help="output directory")
        s.add_argument("--threads", type=int, default=None,
                       help="recorded for provenance; results do not depend on it")
        s.add_argument("--config", default=None, help="JSON file supplying any flag; flags override")
        s.add_argument("--x0", nargs="+", type=float, default=None, help="initial state")
        s.add_argument("--kind", choices=("upper", "lower"), default=None)
        s.add_argument("--checkpoints", nargs="+", type=float, default=None,
                       help="times whose slices are written")
        s.add_argument("--pad", type=float, default=None, help="domain padding beyond reachability")
        s.add_argument("--reference", default=None,
                       help="'closed_form' or a fine-mesh slice CSV for converge")
        s.add_argument("--adversaries", default=None,
                       help="comma list from constant,bang_bang,random,worst_case")
        s.add_argument("--dump-trajectories", dest="dump_trajectories", type=int, default=None,
                       help="log this many replicas per adversary to CSV")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    cfg["command"] = args.command
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}")
        unknown = set(file_cfg) - set(_CONFIG_KEYS) - set(_HASH_EXCLUDED)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in list(_CONFIG_KEYS) + ["out", "threads"]:
        if key == "command":
            continue
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("game") is None:
        raise UsageError("--game is required (catalog name or JSON file)")
    for h in cfg["h"]:
        if not (0.0 < h < 1.0):
            raise UsageError(f"h values must lie in (0,1); got {h}")
    if cfg["sigma"] is not None and any(s < 0 for s in cfg["sigma"]):
        raise UsageError("sigma values must be nonnegative")
    if cfg["replicas"] < 1:
        raise UsageError("replicas must be >= 1")
    if cfg["threads"] < 1:
        raise UsageError("threads must be >= 1")
    if cfg["dt_policy"] != "auto":
        try:
            float(cfg["dt_policy"])
        except (TypeError, ValueError):
            raise UsageError(f"--dt-policy must be 'auto' or a number, got {cfg['dt_policy']!r}")
    return cfg


def config_sha256(cfg: dict) -> str:
    hashed = {k: cfg.get(k) for k in _CONFIG_KEYS}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _load(cfg: dict) -> GameSpec:
    return load_game(cfg["game"])


def _x0(cfg: dict, spec: GameSpec) -> np.ndarray:
    x0 = cfg["x0"] if cfg["x0"] is not None else [0.0] * spec.d
    x0 = np.asarray([float(c) for c in x0])
    if x0.shape != (spec.d,):
        raise UsageError(f"x0 needs {spec.d} coordinates, got {len(x0)}")
    return x0


def _dt(cfg: dict, spec: GameSpec, h: float) -> float | None:
    if cfg["dt_policy"] == "auto":
        return None
    return float(cfg["dt_policy"])


def _meta(cfg: dict, spec: GameSpec, **extra) -> dict:
    meta = {"config_sha256": config_sha256(cfg), "seed": cfg["seed"], "game": spec.name}
    meta.update(extra)
    return meta


def _bounds_path(out: Path, h: float, many: bool) -> Path:
    return out / (f"bounds_h{_label(h)}.json" if many else "bounds.json")


def _write_bounds(cfg: dict, spec: GameSpec, out: Path) -> None:
    hs = cfg["h"]
    sigma = cfg["sigma"][0] if cfg["sigma"] else None
    for h in hs:
        report = bounds_mod.assemble(spec, h, sigma, seed=cfg["seed"])
        payload = report.to_dict()
        payload["config_sha256"] = config_sha256(cfg)
        _bounds_path(out, h, len(hs) > 1).write_text(json.dumps(payload, indent=2) + "\n")


def cmd_solve(cfg: dict) -> int:
    spec = _load(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    x0 = _x0(cfg, spec)
    checkpoints = [float(t) for t in cfg["checkpoints"]]
    many = len(cfg["h"]) > 1
    for h in cfg["h"]:
        domain = truncate_domain(spec, x0, h, pad=cfg["pad"])
        if cfg["sigma"]:
            for sigma in cfg["sigma"]:
                res = solve_viscous(spec, domain, sigma, kind=cfg["kind"],
                                    dt=_dt(cfg, spec, h), checkpoints=checkpoints)
                for t in checkpoints:
                    grid = res.slice_at(t)
                    tag = f"_h{_label(h)}" if many else ""
                    name = f"psi_{cfg['kind']}_t{_label(t)}{tag}_s{_label(sigma)}.csv"
                    write_slice_csv(grid, out / name,
                                    _meta(cfg, spec, kind=cfg["kind"], sigma=sigma,
                                          dx=h, dt=res.dt))
        else:
            res = solve_backward(spec, domain, kind=cfg["kind"],
                                 dt=_dt(cfg, spec, h), checkpoints=checkpoints)
            for t in checkpoints:
                grid = res.slice_at(t)
                tag = f"_h{_label(h)}" if many else ""
                name = f"eta_{cfg['kind']}_t{_label(t)}{tag}.csv"
                write_slice_csv(grid, out / name,
                                _meta(cfg, spec, kind=cfg["kind"], h=h, dt=res.dt))
    _write_bounds(cfg, spec, out)
    return 0


def cmd_bounds(cfg: dict) -> int:
    spec = _load(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_bounds(cfg, spec, out)
    hs = cfg["h"]
    sigma = cfg["sigma"][0] if cfg["sigma"] else None
    for h in hs:
        report = bounds_mod.assemble(spec, h, sigma, seed=cfg["seed"])
        txt = f"config_sha256={config_sha256(cfg)}\n" + report.to_text()
        path = out / (f"bounds_h{_label(h)}.txt" if len(hs) > 1 else "bounds.txt")
        path.write_text(txt)
    return 0


def _reference_values(cfg: dict, spec: GameSpec, points: np.ndarray) -> np.ndarray:
    """Reference Val(0, x) on the given points: catalog closed form, or a
    fine-mesh slice CSV whose lattice must contain the points."""
    ref = cfg["reference"]
    if ref == "closed_form":
        if spec.closed_form is None:
            raise UsageError(
                f"game '{spec.name}' has no closed form; pass --reference FILE")
        return np.array([spec.closed_form(0.0, x) for x in points])
    path = Path(ref)
    if not path.exists():
        raise UsageError(f"reference file not found: {ref}")
    meta = {}
    for line in path.read_text().splitlines():
        if line.startswith("# ") and "=" in line:
            k, v = line[2:].split("=", 1)
            meta[k] = v
    if "h" not in meta and "dx" not in meta:
        raise UsageError("reference file lacks an 'h' or 'dx' metadata line")
    h_ref = float(meta.get("h", meta.get("dx")))
    grid, _ = read_slice_csv(path, h_ref)
    return np.array([grid.value_at(x) for x in points])


def _eval_points(spec: GameSpec, domain) -> np.ndarray:
    """Error metric points: all lattice nodes with max-norm <= 1."""
    states = domain.states()
    keep = np.max(np.abs(states), axis=1) <= 1.0 + 1e-12
    return states[keep]


def cmd_converge(cfg: dict) -> int:
    spec = _load(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    x0 = _x0(cfg, spec)
    rows = []
    if cfg["sigma"]:
        dx = cfg["h"][0]
        domain = truncate_domain(spec, x0, dx, pad=cfg["pad"])
        points = _eval_points(spec, domain)
        ref = _reference_values(cfg, spec, points)
        param_kind = "sigma"
        for sigma in cfg["sigma"]:
            res = solve_viscous(spec, domain, sigma, kind=cfg["kind"],
                                dt=_dt(cfg, spec, dx), checkpoints=[0.0])
            grid = res.slice_at(0.0)
            err = float(np.max(np.abs(np.array([grid.value_at(x) for x in points]) - ref)))
            report = bounds_mod.assemble(spec, dx, sigma, seed=cfg["seed"])
            rows.append((sigma, err, report.bound_visc))
    else:
        param_kind = "h"
        for h in cfg["h"]:
            domain = truncate_domain(spec, x0, h, pad=cfg["pad"])
            points = _eval_points(spec, domain)
            ref = _reference_values(cfg, spec, points)
            res = solve_backward(spec, domain, kind=cfg["kind"],
                                 dt=_dt(cfg, spec, h), checkpoints=[0.0])
            grid = res.slice_at(0.0)
            err = float(np.max(np.abs(np.array([grid.value_at(x) for x in points]) - ref)))
            report = bounds_mod.assemble(spec, h, seed=cfg["seed"])
            rows.append((h, err, report.bound_thm2))

    lines = [f"# config_sha256={config_sha256(cfg)}", f"# seed={cfg['seed']}",
             f"# game={spec.name}", f"# param_kind={param_kind}",
             "param,error,paper_bound,bound_satisfied,empirical_order"]
    for i, (param, err, bound) in enumerate(rows):
        ok = "true" if err <= bound else "false"
        if i == 0:
            order = ""
        else:
            p0, e0, _ = rows[i - 1]
            order = (_fmt(np.log(e0 / err) / np.log(p0 / param))
                     if err > 0 and e0 > 0 else "")
        lines.append(f"{_fmt(param)},{_fmt(err)},{_fmt(bound)},{ok},{order}")
    (out / "converge.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_simulate(cfg: dict) -> int:
    spec = _load(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["replicas"] < 2:
        raise UsageError("simulate needs at least 2 replicas for a standard error")
    x0 = _x0(cfg, spec)
    h = cfg["h"][0]

    eta_path = out / f"eta_{cfg['kind']}_t0.csv"
    if not eta_path.exists():
        raise UsageError(f"missing {eta_path.name} in --out; run 'solve' first")
    ref_grid, _ = read_slice_csv(eta_path, h)
    eta_ref = float(ref_grid.value_at(ref_grid.domain.nearest_lattice(x0) * h))

    domain = truncate_domain(spec, x0, h, pad=cfg["pad"])
    eta = solve_backward(spec, domain, kind=cfg["kind"], dt=_dt(cfg, spec, h),
                         checkpoints=None)
    partition = Partition.uniform(0.0, spec.T, cfg["partition_diam"])
    report = bounds_mod.assemble(spec, h, seed=cfg["seed"])
    bound = report.guarantee_thm1

    wanted = [s.strip() for s in cfg["adversaries"].split(",") if s.strip()]
    panel = {a.name: a for a in standard_adversaries(spec)}
    unknown = [w for w in wanted if w not in panel]
    if unknown:
        raise UsageError(f"unknown adversaries {unknown}; choose from {sorted(panel)}")

    lines = [f"# config_sha256={config_sha256(cfg)}", f"# seed={cfg['seed']}",
             f"# game={spec.name}", f"# h={_fmt(h)}",
             f"# partition_diam={_fmt(cfg['partition_diam'])}",
             f"# eta_file={eta_path.name}",
             "adversary,n,mean,std_error,ci_low,ci_high,eta_reference,bound,threshold,pass"]
    for name in wanted:
        adv = panel[name]
        batch = run_extremal_shift_batch(spec, eta, partition, x0, adv,
                                         n_replicas=cfg["replicas"], seed=cfg["seed"])
        est = OutcomeEstimate.from_outcomes(batch.outcomes)
        threshold = eta_ref + bound + 3.0 * est.std_error
        ok = "true" if est.mean <= threshold else "false"
        lines.append(",".join([name, str(est.n), _fmt(est.mean), _fmt(est.std_error),
                               _fmt(est.ci_low), _fmt(est.ci_high), _fmt(eta_ref),
                               _fmt(bound), _fmt(threshold), ok]))
        for i in range(cfg["dump_trajectories"]):
            path = run_extremal_shift(spec, eta, partition, x0, adv,
                                      rng=replica_rng(cfg["seed"], i))
            path.write_csv(out / f"trajectory_{name}_{i}.csv",
                           _meta(cfg, spec, adversary=name, replica=i))
    (out / "simulate.csv").write_text("\n".join(lines) + "\n")
    return 0


_COMMANDS = {"solve": cmd_solve, "converge": cmd_converge,
             "simulate": cmd_simulate, "bounds": cmd_bounds}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[cfg["command"]](cfg)
    except (UsageError, GameSpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LatticeGamesError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # replica or solver failure of any other shape
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
