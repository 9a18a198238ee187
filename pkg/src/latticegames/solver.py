"""Backward minimax solver for value functions of lattice chain games.

The value of the chain game solves a countable system of ODEs: going backward
from the terminal payoff, each lattice value moves with the minimax (upper) or
maximin (lower) of the chain generator applied to the current value slice.
On a truncated box with the freezing boundary policy the system is finite and
an explicit Euler step below the stability ceiling is a convex combination of
current values, which preserves comparison and keeps values inside the range
of the terminal data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .chain import LatticeDomain, kolmogorov_rates, neighbor_tables, RATE_DROP_TOL
from .errors import GameSpecError, ResourceError, StepSizeError, TruncationError
from .games import Control, GameSpec, drift_batch, payoff_batch

VALUE_KINDS = ("upper", "lower")
BOUNDARY_POLICIES = ("freeze", "strict")

# tolerance for snapping times to the integration grid
_TIME_FUZZ = 1e-9


@dataclass(frozen=True)
class ValueGrid:
    """One time slice of lattice values."""

    t: float
    domain: LatticeDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.domain.n_points,):
            raise GameSpecError(
                f"values shape {vals.shape} does not match domain size {self.domain.n_points}"
            )
        if not np.all(np.isfinite(vals)):
            raise GameSpecError(f"non-finite values in slice at t={self.t}")
        object.__setattr__(self, "values", vals)

    def value_at(self, x) -> float:
        return float(self.values[self.domain.index_of_state(x)])


@dataclass(frozen=True)
class SolveResult:
    """Backward solve output: recorded slices ordered by decreasing time."""

    game: str
    kind: str
    h: float
    dt: float
    scheme: str
    boundary: str
    slices: tuple[ValueGrid, ...]

    @property
    def domain(self) -> LatticeDomain:
        return self.slices[0].domain

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.slices])

    def slice_at(self, t: float) -> ValueGrid:
        for s in self.slices:
            if abs(s.t - t) <= _TIME_FUZZ:
                return s
        raise TruncationError(f"no recorded slice at t={t}; have {self.times.tolist()}")

    def slice_at_or_below(self, t: float) -> ValueGrid:
        """Latest recorded slice with slice.t <= t (slices are t-descending)."""
        for s in self.slices:
            if s.t <= t + _TIME_FUZZ:
                return s
        return self.slices[-1]

    def value_at(self, t: float, x) -> float:
        return self.slice_at(t).value_at(x)


def weighted_norm(grid: ValueGrid, other: ValueGrid | None = None) -> float:
    """Mesh-weighted sup norm sup_x |a(x) - b(x)| / (h + ||x||) over the box."""
    diff = grid.values if other is None else grid.values - other.values
    if other is not None and grid.domain != other.domain:
        raise GameSpecError("weighted_norm requires slices on the same domain")
    norms = np.linalg.norm(grid.domain.states(), axis=1)
    return float(np.max(np.abs(diff) / (grid.domain.h + norms)))


def _lattice_floor(value: float, h: float) -> int:
    r = value / h
    rr = round(r)
    return int(rr) if abs(r - rr) < 1e-9 else math.floor(r)


def _lattice_ceil(value: float, h: float) -> int:
    r = value / h
    rr = round(r)
    return int(rr) if abs(r - rr) < 1e-9 else math.ceil(r)


def truncate_domain(spec: GameSpec, x0_box, h: float, t0: float = 0.0, pad: float = 0.5,
                    max_points: int = 4_000_000) -> LatticeDomain:
    """Lattice box that contains everything reachable from the start box.

    The start box is inflated by M1 * (T - t0) + pad per coordinate (the drift
    cannot move the state faster than M1) and rounded outward to lattice
    coordinates.  ``x0_box`` is a point, a (lo, hi) pair for d=1, or a (d, 2)
    array of per-coordinate intervals.
    """
    if not (0.0 <= t0 <= spec.T):
        raise GameSpecError(f"t0={t0} outside [0, {spec.T}]")
    if pad < 0:
        raise GameSpecError("pad must be >= 0")
    box = np.asarray(x0_box, dtype=float)
    if box.ndim == 0:
        box = np.full((spec.d, 2), float(box))
    elif box.ndim == 1:
        if box.shape == (spec.d,):
            box = np.stack([box, box], axis=1)
        elif spec.d == 1 and box.shape == (2,):
            box = box.reshape(1, 2)
        else:
            raise GameSpecError(f"cannot interpret x0_box of shape {box.shape} for d={spec.d}")
    if box.shape != (spec.d, 2) or np.any(box[:, 0] > box[:, 1]):
        raise GameSpecError(f"x0_box must be (d, 2) intervals, got {box!r}")
    radius = spec.M1 * (spec.T - t0) + pad
    lo = tuple(_lattice_floor(box[i, 0] - radius, h) for i in range(spec.d))
    hi = tuple(_lattice_ceil(box[i, 1] + radius, h) for i in range(spec.d))
    n = int(np.prod([b - a + 1 for a, b in zip(lo, hi)]))
    if n > max_points:
        # suggest the coarsest refinement that fits the budget
        suggested = h * (n / max_points) ** (1.0 / spec.d)
        raise ResourceError(
            f"domain would hold {n} points (> budget {max_points}); try h >= {suggested:.3g}"
        )
    return LatticeDomain(h=h, lo=lo, hi=hi)


# ---------------------------------------------------------------------------
# vectorized Hamiltonian sweeps


def _generator_field(values: np.ndarray, spec: GameSpec, t: float, domain: LatticeDomain,
                     states: np.ndarray, u: Control, v: Control,
                     up: np.ndarray, down: np.ndarray) -> np.ndarray:
    """Generator applied to a whole slice for one fixed control pair."""
    f = drift_batch(spec, t, states, u, v)
    h = domain.h
    out = np.zeros(len(values))
    for i in range(spec.d):
        fi = f[:, i]
        pos = fi > RATE_DROP_TOL
        neg = fi < -RATE_DROP_TOL
        nbr = np.where(pos, values[up[i]], np.where(neg, values[down[i]], values))
        rate = np.where(pos | neg, np.abs(fi) / h, 0.0)
        out += rate * (nbr - values)
    return out


def hamiltonian_field(values: np.ndarray, spec: GameSpec, t: float, domain: LatticeDomain,
                      kind: str, states: np.ndarray | None = None) -> np.ndarray:
    """Minimax (upper) or maximin (lower) of the generator over both grids."""
    if kind not in VALUE_KINDS:
        raise GameSpecError(f"kind must be one of {VALUE_KINDS}, got {kind!r}")
    if states is None:
        states = domain.states()
    up, down, _ = neighbor_tables(domain)
    # u always minimises and v always maximises; upper commits u first
    # (min_u max_v), lower commits v first (max_v min_u)
    first = spec.u_grid if kind == "upper" else spec.v_grid
    second = spec.v_grid if kind == "upper" else spec.u_grid
    outer = None
    for a in first:
        inner = None
        for b in second:
            u, v = (a, b) if kind == "upper" else (b, a)
            g = _generator_field(values, spec, t, domain, states, u, v, up, down)
            if kind == "upper":
                inner = g if inner is None else np.maximum(inner, g)
            else:
                inner = g if inner is None else np.minimum(inner, g)
        if kind == "upper":
            outer = inner if outer is None else np.minimum(outer, inner)
        else:
            outer = inner if outer is None else np.maximum(outer, inner)
    return outer


def minimax_control_indices(values: np.ndarray, spec: GameSpec, t: float,
                            domain: LatticeDomain, point_indices: np.ndarray,
                            kind: str = "upper") -> np.ndarray:
    """First-player control index attaining min_u max_v of the generator.

    Evaluated only at ``point_indices``; ties resolve to the lowest grid
    index because updates use strict inequality in grid order.
    """
    if kind != "upper":
        raise GameSpecError("feedback selection is defined for the upper construction")
    up, down, _ = neighbor_tables(domain)
    states = domain.states()[point_indices]
    up = up[:, point_indices]
    down = down[:, point_indices]
    sub_values = values  # full slice: neighbour tables index into it
    best = None
    best_idx = None
    for iu, u in enumerate(spec.u_grid):
        inner = None
        for v in spec.v_grid:
            f = drift_batch(spec, t, states, u, v)
            g = np.zeros(len(point_indices))
            for i in range(spec.d):
                fi = f[:, i]
                pos = fi > RATE_DROP_TOL
                neg = fi < -RATE_DROP_TOL
                nbr = np.where(pos, sub_values[up[i]],
                               np.where(neg, sub_values[down[i]], sub_values[point_indices]))
                rate = np.where(pos | neg, np.abs(fi) / domain.h, 0.0)
                g += rate * (nbr - sub_values[point_indices])
            inner = g if inner is None else np.maximum(inner, g)
        if best is None:
            best = inner
            best_idx = np.zeros(len(point_indices), dtype=np.int64)
        else:
            better = inner < best
            best = np.where(better, inner, best)
            best_idx = np.where(better, iu, best_idx)
    return best_idx


def hamiltonian(grid: ValueGrid, spec: GameSpec, t: float, x, kind: str,
                boundary: str = "freeze") -> float:
    """Point evaluation of the discrete Hamiltonian on a value slice."""
    if boundary not in BOUNDARY_POLICIES:
        raise GameSpecError(f"boundary must be one of {BOUNDARY_POLICIES}")
    domain = grid.domain
    idx = domain.index_of_state(x)
    if boundary == "strict":
        # every control pair must keep all its jump targets inside the box
        for u in spec.u_grid:
            for v in spec.v_grid:
                rl = kolmogorov_rates(spec, t, domain.state_of(idx), u, v, domain.h)
                for target in rl.targets:
                    if not domain.contains_state(target):
                        raise TruncationError(
                            f"jump target {target.tolist()} leaves the box at x="
                            f"{domain.state_of(idx).tolist()} under strict boundary policy"
                        )
    out = hamiltonian_field(grid.values, spec, t, domain, kind)
    return float(out[idx])


# ---------------------------------------------------------------------------
# backward integration


def dt_ceiling(spec: GameSpec, h: float) -> float:
    """Largest stable explicit step: per-step outflow rate * dt <= 1/2."""
    return h / (2.0 * spec.d * spec.M1)


def auto_dt(spec: GameSpec, h: float, t_min: float = 0.0) -> float:
    """Largest dt <= ceiling that tiles [t_min, T] with an integer number of steps."""
    span = spec.T - t_min
    n = max(1, math.ceil(span / dt_ceiling(spec, h) * (1.0 - 1e-12)))
    return span / n

def solve_backward(spec: GameSpec, domain: LatticeDomain, *, kind: str = "upper",
                   dt: float | None = None, checkpoints: Sequence[float] | None = None,
                   scheme: str = "euler", boundary: str = "freeze",
                   stability_check: bool = True) -> SolveResult:
    """Integrate the value system backward from the terminal payoff.

    Slices are recorded at checkpoint times snapped *down* to the integration
    grid t_k = T - k*dt (a checkpoint maps to the largest grid time <= it).
    ``checkpoints=None`` records every step down to t=0, which the feedback
    strategy machinery relies on.  Explicit Euler is the reference monotone
    scheme; ``scheme="rk4"`` is a higher-accuracy non-monotone alternative
    under the same step ceiling.
    """
    if kind not in VALUE_KINDS:
        raise GameSpecError(f"kind must be one of {VALUE_KINDS}, got {kind!r}")
    if scheme not in ("euler", "rk4"):
        raise GameSpecError(f"scheme must be 'euler' or 'rk4', got {scheme!r}")
    if boundary not in BOUNDARY_POLICIES:
        raise GameSpecError(f"boundary must be one of {BOUNDARY_POLICIES}")
    if checkpoints is None:
        targets = None
        t_min = 0.0
    else:
        targets = sorted(float(c) for c in checkpoints)
        if not targets:
            raise GameSpecError("checkpoints must be non-empty when given")
        if targets[0] < -_TIME_FUZZ or targets[-1] > spec.T + _TIME_FUZZ:
            raise GameSpecError(f"checkpoints must lie in [0, {spec.T}]")
        t_min = targets[0]
    ceiling = dt_ceiling(spec, domain.h)
    if dt is None:
        dt = auto_dt(spec, domain.h, t_min)
    dt = float(dt)
    if dt <= 0:
        raise GameSpecError(f"dt must be positive, got {dt}")
    if dt > ceiling * (1 + 1e-9):
        raise StepSizeError(
            f"dt={dt:.6g} exceeds the stability ceiling h/(2*d*M1)={ceiling:.6g}"
        )
    if boundary == "strict":
        _assert_strict_feasible(spec, domain, spec.T)

    states = domain.states()
    values = payoff_batch(spec, states).astype(float)
    norms = np.linalg.norm(states, axis=1)
    weights = domain.h + norms
    g_norm = float(np.max(np.abs(values) / weights))
    growth_rate = 3.0 * spec.d * spec.M1

    def record(t: float, vals: np.ndarray) -> ValueGrid:
        return ValueGrid(t=t, domain=domain, values=vals.copy())

    slices: list[ValueGrid] = []
    if targets is None:
        slices.append(record(spec.T, values))
    else:
        # map each checkpoint to its snapped step count k = ceil((T - c)/dt)
        want: dict[int, float] = {}
        for c in targets:
            k = max(0, math.ceil((spec.T - c) / dt - _TIME_FUZZ))
            want.setdefault(k, spec.T - k * dt)
        if 0 in want:
            slices.append(record(want[0], values))
        k_last = max(want)

    t = spec.T
    k = 0
    while True:
        if targets is None:
            if t <= _TIME_FUZZ:
                break
        elif k >= k_last:
            break
        t_next = spec.T - (k + 1) * dt
        if scheme == "euler":
            values = values + dt * hamiltonian_field(values, spec, t, domain, kind, states)
        else:
            k1 = hamiltonian_field(values, spec, t, domain, kind, states)
            k2 = hamiltonian_field(values + 0.5 * dt * k1, spec, t - 0.5 * dt, domain, kind, states)
            k3 = hamiltonian_field(values + 0.5 * dt * k2, spec, t - 0.5 * dt, domain, kind, states)
            k4 = hamiltonian_field(values + dt * k3, spec, t_next, domain, kind, states)
            values = values + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_next
        k += 1
        if stability_check:
            ceiling_norm = g_norm * math.exp(growth_rate * (spec.T - t)) * (1 + 1e-6)
            if not np.all(np.isfinite(values)) or np.max(np.abs(values) / weights) > ceiling_norm:
                raise StepSizeError(
                    f"runaway growth at t={t:.6g}: weighted norm exceeds "
                    f"exp({growth_rate:.3g}*(T-t)) * terminal norm; reduce dt"
                )
        if targets is None or k in want:
            slices.append(record(t, values))

    slices.sort(key=lambda s: -s.t)
    return SolveResult(game=spec.name, kind=kind, h=domain.h, dt=dt, scheme=scheme,
                       boundary=boundary, slices=tuple(slices))


def _assert_strict_feasible(spec: GameSpec, domain: LatticeDomain, t: float) -> None:
    """Strict boundary policy: no control may push any face point outside.

    Checked at the sweep's start time; time-dependent drifts that only turn
    outward later are the caller's responsibility under this policy.
    """
    _, _, interior = neighbor_tables(domain)
    if np.all(interior):
        return
    states = domain.states()[~interior]
    ks = [domain.lattice_of(i) for i in np.flatnonzero(~interior)]
    for u in spec.u_grid:
        for v in spec.v_grid:
            f = drift_batch(spec, t, states, u, v)
            for row, k_vec, fx in zip(states, ks, f):
                for i in range(spec.d):
                    if fx[i] > RATE_DROP_TOL and k_vec[i] == domain.hi[i]:
                        raise TruncationError(
                            f"strict boundary: drift pushes {row.tolist()} out of the box"
                        )
                    if fx[i] < -RATE_DROP_TOL and k_vec[i] == domain.lo[i]:
                        raise TruncationError(
                            f"strict boundary: drift pushes {row.tolist()} out of the box"
                        )


# ---------------------------------------------------------------------------
# CSV serialization: one file per slice, 17 significant digits


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_slice_csv(grid: ValueGrid, path: str | Path, meta: dict | None = None) -> None:
    """Write one slice as CSV: comment metadata lines, header, one row per point."""
    path = Path(path)
    d = grid.domain.d
    lines = []
    for key, val in (meta or {}).items():
        lines.append(f"# {key}={val}")
    lines.append("t," + ",".join(f"x_{i + 1}" for i in range(d)) + ",value")
    states = grid.domain.states()
    for row, val in zip(states, grid.values):
        lines.append(",".join([_fmt(grid.t)] + [_fmt(c) for c in row] + [_fmt(val)]))
    path.write_text("\n".join(lines) + "\n")


def read_slice_csv(path: str | Path, h: float) -> tuple[ValueGrid, dict]:
    """Read a slice CSV back onto its lattice; returns (grid, metadata)."""
    path = Path(path)
    meta: dict[str, str] = {}
    rows: list[list[float]] = []
    header_seen = False
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                meta[key.strip()] = val.strip()
            continue
        if not header_seen:
            header_seen = True
            continue
        rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        raise GameSpecError(f"slice file {path} holds no data rows")
    data = np.asarray(rows)
    t = float(data[0, 0])
    states = data[:, 1:-1]
    vals = data[:, -1]
    ks = np.round(states / h).astype(int)
    if np.max(np.abs(states - h * ks)) > 1e-9 * max(1.0, h):
        raise GameSpecError(f"states in {path} do not sit on a mesh-{h} lattice")
    lo = tuple(int(a) for a in ks.min(axis=0))
    hi = tuple(int(b) for b in ks.max(axis=0))
    domain = LatticeDomain(h=h, lo=lo, hi=hi)
    if domain.n_points != len(vals):
        raise GameSpecError(f"slice file {path} does not cover a full box")
    ordered = np.empty(domain.n_points)
    for k_vec, val in zip(ks, vals):
        ordered[domain.index_of(k_vec)] = val
    return ValueGrid(t=t, domain=domain, values=ordered), meta
