"""Zero-sum differential game definitions over finite control grids.

A game couples a controlled drift field ``f(t, x, u, v)`` with a terminal
payoff ``g(x)`` that player one (control ``u``) minimises and player two
(control ``v``) maximises over a fixed horizon ``[0, T]``.  Both players pick
controls from finite grids, so every minimax quantity in this package is an
exhaustive enumeration, never a continuous optimisation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import GameSpecError

# A control is a float (scalar channel) or a tuple of floats (vector channel).
Control = float | tuple[float, ...]

DriftFn = Callable[[float, np.ndarray, Control, Control], np.ndarray]
PayoffFn = Callable[[np.ndarray], np.ndarray]


def _as_control(value) -> Control:
    if np.isscalar(value):
        return float(value)
    seq = tuple(float(c) for c in value)
    if len(seq) == 1:
        return seq[0]
    return seq


def _control_dim(c: Control) -> int:
    return 1 if isinstance(c, float) else len(c)


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of one game instance.

    Attributes
    ----------
    name:      short identifier used in file names and reports.
    d:         state dimension.
    T:         horizon; play happens on [0, T].
    drift:     ``f(t, x, u, v) -> dx/dt``; must accept ``x`` of shape (d,) and,
               when ``vectorized`` is set, batches of shape (n, d).
    u_grid:    finite control grid of the minimising player.
    v_grid:    finite control grid of the maximising player.
    payoff:    terminal payoff ``g(x)``; accepts (d,) and (n, d) batches.
    R:         Lipschitz constant of ``g``.
    M1:        uniform bound on ``max(||f||, 1)``-type magnitudes: sampled
               drifts must satisfy ``||f|| <= M1``.
    K1:        Lipschitz constant of ``f`` in the state variable.
    vectorized: whether ``drift`` accepts (n, d) state batches.
    closed_form: optional exact value function ``(t, x) -> value`` used as a
               convergence reference; only catalog games carry one.
    """

    name: str
    d: int
    T: float
    drift: DriftFn
    u_grid: tuple[Control, ...]
    v_grid: tuple[Control, ...]
    payoff: PayoffFn
    R: float
    M1: float
    K1: float
    vectorized: bool = False
    closed_form: Callable[[float, np.ndarray], float] | None = None

    def __post_init__(self):
        if self.d < 1:
            raise GameSpecError(f"state dimension must be >= 1, got {self.d}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise GameSpecError(f"horizon T must be positive, got {self.T}")
        if not self.u_grid or not self.v_grid:
            raise GameSpecError("control grids must be non-empty")
        for label, bound in (("R", self.R), ("M1", self.M1)):
            if not (bound > 0 and math.isfinite(bound)):
                raise GameSpecError(f"{label} must be positive, got {bound}")
        if not (self.K1 >= 0 and math.isfinite(self.K1)):
            raise GameSpecError(f"K1 must be >= 0, got {self.K1}")
        object.__setattr__(self, "u_grid", tuple(_as_control(u) for u in self.u_grid))
        object.__setattr__(self, "v_grid", tuple(_as_control(v) for v in self.v_grid))


@dataclass(frozen=True)
class IsaacsReport:
    """Worst sampled gap between minimax and maximin of <xi, f(t, x, u, v)>."""

    max_gap: float
    n_samples: int
    seed: int


# ---------------------------------------------------------------------------
# evaluation with validation


def _check_time(spec: GameSpec, t: float) -> float:
    t = float(t)
    if not (-1e-12 <= t <= spec.T + 1e-12):
        raise GameSpecError(f"time {t} outside [0, {spec.T}]")
    return t


def _check_state(spec: GameSpec, x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (spec.d,):
        raise GameSpecError(f"state shape {arr.shape} does not match d={spec.d}")
    if not np.all(np.isfinite(arr)):
        raise GameSpecError(f"state {arr!r} is not finite")
    return arr


def _check_control(spec: GameSpec, c, grid: tuple[Control, ...], label: str) -> Control:
    c = _as_control(c)
    if c not in grid:
        raise GameSpecError(f"{label}={c!r} is not an element of the {label} grid {grid}")
    return c


def eval_drift(spec: GameSpec, t: float, x, u, v) -> np.ndarray:
    """Evaluate f(t, x, u, v) with full argument validation.

    Controls must be exact elements of the respective grids; anything else is
    rejected so that a mistyped control never silently plays a nearby one.
    """
    t = _check_time(spec, t)
    x = _check_state(spec, x)
    u = _check_control(spec, u, spec.u_grid, "u")
    v = _check_control(spec, v, spec.v_grid, "v")
    out = np.atleast_1d(np.asarray(spec.drift(t, x, u, v), dtype=float))
    if out.shape != (spec.d,):
        raise GameSpecError(f"drift returned shape {out.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(out)):
        raise GameSpecError(f"drift not finite at t={t}, x={x!r}, u={u!r}, v={v!r}")
    return out


def eval_payoff(spec: GameSpec, x) -> float:
    """Evaluate the terminal payoff g(x) with validation."""
    x = _check_state(spec, x)
    val = float(np.asarray(spec.payoff(x)))
    if not math.isfinite(val):
        raise GameSpecError(f"payoff not finite at x={x!r}")
    return val


def drift_batch(spec: GameSpec, t: float, states: np.ndarray, u: Control, v: Control) -> np.ndarray:
    """Drift evaluated on an (n, d) batch of states for fixed controls.

    Falls back to a per-row loop when the drift is not marked vectorized.
    No grid-membership validation here: hot path used by solvers.
    """
    states = np.asarray(states, dtype=float)
    if spec.vectorized:
        out = np.asarray(spec.drift(t, states, u, v), dtype=float)
        if out.shape != states.shape:
            raise GameSpecError(
                f"vectorized drift returned shape {out.shape}, expected {states.shape}"
            )
        return out
    return np.stack([np.asarray(spec.drift(t, row, u, v), dtype=float) for row in states])


def payoff_batch(spec: GameSpec, states: np.ndarray) -> np.ndarray:
    """Payoff on an (n, d) batch; catalog payoffs broadcast natively."""
    states = np.asarray(states, dtype=float)
    out = np.asarray(spec.payoff(states), dtype=float)
    if out.shape == states.shape[:1]:
        return out
    # non-broadcasting payoff: evaluate row by row
    return np.array([float(spec.payoff(row)) for row in states])


def check_isaacs(spec: GameSpec, n_samples: int = 200, seed: int = 0, box: float = 2.0) -> IsaacsReport:
    """Sample the gap between min-max and max-min of <xi, f(t, x, u, v)>.

    Sampling scheme (fixed so results are reproducible): for each sample draw
    t ~ U(0, T), then x ~ U(-box, box)^d, then xi ~ U(-1, 1)^d, from
    ``numpy.random.default_rng(seed)`` in that order.  The gap at each sample
    is produced by exhaustive enumeration over both control grids.
    """
    if n_samples < 1:
        raise GameSpecError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        t = rng.uniform(0.0, spec.T)
        x = rng.uniform(-box, box, size=spec.d)
        xi = rng.uniform(-1.0, 1.0, size=spec.d)
        pay = np.empty((len(spec.u_grid), len(spec.v_grid)))
        for i, u in enumerate(spec.u_grid):
            for j, v in enumerate(spec.v_grid):
                pay[i, j] = float(np.dot(xi, spec.drift(t, x, u, v)))
        minmax = pay.max(axis=1).min()
        maxmin = pay.min(axis=0).max()
        worst = max(worst, abs(minmax - maxmin))
    return IsaacsReport(max_gap=worst, n_samples=n_samples, seed=seed)


# ---------------------------------------------------------------------------
# drift and payoff factories (all vectorized over (n, d) state batches)


def drift_control_sum() -> DriftFn:
    """One-dimensional drift dx/dt = u + v."""

    def f(t, x, u, v):
        return np.full_like(np.asarray(x, dtype=float), u + v)

    return f


def drift_rotation_mix() -> DriftFn:
    """Two-dimensional drift (v*x2 - u, u*x1 + v)."""

    def f(t, x, u, v):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([v * x2 - u, u * x1 + v], axis=-1)

    return f


def drift_affine(a: Sequence[Sequence[float]], bu: Sequence[Sequence[float]],
                 bv: Sequence[Sequence[float]], c: Sequence[float]) -> DriftFn:
    """Affine drift A x + Bu u + Bv v + c with matrix coefficients."""
    A = np.asarray(a, dtype=float)
    Bu = np.asarray(bu, dtype=float)
    Bv = np.asarray(bv, dtype=float)
    cc = np.asarray(c, dtype=float)
    d = cc.shape[0]
    if A.shape != (d, d) or Bu.shape[0] != d or Bv.shape[0] != d:
        raise GameSpecError("affine drift coefficient shapes are inconsistent")

    def f(t, x, u, v):
        x = np.asarray(x, dtype=float)
        uu = np.atleast_1d(np.asarray(u, dtype=float))
        vv = np.atleast_1d(np.asarray(v, dtype=float))
        return x @ A.T + Bu @ uu + Bv @ vv + cc

    return f


def drift_zero() -> DriftFn:
    """Motionless dynamics; useful to pin down degenerate behaviour."""

    def f(t, x, u, v):
        return np.zeros_like(np.asarray(x, dtype=float))

    return f


def payoff_norm(center: Sequence[float] | None = None) -> PayoffFn:
    """Euclidean distance to ``center`` (origin by default)."""

    def g(x):
        x = np.asarray(x, dtype=float)
        if center is not None:
            x = x - np.asarray(center, dtype=float)
        return np.linalg.norm(x, axis=-1)

    return g


def payoff_linear(a: Sequence[float]) -> PayoffFn:
    aa = np.asarray(a, dtype=float)

    def g(x):
        return np.asarray(x, dtype=float) @ aa

    return g


def payoff_constant(value: float) -> PayoffFn:
    val = float(value)

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], val)

    return g


# ---------------------------------------------------------------------------
# catalog


def _g1_closed_form(t: float, x) -> float:
    # pursuit on the line with |u| <= 1 against |v| <= 0.5: the minimiser
    # shrinks |x| at net rate 0.5 until the target 0 is reached
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return max(abs(float(x[0])) - 0.5 * (1.0 - t), 0.0)


def _make_g1() -> GameSpec:
    return GameSpec(
        name="g1",
        d=1,
        T=1.0,
        drift=drift_control_sum(),
        u_grid=(-1.0, 0.0, 1.0),
        v_grid=(-0.5, 0.0, 0.5),
        payoff=payoff_norm(),
        R=1.0,
        M1=1.5,
        K1=0.0,
        vectorized=True,
        closed_form=_g1_closed_form,
    )


def _make_g2() -> GameSpec:
    # state-coupled mixing dynamics; constants valid on the sampling box
    # [-2, 2]^2: ||f|| <= sqrt(2) * 3 < 4.5, state-Lipschitz max(|u|,|v|) <= 1
    return GameSpec(
        name="g2",
        d=2,
        T=1.0,
        drift=drift_rotation_mix(),
        u_grid=(-1.0, 0.0, 1.0),
        v_grid=(-1.0, 0.0, 1.0),
        payoff=payoff_norm(),
        R=1.0,
        M1=4.5,
        K1=1.0,
        vectorized=True,
    )


CATALOG: dict[str, Callable[[], GameSpec]] = {
    "g1": _make_g1,
    "g2": _make_g2,
}

g1 = _make_g1
g2 = _make_g2

_DRIFT_KINDS = {
    "control_sum": (lambda params: drift_control_sum(), 1),
    "g1": (lambda params: drift_control_sum(), 1),
    "rotation_mix": (lambda params: drift_rotation_mix(), 2),
    "g2": (lambda params: drift_rotation_mix(), 2),
    "zero": (lambda params: drift_zero(), None),
    "affine": (
        lambda params: drift_affine(params["a"], params["bu"], params["bv"], params["c"]),
        None,
    ),
}

_PAYOFF_KINDS = {
    "norm": lambda params: payoff_norm(params.get("center")),
    "linear": lambda params: payoff_linear(params["a"]),
    "constant": lambda params: payoff_constant(params["value"]),
}


def game_from_dict(data: dict, name: str = "custom") -> GameSpec:
    """Build a GameSpec from a parsed definition dictionary.

    Required keys: d, T, drift{kind,...}, u_grid, v_grid, payoff{kind,...},
    R, M1, K1.  Drift kinds: control_sum (alias g1), rotation_mix (alias g2),
    affine (a, bu, bv, c), zero.  Payoff kinds: norm (optional center),
    linear (a), constant (value).
    """
    missing = [k for k in ("d", "T", "drift", "u_grid", "v_grid", "payoff", "R", "M1", "K1")
               if k not in data]
    if missing:
        raise GameSpecError(f"game definition missing keys: {missing}")
    drift_def = data["drift"]
    kind = drift_def.get("kind") if isinstance(drift_def, dict) else None
    if kind not in _DRIFT_KINDS:
        raise GameSpecError(f"unknown drift kind {kind!r}; known: {sorted(_DRIFT_KINDS)}")
    factory, fixed_d = _DRIFT_KINDS[kind]
    try:
        drift = factory(drift_def)
    except KeyError as exc:
        raise GameSpecError(f"drift kind {kind!r} missing parameter {exc}") from exc
    d = int(data["d"])
    if fixed_d is not None and d != fixed_d:
        raise GameSpecError(f"drift kind {kind!r} requires d={fixed_d}, got {d}")
    payoff_def = data["payoff"]
    pkind = payoff_def.get("kind") if isinstance(payoff_def, dict) else None
    if pkind not in _PAYOFF_KINDS:
        raise GameSpecError(f"unknown payoff kind {pkind!r}; known: {sorted(_PAYOFF_KINDS)}")
    try:
        payoff = _PAYOFF_KINDS[pkind](payoff_def)
    except KeyError as exc:
        raise GameSpecError(f"payoff kind {pkind!r} missing parameter {exc}") from exc
    return GameSpec(
        name=str(data.get("name", name)),
        d=d,
        T=float(data["T"]),
        drift=drift,
        u_grid=tuple(_as_control(u) for u in data["u_grid"]),
        v_grid=tuple(_as_control(v) for v in data["v_grid"]),
        payoff=payoff,
        R=float(data["R"]),
        M1=float(data["M1"]),
        K1=float(data["K1"]),
        vectorized=True,
    )


def load_game(source: str | Path) -> GameSpec:
    """Load a game by catalog name or from a JSON definition file."""
    key = str(source)
    if key in CATALOG:
        return CATALOG[key]()
    path = Path(source)
    if not path.is_file():
        raise GameSpecError(
            f"game {source!r} is neither a catalog name ({sorted(CATALOG)}) nor a file"
        )
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GameSpecError(f"game file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise GameSpecError(f"game file {path} must contain a JSON object")
    return game_from_dict(data, name=path.stem)
