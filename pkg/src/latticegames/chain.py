"""Controlled jump chains on a cubic lattice that mimic a drift field.

Given a drift value f = f(t, x, u, v), the chain at mesh h jumps from x to
x + h*sign(f_i)*e_i at rate |f_i|/h, independently per coordinate.  Its
instantaneous mean velocity therefore equals f exactly, and its quadratic
characteristic is h * sum_i |f_i| -- vanishing linearly in h.  Everything in
this module is defined per (t, x, u, v) point; time stepping lives elsewhere.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GameSpecError, TruncationError
from .games import Control, GameSpec

# components with |f_i| below this are treated as exact zeros (no jump)
RATE_DROP_TOL = 1e-14


def chi(component: float) -> int:
    """Jump direction along one axis: the sign of the drift component."""
    if component > RATE_DROP_TOL:
        return 1
    if component < -RATE_DROP_TOL:
        return -1
    return 0


def _check_mesh(h: float) -> float:
    h = float(h)
    if not (h > 0 and math.isfinite(h)):
        raise GameSpecError(f"mesh h must be positive, got {h}")
    if h >= 1.0:
        warnings.warn(
            f"mesh h={h} >= 1: jump sizes reach outside the unit ball, so the"
            " identification of the chain's mean velocity with the drift relies"
            " on the finite total rate, not on small-jump compensation",
            stacklevel=3,
        )
    return h


@dataclass(frozen=True)
class LatticeDomain:
    """A box of lattice points {h*k : lo <= k <= hi componentwise}.

    ``lo``/``hi`` are inclusive integer lattice coordinates.  Points are
    enumerated in C order of (k - lo), so index 0 is the lower corner.
    """

    h: float
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        _check_mesh(self.h)
        if len(self.lo) != len(self.hi):
            raise GameSpecError("lo and hi must have the same length")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise GameSpecError(f"empty lattice box lo={self.lo} hi={self.hi}")
        object.__setattr__(self, "lo", tuple(int(a) for a in self.lo))
        object.__setattr__(self, "hi", tuple(int(b) for b in self.hi))

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    def index_of(self, k) -> int:
        """Flat index of integer lattice coordinates k (C order)."""
        k = np.asarray(k, dtype=int)
        rel = k - np.asarray(self.lo)
        if np.any(rel < 0) or np.any(k > np.asarray(self.hi)):
            raise TruncationError(f"lattice point {k.tolist()} outside box {self.lo}..{self.hi}")
        return int(np.ravel_multi_index(tuple(rel), self.shape))

    def lattice_of(self, idx: int) -> np.ndarray:
        """Integer lattice coordinates for a flat index."""
        rel = np.unravel_index(int(idx), self.shape)
        return np.asarray(rel, dtype=int) + np.asarray(self.lo)

    def state_of(self, idx: int) -> np.ndarray:
        return self.h * self.lattice_of(idx)

    def states(self) -> np.ndarray:
        """All lattice states as an (n_points, d) array (C order)."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return self.h * np.stack([m.reshape(-1) for m in mesh], axis=1).astype(float)

    def nearest_lattice(self, x) -> np.ndarray:
        """Integer coordinates of the nearest lattice point; ties round down."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([math.ceil(c / self.h - 0.5) for c in x], dtype=int)

    def contains_state(self, x, tol: float = 1e-9) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = np.round(x / self.h).astype(int)
        if np.max(np.abs(x - self.h * k)) > tol * max(1.0, self.h):
            return False
        return bool(np.all(k >= np.asarray(self.lo)) and np.all(k <= np.asarray(self.hi)))

    def index_of_state(self, x, tol: float = 1e-9) -> int:
        """Flat index of an (exactly representable) lattice state."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = np.round(x / self.h).astype(int)
        if np.max(np.abs(x - self.h * k)) > tol * max(1.0, self.h):
            raise TruncationError(f"state {x.tolist()} is not on the mesh-{self.h} lattice")
        return self.index_of(k)


@lru_cache(maxsize=32)
def neighbor_tables(domain: LatticeDomain) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-coordinate neighbour indices with out-of-box moves clamped to self.

    Returns (up, down, interior) where up[i]/down[i] have shape (n_points,)
    and interior marks points whose 2d axis neighbours all lie in the box.
    Clamping to self encodes the freezing boundary policy: a frozen move
    contributes value difference zero.
    """
    shape = domain.shape
    n = domain.n_points
    d = domain.d
    up = np.empty((d, n), dtype=np.int64)
    down = np.empty((d, n), dtype=np.int64)
    interior = np.ones(n, dtype=bool)
    idx = np.arange(n).reshape(shape)
    for i in range(d):
        upper = np.roll(idx, -1, axis=i)
        lower = np.roll(idx, 1, axis=i)
        # clamp the wrapped faces back onto themselves
        sl_hi = [slice(None)] * d
        sl_hi[i] = -1
        sl_lo = [slice(None)] * d
        sl_lo[i] = 0
        upper[tuple(sl_hi)] = idx[tuple(sl_hi)]
        lower[tuple(sl_lo)] = idx[tuple(sl_lo)]
        up[i] = upper.reshape(-1)
        down[i] = lower.reshape(-1)
        face = np.zeros(shape, dtype=bool)
        face[tuple(sl_hi)] = True
        face[tuple(sl_lo)] = True
        interior &= ~face.reshape(-1)
    return up, down, interior


@dataclass(frozen=True)
class RateList:
    """Off-diagonal transition rates out of one source state.

    ``targets`` has shape (m, d); ``rates`` shape (m,).  The implied diagonal
    entry is -total, so every row of the generator matrix sums to zero.
    """

    source: np.ndarray
    targets: np.ndarray
    rates: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.rates))


def jump_measure(spec: GameSpec, t: float, x, u: Control, v: Control, h: float
                 ) -> list[tuple[np.ndarray, float]]:
    """Finite jump measure at (t, x, u, v): [(offset, mass)] per active axis.

    Offsets are h*sign(f_i)*e_i with mass |f_i|/h; components with
    |f_i| < RATE_DROP_TOL are dropped.
    """
    h = _check_mesh(h)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f = np.atleast_1d(np.asarray(spec.drift(t, x, u, v), dtype=float))
    if f.shape != (spec.d,):
        raise GameSpecError(f"drift returned shape {f.shape}, expected ({spec.d},)")
    if not np.all(np.isfinite(f)):
        raise GameSpecError(f"drift not finite at t={t}, x={x.tolist()}")
    out: list[tuple[np.ndarray, float]] = []
    for i in range(spec.d):
        sign = chi(f[i])
        if sign == 0:
            continue
        offset = np.zeros(spec.d)
        offset[i] = h * sign
        out.append((offset, abs(f[i]) / h))
    return out

def kolmogorov_rates(spec: GameSpec, t: float, x, u: Control, v: Control, h: float) -> RateList:
    """One generator-matrix row: targets x + h*sign(f_i)*e_i at rate |f_i|/h."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    measure = jump_measure(spec, t, x, u, v, h)
    if measure:
        offsets = np.stack([m[0] for m in measure])
        rates = np.array([m[1] for m in measure])
    else:
        offsets = np.zeros((0, spec.d))
        rates = np.zeros(0)
    return RateList(source=x, targets=x + offsets, rates=rates)


def apply_generator(values, spec: GameSpec, t: float, x, u: Control, v: Control, h: float) -> float:
    """Generator action sum_i rate_i * (values(target_i) - values(x)).

    ``values`` is a callable on states.  Lookup failures (KeyError/IndexError
    from the callable) become TruncationError: the value table does not cover
    a reachable neighbour.
    """
    rl = kolmogorov_rates(spec, t, x, u, v, h)
    try:
        base = float(values(rl.source))
        acc = 0.0
        for target, rate in zip(rl.targets, rl.rates):
            acc += rate * (float(values(target)) - base)
    except (KeyError, IndexError) as exc:
        raise TruncationError(f"value table missing a neighbour of {rl.source.tolist()}") from exc
    return acc


def chain_characteristics(spec: GameSpec, t: float, x, u: Control, v: Control, h: float
                          ) -> tuple[np.ndarray, float]:
    """Mean velocity and quadratic characteristic of the chain at one point.

    Computed from the jump measure itself: b2 = sum(mass * offset) which
    reproduces the drift componentwise, and sigma2 = sum(mass * ||offset||^2)
    = h * sum_i |f_i|.
    """
    measure = jump_measure(spec, t, x, u, v, h)
    b2 = np.zeros(spec.d)
    sigma2 = 0.0
    for offset, mass in measure:
        b2 += mass * offset
        sigma2 += mass * float(offset @ offset)
    return b2, sigma2
