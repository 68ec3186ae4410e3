"""Domain types for the multi-species biofilm growth model.

State layout used throughout the package: the unknown vector of a system
with ``n`` species is ``[phi_1..phi_n, psi_1..psi_n, phi_0, gamma]``
(length ``2n + 2``), where ``phi_0`` is the empty-phase volume fraction and
``gamma`` the Lagrange multiplier of the total-volume constraint.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

__all__ = [
    "MaterialParams",
    "Schedule",
    "Environment",
    "EnvAt",
    "State",
    "SimConfig",
    "Trajectory",
    "ParamSet",
    "GAMMA_IN_PSI_DEFAULT",
]

# Whether the Lagrange multiplier enters the psi evolution equations.
# The published strong-form equations print "+ gamma" there, but the
# Hamilton-principle constraint c = gamma*(sum phi_l - 1) has no psi
# dependence, and only gamma_in_psi=False reproduces the published Case I
# output statistics (see tests). Kept switchable for the comparison.
GAMMA_IN_PSI_DEFAULT = False


def _farray(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive parameters of an ``n``-species biofilm.

    Parameters
    ----------
    a : (n, n) array
        Symmetric interaction/nutrient coefficient matrix. Off-diagonal
        entries couple species pairs, diagonal entries scale the nutrient
        response of each species.
    b : (n,) array
        Antibiotic sensitivity of each species (diagonal of the
        susceptibility matrix).
    eta : (n,) array
        Rate sensitivity (viscosity) per species, [kg/(m s)], > 0.
    eta_empty : float
        Rate sensitivity of the empty phase, > 0.
    """

    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    eta_empty: float = 1.0

    def __post_init__(self):
        a = _farray(self.a, "a")
        b = _farray(self.b, "b")
        eta = _farray(self.eta, "eta")
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"a must be square, got shape {a.shape}")
        n = a.shape[0]
        if b.shape != (n,) or eta.shape != (n,):
            raise DimensionError(
                f"b and eta must have shape ({n},), got {b.shape} and {eta.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("a must be exactly symmetric")
        if np.any(eta <= 0.0) or not self.eta_empty > 0.0:
            raise ValueError("all eta entries and eta_empty must be > 0")
        a.setflags(write=False)
        b.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "eta_empty", float(self.eta_empty))

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant, nonnegative schedule over time.

    ``values[i]`` applies on the half-open interval ``(times[i], times[i+1]]``
    (and ``values[0]`` also at ``t = 0``), i.e. a new value takes effect
    strictly after its breakpoint time. ``times[0]`` must be 0.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _farray(self.times, "times")
        v = _farray(self.values, "values")
        if t.ndim != 1 or v.shape != t.shape or t.size == 0:
            raise DimensionError("times and values must be equal-length 1-D arrays")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0.0):
            raise ValueError("times must start at 0 and strictly increase")
        if np.any(v < 0.0):
            raise ValueError("schedule values must be >= 0")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float) -> "Schedule":
        return cls(np.array([0.0]), np.array([float(value)]))

    def at(self, t: float) -> float:
        return float(self.values[self._index(np.asarray([t]))[0]])

    def at_many(self, ts) -> np.ndarray:
        return self.values[self._index(np.asarray(ts, dtype=float))]

    def _index(self, ts: np.ndarray) -> np.ndarray:
        # searchsorted('left') - 1 gives the interval (times[i], times[i+1]]
        idx = np.searchsorted(self.times, ts, side="left") - 1
        return np.clip(idx, 0, self.times.size - 1)

    @property
    def is_constant(self) -> bool:
        return self.times.size == 1

    def to_json(self):
        if self.is_constant:
            return float(self.values[0])
        return {"pieces": [[float(t), float(v)] for t, v in zip(self.times, self.values)]}

    @classmethod
    def from_json(cls, obj) -> "Schedule":
        if isinstance(obj, (int, float)):
            return cls.constant(float(obj))
        pieces = obj["pieces"]
        arr = np.asarray(pieces, dtype=float)
        return cls(arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class EnvAt:
    """Instantaneous environment: nutrient and antibiotic levels plus penalty."""

    c_star: float
    alpha_star: float
    k_p: float


@dataclass(frozen=True)
class Environment:
    """Nutrient/antibiotic schedules [m^2/s^2] and the penalty coefficient [J/m^3]."""

    c_star: Schedule
    alpha_star: Schedule
    k_p: float = 1e-4

    def __post_init__(self):
        if self.k_p < 0.0:
            raise ValueError("k_p must be >= 0")

    @classmethod
    def constant(cls, c_star: float, alpha_star: float, k_p: float = 1e-4) -> "Environment":
        return cls(Schedule.constant(c_star), Schedule.constant(alpha_star), k_p)

    def at(self, t: float) -> EnvAt:
        return EnvAt(self.c_star.at(t), self.alpha_star.at(t), self.k_p)


@dataclass(frozen=True)
class State:
    """Internal state at one instant: volume fractions, living fractions,
    empty phase and Lagrange multiplier."""

    phi: np.ndarray
    psi: np.ndarray
    phi_empty: float
    gamma: float = 0.0

    def __post_init__(self):
        phi = _farray(self.phi, "phi")
        psi = _farray(self.psi, "psi")
        if phi.ndim != 1 or psi.shape != phi.shape:
            raise DimensionError("phi and psi must be equal-length 1-D arrays")
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi_empty", float(self.phi_empty))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.phi.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.psi, [self.phi_empty, self.gamma]])

    @classmethod
    def from_vector(cls, x: np.ndarray, n: int) -> "State":
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * n + 2,):
            raise DimensionError(f"state vector must have length {2 * n + 2}")
        return cls(x[:n].copy(), x[n:2 * n].copy(), float(x[2 * n]), float(x[2 * n + 1]))

    def interior(self) -> bool:
        """True if every internal variable lies strictly inside (0, 1)."""
        vals = np.concatenate([self.phi, self.psi, [self.phi_empty]])
        return bool(np.all(vals > 0.0) and np.all(vals < 1.0))

    def constraint_residual(self) -> float:
        return float(self.phi.sum() + self.phi_empty - 1.0)


def initial_state(phi: Sequence[float], psi: Sequence[float] | float = 0.999) -> State:
    """Build a State with the empty phase closing the volume constraint."""
    phi = np.asarray(phi, dtype=float)
    if np.isscalar(psi) or np.asarray(psi).ndim == 0:
        psi = np.full(phi.size, float(psi))
    else:
        psi = np.asarray(psi, dtype=float)
    return State(phi, psi, 1.0 - float(phi.sum()), 0.0)


@dataclass(frozen=True)
class SimConfig:
    """Time-integration configuration."""

    n_species: int
    n_steps: int
    dt: float
    initial_state: State
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.n_species < 1:
            raise ValueError("n_species must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        if not self.newton_tol > 0.0:
            raise ValueError("newton_tol must be > 0")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if self.initial_state.n != self.n_species:
            raise DimensionError("initial_state species count mismatch")
        if not self.initial_state.interior():
            raise ValueError("initial_state must lie strictly inside (0, 1)")

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


class Trajectory:
    """Time series of states, stored as an ``(N+1, 2n+2)`` array.

    Row 0 is the initial state. Accessors return time-major arrays.
    """

    def __init__(self, times: np.ndarray, raw: np.ndarray, n_species: int):
        times = np.asarray(times, dtype=float)
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape != (times.size, 2 * n_species + 2):
            raise DimensionError("raw trajectory shape mismatch")
        self.times = times
        self.raw = raw
        self.n_species = n_species

    def __len__(self) -> int:
        return self.times.size

    @property
    def phi(self) -> np.ndarray:
        return self.raw[:, : self.n_species]

    @property
    def psi(self) -> np.ndarray:
        return self.raw[:, self.n_species: 2 * self.n_species]

    @property
    def phi_empty(self) -> np.ndarray:
        return self.raw[:, 2 * self.n_species]

    @property
    def gamma(self) -> np.ndarray:
        return self.raw[:, 2 * self.n_species + 1]

    @property
    def phi_bar(self) -> np.ndarray:
        """Living volume fraction phi_l * psi_l, shape (N+1, n)."""
        return self.phi * self.psi

    def state(self, k: int) -> State:
        return State.from_vector(self.raw[k], self.n_species)

    def constraint_residuals(self) -> np.ndarray:
        return self.phi.sum(axis=1) + self.phi_empty - 1.0

    def write_csv(self, path) -> None:
        """Export with header ``t,phi_0,phi_1..,psi_1..,phibar_1..,gamma``
        at 17 significant digits."""
        n = self.n_species
        cols = (["t", "phi_0"]
                + [f"phi_{i + 1}" for i in range(n)]
                + [f"psi_{i + 1}" for i in range(n)]
                + [f"phibar_{i + 1}" for i in range(n)]
                + ["gamma"])
        data = np.column_stack([
            self.times, self.phi_empty, self.phi, self.psi, self.phi_bar, self.gamma,
        ])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# Free-parameter bookkeeping


_KIND_A = 0
_KIND_B = 1


class ParamSet:
    """Ordered set of free entries of (A, B), the calibration vector layout.

    The canonical full ordering is the row-major upper triangle of A
    followed by the diagonal of B; for two species that is
    ``a11, a12, a22, b1, b2``. Entries are ``("a", i, j)`` with ``i <= j``
    (0-based) or ``("b", i)``.
    """

    def __init__(self, entries: Iterable[tuple]):
        norm = []
        for e in entries:
            if e[0] == "a":
                _, i, j = e
                if i > j:
                    i, j = j, i
                norm.append(("a", int(i), int(j)))
            elif e[0] == "b":
                norm.append(("b", int(e[1])))
            else:
                raise ValueError(f"unknown parameter entry {e!r}")
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate parameter entries")
        self.entries = tuple(norm)

    @classmethod
    def full(cls, n: int) -> "ParamSet":
        entries = [("a", i, j) for i in range(n) for j in range(i, n)]
        entries += [("b", i) for i in range(n)]
        return cls(entries)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "ParamSet":
        return cls([parse_param_name(name) for name in names])

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamSet) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def names(self) -> list[str]:
        out = []
        for e in self.entries:
            if e[0] == "a":
                out.append(f"a{e[1] + 1}{e[2] + 1}")
            else:
                out.append(f"b{e[1] + 1}")
        return out

    def apply(self, base: MaterialParams, theta: np.ndarray) -> MaterialParams:
        """Return a copy of ``base`` with the free entries set to ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.entries),):
            raise DimensionError(f"theta must have length {len(self.entries)}")
        a = base.a.copy()
        b = base.b.copy()
        for value, e in zip(theta, self.entries):
            if e[0] == "a":
                a[e[1], e[2]] = value
                a[e[2], e[1]] = value
            else:
                b[e[1]] = value
        return replace(base, a=a, b=b)

    def extract(self, params: MaterialParams) -> np.ndarray:
        out = np.empty(len(self.entries))
        for k, e in enumerate(self.entries):
            out[k] = params.a[e[1], e[2]] if e[0] == "a" else params.b[e[1]]
        return out

    def kernel_codes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer encoding consumed by the simulation kernels."""
        kinds = np.empty(len(self.entries), dtype=np.int64)
        iis = np.zeros(len(self.entries), dtype=np.int64)
        jjs = np.zeros(len(self.entries), dtype=np.int64)
        for k, e in enumerate(self.entries):
            if e[0] == "a":
                kinds[k], iis[k], jjs[k] = _KIND_A, e[1], e[2]
            else:
                kinds[k], iis[k], jjs[k] = _KIND_B, e[1], e[1]
        return kinds, iis, jjs


def parse_param_name(name: str) -> tuple:
    """Parse ``"a12"``-style / ``"b4"``-style names (1-based indices)."""
    name = name.strip()
    if name.startswith("a") and len(name) == 3 and name[1:].isdigit():
        return ("a", int(name[1]) - 1, int(name[2]) - 1)
    if name.startswith("b") and name[1:].isdigit():
        return ("b", int(name[1:]) - 1)
    raise ValueError(f"cannot parse parameter name {name!r}")
