"""Static and dynamic parameter sampling.

Static sampling (SPS) holds each parameter configuration constant over a
simulation. Dynamic sampling (DPS) takes the same draw and modulates every
load-type parameter between the space minimum and the drawn value with a
rectified sine, ``(mu - mu_min) |sin(omega t)| + mu_min``. Initial-condition
parameters cannot vary in time and keep their drawn value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "ParameterSpace",
    "ParameterSignal",
    "constant_signal",
    "polynomial_signal",
    "halton",
    "latin_hypercube",
    "sample_points",
    "sample_sps",
    "sample_dps",
    "eval_signal",
    "PHASES",
]

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)
PARAM_KINDS = ("initial", "load")


@dataclass(frozen=True)
class ParameterSpace:
    """Box ``[min_1, max_1] x ... x [min_n, max_n]`` of varied parameters.

    ``kinds`` marks each parameter as ``"initial"`` (initial condition,
    never time-modulated) or ``"load"``.
    """

    bounds: tuple
    names: tuple = ()
    kinds: tuple = ()

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) < 1:
            raise DomainError("parameter space needs at least one parameter")
        for lo, hi in bounds:
            if not lo < hi:
                raise DomainError(f"empty parameter interval [{lo}, {hi}]")
        names = tuple(self.names) or tuple(f"mu{i}" for i in range(len(bounds)))
        kinds = tuple(self.kinds) or ("load",) * len(bounds)
        if len(names) != len(bounds) or len(kinds) != len(bounds):
            raise DomainError("names/kinds must match the number of bounds")
        if any(k not in PARAM_KINDS for k in kinds):
            raise DomainError(f"parameter kinds must be one of {PARAM_KINDS}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)

    @property
    def dim(self):
        return len(self.bounds)

    @property
    def lower(self):
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self):
        return np.array([hi for _, hi in self.bounds])

    def scale(self, unit_points):
        """Map points of the unit cube onto the box."""
        return self.lower + np.asarray(unit_points) * (self.upper - self.lower)

    def contains(self, mu, tol=0.0):
        mu = np.asarray(mu)
        return bool(np.all(mu >= self.lower - tol) and np.all(mu <= self.upper + tol))


@dataclass(frozen=True)
class ParameterSignal:
    """Time-dependent parameter configuration ``mu(t)``.

    ``kind`` is one of

    ``constant``
        ``value(t) = base_point``.
    ``rectified_sine``
        ``(base_point - floor) |sin(omega t)| + floor`` on the entries where
        ``modulated`` is true, ``base_point`` elsewhere. With
        ``phase="cosine"`` the wave is ``|cos(omega t)|`` and starts at the peak.
    ``polynomial``
        ``value(t)[i] = sum_p coefficients[i][p] t**p``; used for the
        hand-written test loads.
    """

    kind: str
    base_point: tuple
    omega: float = 0.0
    floor: tuple = ()
    modulated: tuple = ()
    coefficients: tuple = ()
    provenance: tuple = ()
    phase: str = "sine"

    def __post_init__(self):
        object.__setattr__(self, "base_point", tuple(float(v) for v in self.base_point))
        object.__setattr__(self, "floor", tuple(float(v) for v in self.floor))
        object.__setattr__(self, "modulated", tuple(bool(v) for v in self.modulated))
        object.__setattr__(self, "coefficients",
                           tuple(tuple(float(c) for c in row) for row in self.coefficients))
        object.__setattr__(self, "provenance", tuple(sorted(dict(self.provenance).items())))
        n = len(self.base_point)
        if self.phase not in PHASES:
            raise DomainError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.kind == "rectified_sine":
            if not self.omega > 0:
                raise DomainError("rectified_sine needs omega > 0")
            if len(self.floor) != n:
                raise DomainError("floor must match base_point")
            if not self.modulated:
                object.__setattr__(self, "modulated", (True,) * n)
            elif len(self.modulated) != n:
                raise DomainError("modulated mask must match base_point")
        elif self.kind == "polynomial":
            if len(self.coefficients) != n:
                raise DomainError("one coefficient row per parameter")
        elif self.kind != "constant":
            raise DomainError(f"unknown signal kind {self.kind!r}")

    def value(self, t):
        return eval_signal(self, t)

    def to_dict(self):
        d = {
            "kind": self.kind,
            "base_point": list(self.base_point),
            "omega": self.omega,
            "floor": list(self.floor),
            "modulated": list(self.modulated),
            "coefficients": [list(r) for r in self.coefficients],
            "provenance": dict(self.provenance),
        }
        # the default phase is left out so sine signals keep their digests
        if self.phase != "sine":
            d["phase"] = self.phase
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            base_point=tuple(d["base_point"]),
            omega=float(d.get("omega", 0.0)),
            floor=tuple(d.get("floor", ())),
            modulated=tuple(d.get("modulated", ())),
            coefficients=tuple(tuple(r) for r in d.get("coefficients", ())),
            provenance=tuple(dict(d.get("provenance", {})).items()),
            phase=d.get("phase", "sine"),
        )

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PHASES = ("sine", "cosine")


def constant_signal(values, **provenance):
    return ParameterSignal("constant", tuple(values), provenance=tuple(provenance.items()))


def polynomial_signal(coefficients, **provenance):
    """Polynomial-in-time signal; row ``i`` holds ascending coefficients of entry ``i``."""
    coefficients = [list(np.atleast_1d(c)) for c in coefficients]
    base = [c[0] for c in coefficients]
    return ParameterSignal("polynomial", tuple(base), coefficients=tuple(map(tuple, coefficients)),
                           provenance=tuple(provenance.items()))


def eval_signal(signal, t):
    """Parameter vector of ``signal`` at time ``t >= 0``."""
    if t < 0:
        raise DomainError(f"signals are defined for t >= 0, got {t}")
    base = np.array(signal.base_point)
    if signal.kind == "constant":
        return base
    if signal.kind == "rectified_sine":
        floor = np.array(signal.floor)
        trig = np.cos if signal.phase == "cosine" else np.sin
        wave = abs(trig(signal.omega * t))
        swung = (base - floor) * wave + floor
        return np.where(signal.modulated, swung, base)
    return np.array([np.polynomial.polynomial.polyval(t, c) for c in signal.coefficients])


def _radical_inverse(i, base):
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def halton(n, dim):
    """First ``n`` unscrambled Halton points, starting at index 1."""
    if dim > len(_PRIMES):
        raise DomainError(f"Halton supports up to {len(_PRIMES)} dimensions")
    return np.array([[_radical_inverse(i, _PRIMES[d]) for d in range(dim)]
                     for i in range(1, n + 1)])


def latin_hypercube(n, dim, seed):
    """Stratified uniform LHS on the unit cube, one permutation per dimension.

    Uses the counter-based Philox generator so a seed fixes the design.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    points = np.empty((n, dim))
    for d in range(dim):
        perm = rng.permutation(n)
        points[:, d] = (perm + rng.random(n)) / n
    return points


def sample_points(space, n_s, method="halton", seed=0):
    """Draw ``n_s`` parameter points inside ``space``."""
    if n_s < 1:
        raise DomainError("n_s must be >= 1")
    if method == "halton":
        unit = halton(n_s, space.dim)
    elif method == "lhs":
        unit = latin_hypercube(n_s, space.dim, seed)
    else:
        raise DomainError(f"unknown sampling method {method!r}")
    return space.scale(unit)


def sample_sps(space, n_s, method="halton", seed=0):
    """Constant signals at ``n_s`` sampled parameter points."""
    points = sample_points(space, n_s, method, seed)
    return [
        ParameterSignal("constant", tuple(p),
                        provenance=(("sampling", "SPS"), ("method", method),
                                    ("seed", seed), ("index", i)))
        for i, p in enumerate(points)
    ]


def sample_dps(space, n_s, method="halton", seed=0, omega=1.0, phase="sine"):
    """Rectified-sine signals built on top of the SPS draw.

    ``phase="cosine"`` starts each load at its sampled value instead of at
    the lower bound.
    """
    if not omega > 0:
        raise DomainError("omega must be positive")
    points = sample_points(space, n_s, method, seed)
    floor = tuple(space.lower)
    modulated = tuple(k == "load" for k in space.kinds)
    return [
        ParameterSignal("rectified_sine", tuple(p), omega=float(omega), floor=floor,
                        modulated=modulated, phase=phase,
                        provenance=(("sampling", "DPS"), ("method", method),
                                    ("seed", seed), ("index", i)))
        for i, p in enumerate(points)
    ]
