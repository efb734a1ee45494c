"""Full-order thermal models and their reference integrator.

All models share the semi-discrete form

    C_p dT/dt = K T + R T**4 + B u

with a diagonal capacity ``C_p``, a symmetric conductivity operator ``K``,
an optional radiation operator ``R`` acting on the elementwise fourth power
of the absolute temperature, and a load map ``B``. The input vector ``u``
always ends with the ambient temperature, so convective losses appear as a
negative diagonal contribution in ``K`` paired with a column of ``B``.

Temperatures are Kelvin throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidModelError, NumericInputError, StiffnessError

__all__ = [
    "FomModel",
    "Trajectory",
    "build_heat_sink",
    "build_gap_radiation",
    "build_synthetic_nonlinear",
    "build_model",
    "rhs",
    "gershgorin_radius",
    "substep_count",
    "integrate_reference",
    "integrate_batch",
    "initial_state",
    "gap_flux",
    "CELSIUS_OFFSET",
]

CELSIUS_OFFSET = 273.15
OVERFLOW_GUARD = 1.0e6

# material constants: specific heat J/(kg K), conductivity W/(m K), density kg/m^3
COPPER = {"cp": 385.0, "k": 387.0, "rho": 8960.0}
ALUMINUM = {"cp": 963.0, "k": 151.0, "rho": 2700.0}
STEEL = {"cp": 434.0, "k": 14.0, "rho": 7850.0}


@dataclass(frozen=True, eq=False)
class FomModel:
    """Matrices and metadata of one full-order thermal ODE.

    Parameters
    ----------
    capacity : ndarray, shape (N,)
        Diagonal of the thermal capacity matrix, J/K.
    conductivity : ndarray, shape (N, N)
        Conductivity operator ``K`` in W/K, symmetric and dissipative.
    load_map : ndarray, shape (N, n_u)
        Generalized load matrix ``B``.
    input_template : ndarray, shape (n_u,)
        Input vector with every entry fixed except ``load_slot``; the last
        entry is the ambient temperature.
    radiation : ndarray or None
        Radiation operator ``R`` (W/K^4), rows summing to zero.
    quadratic_gain : float
        Strength of the upwind transport term, 1/(K s). Zero for the
        linear and radiative models.
    t_max : float
        Upper temperature bound of the parameter space, used by the
        substep rule for the nonlinear terms.
    """

    kind: str
    capacity: np.ndarray
    conductivity: np.ndarray
    load_map: np.ndarray
    input_template: np.ndarray
    load_slot: int = 0
    radiation: np.ndarray | None = None
    quadratic_gain: float = 0.0
    ambient: float = 293.15
    t_max: float = 400.0
    n_params: int = 2
    initial_index: int = 0
    load_index: int = 1
    build_args: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.capacity, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise InvalidModelError("capacity must be a non-empty vector")
        if not np.all(c > 0):
            raise InvalidModelError("capacity entries must be strictly positive")
        n = c.size
        k = np.asarray(self.conductivity, dtype=float)
        if k.shape != (n, n):
            raise InvalidModelError(f"conductivity must be {n}x{n}, got {k.shape}")
        if not np.allclose(k, k.T, rtol=0, atol=1e-12 * max(1.0, np.abs(k).max())):
            raise InvalidModelError("conductivity must be symmetric")
        b = np.asarray(self.load_map, dtype=float)
        if b.ndim != 2 or b.shape[0] != n:
            raise InvalidModelError("load_map must have N rows")
        if self.radiation is not None:
            r = np.asarray(self.radiation, dtype=float)
            if r.shape != (n, n):
                raise InvalidModelError("radiation must be NxN")
            if np.abs(r.sum(axis=1)).max() > 1e-12 * max(1e-300, np.abs(r).max()):
                raise InvalidModelError("radiation rows must sum to zero")
        if not _gershgorin_dissipative(k / c[:, None]):
            raise InvalidModelError("linear part is not dissipative (Gershgorin check failed)")
        for name in ("capacity", "conductivity", "load_map", "input_template", "radiation"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n_state(self):
        return self.capacity.size

    @property
    def n_inputs(self):
        return self.load_map.shape[1]

    def input_vector(self, mu):
        """Map a parameter vector to the load vector ``u``."""
        u = self.input_template.copy()
        u[self.load_slot] = mu[self.load_index]
        return u


def _gershgorin_dissipative(a):
    # every disk centre a_ii plus radius must stay in the closed left half-plane
    diag = np.diag(a)
    radius = np.abs(a).sum(axis=1) - np.abs(diag)
    return bool(np.all(diag + radius <= 1e-12 * np.abs(diag).max()))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    signal_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise NumericInputError("a trajectory needs at least two time points")
        if y.ndim != 2 or y.shape[1] != t.size:
            raise NumericInputError("states must be N x (k+1)")
        steps = np.diff(t)
        if not np.all(steps > 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise NumericInputError("time grid must be uniform and increasing")
        if not np.all(np.isfinite(y)):
            raise NumericInputError("trajectory states must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", y)

    @property
    def tau(self):
        return (self.times[-1] - self.times[0]) / (self.times.size - 1)

    @property
    def k(self):
        return self.times.size - 1


def _chain_conductivity(conductance):
    """Tridiagonal Laplacian-like matrix from inter-node conductances."""
    n = len(conductance) + 1
    k = np.zeros((n, n))
    for i, g in enumerate(conductance):
        k[i, i] -= g
        k[i + 1, i + 1] -= g
        k[i, i + 1] += g
        k[i + 1, i] += g
    return k


def build_heat_sink(n_chip, n_fin, *, load_scale=40.0, h_conv=10.0, dx=5e-3,
                    area=1e-4, perimeter=0.115, ambient=293.15, t_max=423.15):
    """Copper chip segment feeding an aluminum fin chain that convects to ambient.

    Heat load enters uniformly over the chip nodes (``load_scale`` W per load
    unit in total). Every fin node loses heat laterally, the tail node also
    through its end face. ``h_conv=0`` gives the insulated variant.
    """
    if n_chip < 2 or n_fin < 2:
        raise InvalidModelError(f"need n_chip >= 2 and n_fin >= 2, got ({n_chip}, {n_fin})")
    n = n_chip + n_fin
    mats = [COPPER] * n_chip + [ALUMINUM] * n_fin
    capacity = np.array([m["rho"] * m["cp"] * area * dx for m in mats])
    # series half-cell resistances between neighbouring node centres
    conductance = [
        1.0 / (0.5 * dx / (a["k"] * area) + 0.5 * dx / (b["k"] * area))
        for a, b in zip(mats[:-1], mats[1:])
    ]
    k = _chain_conductivity(conductance)
    loss = np.zeros(n)
    loss[n_chip:] = h_conv * perimeter * dx
    loss[-1] += h_conv * area
    k -= np.diag(loss)
    b = np.zeros((n, 2))
    b[:n_chip, 0] = load_scale / n_chip
    b[:, 1] = loss
    return FomModel(
        kind="heat_sink",
        capacity=capacity,
        conductivity=k,
        load_map=b,
        input_template=np.array([0.0, ambient]),
        ambient=ambient,
        t_max=t_max,
        build_args={"n_chip": n_chip, "n_fin": n_fin, "load_scale": load_scale,
                    "h_conv": h_conv, "dx": dx, "area": area,
                    "perimeter": perimeter, "ambient": ambient, "t_max": t_max},
    )


def build_gap_radiation(n_plate, emissivity_coeff=1e-9, *, thickness=0.02, area=0.01,
                        h_conv=25.0, ambient=293.15, t_max=773.15):
    """Two identical steel plates exchanging heat only across a radiative gap.

    Nodes ``0..n_plate-1`` form plate a (node 0 is its outer face, node
    ``n_plate-1`` faces the gap); plate b mirrors it. Both outer faces
    convect to ambient. The load (W) enters the outer face of plate a; the
    second load column heats plate b and stays at zero in the shipped
    configurations.
    """
    if n_plate < 2:
        raise InvalidModelError(f"need n_plate >= 2, got {n_plate}")
    if not emissivity_coeff > 0:
        raise InvalidModelError("emissivity_coeff must be positive")
    n = 2 * n_plate
    dx = thickness / n_plate
    capacity = np.full(n, STEEL["rho"] * STEEL["cp"] * area * dx)
    g = STEEL["k"] * area / dx
    k = np.zeros((n, n))
    k[:n_plate, :n_plate] = _chain_conductivity([g] * (n_plate - 1))
    k[n_plate:, n_plate:] = _chain_conductivity([g] * (n_plate - 1))
    loss = np.zeros(n)
    loss[0] = loss[-1] = h_conv * area
    k -= np.diag(loss)
    a_face, b_face = n_plate - 1, n_plate
    r = np.zeros((n, n))
    r[a_face, a_face] = r[b_face, b_face] = -emissivity_coeff
    r[a_face, b_face] = r[b_face, a_face] = emissivity_coeff
    b = np.zeros((n, 3))
    b[0, 0] = 1.0
    b[-1, 1] = 1.0
    b[:, 2] = loss
    return FomModel(
        kind="gap_radiation",
        capacity=capacity,
        conductivity=k,
        load_map=b,
        input_template=np.array([0.0, 0.0, ambient]),
        radiation=r,
        ambient=ambient,
        t_max=t_max,
        build_args={"n_plate": n_plate, "emissivity_coeff": emissivity_coeff,
                    "thickness": thickness, "area": area, "h_conv": h_conv,
                    "ambient": ambient, "t_max": t_max},
    )


def build_synthetic_nonlinear(n_state, nonlinearity_gain=0.01, *, total_capacity=60.0,
                              total_conductance=2.0, total_loss=3.0, ambient=293.15,
                              t_max=423.15):
    """Cooled diffusion chain with a quadratic upwind transport term.

    The transport term moves heat downstream at a rate proportional to the
    local temperature rise above ambient, a crude stand-in for a coolant
    stream. Load (W) enters node 0.
    """
    if n_state < 3:
        raise InvalidModelError(f"need n_state >= 3, got {n_state}")
    capacity = np.full(n_state, total_capacity / n_state)
    # chain conductance scales with resolution so the physics is fixed
    g = total_conductance * (n_state - 1)
    k = _chain_conductivity([g] * (n_state - 1))
    loss = np.full(n_state, total_loss / n_state)
    k -= np.diag(loss)
    b = np.zeros((n_state, 2))
    b[0, 0] = 1.0
    b[:, 1] = loss
    return FomModel(
        kind="synthetic_nonlinear",
        capacity=capacity,
        conductivity=k,
        load_map=b,
        input_template=np.array([0.0, ambient]),
        quadratic_gain=float(nonlinearity_gain),
        ambient=ambient,
        t_max=t_max,
        build_args={"n_state": n_state, "nonlinearity_gain": nonlinearity_gain,
                    "total_capacity": total_capacity,
                    "total_conductance": total_conductance,
                    "total_loss": total_loss, "ambient": ambient, "t_max": t_max},
    )


_BUILDERS = {
    "heat_sink": build_heat_sink,
    "gap_radiation": build_gap_radiation,
    "synthetic_nonlinear": build_synthetic_nonlinear,
}


def build_model(kind, **kwargs):
    """Build a model from its kind tag and builder keyword arguments."""
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise InvalidModelError(f"unknown model kind {kind!r}") from None
    return builder(**kwargs)


def _quadratic_term(model, y):
    theta = y - model.ambient
    q = np.zeros_like(y)
    q[1:] = -model.quadratic_gain * theta[1:] * (theta[1:] - theta[:-1])
    return q


def rhs(model, y, u):
    """Time derivative ``C_p^-1 (K y + R y^4 + B u)`` plus any transport term."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if y.shape != (model.n_state,) or u.shape != (model.n_inputs,):
        raise NumericInputError(
            f"expected y of shape ({model.n_state},) and u of shape ({model.n_inputs},)")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
        raise NumericInputError("non-finite state or input")
    return _rhs(model, y, u)


def _rhs(model, y, u):
    flux = model.conductivity @ y + model.load_map @ u
    if model.radiation is not None:
        flux = flux + model.radiation @ (y * y * y * y)
    dy = flux / (model.capacity if y.ndim == 1 else model.capacity[:, None])
    if model.quadratic_gain:
        dy = dy + _quadratic_term(model, y)
    return dy


def gershgorin_radius(model, y_max=None):
    """Upper bound on the spectral radius of the RHS Jacobian."""
    a = model.conductivity / model.capacity[:, None]
    lhat = np.abs(a).sum(axis=1).max()
    y_max = model.t_max if y_max is None else y_max
    if model.radiation is not None:
        r = model.radiation / model.capacity[:, None]
        lhat += 4.0 * np.abs(r).sum(axis=1).max() * y_max ** 3
    if model.quadratic_gain:
        lhat += 3.0 * abs(model.quadratic_gain) * max(y_max - model.ambient, 0.0)
    return float(lhat)


def substep_count(model, tau, y_max=None):
    """Internal RK4 substeps per stored step: ``ceil(tau * L / 0.5)``, at least 1."""
    return max(1, math.ceil(tau * gershgorin_radius(model, y_max) / 0.5))


def initial_state(model, temperature):
    """Uniform initial state at ``temperature`` (K)."""
    return np.full(model.n_state, float(temperature))


def _signal_id(signal):
    digest = getattr(signal, "digest", None)
    return digest() if callable(digest) else ""


def integrate_reference(model, y0, signal, t_end, k, *, refine=1, y_max=None, substeps=None):
    """Classic RK4 on a sampled-and-held load, stored on ``k+1`` uniform points.

    Parameters
    ----------
    signal
        Anything with ``value(t)`` returning the parameter vector; the load
        is read at the start of each stored step and held over it.
    refine : int
        Extra factor on the substep count from the stability rule.
    substeps : int, optional
        Override the stability rule entirely.

    Raises
    ------
    StiffnessError
        If any state leaves ``[-1e6, 1e6]`` or turns non-finite.
    """
    result = integrate_batch(model, [y0], [signal], t_end, k, refine=refine, y_max=y_max,
                             substeps=substeps)[0]
    if isinstance(result, StiffnessError):
        raise result
    return result


def integrate_batch(model, y0s, signals, t_end, k, *, refine=1, y_max=None, substeps=None):
    """Integrate several trajectories side by side as columns of one state matrix.

    Columns never mix, so a trajectory's result does not depend on its
    neighbours as long as the substep count is the same; the stability
    bound uses the largest initial state of the batch. Returns one entry
    per trajectory: a :class:`Trajectory`, or the :class:`StiffnessError`
    that stopped it. A failed column is frozen while the others continue.
    """
    if k < 1:
        raise NumericInputError("k must be >= 1")
    if not t_end > 0:
        raise NumericInputError("t_end must be positive")
    signals = list(signals)
    y = np.array([np.asarray(v, dtype=float) for v in y0s]).T
    if y.ndim != 2 or y.shape != (model.n_state, len(signals)) or not np.all(np.isfinite(y)):
        raise NumericInputError("need one finite initial state vector per signal")
    tau = t_end / k
    times = np.linspace(0.0, t_end, k + 1)
    if substeps is None:
        bound = max(float(np.abs(y).max()), model.t_max) if y_max is None else y_max
        substeps = substep_count(model, tau, bound) * int(refine)
    h = tau / substeps
    n_traj = y.shape[1]
    states = np.empty((n_traj, model.n_state, k + 1))
    states[:, :, 0] = y.T
    errors = [None] * n_traj
    for j in range(k):
        u = np.array([model.input_vector(sig.value(times[j])) for sig in signals]).T
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                k1 = _rhs(model, y, u)
                k2 = _rhs(model, y + 0.5 * h * k1, u)
                k3 = _rhs(model, y + 0.5 * h * k2, u)
                k4 = _rhs(model, y + h * k3, u)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(y) & (np.abs(y) <= OVERFLOW_GUARD), axis=0)
        for i in np.flatnonzero(bad):
            if errors[i] is None:
                errors[i] = StiffnessError(f"reference integration blew up at step {j + 1}",
                                           step=j + 1)
        if bad.any():
            y[:, bad] = states[bad, :, 0].T
        states[:, :, j + 1] = y.T
    return [err if err is not None
            else Trajectory(times=times.copy(), states=states[i], signal_id=_signal_id(sig))
            for i, (err, sig) in enumerate(zip(errors, signals))]


def gap_flux(model, y):
    """Net radiative flux (W) from the plate-a gap face to the plate-b gap face."""
    if model.radiation is None:
        raise InvalidModelError("model has no radiation term")
    n_plate = model.n_state // 2
    a, b = n_plate - 1, n_plate
    e = model.radiation[a, b]
    return e * (y[a] ** 4 - y[b] ** 4)
