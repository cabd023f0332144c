"""Flow maps for the example systems.

Vector fields act on arrays of shape ``(m, d)`` (one state per row) and are
integrated with fixed-step classical RK4 (deterministic), Euler-Maruyama or
stochastic Heun (additive noise). :class:`FlowMapSpec` bundles a field with
its flow time, step and noise and is what the Ulam and sampling modules
consume.
"""
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import InvalidDelta, NonFiniteState, ValidationError
from .markov import SparseStochasticMatrix


class StateOutsideSimplex(UserWarning):
    pass


@dataclass(frozen=True)
class FlowMapSpec:
    """A system plus integration settings defining the map ``x -> x(tau)``.

    Attributes
    ----------
    field : callable
        ``field(x) -> dx/dt`` for ``x`` of shape ``(m, dim)``.
    dim : int
    tau : float
        Flow time of one application of the map.
    dt : float
        Integrator step; the last step is shortened to land on ``tau``.
    noise_sigma : array_like
        Per-coordinate additive noise strength (zero means deterministic).
    noise_mask : array_like of bool
        Coordinates that :meth:`with_sigma` puts noise on.
    wrap : tuple
        Per coordinate ``None`` or ``(lo, hi)``; periodic coordinates are
        wrapped into ``[lo, hi)`` at output.
    scheme : {"euler", "heun"}
        Stochastic scheme used when noise is present.
    """

    field: object
    dim: int
    tau: float = 1.0
    dt: float = 0.01
    noise_sigma: np.ndarray = None
    noise_mask: np.ndarray = None
    wrap: tuple = None
    scheme: str = "euler"
    name: str = "custom"
    params: object = None
    coord_names: tuple = None
    seed: int = None

    def __post_init__(self):
        d = int(self.dim)
        sigma = np.zeros(d) if self.noise_sigma is None else np.broadcast_to(
            np.asarray(self.noise_sigma, dtype=float), (d,)).copy()
        mask = np.ones(d, dtype=bool) if self.noise_mask is None else np.broadcast_to(
            np.asarray(self.noise_mask, dtype=bool), (d,)).copy()
        sigma.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "noise_sigma", sigma)
        object.__setattr__(self, "noise_mask", mask)
        object.__setattr__(self, "wrap", tuple(self.wrap) if self.wrap else (None,) * d)
        if self.coord_names is None:
            object.__setattr__(self, "coord_names", tuple(f"x{i}" for i in range(d)))
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.tau >= self.dt:
            raise ValidationError("tau must be at least dt")
        if np.any(sigma < 0):
            raise ValidationError("noise strengths must be non-negative")
        if self.scheme not in ("euler", "heun"):
            raise ValidationError(f"unknown stochastic scheme {self.scheme!r}")
        if len(self.wrap) != d:
            raise ValidationError("wrap needs one entry per coordinate")

    @property
    def deterministic(self):
        return not np.any(self.noise_sigma > 0)

    def with_sigma(self, sigma):
        """Copy with noise ``sigma`` on the coordinates in ``noise_mask``."""
        return replace(self, noise_sigma=np.where(self.noise_mask, float(sigma), 0.0))

    def flow(self, x, rng=None):
        """Apply the map once to each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return advance(self, x, np.full(len(x), self.tau), rng)

    def evolve(self, x, t, rng=None):
        """Integrate each row of ``x`` for its own time ``t[i]``."""
        return advance(self, x, t, rng)

    def metadata(self):
        return {"system": self.name, "tau": self.tau, "dt": self.dt,
                "sigma": ",".join(repr(float(s)) for s in self.noise_sigma),
                "scheme": self.scheme}


def wrap_state(spec, x):
    for i, w in enumerate(spec.wrap):
        if w is not None:
            lo, hi = w
            x[..., i] = lo + np.mod(x[..., i] - lo, hi - lo)
    return x


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler(f, x, h):
    return x + h * f(x)


def _step_plan(t, dt):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValidationError("integration times must be finite and non-negative")
    n_full = np.floor(t / dt + 1e-9).astype(np.int64)
    rem = t - n_full * dt
    rem[rem < 1e-9 * dt] = 0.0
    steps = n_full + (rem > 0)
    return n_full, rem, steps


def advance(spec, x0, t, rng=None, method=None):
    """Integrate each row of ``x0`` for time ``t[i]``; returns the endpoints.

    ``method`` is ``"rk4"``, ``"euler"``, ``"em"`` or ``"heun"``; by default
    RK4 for deterministic specs and ``spec.scheme`` otherwise. Rows finish
    after ``ceil(t/dt)`` steps, the last one shortened. Rows that blow up
    come back non-finite; callers decide whether that is an error.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m = len(x0)
    t = np.broadcast_to(np.asarray(t, dtype=float), (m,))
    if method is None:
        method = "rk4" if spec.deterministic else ("em" if spec.scheme == "euler" else "heun")
    noisy = method in ("em", "heun") and not spec.deterministic
    if noisy and rng is None:
        raise ValidationError("a random generator is required for noisy integration")
    n_full, rem, steps = _step_plan(t, spec.dt)
    order = np.argsort(-steps, kind="stable")
    x = x0[order].copy()
    n_full, rem, steps = n_full[order], rem[order], steps[order]
    desc = steps[::-1]
    f = spec.field
    sig = spec.noise_sigma
    cols = np.flatnonzero(sig > 0)
    total = int(steps[0]) if m else 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(total):
            active = m - int(np.searchsorted(desc, k, side="right"))
            xa = x[:active]
            h = np.where(k < n_full[:active], spec.dt, rem[:active])[:, None]
            if method == "rk4":
                x[:active] = _rk4(f, xa, h)
            elif method == "euler" or not noisy:
                if method == "heun":
                    pred = xa + h * f(xa)
                    x[:active] = xa + 0.5 * h * (f(xa) + f(pred))
                else:
                    x[:active] = _euler(f, xa, h)
            else:
                dw = np.sqrt(h) * rng.standard_normal((active, cols.size))
                kick = np.zeros_like(xa)
                kick[:, cols] = sig[cols] * dw
                drift = f(xa)
                if method == "em":
                    x[:active] = xa + h * drift + kick
                else:
                    pred = xa + h * drift + kick
                    x[:active] = xa + 0.5 * h * (drift + f(pred)) + kick
    out = np.empty_like(x)
    out[order] = x
    return wrap_state(spec, out)


def _single(x0):
    x = np.asarray(x0, dtype=float)
    return x, x.ndim == 1


def _finish(x, squeeze):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("integration diverged to a non-finite state")
    return x[0] if squeeze else x


def integrate_deterministic(spec, x0):
    """Classical RK4 flow over ``spec.tau``; ``x0`` may be one state or a batch."""
    if not spec.deterministic:
        raise ValidationError("integrate_deterministic needs noise_sigma == 0")
    x, squeeze = _single(x0)
    return _finish(advance(spec, x, spec.tau, method="rk4"), squeeze)


def integrate_euler(spec, x0):
    """Explicit Euler over ``spec.tau`` (noise ignored)."""
    x, squeeze = _single(x0)
    return _finish(advance(spec, x, spec.tau, method="euler"), squeeze)


def integrate_stochastic(spec, x0, rng, scheme=None):
    """Additive-noise integration over ``spec.tau``.

    Euler-Maruyama by default; ``scheme="heun"`` selects stochastic Heun,
    which is better behaved for lightly damped oscillators at the same step.
    With zero noise both reduce to their deterministic counterparts exactly.
    """
    scheme = scheme or spec.scheme
    method = "em" if scheme == "euler" else "heun"
    x, squeeze = _single(x0)
    return _finish(advance(spec, x, spec.tau, rng, method=method), squeeze)


# --- damped driven pendulum -------------------------------------------------

@dataclass(frozen=True)
class PendulumParams:
    alpha: float = 0.1
    K: float = 1.0
    P: float = 0.5

    def fixed_point(self):
        return np.array([math.asin(self.P / self.K), 0.0])


def pendulum_field(params, state):
    """``(phi, omega) -> (omega, -alpha omega + P - K sin phi)``."""
    state = np.asarray(state, dtype=float)
    phi, omega = state[..., 0], state[..., 1]
    return np.stack([omega, -params.alpha * omega + params.P - params.K * np.sin(phi)], axis=-1)


def pendulum_flow(params=PendulumParams(), tau=1.0, dt=0.01, sigma=0.0):
    return FlowMapSpec(
        field=lambda x: pendulum_field(params, x), dim=2, tau=tau, dt=dt,
        noise_mask=[False, True], noise_sigma=[0.0, sigma],
        wrap=((-math.pi, math.pi), None), name="pendulum", params=params,
        coord_names=("phi", "omega"))


# --- chain of coupled pendula -----------------------------------------------

@dataclass(frozen=True)
class ChainParams:
    """Open chain of ``n`` swing-equation oscillators.

    Power injections alternate in sign, ``P_i = (-1)**i * P``, so that the
    net injection balances and a synchronous state exists.
    """

    n: int = 16
    alpha: float = 0.1
    K: float = 8.0
    P: float = 1.0

    @property
    def power(self):
        return self.P * (-1.0) ** np.arange(self.n)


def chain_field(params, state):
    """``phi_i' = omega_i``, ``omega_i' = -alpha omega_i + P_i - K sum_{j~i} sin(phi_i - phi_j)``."""
    n = params.n
    if n < 2:
        raise ValidationError("a chain needs at least two oscillators")
    state = np.asarray(state, dtype=float)
    x = np.ascontiguousarray(state.reshape(-1, 2 * n))
    out = np.empty_like(x)
    _kernels.chain_rhs(x, float(params.alpha), params.power, float(params.K), out)
    return out.reshape(state.shape)


def chain_sync_state(params):
    """Synchronous fixed point with ``phi_0 = 0``.

    On an open chain the line flow between ``i`` and ``i + 1`` carries the
    accumulated injection ``S_i = P_0 + ... + P_i``, so
    ``phi_i - phi_{i+1} = asin(S_i / K)``.
    """
    S = np.cumsum(params.power)
    if abs(S[-1]) > 1e-12:
        raise ValidationError("injections do not balance; no synchronous state")
    if np.any(np.abs(S[:-1]) > params.K):
        raise ValidationError("line flows exceed coupling capacity; no synchronous state")
    phi = np.concatenate([[0.0], -np.cumsum(np.arcsin(S[:-1] / params.K))])
    return np.concatenate([phi, np.zeros(params.n)])


def chain_flow(params=ChainParams(), tau=1.0, dt=0.01, sigma=0.0, scheme="heun"):
    n = params.n
    names = tuple(f"phi_{i}" for i in range(n)) + tuple(f"omega_{i}" for i in range(n))
    mask = np.r_[np.zeros(n, dtype=bool), np.ones(n, dtype=bool)]
    return FlowMapSpec(
        field=lambda x: chain_field(params, x), dim=2 * n, tau=tau, dt=dt,
        noise_mask=mask, noise_sigma=np.where(mask, sigma, 0.0), scheme=scheme,
        name="pendulum-chain", params=params, coord_names=names)


def chain_perturbation(params, omega_range=5.0, phi_range=math.pi):
    """Uniform joint perturbation of all oscillators around the synchronous state."""
    base = chain_sync_state(params)
    n = params.n
    half = np.r_[np.full(n, phi_range), np.full(n, omega_range)]

    def sample(rng, m):
        return base + rng.uniform(-1.0, 1.0, size=(m, 2 * n)) * half
    return sample


# --- carbon cycle -----------------------------------------------------------

def illustrative_nep(c_a, c_t, rate=2.0, width=0.5, seed_stock=0.005):
    """Illustrative net ecosystem production; NOT the published carbon-model NEP.

    A hump in atmospheric carbon (growth needs CO2 but is suppressed when
    ``c_a`` is large) times the terrestrial stock plus a small seed stock.
    It vanishes at ``c_a = 0``, keeps the simplex invariant, produces a
    single attracting equilibrium and a slow passage through low ``c_t``
    for trajectories that start with little marine and terrestrial carbon.
    """
    return rate * (c_t + seed_stock) * c_a * np.exp(-(c_a / width) ** 2)


@dataclass(frozen=True)
class AnderiesParams:
    alpha_m: float = 0.05
    alpha: float = 0.1
    beta: float = 1.0
    nep: object = field(default=illustrative_nep, compare=False)


def anderies_field(params, state):
    """Marine/terrestrial carbon with atmospheric carbon eliminated.

    ``c_a = 1 - c_m - c_t`` by construction, so total carbon is conserved
    for any NEP callback.
    """
    if params.nep is None:
        raise ValidationError("the carbon model needs an NEP callback")
    state = np.asarray(state, dtype=float)
    c_m, c_t = state[..., 0], state[..., 1]
    c_a = 1.0 - c_m - c_t
    if np.any((c_m < -1e-9) | (c_t < -1e-9) | (c_a < -1e-9)):
        warnings.warn("carbon state outside the simplex", StateOutsideSimplex, stacklevel=2)
    dm = params.alpha_m * (c_a - params.beta * c_m)
    dt_ = params.nep(c_a, c_t) - params.alpha * c_t
    return np.stack([dm, dt_], axis=-1)


def anderies_flow(params=AnderiesParams(), tau=1.0, dt=0.01, sigma=0.0):
    return FlowMapSpec(
        field=lambda x: anderies_field(params, x), dim=2, tau=tau, dt=dt,
        noise_sigma=sigma, name="anderies", params=params, coord_names=("c_m", "c_t"))


def in_simplex(points):
    points = np.atleast_2d(points)
    return (points[:, 0] >= 0) & (points[:, 1] >= 0) & (points[:, 0] + points[:, 1] <= 1.0)


# --- conceptual box models --------------------------------------------------

def box_model_matrix(model, delta):
    """Two-state metastability or three-state long-transient chain.

    ``"metastable"``: states ``(M1, M2)``; ``"transient"``: ``(M1, M2, A)``
    with ``A`` absorbing.
    """
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    d2 = delta * delta
    if model == "metastable":
        dense = [[1 - d2, d2], [delta, 1 - delta]]
    elif model == "transient":
        dense = [[1 - d2, 0.0, d2], [0.0, 1 - delta, delta], [0.0, 0.0, 1.0]]
    else:
        raise ValidationError(f"unknown box model {model!r}")
    return SparseStochasticMatrix.from_dense(dense)


BOX_MODEL_STATES = {"metastable": ("M1", "M2"), "transient": ("M1", "M2", "A")}


def make_flow(system, **kw):
    """Flow map for a CLI system identifier."""
    tau = kw.pop("tau", 1.0)
    dt = kw.pop("dt", 0.01)
    sigma = kw.pop("sigma", 0.0)
    kw = {k: v for k, v in kw.items() if v is not None}
    if system == "pendulum":
        return pendulum_flow(PendulumParams(**kw), tau, dt, sigma)
    if system == "pendulum-chain":
        return chain_flow(ChainParams(**kw), tau, dt, sigma)
    if system == "anderies":
        return anderies_flow(AnderiesParams(**kw), tau, dt, sigma)
    if system == "identity":
        return FlowMapSpec(field=np.zeros_like, dim=int(kw.get("dim", 2)), tau=tau, dt=dt,
                           name="identity")
    raise ValidationError(f"unknown system {system!r}")
