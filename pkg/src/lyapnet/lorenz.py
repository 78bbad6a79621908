"""Lorenz system, regime-shift data generation, and reference maps.

The regime-shift trajectory integrates the Lorenz equations with RK4,
switches parameters abruptly at the halfway point (continuous in state,
discontinuous in parameters), and scales the states down so they sit in
tanh's responsive range.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lyapunov import DivergenceError
from .scalar_ad import _value

CLASSIC = dict(sigma=10.0, rho=28.0, beta=8.0 / 3.0)


@dataclass(frozen=True)
class LorenzParams:
    sigma: float
    rho: float
    beta: float


@dataclass
class Trajectory:
    states: np.ndarray          # (n, d), already divided by scale
    dt: float
    shift_index: Optional[int] = None
    scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)


def lorenz_rhs(s, p):
    x, y, z = s
    return (p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.beta * z)


def lorenz_step(s, p, dt):
    """One classical RK4 step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = lorenz_rhs(s, p)
    k2 = lorenz_rhs(tuple(si + 0.5 * dt * ki for si, ki in zip(s, k1)), p)
    k3 = lorenz_rhs(tuple(si + 0.5 * dt * ki for si, ki in zip(s, k2)), p)
    k4 = lorenz_rhs(tuple(si + dt * ki for si, ki in zip(s, k3)), p)
    out = tuple(si + dt / 6.0 * (a + 2 * b + 2 * c + d)
                for si, a, b, c, d in zip(s, k1, k2, k3, k4))
    if not all(math.isfinite(_value(v)) for v in out):
        raise DivergenceError(0, "non-finite state after RK4 step")
    return out


def lorenz_jacobian(s, p):
    """Jacobian of the continuous right-hand side."""
    x, y, z = s
    return [[-p.sigma, p.sigma, 0.0],
            [p.rho - z, -1.0, -x],
            [y, x, -p.beta]]


def generate_regime_shift(pA, pB, n_per_regime, dt, x0=(1.0, 1.0, 1.0),
                          transient=1000, scale=30.0, seed=0,
                          sample_every=1):
    """Two-regime Lorenz trajectory with an abrupt parameter switch.

    Integrates pA from a seed-jittered x0, discards `transient` integrator
    steps, keeps n_per_regime states, then continues from the last state
    under pB for n_per_regime more. No second transient: the shift is
    abrupt and continuous in state. States are divided by `scale`.

    `sample_every` keeps every k-th integrator step, so the recorded map
    has time step dt * sample_every while the integration error stays that
    of the fine dt.
    """
    if n_per_regime < 1:
        raise ValueError("n_per_regime must be >= 1")
    if transient < 0:
        raise ValueError("transient must be >= 0")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    rng = np.random.default_rng(seed)
    s = tuple(float(c) + j for c, j in
              zip(x0, rng.uniform(-1e-3, 1e-3, size=len(x0))))
    for _ in range(transient):
        s = lorenz_step(s, pA, dt)
    raw = [s]
    for _ in range(n_per_regime - 1):
        for _ in range(sample_every):
            s = lorenz_step(s, pA, dt)
        raw.append(s)
    for _ in range(n_per_regime):
        for _ in range(sample_every):
            s = lorenz_step(s, pB, dt)
        raw.append(s)
    states = np.array(raw, dtype=float) * (1.0 / scale)
    meta = {"params_a": vars(pA), "params_b": vars(pB),
            "x0": list(x0), "transient": transient, "seed": seed,
            "integrator_dt": dt, "sample_every": sample_every}
    return Trajectory(states, dt * sample_every, shift_index=n_per_regime,
                      scale=scale, meta=meta)


def save_trajectory(traj, csv_path, sidecar_path):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "regime"])
        shift = traj.shift_index if traj.shift_index is not None else len(traj)
        for t, s in enumerate(traj.states):
            regime = 0 if t < shift else 1
            w.writerow([t] + [repr(float(v)) for v in s] + [regime])
    with open(sidecar_path, "w") as fh:
        json.dump({"dt": traj.dt, "shift_index": traj.shift_index,
                   "scale": traj.scale, **traj.meta}, fh, indent=2)
        fh.write("\n")


def load_trajectory(csv_path, sidecar_path):
    with open(sidecar_path) as fh:
        side = json.load(fh)
    states = []
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            states.append([float(v) for v in row[1:4]])
    meta = {k: v for k, v in side.items()
            if k not in ("dt", "shift_index", "scale")}
    return Trajectory(np.array(states), side["dt"],
                      shift_index=side["shift_index"], scale=side["scale"],
                      meta=meta)


# -- reference maps for the test oracles ---------------------------------

class LinearMap:
    def __init__(self, A):
        self.A = [list(map(float, row)) for row in A]

    def step(self, x):
        return [sum(a * xi for a, xi in zip(row, x)) for row in self.A]

    def jacobian(self, x):
        return [list(row) for row in self.A]


class LogisticMap:
    def __init__(self, r=4.0):
        self.r = r

    def step(self, x):
        v = x[0]
        return [self.r * v * (1.0 - v)]

    def jacobian(self, x):
        return [[self.r - 2.0 * self.r * x[0]]]


class LorenzDiscreteMap:
    """RK4 step as a discrete map, with the variational-equation Jacobian.

    The tangent propagator is the exact derivative of the RK4 step: it
    applies the same RK4 stage combination to the variational matrix using
    the analytic Jacobian of the right-hand side at each stage point.
    """

    def __init__(self, params=None, dt=0.01):
        self.p = params or LorenzParams(**CLASSIC)
        self.dt = dt

    def step(self, x):
        return list(lorenz_step(tuple(x), self.p, self.dt))

    def jacobian(self, x):
        p, dt = self.p, self.dt
        s = tuple(x)
        eye = np.eye(3)
        k1 = np.array(lorenz_rhs(s, p))
        K1 = np.array(lorenz_jacobian(s, p))
        s2 = tuple(si + 0.5 * dt * ki for si, ki in zip(s, k1))
        k2 = np.array(lorenz_rhs(s2, p))
        K2 = np.array(lorenz_jacobian(s2, p)) @ (eye + 0.5 * dt * K1)
        s3 = tuple(si + 0.5 * dt * ki for si, ki in zip(s, k2))
        k3 = np.array(lorenz_rhs(s3, p))
        K3 = np.array(lorenz_jacobian(s3, p)) @ (eye + 0.5 * dt * K2)
        s4 = tuple(si + dt * ki for si, ki in zip(s, k3))
        K4 = np.array(lorenz_jacobian(s4, p)) @ (eye + dt * K3)
        J = eye + dt / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
        return [list(row) for row in J]


def oracle_maps(**kwargs):
    """Registry of named reference maps for tests and the CLI."""
    return {
        "linear": lambda A=((0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5)): LinearMap(A),
        "logistic": lambda r=4.0: LogisticMap(r),
        "lorenz": lambda params=None, dt=0.01: LorenzDiscreteMap(params, dt),
    }


def get_oracle_map(name, **kwargs):
    reg = oracle_maps()
    if name not in reg:
        raise KeyError(f"unknown map {name!r}; known: {sorted(reg)}")
    return reg[name](**kwargs)
