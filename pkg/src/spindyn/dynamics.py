"""Dipole-mode spin dynamics.

Directors evolve by ``du/dt = u x B_eff`` with ``B_eff = -dE/dS``, so a
single spin precesses at ``g |B|`` independent of ``s``.  Dissipationless
trajectories use the implicit midpoint rule; thermal trajectories use a
stochastic Heun step of the Landau-Lifshitz-Gilbert equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import IntegrationError
from .model import Hamiltonian, _check

NOISE_CHUNK = 4096


class StepResult(NamedTuple):
    u: np.ndarray
    iterations: int
    norm_residual: float  # max | |u'| - 1 | before renormalization


def ll_step_midpoint(u, ham: Hamiltonian, dt: float, fp_tol: float = 1e-12, max_fp_iters: int = 100) -> StepResult:
    """One implicit-midpoint step, solved by fixed-point iteration.

    Solves ``u' = u + dt m x B(s m)`` with ``m = (u + u')/2``, then rescales
    each ``u'`` to unit length and reports how far it was from unit length.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = _check(u, ham)
    t = ham.terms
    out = np.empty_like(u)
    it, change = K.midpoint_step(u, t.s, dt, fp_tol, max_fp_iters, *t.field_args, out)
    if it < 0:
        raise IntegrationError(
            f"implicit midpoint did not converge in {max_fp_iters} iterations (last change {change:.3g})",
            residual=change, iterations=max_fp_iters)
    norms = np.linalg.norm(out, axis=1)
    return StepResult(out / norms[:, None], it, float(np.max(np.abs(norms - 1.0))))


def noise_sigma(s, dt: float, damping: float, temperature: float) -> np.ndarray:
    """Per-site standard deviation of each held noise component.

    With noise entering both the precession and the damping term, the
    tangential diffusion constant is ``(1 + damping^2) sigma^2 dt / 2``;
    stationarity of exp(-E/T) then fixes
    ``sigma^2 = 2 damping T / (s (1 + damping^2) dt)``.
    """
    s = np.asarray(s, dtype=float)
    return np.sqrt(2.0 * damping * temperature / (s * (1.0 + damping**2) * dt))


def langevin_step_heun(u, ham: Hamiltonian, dt: float, damping: float, temperature: float, rng) -> np.ndarray:
    """One stochastic Heun step; the same noise draw serves predictor and corrector."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if damping < 0 or temperature < 0:
        raise ValueError("damping and temperature must be non-negative")
    u = _check(u, ham).copy()
    t = ham.terms
    normals = np.random.default_rng(rng).standard_normal((1, len(u), 3))
    K.heun_steps(u, t.s, dt, damping, noise_sigma(t.s, dt, damping, temperature), normals, *t.field_args)
    return u


@dataclass
class IntegratorSpec:
    kind: str = "midpoint"  # "midpoint" | "langevin"
    dt: float = 0.01
    damping: float = 0.0
    temperature: float = 0.0
    fp_tol: float = 1e-12
    max_fp_iters: int = 100

    def __post_init__(self):
        if self.kind not in ("midpoint", "langevin"):
            raise ValueError(f"unknown integrator kind {self.kind!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class Trajectory:
    """Recorded frames of a run.

    ``frames[k]`` holds the directors at time ``k * stride * dt``.  For SU(N)
    runs the frames are dipole expectations divided by ``spin_s`` and need not
    be unit vectors.
    """

    dt: float
    stride: int
    frames: np.ndarray  # (nframes, N, 3)
    spin_s: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3) Cartesian
    metadata: dict = field(default_factory=dict)

    @property
    def frame_dt(self) -> float:
        return self.dt * self.stride

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.frames)) * self.frame_dt

    @property
    def moments(self) -> np.ndarray:
        return self.frames * self.spin_s[None, :, None]


def run_trajectory(u, ham: Hamiltonian, spec: IntegratorSpec, nsteps: int, record_stride: int = 1,
                   rng=None) -> Trajectory:
    """Integrate ``nsteps`` steps, recording every ``record_stride`` steps including step 0."""
    if nsteps < 1 or record_stride < 1:
        raise ValueError("nsteps and record_stride must be >= 1")
    u = _check(u, ham).copy()
    t = ham.terms
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    frames = [u.copy()]
    max_residual = 0.0
    if spec.kind == "langevin":
        sigma = noise_sigma(t.s, spec.dt, spec.damping, spec.temperature)
    done = 0
    while done < nsteps:
        block = min(record_stride - done % record_stride, nsteps - done)
        if spec.kind == "midpoint":
            for _ in range(block):
                res = ll_step_midpoint(u, ham, spec.dt, spec.fp_tol, spec.max_fp_iters)
                u = res.u
                max_residual = max(max_residual, res.norm_residual)
        else:
            left = block
            while left:
                n = min(left, NOISE_CHUNK)
                K.heun_steps(u, t.s, spec.dt, spec.damping, sigma,
                             rng.standard_normal((n, len(u), 3)), *t.field_args)
                left -= n
        done += block
        if done % record_stride == 0:
            frames.append(u.copy())
    meta = {
        "integrator": spec.kind, "dt": spec.dt, "damping": spec.damping, "temperature": spec.temperature,
        "nsteps": nsteps, "stride": record_stride, "seed": seed, "mode": "dipole",
    }
    if spec.kind == "midpoint":
        meta["max_norm_residual"] = max_residual
    return Trajectory(spec.dt, record_stride, np.array(frames), t.s.copy(), ham.supercell.positions.copy(), meta)
