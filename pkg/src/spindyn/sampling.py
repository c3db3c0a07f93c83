"""Equilibrium Monte Carlo for dipole-mode configurations.

Single-site Metropolis with uniform or cone proposals, parallel tempering
over a ladder of inverse temperatures, and Wang-Landau estimation of the
density of states with canonical reweighting.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import WangLandauIncomplete
from .model import Hamiltonian, _check, energy, random_configuration
from .rng import as_generator, derive_rng

CHUNK_STEPS = 1 << 20
MIN_CONE_ANGLE = 1e-3
TARGET_ACCEPTANCE = 0.5


@dataclass
class Proposal:
    """Single-site proposal.

    kind "uniform" draws a fresh direction on the sphere; "cone" draws
    uniformly within a cone of half-angle ``cone_angle`` (radians) about the
    current direction; "auto" picks uniform when the temperature is at or
    above the coupling scale and an auto-tuned cone otherwise.
    """

    kind: str = "auto"
    cone_angle: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "cone", "auto"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not 0 < self.cone_angle <= np.pi:
            raise ValueError("cone_angle must lie in (0, pi]")


def energy_scale(ham: Hamiltonian) -> float:
    """Upper bound on the energy change of a single-site flip, over two."""
    t = ham.terms
    s = t.s
    bound = np.linalg.norm(t.zeeman, axis=1) + 2 * np.linalg.norm(t.onsite, ord=2, axis=(1, 2)) * s
    for i in range(len(s)):
        js = t.other[t.ptr[i]:t.ptr[i + 1]]
        bound[i] += np.sum(np.linalg.norm(t.inc_J[t.ptr[i]:t.ptr[i + 1]], ord=2, axis=(1, 2)) * s[js])
        bound[i] += np.sum(2 * np.abs(t.inc_b[t.ptr[i]:t.ptr[i + 1]]) * s[i] * s[js] ** 2)
    return float(np.max(bound * s)) if len(s) else 0.0


def _resolve(proposal: Proposal, ham: Hamiltonian, beta: float) -> tuple[int, float, bool]:
    """(kernel mode, cone angle, tune?) for a proposal at inverse temperature beta."""
    if proposal.kind == "uniform":
        return K.PROPOSAL_UNIFORM, np.pi, False
    if proposal.kind == "cone":
        return K.PROPOSAL_CONE, proposal.cone_angle, False
    if beta == 0 or 1.0 / beta >= energy_scale(ham):
        return K.PROPOSAL_UNIFORM, np.pi, False
    return K.PROPOSAL_CONE, proposal.cone_angle, True


def metropolis_sweep(u, ham: Hamiltonian, beta: float, rng, proposal: Proposal | None = None):
    """One sequential sweep of single-site Metropolis updates.

    Returns (new configuration, acceptance rate).  An "auto" proposal is not
    tuned here; use ``run_metropolis`` for tuned runs.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    u = _check(u, ham).copy()
    mode, angle, _ = _resolve(proposal or Proposal(), ham, beta)
    rng = as_generator(rng, "metropolis")
    n = len(u)
    t = ham.terms
    acc, _ = K.metropolis(u, t.s, np.arange(n), rng.random((n, 2)), np.zeros((n, 3)), rng.random(n),
                          mode, np.cos(angle), beta, *t.field_args)
    return u, acc / n


def batch_means_error(x: np.ndarray, nblocks: int = 20) -> float:
    """Standard error of the mean of a correlated series from block averages."""
    x = np.asarray(x, dtype=float)
    nb = min(nblocks, len(x))
    if nb < 2:
        return float("nan")
    m = len(x) // nb
    blocks = x[: m * nb].reshape(nb, m).mean(axis=1)
    return float(blocks.std(ddof=1) / np.sqrt(nb))


class _Chain:
    """Metropolis state of one replica: configuration, energy and proposal tuning."""

    def __init__(self, u, ham: Hamiltonian, beta: float, rng: np.random.Generator, proposal: Proposal):
        self.u = _check(u, ham).copy()
        self.ham = ham
        self.beta = beta
        self.rng = rng
        self.mode, self.angle, self.tune = _resolve(proposal, ham, beta)
        self.E = energy(self.u, ham)
        self.accepted = 0
        self.proposed = 0

    def run(self, nsweeps: int, tune: bool = False):
        """Advance ``nsweeps`` sweeps; returns per-sweep (energies, total moments)."""
        n = len(self.u)
        t = self.ham.terms
        E_out = np.empty(nsweeps)
        M_out = np.empty((nsweeps, 3))
        per = 1 if (tune and self.tune) else max(1, CHUNK_STEPS // n)
        done = 0
        while done < nsweeps:
            m = min(per, nsweeps - done)
            acc = K.metropolis_sweeps(self.u, t.s, self.rng.random((m * n, 2)), self.rng.random(m * n),
                                      self.mode, np.cos(self.angle), self.beta, self.E,
                                      E_out[done:done + m], M_out[done:done + m], *t.field_args)
            self.E = energy(self.u, self.ham)  # drop accumulated roundoff
            if tune and self.tune:
                self.angle = float(np.clip(self.angle * np.exp(acc / (m * n) - TARGET_ACCEPTANCE),
                                           MIN_CONE_ANGLE, np.pi))
            else:
                self.accepted += acc
                self.proposed += m * n
            done += m
        return E_out, M_out

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class MetropolisResult(NamedTuple):
    u: np.ndarray
    energies: np.ndarray  # per measured sweep
    moments: np.ndarray  # total moment per measured sweep
    acceptance: float
    cone_angle: float  # pi for uniform proposals
    beta: float

    @property
    def mean_energy(self) -> float:
        return float(self.energies.mean())

    @property
    def energy_error(self) -> float:
        return batch_means_error(self.energies)

    @property
    def specific_heat(self) -> float:
        return float(self.beta**2 * self.energies.var())


def run_metropolis(ham: Hamiltonian, beta: float, nsweeps: int, rng=None, proposal: Proposal | None = None,
                   burn_in: float = 0.5, u0=None) -> MetropolisResult:
    """Metropolis run; proposal tuning happens only during the burn-in sweeps and is then frozen."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    rng = as_generator(rng, "metropolis")
    u0 = random_configuration(ham, rng) if u0 is None else u0
    chain = _Chain(u0, ham, beta, rng, proposal or Proposal())
    nburn = int(burn_in * nsweeps)
    if nburn:
        chain.run(nburn, tune=True)
    E, M = chain.run(nsweeps - nburn)
    return MetropolisResult(chain.u, E, M, chain.acceptance, chain.angle if chain.mode == K.PROPOSAL_CONE else np.pi, beta)


def swap_probability(beta_i: float, beta_j: float, E_i: float, E_j: float) -> float:
    """Replica-exchange acceptance min(1, exp((beta_i - beta_j)(E_i - E_j)))."""
    x = (beta_i - beta_j) * (E_i - E_j)
    return 1.0 if x >= 0 else float(np.exp(x))


@dataclass
class PTReport:
    betas: np.ndarray
    mean_energy: np.ndarray
    energy_error: np.ndarray
    specific_heat: np.ndarray
    swap_attempts: np.ndarray  # per adjacent pair
    swap_accepts: np.ndarray
    acceptance: np.ndarray  # Metropolis acceptance per replica
    configs: list = field(default_factory=list)

    @property
    def swap_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.swap_accepts / self.swap_attempts


def parallel_tempering(ham: Hamiltonian, betas, nsweeps: int, swap_interval: int, master_seed: int,
                       burn_in: float = 0.5, proposal: Proposal | None = None, threads: int = 1) -> PTReport:
    """Replica-exchange Metropolis over a sorted ladder of inverse temperatures.

    Replicas sweep independently between swap rounds; rounds alternate
    between even and odd adjacent pairs and exchange configurations.
    Results do not depend on ``threads``.
    """
    betas = np.asarray(betas, dtype=float)
    if len(betas) < 2:
        raise ValueError("parallel tempering needs at least two betas")
    d = np.diff(betas)
    if not (np.all(d >= 0) or np.all(d <= 0)):
        raise ValueError("betas must be sorted")
    if swap_interval < 1 or nsweeps < 1:
        raise ValueError("nsweeps and swap_interval must be >= 1")
    if not 0 <= burn_in < 1:
        raise ValueError("burn_in must lie in [0, 1)")
    proposal = proposal or Proposal()
    nrep = len(betas)
    chains = []
    for k, b in enumerate(betas):
        r = derive_rng(master_seed, "pt-replica", k)
        chains.append(_Chain(random_configuration(ham, r), ham, b, r, proposal))
    swap_rng = derive_rng(master_seed, "pt-swap", 0)
    attempts = np.zeros(nrep - 1, dtype=np.int64)
    accepts = np.zeros(nrep - 1, dtype=np.int64)
    nburn = int(burn_in * nsweeps)
    samples = [[] for _ in range(nrep)]

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def advance(n, tune):
        work = lambda c: c.run(n, tune=tune)
        return list(pool.map(work, chains)) if pool else [work(c) for c in chains]

    done, rnd = 0, 0
    try:
        while done < nsweeps:
            n = min(swap_interval, nsweeps - done)
            if done < nburn:
                n = min(n, nburn - done)
            out = advance(n, tune=done < nburn)
            if done >= nburn:
                for k in range(nrep):
                    samples[k].append(out[k][0])
            done += n
            if done % swap_interval == 0:
                for k in range(rnd % 2, nrep - 1, 2):
                    a, b = chains[k], chains[k + 1]
                    attempts[k] += 1
                    if swap_rng.random() < swap_probability(a.beta, b.beta, a.E, b.E):
                        a.u, b.u = b.u, a.u
                        a.E, b.E = b.E, a.E
                        accepts[k] += 1
                rnd += 1
    finally:
        if pool:
            pool.shutdown()
    E = [np.concatenate(s) if s else np.array([np.nan]) for s in samples]
    return PTReport(
        betas=betas,
        mean_energy=np.array([e.mean() for e in E]),
        energy_error=np.array([batch_means_error(e) for e in E]),
        specific_heat=np.array([b**2 * e.var() for b, e in zip(betas, E)]),
        swap_attempts=attempts,
        swap_accepts=accepts,
        acceptance=np.array([c.acceptance for c in chains]),
        configs=[c.u.copy() for c in chains],
    )


@dataclass
class WangLandauState:
    energy_min: float
    energy_max: float
    nbins: int
    ln_g: np.ndarray
    histogram: np.ndarray
    visited: np.ndarray
    ln_f: float = 1.0
    reductions: int = 0
    mc_steps: int = 0

    @classmethod
    def empty(cls, energy_min: float, energy_max: float, nbins: int, ln_f: float = 1.0) -> "WangLandauState":
        if not energy_min < energy_max:
            raise ValueError("energy_min must be below energy_max")
        if nbins < 1:
            raise ValueError("nbins must be positive")
        return cls(float(energy_min), float(energy_max), int(nbins), np.zeros(nbins),
                   np.zeros(nbins, dtype=np.int64), np.zeros(nbins, dtype=bool), float(ln_f))

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.energy_min, self.energy_max, self.nbins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    def bin_of(self, E: float) -> int:
        """Uniform bins; an energy on an interior edge belongs to the higher bin."""
        if not self.energy_min <= E <= self.energy_max:
            raise ValueError(f"energy {E} outside [{self.energy_min}, {self.energy_max}]")
        w = (self.energy_max - self.energy_min) / self.nbins
        return min(int((E - self.energy_min) / w), self.nbins - 1)

    def canonicalize(self) -> None:
        """Shift ln_g so its minimum over visited bins is zero; unvisited bins are zeroed."""
        if self.visited.any():
            self.ln_g = np.where(self.visited, self.ln_g - self.ln_g[self.visited].min(), 0.0)

    def flat(self, flatness: float) -> bool:
        h = self.histogram[self.visited]
        return len(h) > 1 and h.min() > flatness * h.mean()

    def to_dict(self) -> dict:
        return {"energy_min": self.energy_min, "energy_max": self.energy_max, "nbins": self.nbins,
                "ln_g": self.ln_g.tolist(), "histogram": self.histogram.tolist(),
                "visited": self.visited.tolist(), "ln_f": self.ln_f, "reductions": self.reductions,
                "mc_steps": self.mc_steps}

    @classmethod
    def from_dict(cls, d: dict) -> "WangLandauState":
        return cls(float(d["energy_min"]), float(d["energy_max"]), int(d["nbins"]),
                   np.asarray(d["ln_g"], dtype=float), np.asarray(d["histogram"], dtype=np.int64),
                   np.asarray(d["visited"], dtype=bool), float(d["ln_f"]), int(d["reductions"]),
                   int(d["mc_steps"]))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "WangLandauState":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def wang_landau(ham: Hamiltonian, u, energy_min: float, energy_max: float, nbins: int, flatness: float = 0.8,
                ln_f_final: float = 1e-6, max_mc_steps: int = 10**7, rng=None, proposal: Proposal | None = None,
                check_every: int | None = None, state: WangLandauState | None = None) -> WangLandauState:
    """Wang-Landau random walk in energy with halving modification factor.

    Pass ``state`` to resume from a checkpoint.  Raises WangLandauIncomplete,
    carrying the partial state, if ``max_mc_steps`` single-site steps do not
    bring ln_f below ``ln_f_final``.
    """
    if not 0 < flatness < 1:
        raise ValueError("flatness must lie in (0, 1)")
    if ln_f_final <= 0:
        raise ValueError("ln_f_final must be positive")
    proposal = proposal or Proposal("cone", 1.0)
    if proposal.kind == "auto":
        raise ValueError("Wang-Landau needs a fixed proposal (uniform or cone)")
    mode, angle, _ = _resolve(proposal, ham, 1.0)
    u = _check(u, ham).copy()
    st = state if state is not None else WangLandauState.empty(energy_min, energy_max, nbins)
    E = energy(u, ham)
    st.bin_of(E)  # range check
    rng = as_generator(rng, "wang-landau")
    n = len(u)
    check_every = check_every or 100 * n
    t = ham.terms
    budget = max_mc_steps - st.mc_steps
    while st.ln_f >= ln_f_final:
        if budget <= 0:
            st.canonicalize()
            raise WangLandauIncomplete(
                f"Wang-Landau stopped after {st.mc_steps} steps with ln_f = {st.ln_f:.3g}", state=st)
        # chunks are whole multiples of check_every so the flatness checks land on a fixed schedule
        m = min(budget, max(check_every, CHUNK_STEPS // check_every * check_every))
        steps, E, ln_f, red = K.wang_landau(
            u, t.s, E, st.energy_min, st.energy_max, st.ln_g, st.histogram, st.visited, st.ln_f, ln_f_final,
            flatness, check_every, rng.integers(0, n, m), rng.random((m, 2)), rng.random(m), mode,
            np.cos(angle), *t.field_args)
        st.ln_f, st.reductions = ln_f, st.reductions + red
        st.mc_steps += steps
        budget -= steps
        E = energy(u, ham)
    st.canonicalize()
    return st


class ThermoTable(NamedTuple):
    betas: np.ndarray
    mean_energy: np.ndarray
    specific_heat: np.ndarray


def wl_thermodynamics(state: WangLandauState, betas) -> ThermoTable:
    """Canonical averages from the density of states, evaluated at bin centres."""
    if not state.visited.any():
        raise ValueError("Wang-Landau state has no visited bins")
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    Ec = state.centers[state.visited]
    lg = state.ln_g[state.visited]
    a = lg[None, :] - betas[:, None] * Ec[None, :]
    w = np.exp(a - a.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ Ec
    var = np.maximum(w @ Ec**2 - mean**2, 0.0)
    return ThermoTable(betas, mean, betas**2 * var)
