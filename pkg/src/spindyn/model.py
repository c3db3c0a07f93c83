"""Classical spin Hamiltonian on a periodic supercell.

Energy of a dipole configuration with directors ``u_i`` and moments
``S_i = s_i u_i``::

    E = sum_bonds S_i . J S_j + b (S_i . S_j)^2
      + sum_sites c2 (n . S_i)^2 - g_i s_i B . u_i

Every crystal bond is counted once per supercell cell.  Positive diagonal
``J`` is antiferromagnetic.  Units: hbar = k_B = 1 and ``B`` is an energy per
unit moment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as K
from .lattice import Bond, Crystal, SiteTable, SizeError, build_supercell, site_index


class SupercellTerms(NamedTuple):
    """Flat arrays consumed by the compiled kernels."""

    s: np.ndarray  # (N,)
    g: np.ndarray  # (N,)
    pair_i: np.ndarray  # (nb,) each supercell bond once
    pair_j: np.ndarray
    pair_J: np.ndarray  # (nb, 3, 3)
    pair_b: np.ndarray  # (nb,)
    ptr: np.ndarray  # (N+1,) CSR offsets into the incidence arrays
    other: np.ndarray  # (2 nb,) neighbour index
    inc_J: np.ndarray  # (2 nb, 3, 3) J or J^T as seen from the owning site
    inc_b: np.ndarray  # (2 nb,)
    onsite: np.ndarray  # (N, 3, 3) sum of c2 n n^T
    zeeman: np.ndarray  # (N, 3) g_i B

    @property
    def field_args(self):
        return (self.ptr, self.other, self.inc_J, self.inc_b, self.onsite, self.zeeman)

    @property
    def energy_args(self):
        return (self.pair_i, self.pair_j, self.pair_J, self.pair_b, self.onsite, self.zeeman)


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Crystal-level terms plus the supercell they are evaluated on.

    ``exchange`` and ``biquadratic`` hold every bond explicitly (already
    propagated by symmetry if desired); ``anisotropy`` entries apply to the
    given crystal site in every cell.
    """

    crystal: Crystal
    dims: tuple = (1, 1, 1)
    exchange: Sequence[tuple[Bond, np.ndarray]] = ()
    biquadratic: Sequence[tuple[Bond, float]] = ()
    anisotropy: Sequence[tuple[int, np.ndarray, float]] = ()
    field: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "field", np.asarray(self.field, dtype=float).reshape(3))
        exch = []
        for b, J in self.exchange:
            b, J = Bond.make(*b), np.asarray(J, dtype=float)
            exch.append((b, J) if b.is_canonical() else (b.canonical(), J.T))
        object.__setattr__(self, "exchange", tuple(exch))
        bq = tuple((Bond.make(*b).canonical(), float(v)) for b, v in self.biquadratic)
        object.__setattr__(self, "biquadratic", bq)
        aniso = []
        for site, axis, c2 in self.anisotropy:
            axis = np.asarray(axis, dtype=float)
            axis = axis / np.linalg.norm(axis)
            aniso.append((int(site), axis, float(c2)))
        object.__setattr__(self, "anisotropy", tuple(aniso))

    def with_dims(self, dims) -> "Hamiltonian":
        return Hamiltonian(self.crystal, tuple(dims), self.exchange, self.biquadratic, self.anisotropy, self.field)

    @property
    def has_biquadratic(self) -> bool:
        return any(v != 0.0 for _, v in self.biquadratic)

    @cached_property
    def supercell(self) -> SiteTable:
        return build_supercell(self.crystal, self.dims)

    @property
    def nsites(self) -> int:
        return len(self.supercell.site)

    @cached_property
    def terms(self) -> SupercellTerms:
        return _compile(self)


def _compile(ham: Hamiltonian) -> SupercellTerms:
    cr = ham.crystal
    table = ham.supercell
    N = len(table.site)
    ncell = N // cr.nsites
    cells = table.cell[:: cr.nsites]

    couplings: dict[Bond, list] = {}
    for b, J in ham.exchange:
        entry = couplings.setdefault(b, [np.zeros((3, 3)), 0.0])
        entry[0] = entry[0] + J
    for b, v in ham.biquadratic:
        entry = couplings.setdefault(b, [np.zeros((3, 3)), 0.0])
        entry[1] += v

    pi, pj, pJ, pb = [], [], [], []
    for bond, (J, bq) in sorted(couplings.items()):
        ii = site_index(ham.dims, cr.nsites, cells, np.full(ncell, bond.site_i))
        jj = site_index(ham.dims, cr.nsites, cells + np.asarray(bond.cell_offset), np.full(ncell, bond.site_j))
        if np.any(ii == jj):
            raise SizeError(f"supercell {ham.dims} too small: bond {tuple(bond)} wraps onto its own site")
        pi.append(ii)
        pj.append(jj)
        pJ.append(np.broadcast_to(J, (ncell, 3, 3)))
        pb.append(np.full(ncell, bq))
    if pi:
        pair_i = np.concatenate(pi).astype(np.int64)
        pair_j = np.concatenate(pj).astype(np.int64)
        pair_J = np.ascontiguousarray(np.concatenate(pJ), dtype=float)
        pair_b = np.concatenate(pb).astype(float)
    else:
        pair_i = pair_j = np.zeros(0, dtype=np.int64)
        pair_J = np.zeros((0, 3, 3))
        pair_b = np.zeros(0)

    # incidence lists: each bond appears once for each endpoint
    owner = np.concatenate([pair_i, pair_j])
    other = np.concatenate([pair_j, pair_i])
    inc_J = np.concatenate([pair_J, pair_J.transpose(0, 2, 1)])
    inc_b = np.concatenate([pair_b, pair_b])
    order = np.argsort(owner, kind="stable")
    ptr = np.zeros(N + 1, dtype=np.int64)
    np.add.at(ptr, owner + 1, 1)
    ptr = np.cumsum(ptr)

    onsite = np.zeros((N, 3, 3))
    for site, axis, c2 in ham.anisotropy:
        onsite[table.site == site] += c2 * np.outer(axis, axis)
    s = cr.spin_s[table.site].copy()
    g = cr.g_factor[table.site].copy()
    zeeman = g[:, None] * ham.field[None, :]
    return SupercellTerms(
        s, g, pair_i, pair_j, pair_J, pair_b, ptr,
        np.ascontiguousarray(other[order]), np.ascontiguousarray(inc_J[order]),
        np.ascontiguousarray(inc_b[order]), onsite, np.ascontiguousarray(zeeman),
    )


def random_configuration(ham: Hamiltonian, rng) -> np.ndarray:
    """Directors drawn uniformly on the sphere."""
    rng = np.random.default_rng(rng)
    v = rng.standard_normal((ham.nsites, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _check(u, ham):
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (ham.nsites, 3):
        raise ValueError(f"configuration shape {u.shape} does not match supercell with {ham.nsites} sites")
    return u


def moments(u, ham: Hamiltonian) -> np.ndarray:
    return ham.terms.s[:, None] * np.asarray(u)


def energy(u, ham: Hamiltonian) -> float:
    u = _check(u, ham)
    return float(K.energy(moments(u, ham), *ham.terms.energy_args))


def local_fields(u, ham: Hamiltonian) -> np.ndarray:
    """Effective fields ``-dE/dS_i`` for all sites, shape (N, 3)."""
    u = _check(u, ham)
    out = np.empty_like(u)
    K.fields(moments(u, ham), *ham.terms.field_args, out)
    return out


def local_field(u, ham: Hamiltonian, i: int) -> np.ndarray:
    u = _check(u, ham)
    S = moments(u, ham)
    out = np.empty(3)
    K.site_field(S, int(i), S[i], *ham.terms.field_args, out)
    return out


def energy_delta(u, ham: Hamiltonian, i: int, u_new) -> float:
    u = _check(u, ham)
    S = moments(u, ham)
    Snew = ham.terms.s[i] * np.asarray(u_new, dtype=float)
    return float(K.site_energy_delta(S, int(i), Snew, *ham.terms.field_args))


def tangential(u, B) -> np.ndarray:
    return B - np.sum(u * B, axis=-1, keepdims=True) * u


class MinimizeResult(NamedTuple):
    u: np.ndarray
    iterations: int
    gradnorm: float
    converged: bool
    energy: float


@dataclass
class MinimizeOptions:
    step: float = 0.1
    tol: float = 1e-10
    max_iters: int = 100_000

    def __post_init__(self):
        if self.step <= 0 or self.tol <= 0 or self.max_iters <= 0:
            raise ValueError("minimizer options must be positive")


def minimize(u, ham: Hamiltonian, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Projected gradient descent on the product of spheres.

    The trial update is ``normalize(u + step * tangential(B_eff))``; a step
    that raises the energy is retried with half the step size, and an accepted
    step lets the size grow back by 10% up to ``opts.step``.
    """
    opts = opts or MinimizeOptions()
    u = _check(u, ham).copy()
    E = energy(u, ham)
    step = opts.step
    it = 0
    while True:
        g = tangential(u, local_fields(u, ham))
        gnorm = float(np.max(np.linalg.norm(g, axis=1)))
        if gnorm < opts.tol:
            return MinimizeResult(u, it, gnorm, True, E)
        if it >= opts.max_iters:
            return MinimizeResult(u, it, gnorm, False, E)
        it += 1
        while True:
            trial = u + step * g
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            Et = energy(trial, ham)
            # roundoff slack so steps at the 1e-16 level are not rejected forever
            if Et <= E + 4 * np.finfo(float).eps * abs(E):
                break
            step *= 0.5
            if step < 1e-300:
                return MinimizeResult(u, it, gnorm, False, E)
        u, E = trial, Et
        step = min(opts.step, step * 1.1)
