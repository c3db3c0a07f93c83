"""Linear spin-wave theory about a commensurate ordered state.

Each site is expanded in a local frame ``(e1, e2, e3)`` with ``e3`` along
the ordered moment and ``u = e1 + i e2``:
``S ~ sqrt(s/2) (conj(u) b + u b^dag) + e3 (s - b^dag b)``.
Momentum-space bosons carry the site position in their phase, so hopping and
pairing amplitudes acquire ``exp(i q.d)`` with ``d`` the true bond
displacement, and intensities need no extra phase factors.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .correlate import perp_projector, to_cartesian
from .errors import InstabilityError
from .lattice import build_supercell, site_index
from .model import Hamiltonian

STATIONARY_TOL = 1e-8
GOLDSTONE_SHIFT = 1e-10
ZERO_ENERGY = 1e-6
INSTABILITY_TOL = 1e-8


def local_frames(directors) -> np.ndarray:
    """Frames of shape (L, 3, 3); ``frames[i]`` has rows e1, e2, e3.

    e1, e2 come from the minimal rotation taking z to e3 (about z x e3).
    At e3 = -z the frame is (x, -y, -z).  Directors must be unit vectors;
    e3 is the input director itself.
    """
    D = np.atleast_2d(np.asarray(directors, dtype=float))
    F = np.empty((len(D), 3, 3))
    for i, (x, y, z) in enumerate(D):
        if z <= -1 + 1e-12:
            e1 = np.array([1.0, 0.0, 0.0])
        else:
            # Rodrigues: R = I + [k]x + [k]x^2 / (1 + z), k = z_hat x e3
            e1 = np.array([1 - x * x / (1 + z), -x * y / (1 + z), -x])
        e3 = D[i]
        e1 = e1 - (e1 @ e3) * e3
        e1 /= np.linalg.norm(e1)
        F[i] = [e1, np.cross(e3, e1), e3]
    return F


def _magnetic_bonds(ham: Hamiltonian, dims):
    """Bonds of the magnetic cell as (a, b, J, d) with a, b magnetic-cell site indices.

    Bonds whose endpoints wrap onto the same magnetic-cell site are kept; the
    Cartesian displacement ``d`` distinguishes the image.
    """
    cr = ham.crystal
    table = build_supercell(cr, dims)
    cells = table.cell[table.site == 0]
    A, B, Js, ds = [], [], [], []
    for bond, J in ham.exchange:
        a = site_index(dims, cr.nsites, cells, np.full(len(cells), bond.site_i))
        b = site_index(dims, cr.nsites, cells + np.asarray(bond.cell_offset), np.full(len(cells), bond.site_j))
        d = cr.cartesian(np.asarray(bond.cell_offset) + cr.sites[bond.site_j] - cr.sites[bond.site_i])
        A.append(a)
        B.append(b)
        Js.append(np.broadcast_to(J, (len(cells), 3, 3)))
        ds.append(np.broadcast_to(d, (len(cells), 3)))
    if not A:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3, 3)), np.zeros((0, 3))
    return np.concatenate(A), np.concatenate(B), np.concatenate(Js), np.concatenate(ds)


@dataclass(frozen=True, eq=False)
class MagneticCell:
    """An ordered state on ``dims`` crystal cells, sites ordered as in the supercell table."""

    ham: Hamiltonian
    dims: tuple
    ground_state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        u = np.asarray(self.ground_state, dtype=float)
        if u.shape != (self.nsites, 3):
            raise ValueError(f"ground state must have shape ({self.nsites}, 3)")
        object.__setattr__(self, "ground_state", u / np.linalg.norm(u, axis=1, keepdims=True))
        torque = np.linalg.norm(np.cross(self.ground_state, self.fields()), axis=1)
        worst = int(np.argmax(torque)) if len(torque) else 0
        if len(torque) and torque[worst] > STATIONARY_TOL:
            raise ValueError(f"ground state is not stationary: tangential field {torque[worst]:.3g} at site {worst}")

    @cached_property
    def table(self):
        return build_supercell(self.ham.crystal, self.dims)

    @property
    def nsites(self) -> int:
        return int(np.prod(self.dims)) * self.ham.crystal.nsites

    @cached_property
    def spin_s(self) -> np.ndarray:
        return self.ham.crystal.spin_s[self.table.site]

    @cached_property
    def g(self) -> np.ndarray:
        return self.ham.crystal.g_factor[self.table.site]

    @cached_property
    def bonds(self):
        return _magnetic_bonds(self.ham, self.dims)

    @cached_property
    def onsite(self) -> np.ndarray:
        """Quadratic onsite forms per magnetic-cell site."""
        Q = np.zeros((self.nsites, 3, 3))
        for site, axis, c2 in self.ham.anisotropy:
            Q[self.table.site == site] += c2 * np.outer(axis, axis)
        return Q

    def fields(self) -> np.ndarray:
        S = self.spin_s[:, None] * self.ground_state
        a, b, J, _ = self.bonds
        B = self.g[:, None] * self.ham.field[None, :] - 2 * np.einsum("iab,ib->ia", self.onsite, S)
        np.add.at(B, a, -np.einsum("kab,kb->ka", J, S[b]))
        np.add.at(B, b, -np.einsum("kba,kb->ka", J, S[a]))
        return B

    @cached_property
    def frames(self) -> np.ndarray:
        return local_frames(self.ground_state)

    @cached_property
    def _amplitudes(self):
        """Per bond (including onsite forms as d = 0 bonds): hopping t, pairing p, longitudinal c."""
        a, b, J, d = self.bonds
        L = self.nsites
        a = np.concatenate([a, np.arange(L)])
        b = np.concatenate([b, np.arange(L)])
        J = np.concatenate([J, self.onsite])
        d = np.concatenate([d, np.zeros((L, 3))])
        F = self.frames
        u = F[:, 0] + 1j * F[:, 1]
        e3 = F[:, 2]
        s = self.spin_s
        amp = np.sqrt(s[a] * s[b]) / 2
        t = amp * np.einsum("ka,kab,kb->k", u[a], J, u[b].conj())
        p = amp * np.einsum("ka,kab,kb->k", u[a], J, u[b])
        c = np.einsum("ka,kab,kb->k", e3[a], J, e3[b])
        diag = np.zeros(L)
        np.add.at(diag, a, -s[b] * c)
        np.add.at(diag, b, -s[a] * c)
        diag += self.g * (e3 @ self.ham.field)
        return a, b, d, t, p, diag


def spinwave_hamiltonian(cell: MagneticCell, q_rlu) -> np.ndarray:
    """Bosonic Hamiltonian H(q) of size 2L x 2L; q in crystal reciprocal-lattice units."""
    if cell.ham.has_biquadratic:
        raise ValueError("biquadratic couplings are not supported by spin-wave theory here")
    q = to_cartesian(cell.ham.crystal, q_rlu)
    L = cell.nsites
    a, b, d, t, p, diag = cell._amplitudes

    def blocks(qv):
        ph = np.exp(1j * (d @ qv))
        A = np.diag(diag).astype(complex)
        Bm = np.zeros((L, L), dtype=complex)
        np.add.at(A, (a, b), t * ph)
        np.add.at(A, (b, a), t.conj() * ph.conj())
        np.add.at(Bm, (a, b), p * ph)
        np.add.at(Bm, (b, a), p * ph.conj())
        return A, Bm

    A, Bm = blocks(q)
    Am, _ = blocks(-q)
    return np.block([[A, Bm], [Bm.conj().T, Am.conj()]])


def colpa_diagonalize(H: np.ndarray, q=None) -> tuple[np.ndarray, np.ndarray]:
    """Para-diagonalize a positive (semi)definite bosonic Hamiltonian.

    Returns (omega, T) with omega (L,) descending and ``T^dag H T =
    diag(omega, omega)``, ``T^dag g T = g``.  A Hamiltonian with eigenvalues
    below ``-1e-8 max(1, |H|)`` raises InstabilityError.  If the Cholesky
    factorization fails at a semidefinite point, ``1e-10 max(1, |H|)`` is
    added to the diagonal; T then diagonalizes the shifted matrix, while the
    energies are taken from the eigenvalues of ``g H`` itself so that
    Goldstone modes come out below the zero threshold.
    """
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    if n % 2 or H.shape != (n, n):
        raise ValueError("H must be 2L x 2L")
    L = n // 2
    H = 0.5 * (H + H.conj().T)
    scale = max(1.0, float(np.max(np.abs(H))))
    lam = np.linalg.eigvalsh(H)[0]
    if lam < -INSTABILITY_TOL * scale:
        where = "" if q is None else f" at q = {np.round(np.asarray(q, dtype=float), 12).tolist()}"
        raise InstabilityError(f"spin-wave Hamiltonian is not positive semidefinite{where} "
                               f"(min eigenvalue {lam:.3g}); the state is not a local minimum",
                               q=q, min_eigenvalue=lam)
    g = np.concatenate([np.ones(L), -np.ones(L)])
    shifted = False
    try:
        Kc = np.linalg.cholesky(H).conj().T
    except np.linalg.LinAlgError:
        Kc = np.linalg.cholesky(H + GOLDSTONE_SHIFT * scale * np.eye(n)).conj().T
        shifted = True
    W = Kc @ (g[:, None] * Kc.conj().T)
    E, U = np.linalg.eigh(0.5 * (W + W.conj().T))
    # eigh is ascending: the last L are positive (reverse for descending), the first L negative
    order = np.concatenate([np.arange(n - 1, L - 1, -1), np.arange(L)])
    E, U = E[order], U[:, order]
    T = np.linalg.solve(Kc, U * np.sqrt(np.abs(E))[None, :])
    omega = E[:L].copy()
    if shifted:
        ev = np.sort(np.linalg.eigvals(g[:, None] * H).real)[::-1]
        omega = np.maximum(ev[:L], 0.0)
    omega[omega < ZERO_ENERGY] = 0.0
    return omega, T


def paraunitarity_residual(T: np.ndarray) -> float:
    L = T.shape[0] // 2
    g = np.diag(np.concatenate([np.ones(L), -np.ones(L)]))
    return float(np.max(np.abs(T.conj().T @ g @ T - g)))


class Dispersion(NamedTuple):
    q_rlu: np.ndarray
    omega: np.ndarray  # (nq, L)
    T: np.ndarray  # (nq, 2L, 2L), columns reordered consistently with omega


def dispersion(cell: MagneticCell, q_rlu, match: str = "overlap") -> Dispersion:
    """Mode energies along a list of momenta.

    With match="overlap" modes are followed from one q to the next by
    maximal eigenvector overlap; match="sort" keeps descending energies.
    """
    if match not in ("overlap", "sort"):
        raise ValueError("match must be 'overlap' or 'sort'")
    qs = np.atleast_2d(np.asarray(q_rlu, dtype=float))
    L = cell.nsites
    W = np.empty((len(qs), L))
    Ts = np.empty((len(qs), 2 * L, 2 * L), dtype=complex)
    for k, q in enumerate(qs):
        w, T = colpa_diagonalize(spinwave_hamiltonian(cell, q), q)
        if match == "overlap" and k > 0:
            ov = np.abs(Ts[k - 1][:, :L].conj().T @ T[:, :L])
            _, perm = linear_sum_assignment(-ov)
            w = w[perm]
            T = T[:, np.concatenate([perm, perm + L])]
        W[k], Ts[k] = w, T
    return Dispersion(qs, W, Ts)


class ModeIntensities(NamedTuple):
    omega: np.ndarray  # (nq, L)
    S: np.ndarray  # (nq, L, 3, 3) per magnetic-cell site


def mode_intensities(cell: MagneticCell, q_rlu) -> ModeIntensities:
    """One-magnon correlation tensor of each mode, normalized per magnetic-cell site."""
    disp = dispersion(cell, q_rlu, match="sort")
    L = cell.nsites
    F = cell.frames
    u = F[:, 0] + 1j * F[:, 1]
    r = np.sqrt(cell.spin_s / 2)[:, None]
    # F^a_m = sum_i sqrt(s_i/2) (conj(u_i^a) T_{i,m} + u_i^a T_{i+L,m})
    amp = np.einsum("ia,qim->qma", r * u.conj(), disp.T[:, :L, :L]) + \
        np.einsum("ia,qim->qma", r * u, disp.T[:, L:, :L])
    S = np.einsum("qma,qmb->qmab", amp, amp.conj()) / L
    return ModeIntensities(disp.omega, S)


class LSWTSpectrum(NamedTuple):
    q_rlu: np.ndarray
    omegas: np.ndarray
    S: np.ndarray  # (nq, nw, 3, 3)
    intensity: np.ndarray  # (nq, nw) perpendicular-projected
    q_is_zero: np.ndarray
    modes: ModeIntensities


def lswt_intensities(cell: MagneticCell, q_rlu, omegas, sigma: float) -> LSWTSpectrum:
    """Gaussian-broadened one-magnon spectrum and its polarization-projected intensity."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    qs = np.atleast_2d(np.asarray(q_rlu, dtype=float))
    omegas = np.asarray(omegas, dtype=float)
    modes = mode_intensities(cell, qs)
    x = omegas[None, :, None] - modes.omega[:, None, :]
    kernel = np.exp(-0.5 * (x / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
    S = np.einsum("qwm,qmab->qwab", kernel, modes.S)
    P, zero = perp_projector(to_cartesian(cell.ham.crystal, qs))
    I = np.einsum("qab,qwab->qw", P, S).real
    return LSWTSpectrum(qs, omegas, S, I, zero, modes)
