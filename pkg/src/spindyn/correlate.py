"""Classical structure factors.

Conventions: ``m(q) = sum_i s_i u_i exp(-i q.r_i)`` with the actual site
positions ``r_i``; ``S(q) = <m(q) m(q)^dag> / N``.  Dynamical spectra use
``m(q, w) = sum_t w_t exp(i w t) m(q, t)`` normalized so that the
rectangular-window spectrum integrates over w to the time-averaged static
structure factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .lattice import Crystal, reciprocal_lattice

Q_ZERO_TOL = 1e-12
MAX_PHASE_ELEMENTS = 1 << 24


@dataclass
class QGrid:
    """Momenta in reciprocal-lattice units of the crystal, with Cartesian copies.

    kind "path": ``arc`` holds the cumulative Cartesian length along the path.
    kind "grid": the supercell-commensurate set for ``dims``.
    kind "snapped": path points moved to their nearest commensurate points;
    ``source`` holds the requested momenta.
    """

    kind: str
    rlu: np.ndarray
    cart: np.ndarray
    arc: np.ndarray | None = None
    vertices: np.ndarray | None = None
    dims: tuple | None = None
    source: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rlu)


def to_cartesian(crystal: Crystal, q_rlu) -> np.ndarray:
    return np.asarray(q_rlu, dtype=float) @ reciprocal_lattice(crystal).T


def to_rlu(crystal: Crystal, q_cart) -> np.ndarray:
    return np.asarray(q_cart, dtype=float) @ np.asarray(crystal.lattice_vectors, dtype=float) / (2 * np.pi)


def qpath(crystal: Crystal, vertices, points_per_segment) -> QGrid:
    """Piecewise-linear path; each junction vertex appears once."""
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    if len(V) < 2 or V.shape[1] != 3:
        raise ValueError("a path needs at least two 3-component vertices")
    nseg = len(V) - 1
    counts = np.broadcast_to(np.asarray(points_per_segment, dtype=int), (nseg,))
    if np.any(counts < 2):
        raise ValueError("each segment needs at least 2 points")
    pts = [V[0][None]]
    for k in range(nseg):
        t = np.linspace(0.0, 1.0, counts[k])[1:, None]
        pts.append((1 - t) * V[k] + t * V[k + 1])
    rlu = np.concatenate(pts)
    cart = to_cartesian(crystal, rlu)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(cart, axis=0), axis=1))])
    return QGrid("path", rlu, cart, arc=arc, vertices=V)


def commensurate_grid(crystal: Crystal, dims) -> QGrid:
    """All q = sum_k m_k b_k / dims_k with 0 <= m_k < dims_k, in C order."""
    dims = tuple(int(d) for d in dims)
    m = np.array(list(np.ndindex(*dims)), dtype=float)
    rlu = m / np.array(dims)
    return QGrid("grid", rlu, to_cartesian(crystal, rlu), dims=dims)


def snap_to_commensurate(crystal: Crystal, grid: QGrid, dims) -> QGrid:
    """Replace each momentum by the nearest point with integer ``q * dims``."""
    d = np.array(dims, dtype=float)
    rlu = np.round(grid.rlu * d) / d
    shift = np.linalg.norm(to_cartesian(crystal, rlu) - grid.cart, axis=1)
    return QGrid("snapped", rlu, to_cartesian(crystal, rlu), arc=grid.arc, vertices=grid.vertices,
                 dims=tuple(int(x) for x in dims), source=grid.rlu.copy(),
                 meta={"max_snap_distance": float(shift.max(initial=0.0))})


def _fourier(moments: np.ndarray, positions: np.ndarray, q_cart: np.ndarray) -> np.ndarray:
    """``sum_i M_i exp(-i q.r_i)`` for moments of shape (..., N, 3); returns (..., nq, 3)."""
    N = positions.shape[0]
    lead = moments.shape[:-2]
    M = moments.reshape(-1, N, 3)
    out = np.empty((M.shape[0], len(q_cart), 3), dtype=complex)
    step = max(1, MAX_PHASE_ELEMENTS // max(N, 1))
    for a in range(0, len(q_cart), step):
        ph = np.exp(-1j * (q_cart[a:a + step] @ positions.T))
        out[:, a:a + step] = np.einsum("qi,tia->tqa", ph, M)
    return out.reshape(*lead, len(q_cart), 3)


def static_structure_factor(configs, spin_s, positions, grid: QGrid) -> np.ndarray:
    """Configuration-averaged ``S^{ab}(q)``, shape (nq, 3, 3).

    ``configs`` is a sequence of director arrays (N, 3) or one array
    (nconf, N, 3).
    """
    U = np.asarray(configs, dtype=float)
    if U.ndim == 2:
        U = U[None]
    if U.shape[0] < 1:
        raise ValueError("need at least one configuration")
    s = np.asarray(spin_s, dtype=float)
    m = _fourier(U * s[None, :, None], np.asarray(positions, dtype=float), grid.cart)
    return np.einsum("cqa,cqb->qab", m, m.conj()) / (U.shape[1] * U.shape[0])


WINDOWS = ("rectangular", "hann")


def time_window(kind: str, n: int) -> np.ndarray:
    if kind == "rectangular":
        return np.ones(n)
    if kind == "hann":
        # periodic Hann: sum of squares is exactly 3n/8
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    raise ValueError(f"unknown window {kind!r}; choose from {WINDOWS}")


@dataclass
class SqwEstimate:
    S: np.ndarray  # (nq, nw, 3, 3) complex
    omegas: np.ndarray  # ascending
    grid: QGrid
    window: str
    subtract_mean: bool
    members: int
    frame_dt: float

    @property
    def delta_omega(self) -> float:
        return float(self.omegas[1] - self.omegas[0]) if len(self.omegas) > 1 else float("nan")

    def metadata(self) -> dict:
        meta = {"window": self.window, "subtract_mean": self.subtract_mean, "members": self.members,
                "frame_dt": self.frame_dt, "nomega": len(self.omegas), "delta_omega": self.delta_omega,
                "grid_kind": self.grid.kind, "nq": len(self.grid)}
        if self.grid.source is not None:
            meta["snapped_from"] = self.grid.source.tolist()
            meta["snapped_to"] = self.grid.rlu.tolist()
        return meta


def _check_ensemble(ensemble) -> None:
    if not ensemble:
        raise ValueError("empty trajectory ensemble")
    ref = ensemble[0]
    for tr in ensemble[1:]:
        if (tr.frames.shape != ref.frames.shape or not np.isclose(tr.frame_dt, ref.frame_dt, rtol=1e-12, atol=0)
                or not np.array_equal(tr.spin_s, ref.spin_s) or not np.allclose(tr.positions, ref.positions)):
            raise ValueError("trajectories differ in frame count, frame spacing, spins or positions")
    if ref.frames.shape[0] < 2:
        raise ValueError("need at least two frames")


def dynamic_structure_factor(ensemble: list[Trajectory], grid: QGrid, window: str = "rectangular",
                             subtract_mean: bool = True) -> SqwEstimate:
    """Ensemble-averaged S^{ab}(q, w) on the DFT frequencies of the frame series."""
    _check_ensemble(ensemble)
    ref = ensemble[0]
    nt, N = ref.frames.shape[:2]
    w = time_window(window, nt)
    dw = 2 * np.pi / (nt * ref.frame_dt)
    # Parseval: sum_w |X_w|^2 = nt sum_t w_t^2 |m_t|^2, so this divisor turns the
    # omega-integral into the window-weighted time average of the static S(q)
    norm = N * nt * float(w @ w) * dw
    total = np.zeros((len(grid), nt, 3, 3), dtype=complex)
    for tr in ensemble:  # fixed order keeps the reduction bitwise reproducible
        M = tr.moments
        if subtract_mean:
            M = M - M.mean(axis=0, keepdims=True)
        m = _fourier(M, tr.positions, grid.cart)  # (nt, nq, 3)
        X = np.fft.ifft(w[:, None, None] * m, axis=0) * nt  # sum_t w_t exp(+i w t) m_t
        X = np.fft.fftshift(X, axes=0)
        total += np.einsum("wqa,wqb->qwab", X, X.conj())
    omegas = np.fft.fftshift(np.fft.fftfreq(nt, ref.frame_dt)) * 2 * np.pi
    return SqwEstimate(total / (norm * len(ensemble)), omegas, grid, window, subtract_mean, len(ensemble),
                       ref.frame_dt)


def perp_projector(q_cart) -> tuple[np.ndarray, np.ndarray]:
    """``delta - qhat qhat`` per momentum and a flag marking q = 0 (identity returned there)."""
    q = np.atleast_2d(np.asarray(q_cart, dtype=float))
    n = np.linalg.norm(q, axis=1)
    zero = n < Q_ZERO_TOL
    qh = np.where(zero[:, None], 0.0, q / np.where(zero, 1.0, n)[:, None])
    return np.eye(3)[None] - qh[:, :, None] * qh[:, None, :], zero


def perp_intensity(S, q_cart) -> tuple[np.ndarray, np.ndarray]:
    """Polarization-projected intensity for S of shape (nq, ..., 3, 3).

    Returns (intensity, q_is_zero); at q = 0 the unprojected trace is used.
    """
    S = np.asarray(S)
    P, zero = perp_projector(q_cart)
    P = P.reshape(P.shape[:1] + (1,) * (S.ndim - 3) + (3, 3))
    return np.einsum("...ab,...ab->...", P, S).real, zero
