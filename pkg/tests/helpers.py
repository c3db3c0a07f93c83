"""Shared builders and brute-force oracles for the test suite."""
import itertools

import numpy as np
from scipy.linalg import null_space

from spindyn import crystals
from spindyn.lattice import Bond, Crystal
from spindyn.model import Hamiltonian


def random_hamiltonian(rng, dims=(2, 2, 2), biquadratic=True, anisotropy=True, field=True, scale=1.0):
    """Two-site crystal with random couplings on a handful of bonds."""
    A = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    cr = Crystal(A, [[0, 0, 0], [0.5, 0.4, 0.3]], rng.uniform(0.5, 2, 2), rng.uniform(1, 2.5, 2))
    bonds = [Bond.make(0, 1, (0, 0, 0)), Bond.make(0, 0, (1, 0, 0)), Bond.make(1, 1, (0, 1, 0)),
             Bond.make(0, 1, (0, 0, 1)), Bond.make(0, 1, (-1, 0, 0))]
    exchange = [(b, scale * rng.standard_normal((3, 3))) for b in bonds]
    bq = [(bonds[0], 0.3 * scale * rng.standard_normal()), (bonds[2], 0.3 * scale * rng.standard_normal())] if biquadratic else []
    aniso = [(0, rng.standard_normal(3), scale * rng.standard_normal()),
             (1, rng.standard_normal(3), scale * rng.standard_normal())] if anisotropy else []
    B = scale * rng.standard_normal(3) if field else np.zeros(3)
    return Hamiltonian(cr, dims, exchange, bq, aniso, B)


def random_directors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def brute_energy(u, ham):
    """Energy by explicit loops over cells and bonds (independent of the compiled path)."""
    cr = ham.crystal
    dims = ham.dims
    ns = cr.nsites

    def idx(cell, site):
        c = [cell[k] % dims[k] for k in range(3)]
        return ((c[0] * dims[1] + c[1]) * dims[2] + c[2]) * ns + site

    S = np.array([cr.spin_s[k % ns] * u[k] for k in range(len(u))])
    E = 0.0
    for cell in np.ndindex(*dims):
        for b, J in ham.exchange:
            i = idx(cell, b.site_i)
            j = idx(np.add(cell, b.cell_offset), b.site_j)
            E += S[i] @ J @ S[j]
        for b, v in ham.biquadratic:
            i = idx(cell, b.site_i)
            j = idx(np.add(cell, b.cell_offset), b.site_j)
            E += v * (S[i] @ S[j]) ** 2
        for site, axis, c2 in ham.anisotropy:
            i = idx(cell, site)
            E += c2 * (axis @ S[i]) ** 2
        for site in range(ns):
            i = idx(cell, site)
            E -= cr.g_factor[site] * ham.field @ S[i]
    return E


def heisenberg_chain(J=-1.0, n=8, s=1.0, g=1.0, field=(0, 0, 0), c2=0.0):
    cr = crystals.chain(s=s, g=g)
    aniso = [(0, [0, 0, 1], c2)] if c2 else []
    return Hamiltonian(cr, (n, 1, 1), [(Bond.make(0, 0, (1, 0, 0)), J * np.eye(3))], (), aniso, field)


def square_ferromagnet(L=4, J=-1.0, s=1.0):
    cr = crystals.square(s=s, g=1.0)
    ex = [(Bond.make(0, 0, (1, 0, 0)), J * np.eye(3)), (Bond.make(0, 0, (0, 1, 0)), J * np.eye(3))]
    return Hamiltonian(cr, (L, L, 1), ex)


def single_spin(s=1.0, g=1.0, field=(0, 0, 1.0)):
    return Hamiltonian(crystals.cubic(s=s, g=g), (1, 1, 1), (), (), (), field)


TRANSPOSE = np.eye(9)[[0, 3, 6, 1, 4, 7, 2, 5, 8]]


def signed_permutations():
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product([1, -1], repeat=3):
            M = np.zeros((3, 3), dtype=int)
            for r, (c, sg) in enumerate(zip(perm, signs)):
                M[r, c] = sg
            out.append(M)
    return out


def closure(gens):
    group = {tuple(np.eye(3, dtype=int).ravel())}
    frontier = list(group)
    while frontier:
        new = []
        for a in frontier:
            for g in gens:
                c = tuple((g @ np.array(a).reshape(3, 3)).ravel())
                if c not in group:
                    group.add(c)
                    new.append(c)
        frontier = new
    return [np.array(x).reshape(3, 3) for x in group]


def nullspace_dim(group, offset):
    """Brute-force oracle: solve the stabilizer constraints directly (cubic, one site)."""
    d = np.asarray(offset)
    rows = []
    for R in group:
        if np.array_equal(R @ d, d):
            rows.append(np.kron(R, R) - np.eye(9))
        elif np.array_equal(R @ d, -d):
            rows.append(np.kron(R, R) @ TRANSPOSE - np.eye(9))
    return null_space(np.vstack(rows)).shape[1]


def random_bdg(rng, L):
    X = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    A = X @ X.conj().T
    Y = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    B = 0.3 * (Y + Y.T)
    H = np.block([[A, B], [B.conj(), A.conj()]])
    lam = np.linalg.eigvalsh(H)[0]
    return H + (abs(lam) + rng.uniform(0.01, 1)) * np.eye(2 * L) if lam < 0.01 else H
