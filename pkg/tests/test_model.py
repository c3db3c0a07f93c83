import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from helpers import brute_energy, heisenberg_chain, random_directors, random_hamiltonian, single_spin
from spindyn import crystals
from spindyn.lattice import Bond, Crystal
from spindyn.model import (
    Hamiltonian, MinimizeOptions, energy, energy_delta, local_field, local_fields, minimize, tangential,
)


def pair(J=-1.0, s=1.0, **kw):
    """Two sites in one cell joined by a single bond."""
    cr = Crystal(np.eye(3) * 5, [[0, 0, 0], [0.2, 0, 0]], s, 1.0)
    return Hamiltonian(cr, (1, 1, 1), [(Bond.make(0, 1, (0, 0, 0)), J * np.eye(3))], **kw)


def test_energy_examples():
    assert energy([[0, 0, 1], [0, 0, 1]], pair()) == pytest.approx(-1.0)
    assert energy([[0, 0, 1]], single_spin(s=0.5, g=2.0, field=(0, 0, 2))) == pytest.approx(-2.0)
    bq = Hamiltonian(crystals.chain(s=1.0), (2, 1, 1), (), [(Bond.make(0, 0, (1, 0, 0)), 1.0)])
    assert energy([[1, 0, 0], [0, 1, 0]], bq) == pytest.approx(0.0)


def test_energy_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(5):
        ham = random_hamiltonian(rng)
        u = random_directors(rng, ham.nsites)
        assert energy(u, ham) == pytest.approx(brute_energy(u, ham), rel=1e-12, abs=1e-12)


def test_local_field_examples():
    ham = single_spin(s=0.7, g=2.0, field=(0.1, -0.3, 2.0))
    assert np.allclose(local_field([[1, 0, 0]], ham, 0), 2.0 * np.array([0.1, -0.3, 2.0]))
    assert np.allclose(local_field([[0, 0, 1], [0, 0, 1]], pair(), 0), [0, 0, 1])


def fd_gradient(u, ham, h=1e-5):
    """Central finite differences of E with respect to the moment S_i = s_i u_i."""
    s = ham.terms.s
    g = np.zeros_like(u)
    for i in range(len(u)):
        for a in range(3):
            up, dn = u.copy(), u.copy()
            up[i, a] += h / s[i]
            dn[i, a] -= h / s[i]
            g[i, a] = (energy(up, ham) - energy(dn, ham)) / (2 * h)
    return g


def test_local_field_finite_difference():
    rng = np.random.default_rng(1)
    for _ in range(3):
        ham = random_hamiltonian(rng, dims=(2, 2, 1))
        assert ham.nsites == 8
        u = random_directors(rng, ham.nsites)
        fd = fd_gradient(u, ham)
        B = local_fields(u, ham)
        assert np.max(np.abs(B + fd)) < 1e-6
        for i in range(ham.nsites):
            assert np.allclose(local_field(u, ham, i), B[i], atol=1e-14)


def test_energy_delta_examples():
    ham = single_spin(s=0.5, g=2.0, field=(0, 0, 2))
    assert energy_delta([[0, 0, 1]], ham, 0, [0, 0, 1]) == 0.0
    assert energy_delta([[0, 0, 1]], ham, 0, [0, 0, -1]) == pytest.approx(4.0)


def test_energy_delta_matches_recompute():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000 // 50):
        ham = random_hamiltonian(rng, dims=(2, 3, 1))
        assert ham.nsites == 12
        u = random_directors(rng, ham.nsites)
        E0 = energy(u, ham)
        for _ in range(50):
            i = rng.integers(ham.nsites)
            new = random_directors(rng, 1)[0]
            v = u.copy()
            v[i] = new
            worst = max(worst, abs(energy_delta(u, ham, i, new) - (energy(v, ham) - E0)))
    assert worst < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_heisenberg_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    cr = crystals.cubic(s=1.3)
    ham = Hamiltonian(cr, (2, 2, 2), [(Bond.make(0, 0, (1, 0, 0)), 0.7 * np.eye(3)),
                                      (Bond.make(0, 0, (0, 1, 1)), -1.1 * np.eye(3))])
    u = random_directors(rng, ham.nsites)
    R = Rotation.random(random_state=seed).as_matrix()
    assert abs(energy(u @ R.T, ham) - energy(u, ham)) < 1e-10


def test_minimize_single_spin():
    ham = single_spin(s=1.5, g=2.0, field=(0, 0, 1))
    res = minimize([[1.0, 0, 0]], ham)
    assert res.converged
    assert np.allclose(res.u, [[0, 0, 1]], atol=1e-9)
    assert res.energy == pytest.approx(-3.0)


def neel_angle_scan(ham, n=2001):
    """Exhaustive scan of a two-sublattice state with relative angle theta."""
    best = np.inf
    for th in np.linspace(0, np.pi, n):
        u = np.array([[0, 0, 1] if k % 2 == 0 else [np.sin(th), 0, np.cos(th)] for k in range(ham.nsites)])
        best = min(best, energy(u, ham))
    return best


def test_minimize_afm_chain():
    ham = heisenberg_chain(J=1.0, n=8)
    assert neel_angle_scan(ham) / 8 == pytest.approx(-1.0, abs=1e-12)
    rng = np.random.default_rng(3)
    u0 = random_directors(rng, 8)
    res = minimize(u0, ham, MinimizeOptions(step=0.2, tol=1e-10))
    assert res.converged
    assert res.energy / 8 == pytest.approx(-1.0, abs=1e-8)
    assert res.energy <= energy(u0, ham)
    assert np.max(np.linalg.norm(tangential(res.u, local_fields(res.u, ham)), axis=1)) < 1e-10


def test_minimize_fixed_point():
    ham = heisenberg_chain(J=-1.0, n=4)
    u = np.tile([0.0, 0, 1], (4, 1))
    res = minimize(u, ham)
    assert res.iterations == 0 and res.converged
    assert np.array_equal(res.u, u)


def test_minimize_monotone_and_flags_nonconvergence():
    rng = np.random.default_rng(4)
    ham = random_hamiltonian(rng, dims=(2, 2, 1))
    u = random_directors(rng, ham.nsites)
    energies = [energy(u, ham)]
    for _ in range(20):
        res = minimize(u, ham, MinimizeOptions(step=0.05, max_iters=5))
        energies.append(res.energy)
        u = res.u
    assert not res.converged
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_self_wrapping_bond_rejected():
    ham = Hamiltonian(crystals.chain(), (1, 1, 1), [(Bond.make(0, 0, (1, 0, 0)), np.eye(3))])
    with pytest.raises(ValueError, match="too small"):
        energy([[0, 0, 1]], ham)
