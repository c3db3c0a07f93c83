import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spindyn import crystals
from spindyn.errors import ModelFileError
from spindyn.lattice import Bond, bond_orbit
from spindyn.model import energy
from spindyn.modelfile import dumps, parse_model, parse_text

from helpers import random_directors

CHAIN = """
[crystal]
lattice = [[1.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0]]
sites = [[0, 0, 0]]

[spins]
s = 1.0
g = 1.0

[[exchange]]
sites = [0, 0]
offset = [1, 0, 0]
J = -1.0

[supercell]
dims = [8, 1, 1]
"""

CUBIC_OH = """
[crystal]
lattice = [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]
sites = [[0, 0, 0]]

[symmetry]
ops = [
  {rotation = [[0, -1, 0], [1, 0, 0], [0, 0, 1]]},
  {rotation = [[0, 0, 1], [1, 0, 0], [0, 1, 0]]},
  {rotation = [[-1, 0, 0], [0, -1, 0], [0, 0, -1]]},
]

[[exchange]]
sites = [0, 0]
offset = [1, 0, 0]
"""


def test_minimal_chain_parses():
    m = parse_text(CHAIN)
    assert m.mode == "dipole" and m.dims == (8, 1, 1)
    assert len(m.ham.exchange) == len(bond_orbit(m.crystal, m.symops, Bond.make(0, 0, (1, 0, 0)))) == 1
    u = np.tile([0, 0, 1.0], (8, 1))
    assert energy(u, m.ham) == pytest.approx(-8.0)


def test_cubic_coefficients_propagate_to_orbit():
    m = parse_text(CUBIC_OH + "coefficients = [1.0, 2.0]\n")
    bonds = [b for b, _ in m.ham.exchange]
    assert bonds == bond_orbit(m.crystal, m.symops, Bond.make(0, 0, (1, 0, 0)))
    assert len(bonds) == 3
    diag = {b.cell_offset: np.diag(J) for b, J in m.ham.exchange}
    # every propagated bond carries the same longitudinal/transverse split
    for off, d in diag.items():
        axis = int(np.flatnonzero(off)[0])
        trans = np.delete(d, axis)
        assert np.allclose(trans, trans[0]) and not np.isclose(d[axis], trans[0])
    with pytest.raises(ModelFileError, match="2-dimensional allowed basis") as err:
        parse_text(CUBIC_OH + "coefficients = [1.0, 2.0, 3.0]\n")
    assert err.value.line == 16


def test_misspelled_section_is_located():
    text = CHAIN.replace("[[exchange]]", "[[excahnge]]")
    with pytest.raises(ModelFileError) as err:
        parse_text(text)
    assert "excahnge" in str(err.value) and "exchange" in str(err.value)
    assert (err.value.line, err.value.column) == (10, 3)


def test_unknown_key_is_located():
    with pytest.raises(ModelFileError) as err:
        parse_text(CHAIN.replace("J = -1.0", "J = -1.0\nJz = 0.5"))
    assert "'Jz'" in str(err.value) and err.value.line == 14 and err.value.column == 1
    assert err.value.section == "exchange #1"


def test_syntax_error_has_position():
    with pytest.raises(ModelFileError) as err:
        parse_text(CHAIN.replace("g = 1.0", "g = = 1.0"))
    assert err.value.line == 8 and err.value.column is not None


def test_mirror_violation_names_the_op():
    text = """
[crystal]
lattice = [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]
sites = [[0, 0, 0]]

[symmetry]
ops = [{rotation = [[1, 0, 0], [0, 1, 0], [0, 0, -1]], translation = [0, 0, 0]}]

[[exchange]]
sites = [0, 0]
offset = [1, 0, 0]
J = [[-1.0, 0, 0.001], [0, -1.0, 0], [0, 0, -1.0]]
"""
    with pytest.raises(ModelFileError) as err:
        parse_text(text)
    msg = str(err.value)
    assert "violates" in msg and "SymOp([1 0 0; 0 1 0; 0 0 -1]" in msg
    assert err.value.line == 12
    parse_text(text.replace("0.001", "0.0"))


def test_duplicate_and_invalid_entries():
    dup = CHAIN + "\n[[exchange]]\nsites = [0, 0]\noffset = [-1, 0, 0]\nJ = 0.5\n"
    with pytest.raises(ModelFileError, match="already set"):
        parse_text(dup)
    with pytest.raises(ModelFileError, match="exactly one"):
        parse_text(CHAIN.replace("J = -1.0", ""))
    with pytest.raises(ModelFileError, match="distinct"):
        parse_text(CHAIN.replace("offset = [1, 0, 0]", "offset = [0, 0, 0]"))
    with pytest.raises(ModelFileError, match=r"\[crystal\]"):
        parse_text(CHAIN.replace("[0, 0, 10.0]]", "[0, 0, -10.0]]"))
    with pytest.raises(ModelFileError, match="sun mode"):
        parse_text(CHAIN + "\n[[anisotropy]]\nsite = 0\nmatrix = [[1, 0, 0], [0, 0, 0], [0, 0, 0]]\n")
    with pytest.raises(ModelFileError, match="needs s = 1.5"):
        parse_text(CHAIN + "\n[mode]\nkind = 'sun'\nN = 4\n")


def test_anisotropy_axis_checked_against_site_symmetry():
    base = CUBIC_OH + "J = -1.0\n\n[[anisotropy]]\nsite = 0\nc2 = -0.3\n"
    with pytest.raises(ModelFileError, match="axis violates"):
        parse_text(base + "axis = [0, 0, 1]\n")


FOUR_SITES = """
[crystal]
lattice = [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 2.0]]
sites = [[0.25, 0, 0], [0, 0.25, 0], [0.75, 0, 0], [0, 0.75, 0]]

[symmetry]
ops = [{rotation = [[0, -1, 0], [1, 0, 0], [0, 0, 1]]}]

[spins]
s = 1.0

[[anisotropy]]
site = 0
"""


def test_onsite_matrix_propagation_matches_axis_propagation():
    axis = parse_text(FOUR_SITES + "axis = [1, 0.3, 0.2]\nc2 = 0.7\n[mode]\nkind = 'sun'\n")
    n = np.array([1, 0.3, 0.2]) / np.linalg.norm([1, 0.3, 0.2])
    from spindyn.sun import spin_matrices
    nS = np.einsum("a,abc->bc", n, spin_matrices(3).stacked)
    M = 0.7 * nS @ nS
    rows = lambda A: "[" + ", ".join("[" + ", ".join(repr(float(x)) for x in r) + "]" for r in A) + "]"
    mat = parse_text(FOUR_SITES + f"matrix = {rows(M.real)}\nmatrix_im = {rows(M.imag)}\n[mode]\nkind = 'sun'\n")
    a = axis.sun_system().onsite_matrices
    b = mat.sun_system().onsite_matrices
    assert np.max(np.abs(a - b)) < 1e-12
    # site 1 is the C4 image of site 0: axis (x, y) -> (-y, x)
    assert sorted(s for s, _, _ in axis.ham.anisotropy) == [0, 1, 2, 3]
    ax1 = [ax for s, ax, _ in axis.ham.anisotropy if s == 1][0]
    assert np.allclose(ax1, [-n[1], n[0], n[2]])


def test_mode_override():
    m = parse_text(CHAIN, mode="sun")
    assert m.mode == "sun" and m.N == 3
    with pytest.raises(ModelFileError):
        parse_text(CHAIN, mode="quantum")


def test_parse_model_reads_files(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text(CHAIN)
    m = parse_model(p)
    assert len(m.sha256) == 64
    with pytest.raises(ModelFileError, match="cannot read"):
        parse_model(tmp_path / "missing.toml")


def _model_text(rng) -> str:
    A = np.eye(3) + 0.2 * rng.uniform(-1, 1, (3, 3))
    if np.linalg.det(A) <= 0:
        A[0] *= -1
    nsites = int(rng.integers(1, 3))
    sites = rng.uniform(0, 1, (nsites, 3)).round(3) % 1.0
    lines = [f"[crystal]\nlattice = {A.T.tolist()}\nsites = {sites.tolist()}\n",
             f"[spins]\ns = {rng.uniform(0.5, 2, nsites).tolist()}\ng = {rng.uniform(1, 3, nsites).tolist()}\n"]
    seen = set()
    for _ in range(int(rng.integers(0, 4))):
        i, j = (int(x) for x in rng.integers(0, nsites, 2))
        off = rng.integers(-1, 2, 3).tolist()
        b = Bond.make(i, j, off)
        if (i == j and not any(off)) or b.canonical() in seen:
            continue
        seen.add(b.canonical())
        lines.append(f"[[exchange]]\nsites = [{i}, {j}]\noffset = {off}\nJ = {rng.standard_normal((3, 3)).tolist()}\n")
    if rng.random() < 0.5:
        lines.append(f"[[anisotropy]]\nsite = 0\naxis = {rng.standard_normal(3).tolist()}\nc2 = {rng.standard_normal()}\n")
    if seen and rng.random() < 0.5:
        b = sorted(seen)[0]
        lines.append(f"[[biquadratic]]\nsites = [{b.site_i}, {b.site_j}]\noffset = {list(b.cell_offset)}\n"
                     f"b = {rng.standard_normal()}\n")
    lines.append(f"[field]\nB = {rng.standard_normal(3).tolist()}\n")
    lines.append(f"[supercell]\ndims = {rng.integers(2, 4, 3).tolist()}\n")
    return "\n".join(lines)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_is_identity(seed):
    rng = np.random.default_rng(seed)
    m1 = parse_text(_model_text(rng))
    m2 = parse_text(dumps(m1))
    assert m2.spec == m1.spec
    assert dumps(m2) == dumps(m1)
    u = random_directors(rng, m1.ham.nsites)
    assert energy(u, m2.ham) == energy(u, m1.ham)
