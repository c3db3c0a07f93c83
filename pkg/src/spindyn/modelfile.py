"""TOML model files.

A model file declares one reference coupling per symmetry class; the parser
expands every entry over the space group generated by ``[symmetry]``.

    [crystal]
    lattice = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]   # row vectors
    sites = [[0, 0, 0]]                             # fractional

    [symmetry]                                      # optional generators
    ops = [{rotation = [[-1, 0, 0], [0, 1, 0], [0, 0, 1]], translation = [0, 0, 0]}]

    [spins]
    s = [1.0]                                       # scalar or one per site
    g = [2.0]

    [[exchange]]
    sites = [0, 0]
    offset = [1, 0, 0]
    J = -1.0                  # scalar (isotropic), 3x3 matrix, or
    # coefficients = [..]     # weights on the allowed symmetry basis

    [[biquadratic]]
    sites = [0, 0]
    offset = [1, 0, 0]
    b = 0.1

    [[anisotropy]]
    site = 0
    axis = [0, 0, 1]
    c2 = -0.2                 # or, in sun mode: matrix = [[..]], matrix_im = [[..]]

    [field]
    B = [0, 0, 0.5]

    [supercell]
    dims = [8, 1, 1]

    [mode]
    kind = "dipole"           # or "sun"; sun also takes N and anisotropy
"""
from __future__ import annotations

import difflib
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from .errors import ModelFileError, SpinDynError, SymmetryError
from .lattice import (
    Bond, Crystal, SymOp, allowed_exchange_basis, check_symop, generate_group, map_site, propagate_exchange,
    transform_bond,
)
from .model import Hamiltonian

SCHEMA = {
    "crystal": {"lattice", "sites"},
    "symmetry": {"ops"},
    "spins": {"s", "g"},
    "exchange": {"sites", "offset", "J", "coefficients"},
    "biquadratic": {"sites", "offset", "b"},
    "anisotropy": {"site", "axis", "c2", "matrix", "matrix_im"},
    "field": {"B"},
    "supercell": {"dims"},
    "mode": {"kind", "N", "anisotropy"},
}
ARRAY_SECTIONS = {"exchange", "biquadratic", "anisotropy"}
REQUIRED = ("crystal",)
SYMOP_KEYS = {"rotation", "translation"}
MODES = ("dipole", "sun")
SYMMETRY_TOL = 1e-8

_HEADER = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


class _Locator:
    """Line/column lookup for sections and keys of a parsed document."""

    def __init__(self, text: str):
        self.where: dict[tuple, tuple[int, int]] = {}
        counts: dict[str, int] = {}
        current: tuple = ()
        for n, line in enumerate(text.splitlines(), start=1):
            m = _HEADER.match(line)
            if m:
                name = m.group(2)
                if m.group(1) == "[[":
                    counts[name] = counts.get(name, -1) + 1
                    current = (name, counts[name])
                else:
                    current = (name,)
                self.where.setdefault(current, (n, m.start(2) + 1))
                self.where.setdefault((name,), (n, m.start(2) + 1))
                continue
            m = _KEY.match(line)
            if m:
                key = current + (m.group(1),)
                self.where.setdefault(key, (n, m.start(1) + 1))
                if not current:
                    self.where.setdefault((m.group(1),), (n, m.start(1) + 1))

    def find(self, *path) -> tuple[int | None, int | None]:
        while path:
            if path in self.where:
                return self.where[path]
            path = path[:-1]
        return None, None


@dataclass
class _Ctx:
    loc: _Locator
    section: str = ""
    index: int | None = None

    def at(self, section: str, index: int | None = None) -> "_Ctx":
        return _Ctx(self.loc, section, index)

    def error(self, message: str, key: str | None = None) -> ModelFileError:
        path = (self.section,) if self.index is None else (self.section, self.index)
        line, col = self.loc.find(*(path + ((key,) if key else ())))
        name = self.section if self.index is None else f"{self.section} #{self.index + 1}"
        return ModelFileError(message, line, col, name)

    def array(self, table: dict, key: str, shape: tuple, dtype=float, required: bool = True):
        if key not in table:
            if required:
                raise self.error(f"missing required key {key!r}")
            return None
        try:
            a = np.array(table[key], dtype=dtype)
        except (TypeError, ValueError):
            raise self.error(f"{key!r} must be numeric with shape {shape}", key) from None
        if a.dtype == object or (shape and a.shape != shape) or (not shape and a.ndim != 0):
            raise self.error(f"{key!r} must have shape {shape}, got {np.shape(table[key])}", key)
        return a


@dataclass
class Model:
    """A validated model with its canonical description.

    ``spec`` holds the declared reference entries (exchange always as full
    matrices); ``ham`` holds the symmetry-expanded Hamiltonian on ``dims``.
    """

    crystal: Crystal
    symops: list
    ham: Hamiltonian
    mode: str
    N: int | None
    sun_anisotropy: str
    onsite: dict
    spec: dict
    sha256: str = ""
    origin: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple:
        return self.ham.dims

    def sun_system(self):
        from .sun import SunSystem
        if self.mode != "sun":
            raise ValueError("model is not in sun mode")
        return SunSystem(self.ham, self.N, self.onsite or None, self.sun_anisotropy)


def _check_keys(ctx: _Ctx, table: dict, allowed: set) -> None:
    for key in table:
        if key not in allowed:
            hint = difflib.get_close_matches(key, sorted(allowed), n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ctx.error(f"unknown key {key!r}{extra}", key)


def _entries(ctx: _Ctx, doc: dict, name: str) -> list[dict]:
    val = doc.get(name, [])
    if isinstance(val, dict):
        raise ctx.at(name).error(f"use [[{name}]] (an array of tables) for {name} entries")
    return val


def _bond(ctx: _Ctx, entry: dict, nsites: int) -> Bond:
    ij = ctx.array(entry, "sites", (2,), dtype=float)
    off = ctx.array(entry, "offset", (3,), dtype=float, required=False)
    off = np.zeros(3) if off is None else off
    for key, v in (("sites", ij), ("offset", off)):
        if np.any(v != np.round(v)):
            raise ctx.error(f"{key!r} must hold integers", key)
    if np.any(ij < 0) or np.any(ij >= nsites):
        raise ctx.error(f"site indices must lie in [0, {nsites})", "sites")
    b = Bond.make(int(ij[0]), int(ij[1]), off.astype(int))
    if b.site_i == b.site_j and not any(b.cell_offset):
        raise ctx.error("a bond must join two distinct sites", "sites")
    return b


def _spin_rotation(R: np.ndarray, N: int) -> np.ndarray:
    """Unitary ``D`` with ``D^dag S_a D = R_ab S_b`` for the proper part of ``R``."""
    from .sun import spin_matrices
    P = R * np.sign(np.linalg.det(R))  # spins are axial vectors
    rv = Rotation.from_matrix(P).as_rotvec()
    S = spin_matrices(N).stacked
    return expm(-1j * np.einsum("a,abc->bc", rv, S))


def _site_images(crystal: Crystal, group, site: int):
    """Yield ``(target_site, R_cart)`` once per site in the orbit of ``site``."""
    seen = {}
    for g in group:
        k, _ = map_site(crystal, g, site)
        if k not in seen:
            seen[k] = g.cartesian_rotation(crystal)
    return sorted(seen.items())


def _site_stabilizer(crystal: Crystal, group, site: int):
    return [(g, g.cartesian_rotation(crystal)) for g in group if map_site(crystal, g, site)[0] == site]


def _parse_crystal(ctx: _Ctx, doc: dict) -> Crystal:
    c = ctx.at("crystal")
    tab = doc["crystal"]
    _check_keys(c, tab, SCHEMA["crystal"])
    A = c.array(tab, "lattice", (3, 3))
    if "sites" not in tab:
        raise c.error("missing required key 'sites'")
    try:
        sites = np.atleast_2d(np.array(tab["sites"], dtype=float))
    except (TypeError, ValueError):
        raise c.error("'sites' must be a list of 3-vectors", "sites") from None
    if sites.ndim != 2 or sites.shape[1] != 3:
        raise c.error("'sites' must be a list of 3-vectors", "sites")
    sp = ctx.at("spins")
    spins = doc.get("spins", {})
    _check_keys(sp, spins, SCHEMA["spins"])
    n = len(sites)
    vals = {}
    for key, default in (("s", 1.0), ("g", 2.0)):
        try:
            v = np.array(spins.get(key, default), dtype=float)
        except (TypeError, ValueError):
            raise sp.error(f"{key!r} must be a number or a list of numbers", key) from None
        if v.ndim > 1 or (v.ndim == 1 and len(v) != n):
            raise sp.error(f"{key!r} needs one value per site ({n})", key)
        vals[key] = np.broadcast_to(v, (n,)).copy()
    try:
        return Crystal(A.T, sites, vals["s"], vals["g"])
    except SpinDynError as exc:
        raise c.error(str(exc)) from None


def _parse_symmetry(ctx: _Ctx, doc: dict, crystal: Crystal) -> list[SymOp]:
    c = ctx.at("symmetry")
    tab = doc.get("symmetry", {})
    _check_keys(c, tab, SCHEMA["symmetry"])
    ops = []
    for k, op in enumerate(tab.get("ops", [])):
        if not isinstance(op, dict):
            raise c.error(f"symmetry op #{k + 1} must be a table with rotation and translation", "ops")
        for key in op:
            if key not in SYMOP_KEYS:
                raise c.error(f"unknown key {key!r} in symmetry op #{k + 1}", "ops")
        W = c.array(op, "rotation", (3, 3))
        t = c.array(op, "translation", (3,), required=False)
        try:
            g = SymOp(W, np.zeros(3) if t is None else t)
            check_symop(crystal, g)
        except SpinDynError as exc:
            raise c.error(f"symmetry op #{k + 1}: {exc}", "ops") from None
        ops.append(g)
    try:
        generate_group(crystal, ops)
    except SpinDynError as exc:
        raise c.error(str(exc), "ops") from None
    return ops


def _parse_mode(ctx: _Ctx, doc: dict, crystal: Crystal, override: str | None):
    c = ctx.at("mode")
    tab = doc.get("mode", {})
    _check_keys(c, tab, SCHEMA["mode"])
    kind = override or tab.get("kind", "dipole")
    if kind not in MODES:
        raise c.error(f"mode must be one of {MODES}, got {kind!r}", "kind")
    aniso = tab.get("anisotropy", "exact")
    if aniso not in ("exact", "classical"):
        raise c.error("anisotropy must be 'exact' or 'classical'", "anisotropy")
    N = None
    if kind == "sun":
        s = crystal.spin_s
        N = int(tab["N"]) if "N" in tab else int(round(2 * s[0] + 1))
        if N < 2 or not np.allclose(s, (N - 1) / 2):
            raise c.error(f"sun mode with N = {N} needs s = {(N - 1) / 2} on every site", "N")
    return kind, N, aniso


def _read(ctx: _Ctx, doc: dict, crystal: Crystal, symops, mode: str, N):
    group = generate_group(crystal, symops)
    nsites = crystal.nsites
    spec_ex, exchange, owner = [], {}, {}
    for k, e in enumerate(_entries(ctx, doc, "exchange")):
        c = ctx.at("exchange", k)
        _check_keys(c, e, SCHEMA["exchange"])
        bond = _bond(c, e, nsites)
        if ("J" in e) == ("coefficients" in e):
            raise c.error("give exactly one of 'J' or 'coefficients'")
        ref = bond.canonical()
        if "J" in e:
            J = np.array(e["J"], dtype=float) if not isinstance(e["J"], list) else c.array(e, "J", (3, 3))
            J = J * np.eye(3) if J.ndim == 0 else J
            if ref != bond:
                J = J.T
        else:
            basis = allowed_exchange_basis(crystal, symops, ref)
            coef = np.atleast_1d(np.array(e["coefficients"], dtype=float))
            if coef.ndim != 1 or len(coef) != len(basis):
                raise c.error(f"bond {tuple(ref)} has a {len(basis)}-dimensional allowed basis, "
                              f"got {coef.size} coefficients", "coefficients")
            J = np.einsum("k,kab->ab", coef, np.array(basis))
        try:
            images = propagate_exchange(crystal, symops, ref, J)
        except SymmetryError as exc:
            raise c.error(str(exc), "J" if "J" in e else "coefficients") from None
        for b, Jb in images:
            if b in exchange:
                raise c.error(f"bond {tuple(b)} was already set by exchange #{owner[b] + 1}", "sites")
            exchange[b], owner[b] = Jb, k
        spec_ex.append({"sites": [ref.site_i, ref.site_j], "offset": list(ref.cell_offset),
                        "J": (J + 0.0).tolist()})

    spec_bq, biquad = [], {}
    for k, e in enumerate(_entries(ctx, doc, "biquadratic")):
        c = ctx.at("biquadratic", k)
        _check_keys(c, e, SCHEMA["biquadratic"])
        ref = _bond(c, e, nsites).canonical()
        bval = float(c.array(e, "b", ()))
        for g in group:
            b = transform_bond(crystal, g, ref).canonical()
            if b in biquad and biquad[b][1] != k:
                raise c.error(f"bond {tuple(b)} already has a biquadratic term", "sites")
            biquad[b] = (bval, k)
        spec_bq.append({"sites": [ref.site_i, ref.site_j], "offset": list(ref.cell_offset), "b": bval})

    spec_an, aniso, onsite, taken = [], [], {}, {}
    for k, e in enumerate(_entries(ctx, doc, "anisotropy")):
        c = ctx.at("anisotropy", k)
        _check_keys(c, e, SCHEMA["anisotropy"])
        site = int(c.array(e, "site", ()))
        if not 0 <= site < nsites:
            raise c.error(f"site must lie in [0, {nsites})", "site")
        entry = {"site": site}
        if "matrix" in e:
            if mode != "sun":
                raise c.error("onsite matrices need sun mode", "matrix")
            if "axis" in e or "c2" in e:
                raise c.error("give either axis/c2 or matrix, not both")
            M = c.array(e, "matrix", (N, N)).astype(complex)
            if "matrix_im" in e:
                M = M + 1j * c.array(e, "matrix_im", (N, N))
            if np.max(np.abs(M - M.conj().T)) > SYMMETRY_TOL:
                raise c.error("onsite matrix must be Hermitian", "matrix")
            for g, R in _site_stabilizer(crystal, group, site):
                D = _spin_rotation(R, N)
                res = np.max(np.abs(D @ M @ D.conj().T - M))
                if res > SYMMETRY_TOL:
                    raise c.error(f"onsite matrix violates {g!r} (residual {res:.3g})", "matrix")
            for target, R in _site_images(crystal, group, site):
                if target in taken:
                    raise c.error(f"site {target} already has an onsite term from anisotropy "
                                  f"#{taken[target] + 1}", "site")
                D = _spin_rotation(R, N)
                onsite[target], taken[target] = D @ M @ D.conj().T, k
            entry["matrix"] = M.real.tolist()
            if np.any(M.imag != 0):
                entry["matrix_im"] = M.imag.tolist()
        else:
            if "matrix_im" in e:
                raise c.error("'matrix_im' needs 'matrix'", "matrix_im")
            axis = c.array(e, "axis", (3,))
            if np.linalg.norm(axis) == 0:
                raise c.error("axis must be non-zero", "axis")
            raw, axis = axis, axis / np.linalg.norm(axis)
            c2 = float(c.array(e, "c2", ()))
            for g, R in _site_stabilizer(crystal, group, site):
                ra = R @ axis
                res = min(np.max(np.abs(ra - axis)), np.max(np.abs(ra + axis)))
                if res > SYMMETRY_TOL:
                    raise c.error(f"anisotropy axis violates {g!r} (residual {res:.3g})", "axis")
            for target, R in _site_images(crystal, group, site):
                if target in taken:
                    raise c.error(f"site {target} already has an onsite term from anisotropy "
                                  f"#{taken[target] + 1}", "site")
                aniso.append((target, R @ axis, c2))
                taken[target] = k
            entry.update(axis=raw.tolist(), c2=c2)
        spec_an.append(entry)

    f = ctx.at("field")
    ftab = doc.get("field", {})
    _check_keys(f, ftab, SCHEMA["field"])
    B = f.array(ftab, "B", (3,), required=False)
    B = np.zeros(3) if B is None else B

    sc = ctx.at("supercell")
    stab = doc.get("supercell", {})
    _check_keys(sc, stab, SCHEMA["supercell"])
    dims = sc.array(stab, "dims", (3,), required=False)
    dims = np.ones(3) if dims is None else dims
    if np.any(dims < 1) or np.any(dims != np.round(dims)):
        raise sc.error("dims must be positive integers", "dims")
    dims = tuple(int(d) for d in dims)

    ham = Hamiltonian(crystal, dims, sorted(exchange.items()),
                      sorted((b, v) for b, (v, _) in biquad.items()), aniso, B)
    if "supercell" in doc:
        try:
            ham.terms
        except SpinDynError as exc:
            raise sc.error(str(exc), "dims") from None
    spec = {"exchange": spec_ex, "biquadratic": spec_bq, "anisotropy": spec_an,
            "field": {"B": B.tolist()}, "supercell": {"dims": list(dims)}}
    return ham, onsite, spec


def parse_text(text: str, mode: str | None = None, origin: str = "<string>") -> Model:
    """Parse and validate a model; ``mode`` overrides the file's [mode] kind."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ModelFileError(f"syntax error in {origin}: {msg}", line, col) from None
    ctx = _Ctx(_Locator(text))
    for name, val in doc.items():
        if name not in SCHEMA:
            hint = difflib.get_close_matches(name, sorted(SCHEMA), n=1)
            extra = f"; did you mean [{hint[0]}]?" if hint else ""
            line, col = ctx.loc.find(name)
            raise ModelFileError(f"unknown section [{name}]{extra}", line, col)
        if name in ARRAY_SECTIONS:
            if not isinstance(val, list) or not all(isinstance(v, dict) for v in val):
                raise ctx.at(name).error(f"use [[{name}]] (an array of tables) for {name} entries")
        elif not isinstance(val, dict):
            raise ctx.at(name).error(f"[{name}] must be a table")
    for name in REQUIRED:
        if name not in doc:
            raise ModelFileError(f"missing required section [{name}]")
    crystal = _parse_crystal(ctx, doc)
    symops = _parse_symmetry(ctx, doc, crystal)
    kind, N, aniso = _parse_mode(ctx, doc, crystal, mode)
    try:
        ham, onsite, spec = _read(ctx, doc, crystal, symops, kind, N)
    except ModelFileError:
        raise
    except SpinDynError as exc:
        raise ModelFileError(str(exc)) from None
    spec = {
        "crystal": {"lattice": crystal.lattice_vectors.T.tolist(), "sites": crystal.sites.tolist()},
        "symmetry": {"ops": [{"rotation": g.rotation.tolist(), "translation": g.translation.tolist()}
                             for g in symops]},
        "spins": {"s": crystal.spin_s.tolist(), "g": crystal.g_factor.tolist()},
        **spec,
        "mode": {"kind": kind, "anisotropy": aniso, **({"N": N} if N else {})},
    }
    return Model(crystal, symops, ham, kind, N, aniso, onsite, spec,
                 hashlib.sha256(text.encode()).hexdigest(), {"path": origin})


def parse_model(path, mode: str | None = None) -> Model:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelFileError(f"model file is not UTF-8: {exc}") from None
    return parse_text(text, mode, str(path))


def dumps(model: Model) -> str:
    """Canonical TOML text; parsing it reproduces ``model.spec``."""
    spec = {k: v for k, v in model.spec.items() if v not in ([], {"ops": []})}
    return tomli_w.dumps(spec)
