"""Command-line driver: ``spindyn {minimize,dynamics,sample,lswt,structfact} MODEL --out DIR``.

Every run writes CSV tables with a header row, floats at 17 significant
digits, and a ``run.json`` manifest.  Exit status is 0 on success, 1 on
usage or input errors and 2 on numerical failures (non-convergence,
instability, incomplete sampling).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import correlate, dynamics, lswt, sampling
from .errors import IntegrationError, NumericalError, SizeError, SpinDynError
from .lattice import build_supercell, site_index
from .model import MinimizeOptions, energy, minimize, random_configuration
from .modelfile import Model, parse_model
from .rng import derive_rng

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
THREADS_ENV = "SPINDYN_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- output helpers

def write_csv(path: Path, header: list[str], columns: list) -> None:
    """Write equal-length columns; integer arrays print as integers, floats with %.17g."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("CSV columns differ in length")
    fmts = ["%d" if np.issubdtype(c.dtype, np.integer) else "%.17g" for c in cols]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f % v for f, v in zip(fmts, row)) + "\n")


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _vec3(text: str) -> list[float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}")
    return [float(p) for p in parts]


def parse_qpath(text: str) -> np.ndarray:
    """``"0,0,0; 0.5,0,0"`` -> vertices in reciprocal-lattice units."""
    V = np.array([_vec3(v) for v in text.split(";") if v.strip()])
    if len(V) < 2:
        raise UsageError("--qpath needs at least two ';'-separated vertices")
    return V


def parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def load_directors(path, model: Model, nsites: int) -> np.ndarray:
    header, data = read_csv(Path(path))
    try:
        cols = [header.index(c) for c in ("ux", "uy", "uz")]
    except ValueError:
        raise UsageError(f"{path}: expected columns ux, uy, uz") from None
    u = data[:, cols]
    if u.shape != (nsites, 3):
        raise UsageError(f"{path}: holds {len(u)} sites, expected {nsites}")
    n = np.linalg.norm(u, axis=1)
    if np.any(n == 0):
        raise UsageError(f"{path}: zero-length director")
    return u / n[:, None]


def write_directors(path: Path, u: np.ndarray, table) -> None:
    idx = np.arange(len(u))
    write_csv(path, ["index", "site", "cell_a", "cell_b", "cell_c", "ux", "uy", "uz"],
              [idx, table.site, table.cell[:, 0], table.cell[:, 1], table.cell[:, 2], u[:, 0], u[:, 1], u[:, 2]])


# ---------------------------------------------------------------- run context

@dataclass
class RunContext:
    command: str
    model: Model
    out: Path
    seed: int
    settings: dict
    threads: int
    argv: list

    def manifest(self, results: dict, started: float, status: str = "ok") -> dict:
        return {
            "command": self.command,
            "status": status,
            "version": __version__,
            "numpy": np.__version__,
            "model": {"path": self.model.origin.get("path"), "sha256": self.model.sha256, "mode": self.model.mode},
            "seed": self.seed,
            "argv": self.argv,
            "settings": self.settings,
            "defaults": defaults(),
            "results": results,
            "wall_time": time.perf_counter() - started,
        }


def defaults() -> dict:
    mo = MinimizeOptions()
    return {
        "minimize": asdict(mo),
        "midpoint": {"fp_tol": dynamics.IntegratorSpec().fp_tol, "max_fp_iters": dynamics.IntegratorSpec().max_fp_iters},
        "lswt": {"stationary_tol": lswt.STATIONARY_TOL, "goldstone_shift": lswt.GOLDSTONE_SHIFT,
                 "zero_energy": lswt.ZERO_ENERGY, "instability_tol": lswt.INSTABILITY_TOL},
        "sampling": {"target_acceptance": sampling.TARGET_ACCEPTANCE, "min_cone_angle": sampling.MIN_CONE_ANGLE},
        "correlate": {"q_zero_tol": correlate.Q_ZERO_TOL},
    }


def _minimized(ctx: RunContext, ham, label: str, max_iters: int, restarts: int):
    """Best of ``restarts`` gradient-descent runs from derived random starts."""
    best = None
    for k in range(restarts):
        u0 = random_configuration(ham, derive_rng(ctx.seed, label, k))
        res = minimize(u0, ham, MinimizeOptions(max_iters=max_iters))
        if best is None or res.energy < best.energy - 1e-12 or (res.converged and not best.converged
                                                                   and res.energy <= best.energy + 1e-12):
            best = res
    return best


def _periodic_minimized(ctx: RunContext, ham, dims, label: str, max_iters: int, restarts: int):
    """Minimize over states periodic on ``dims`` cells.

    Descent runs on the smallest uniform multiple of ``dims`` on which every
    bond is well defined, starting from a tiled state; translation symmetry
    keeps the iterate tiled, and one magnetic cell is cut out at the end.
    """
    ns = ham.crystal.nsites
    mag = build_supercell(ham.crystal, dims)
    for m in range(1, 8):
        big = ham.with_dims(tuple(d * m for d in dims))
        try:
            big.terms
            break
        except SizeError:
            continue
    else:
        raise UsageError(f"cannot embed magnetic cell {dims} in a valid supercell")
    tile = site_index(dims, ns, big.supercell.cell, big.supercell.site)
    cut = site_index(big.dims, ns, mag.cell, mag.site)
    best = None
    for k in range(restarts):
        u0 = random_configuration(ham.with_dims(dims), derive_rng(ctx.seed, label, k))[tile]
        res = minimize(u0, big, MinimizeOptions(max_iters=max_iters))
        if best is None or res.energy < best.energy - 1e-12:
            best = res
    scale = len(mag.site) / len(tile)
    return best._replace(u=best.u[cut], energy=best.energy * scale)


# ---------------------------------------------------------------- subcommands

def cmd_minimize(ctx: RunContext, args) -> tuple[dict, int]:
    if ctx.model.mode != "dipole":
        raise UsageError("minimize works in dipole mode")
    ham = ctx.model.ham
    max_iters = args.steps or MinimizeOptions().max_iters
    if args.init:
        # polish a given start, e.g. the final state of an annealing run
        res = minimize(load_directors(args.init, ctx.model, ham.nsites), ham, MinimizeOptions(max_iters=max_iters))
    else:
        res = _minimized(ctx, ham, "minimize-init", max_iters, args.restarts)
    write_directors(ctx.out / "minimized.csv", res.u, ham.supercell)
    results = {"energy": res.energy, "energy_per_site": res.energy / ham.nsites, "final_gradnorm": res.gradnorm,
               "converged": bool(res.converged), "iterations": int(res.iterations), "tol": MinimizeOptions().tol}
    if not res.converged:
        print(f"minimize: gradient norm {res.gradnorm:.3g} above tolerance after {res.iterations} iterations",
              file=sys.stderr)
        return results, EXIT_NUMERICAL
    return results, EXIT_OK


def _dynamics_member(ctx: RunContext, args, k: int):
    model = ctx.model
    ham = model.ham
    if args.init:
        u = load_directors(args.init, model, ham.nsites)
    else:
        u = random_configuration(ham, derive_rng(ctx.seed, "dynamics-init", k))
    therm_lambda = args.therm_lambda if args.therm_lambda is not None else (args.damping or 0.1)
    if args.therm_steps:
        spec = dynamics.IntegratorSpec("langevin", dt=args.dt, damping=therm_lambda, temperature=args.temp)
        u = dynamics.run_trajectory(u, ham, spec, args.therm_steps, args.therm_steps,
                                    rng=derive_rng(ctx.seed, "dynamics-therm", k)).frames[-1]
    if model.mode == "sun":
        from .sun import coherent_state, energy as sun_energy, run_sun_trajectory
        system = model.sun_system()
        Z = np.array([coherent_state(v, model.N) for v in u])
        traj = run_sun_trajectory(Z, system, args.dt, args.steps, args.stride, keep_states=True)
        states = traj.metadata.pop("states")
        E = np.array([sun_energy(z, system) for z in states])
    else:
        if args.damping > 0:
            spec = dynamics.IntegratorSpec("langevin", dt=args.dt, damping=args.damping, temperature=args.temp)
        else:
            spec = dynamics.IntegratorSpec("midpoint", dt=args.dt)
        traj = dynamics.run_trajectory(u, ham, spec, args.steps, args.stride,
                                       rng=derive_rng(ctx.seed, "dynamics-run", k))
        traj.metadata.pop("seed", None)
        E = np.array([energy(f, ham) for f in traj.frames])
    traj.metadata.update(member=k, therm_steps=args.therm_steps, therm_lambda=therm_lambda if args.therm_steps else 0.0)
    return traj, E


def cmd_dynamics(ctx: RunContext, args) -> tuple[dict, int]:
    model = ctx.model
    if args.dt is None or args.dt <= 0:
        raise UsageError("--dt must be positive")
    if args.steps is None or args.steps < 1 or args.stride < 1 or args.members < 1:
        raise UsageError("--steps, --stride and --members must be positive")
    if args.temp < 0 or args.damping < 0:
        raise UsageError("--temp and --lambda must be non-negative")
    if args.temp > 0 and args.damping == 0 and not args.therm_steps:
        raise UsageError("--temp needs --lambda > 0 or --therm-steps")
    if model.mode == "sun" and args.damping > 0:
        raise UsageError("sun mode integrates the conservative equation only (set --lambda 0)")
    with ThreadPoolExecutor(max_workers=min(ctx.threads, args.members)) as pool:
        runs = list(pool.map(lambda k: _dynamics_member(ctx, args, k), range(args.members)))
    summary = []
    for k, (traj, E) in enumerate(runs):
        nf, N = traj.frames.shape[:2]
        frame = np.repeat(np.arange(nf), N)
        t = np.repeat(traj.times, N)
        idx = np.tile(np.arange(N), nf)
        f = traj.frames.reshape(-1, 3)
        name = f"traj_{k:03d}"
        write_csv(ctx.out / f"{name}.csv", ["frame", "time", "index", "ux", "uy", "uz"],
                  [frame, t, idx, f[:, 0], f[:, 1], f[:, 2]])
        write_json(ctx.out / f"{name}.json", {
            "dt": traj.dt, "stride": traj.stride, "nframes": nf, "nsites": N, "spin_s": traj.spin_s.tolist(),
            "positions": traj.positions.tolist(), "model_sha256": model.sha256, "metadata": traj.metadata,
        })
        write_csv(ctx.out / f"{name}_energy.csv", ["frame", "time", "energy"], [np.arange(nf), traj.times, E])
        summary.append({"member": k, "energy_first": float(E[0]), "energy_last": float(E[-1]),
                        "max_abs_energy_change": float(np.max(np.abs(E - E[0]))),
                        **({"max_norm_residual": traj.metadata["max_norm_residual"]}
                           if "max_norm_residual" in traj.metadata else {})})
    return {"members": summary, "integrator": runs[0][0].metadata.get("integrator")}, EXIT_OK


def _proposal(args) -> sampling.Proposal:
    return sampling.Proposal(args.proposal, args.cone_angle)


def cmd_sample(ctx: RunContext, args) -> tuple[dict, int]:
    model = ctx.model
    if model.mode != "dipole":
        raise UsageError("sample works in dipole mode")
    ham = model.ham
    temps = parse_floats(args.temp) if args.temp else np.array([])
    if np.any(temps <= 0):
        raise UsageError("temperatures must be positive")
    if args.method == "metropolis":
        if len(temps) != 1:
            raise UsageError("metropolis needs exactly one --temp")
        nsweeps = args.steps or 10_000
        res = sampling.run_metropolis(ham, 1.0 / temps[0], nsweeps, derive_rng(ctx.seed, "sample-metropolis"),
                                      _proposal(args), burn_in=args.burn_in)
        n = len(res.energies)
        write_csv(ctx.out / "samples.csv", ["sweep", "energy", "mx", "my", "mz"],
                  [np.arange(nsweeps - n, nsweeps), res.energies, *res.moments.T])
        write_directors(ctx.out / "final.csv", res.u, ham.supercell)
        return {"temperature": float(temps[0]), "mean_energy": res.mean_energy, "energy_error": res.energy_error,
                "specific_heat": res.specific_heat, "acceptance": res.acceptance, "cone_angle": res.cone_angle}, EXIT_OK
    if args.method == "pt":
        if len(temps) < 2:
            raise UsageError("pt needs at least two comma-separated --temp values")
        order = np.argsort(-temps)  # ascending beta
        betas = 1.0 / temps[order]
        rep = sampling.parallel_tempering(ham, betas, args.steps or 10_000, args.swap_interval, ctx.seed,
                                          burn_in=args.burn_in, proposal=_proposal(args), threads=ctx.threads)
        rate = np.append(rep.swap_rate, np.nan)
        write_csv(ctx.out / "pt.csv",
                  ["replica", "temperature", "beta", "mean_energy", "energy_error", "specific_heat", "acceptance",
                   "swap_rate_next"],
                  [np.arange(len(betas)), 1.0 / betas, betas, rep.mean_energy, rep.energy_error, rep.specific_heat,
                   rep.acceptance, rate])
        return {"swap_attempts": rep.swap_attempts.tolist(), "swap_accepts": rep.swap_accepts.tolist()}, EXIT_OK
    # Wang-Landau
    if args.emin is None or args.emax is None:
        raise UsageError("wl needs --emin and --emax")
    nbins = args.bins or 64
    state = sampling.WangLandauState.load(args.resume) if args.resume else None
    rng = derive_rng(ctx.seed, "sample-wl")
    u = None
    for _ in range(100):
        trial = random_configuration(ham, rng)
        if args.emin <= energy(trial, ham) <= args.emax:
            u = trial
            break
    if u is None:
        raise UsageError("no random start falls inside [--emin, --emax]")
    proposal = sampling.Proposal("cone", args.cone_angle) if args.proposal == "auto" else _proposal(args)
    kwargs = dict(flatness=args.flatness, ln_f_final=args.ln_f_final, max_mc_steps=args.steps or 10**7,
                  rng=rng, proposal=proposal, state=state)
    code, status = EXIT_OK, "complete"
    try:
        st = sampling.wang_landau(ham, u, args.emin, args.emax, nbins, **kwargs)
    except NumericalError as exc:
        st = getattr(exc, "state", None)
        if st is None:
            raise
        print(f"sample: {exc}", file=sys.stderr)
        code, status = EXIT_NUMERICAL, "incomplete"
    st.save(ctx.out / "wl_state.json")
    write_csv(ctx.out / "dos.csv", ["bin", "energy", "ln_g", "histogram", "visited"],
              [np.arange(st.nbins), st.centers, st.ln_g, st.histogram.astype(np.int64), st.visited.astype(np.int64)])
    results = {"status": status, "ln_f": st.ln_f, "reductions": int(st.reductions), "mc_steps": int(st.mc_steps)}
    if len(temps) and st.visited.any():
        th = sampling.wl_thermodynamics(st, 1.0 / np.sort(temps))
        write_csv(ctx.out / "thermo.csv", ["temperature", "beta", "mean_energy", "specific_heat"],
                  [1.0 / th.betas, th.betas, th.mean_energy, th.specific_heat])
    return results, code


def _path_grid(model: Model, args) -> correlate.QGrid:
    return correlate.qpath(model.crystal, parse_qpath(args.qpath), args.points)


def cmd_lswt(ctx: RunContext, args) -> tuple[dict, int]:
    model = ctx.model
    if model.mode != "dipole":
        raise UsageError("lswt works in dipole mode")
    if not args.qpath:
        raise UsageError("lswt needs --qpath")
    dims = tuple(int(d) for d in _vec3(args.magnetic_dims))
    ham = model.ham.with_dims(dims)
    if args.init:
        u = load_directors(args.init, model, model.crystal.nsites * int(np.prod(dims)))
        min_info = {"source": str(args.init)}
    else:
        res = _periodic_minimized(ctx, model.ham, dims, "lswt-init", args.steps or MinimizeOptions().max_iters,
                                  args.restarts)
        if not res.converged:
            raise IntegrationError(f"ground-state search did not converge (gradient norm {res.gradnorm:.3g})",
                                   residual=res.gradnorm, iterations=res.iterations)
        u = res.u
        min_info = {"source": "minimize", "energy": res.energy, "final_gradnorm": res.gradnorm,
                    "converged": bool(res.converged)}
        write_directors(ctx.out / "ground_state.csv", u, build_supercell(model.crystal, dims))
    cell = lswt.MagneticCell(ham, dims, u)
    grid = _path_grid(model, args)
    disp = lswt.dispersion(cell, grid.rlu)
    modes = lswt.mode_intensities(cell, grid.rlu)
    nq, L = disp.omega.shape
    qi = np.repeat(np.arange(nq), L)
    write_csv(ctx.out / "dispersion.csv", ["q_index", "h", "k", "l", "arc", "mode", "omega"],
              [qi, *np.repeat(grid.rlu, L, axis=0).T, np.repeat(grid.arc, L), np.tile(np.arange(L), nq),
               disp.omega.ravel()])
    I, zero = correlate.perp_intensity(modes.S, grid.cart)
    write_csv(ctx.out / "intensities.csv", ["q_index", "mode", "omega", "intensity"],
              [qi, np.tile(np.arange(L), nq), modes.omega.ravel(), I.ravel()])
    results = {"ground_state": min_info, "nmodes": L, "nq": nq, "intensity_normalization": "per magnetic-cell site",
               "q_zero_indices": np.flatnonzero(zero).tolist()}
    if args.sigma:
        wmax = args.omega_max or 1.2 * float(np.max(disp.omega)) + 6 * args.sigma
        omegas = np.linspace(0.0, wmax, args.nomega)
        spec = lswt.lswt_intensities(cell, grid.rlu, omegas, args.sigma)
        write_csv(ctx.out / "spectrum.csv", ["q_index", "omega", "intensity"],
                  [np.repeat(np.arange(nq), len(omegas)), np.tile(omegas, nq), spec.intensity.ravel()])
    return results, EXIT_OK


def _load_ensemble(directory: Path) -> list[dynamics.Trajectory]:
    sidecars = sorted(directory.glob("traj_*.json"))
    if not sidecars:
        raise UsageError(f"no traj_*.json files in {directory}")
    out = []
    for sc in sidecars:
        meta = json.loads(sc.read_text())
        _, data = read_csv(sc.with_suffix(".csv"))
        nf, N = meta["nframes"], meta["nsites"]
        if data.shape != (nf * N, 6):
            raise UsageError(f"{sc.with_suffix('.csv')}: expected {nf * N} rows of 6 columns")
        frames = data[:, 3:6].reshape(nf, N, 3)
        out.append(dynamics.Trajectory(meta["dt"], meta["stride"], frames, np.array(meta["spin_s"]),
                                       np.array(meta["positions"]), meta["metadata"]))
    return out


def cmd_structfact(ctx: RunContext, args) -> tuple[dict, int]:
    model = ctx.model
    if not args.traj:
        raise UsageError("structfact needs --traj DIR (output of the dynamics command)")
    ens = _load_ensemble(Path(args.traj))
    if args.qpath:
        grid = _path_grid(model, args)
        if args.snap:
            grid = correlate.snap_to_commensurate(model.crystal, grid, model.dims)
    else:
        grid = correlate.commensurate_grid(model.crystal, model.dims)
    est = correlate.dynamic_structure_factor(ens, grid, window=args.window, subtract_mean=not args.no_subtract_mean)
    nq, nw = est.S.shape[:2]
    q, w, a, b = (x.ravel() for x in np.meshgrid(np.arange(nq), est.omegas, np.arange(3), np.arange(3),
                                                  indexing="ij"))
    S = est.S.ravel()
    write_csv(ctx.out / "sqw.csv", ["q_index", "omega", "alpha", "beta", "re", "im"],
              [q, w, a, b, S.real, S.imag])
    I, zero = correlate.perp_intensity(est.S, grid.cart)
    write_csv(ctx.out / "sqw_intensity.csv", ["q_index", "omega", "intensity"],
              [np.repeat(np.arange(nq), nw), np.tile(est.omegas, nq), I.ravel()])
    frames = np.concatenate([t.frames for t in ens])
    static = correlate.static_structure_factor(frames, ens[0].spin_s, ens[0].positions, grid)
    q, a, b = (x.ravel() for x in np.meshgrid(np.arange(nq), np.arange(3), np.arange(3), indexing="ij"))
    write_csv(ctx.out / "static.csv", ["q_index", "alpha", "beta", "re", "im"],
              [q, a, b, static.ravel().real, static.ravel().imag])
    arc = grid.arc if grid.arc is not None else np.zeros(nq)
    write_csv(ctx.out / "qpoints.csv", ["q_index", "h", "k", "l", "qx", "qy", "qz", "arc"],
              [np.arange(nq), *grid.rlu.T, *grid.cart.T, arc])
    meta = est.metadata()
    meta["q_zero_indices"] = np.flatnonzero(zero).tolist()
    write_json(ctx.out / "structfact.json", meta)
    return meta, EXIT_OK


COMMANDS = {"minimize": cmd_minimize, "dynamics": cmd_dynamics, "sample": cmd_sample, "lswt": cmd_lswt,
            "structfact": cmd_structfact}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spindyn", description="Classical spin simulations from a TOML model file.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("model", help="model file (TOML)")
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0, help="master seed for all random streams")
    common.add_argument("--mode", choices=("dipole", "sun"), help="override the model's [mode] kind")
    common.add_argument("--steps", type=int, help="iterations, integration steps, sweeps or MC steps")

    m = sub.add_parser("minimize", parents=[common], help="gradient descent to a local energy minimum")
    m.add_argument("--restarts", type=int, default=1)
    m.add_argument("--init", help="CSV of starting directors, e.g. final.csv of an annealing run")

    d = sub.add_parser("dynamics", parents=[common], help="integrate trajectories")
    d.add_argument("--dt", type=float, default=None)
    d.add_argument("--temp", type=float, default=0.0)
    d.add_argument("--lambda", dest="damping", type=float, default=0.0, help="damping of the measured run")
    d.add_argument("--stride", type=int, default=1)
    d.add_argument("--members", type=int, default=1)
    d.add_argument("--therm-steps", type=int, default=0, help="Langevin steps before the measured run")
    d.add_argument("--therm-lambda", type=float, default=None)
    d.add_argument("--init", help="CSV of starting directors (columns ux, uy, uz)")

    s = sub.add_parser("sample", parents=[common], help="Monte Carlo sampling")
    s.add_argument("--method", choices=("metropolis", "pt", "wl"), default="metropolis")
    s.add_argument("--temp", help="temperature, or comma-separated ladder for pt/wl")
    s.add_argument("--bins", type=int)
    s.add_argument("--emin", type=float)
    s.add_argument("--emax", type=float)
    s.add_argument("--flatness", type=float, default=0.8)
    s.add_argument("--ln-f-final", type=float, default=1e-6)
    s.add_argument("--swap-interval", type=int, default=10)
    s.add_argument("--burn-in", type=float, default=0.5)
    s.add_argument("--proposal", choices=("auto", "uniform", "cone"), default="auto")
    s.add_argument("--cone-angle", type=float, default=1.0)
    s.add_argument("--resume", help="Wang-Landau checkpoint (wl_state.json) to continue")

    lw = sub.add_parser("lswt", parents=[common], help="linear spin-wave dispersion and intensities")
    lw.add_argument("--qpath", help="';'-separated vertices in r.l.u., e.g. '0,0,0;0.5,0,0'")
    lw.add_argument("--points", type=int, default=50, help="points per path segment")
    lw.add_argument("--magnetic-dims", default="1,1,1")
    lw.add_argument("--init", help="CSV of ground-state directors on the magnetic cell")
    lw.add_argument("--restarts", type=int, default=4)
    lw.add_argument("--sigma", type=float, help="Gaussian energy broadening for spectrum.csv")
    lw.add_argument("--omega-max", type=float)
    lw.add_argument("--nomega", type=int, default=200)

    sf = sub.add_parser("structfact", parents=[common], help="S(q, w) from dynamics output")
    sf.add_argument("--traj", help="directory written by the dynamics command")
    sf.add_argument("--qpath")
    sf.add_argument("--points", type=int, default=50)
    sf.add_argument("--snap", action="store_true", help="move path points to supercell-commensurate momenta")
    sf.add_argument("--window", choices=correlate.WINDOWS, default="rectangular")
    sf.add_argument("--no-subtract-mean", action="store_true")
    sf.add_argument("--bins", type=int, help="unused; accepted for a uniform flag set")
    return p


def _settings(args) -> dict:
    skip = {"out", "seed", "command", "model"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _replay_argv(argv: list[str]) -> list[str]:
    """``argv`` without the output directory, for the manifest."""
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            out.append(a)
    return out


def replay(manifest_path, out) -> int:
    """Re-run the command recorded in a ``run.json`` into directory ``out``."""
    manifest = json.loads(Path(manifest_path).read_text())
    return run(manifest["argv"] + ["--out", str(out)])


def run(argv=None) -> int:
    started = time.perf_counter()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("spindyn: choose a subcommand: " + ", ".join(COMMANDS))
        model = parse_model(args.model, mode=args.mode)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = RunContext(args.command, model, out, args.seed, _settings(args), thread_cap(), _replay_argv(argv))
    except (UsageError, SpinDynError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    try:
        results, code = COMMANDS[args.command](ctx, args)
        status = "ok" if code == EXIT_OK else "numerical-failure"
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        results, code, status = {"error": str(exc)}, EXIT_NUMERICAL, "numerical-failure"
    except (SpinDynError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_json(out / "run.json", ctx.manifest(results, started, status))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
