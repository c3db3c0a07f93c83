"""Compiled inner loops.

All kernels take the flat supercell term arrays produced by
``model.SupercellTerms`` and moment vectors ``S = s * u`` of shape (N, 3).
Random numbers are always drawn by the caller (numpy Generator) and passed in,
so results depend only on the caller's seed.
"""
import numba as nb
import numpy as np

_jit = nb.njit(cache=True, nogil=True, fastmath=False)


@_jit
def energy(S, pi, pj, pJ, pb, Q, h):
    e = 0.0
    for k in range(pi.shape[0]):
        a = S[pi[k]]
        b = S[pj[k]]
        J = pJ[k]
        for x in range(3):
            for y in range(3):
                e += a[x] * J[x, y] * b[y]
        if pb[k] != 0.0:
            d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            e += pb[k] * d * d
    for i in range(S.shape[0]):
        for x in range(3):
            e -= h[i, x] * S[i, x]
            for y in range(3):
                e += S[i, x] * Q[i, x, y] * S[i, y]
    return e


@_jit
def site_field(S, i, Si, ptr, other, nJ, nb_, Q, h, out):
    """Effective field on site i when its moment is ``Si`` (neighbours from ``S``)."""
    for x in range(3):
        out[x] = h[i, x]
        for y in range(3):
            out[x] -= 2.0 * Q[i, x, y] * Si[y]
    for k in range(ptr[i], ptr[i + 1]):
        Sj = S[other[k]]
        J = nJ[k]
        for x in range(3):
            out[x] -= J[x, 0] * Sj[0] + J[x, 1] * Sj[1] + J[x, 2] * Sj[2]
        if nb_[k] != 0.0:
            d = Si[0] * Sj[0] + Si[1] * Sj[1] + Si[2] * Sj[2]
            c = 2.0 * nb_[k] * d
            for x in range(3):
                out[x] -= c * Sj[x]


@_jit
def fields(S, ptr, other, nJ, nb_, Q, h, out):
    buf = np.empty(3)
    for i in range(S.shape[0]):
        site_field(S, i, S[i], ptr, other, nJ, nb_, Q, h, buf)
        out[i, 0] = buf[0]
        out[i, 1] = buf[1]
        out[i, 2] = buf[2]


@_jit
def site_energy_delta(S, i, Snew, ptr, other, nJ, nb_, Q, h):
    """E(S_i -> Snew) - E(S) from the terms touching site i only."""
    Sold = S[i]
    dS0 = Snew[0] - Sold[0]
    dS1 = Snew[1] - Sold[1]
    dS2 = Snew[2] - Sold[2]
    de = -(h[i, 0] * dS0 + h[i, 1] * dS1 + h[i, 2] * dS2)
    for x in range(3):
        for y in range(3):
            de += Q[i, x, y] * (Snew[x] * Snew[y] - Sold[x] * Sold[y])
    for k in range(ptr[i], ptr[i + 1]):
        Sj = S[other[k]]
        J = nJ[k]
        for x in range(3):
            de += (Snew[x] - Sold[x]) * (J[x, 0] * Sj[0] + J[x, 1] * Sj[1] + J[x, 2] * Sj[2])
        if nb_[k] != 0.0:
            dn = Snew[0] * Sj[0] + Snew[1] * Sj[1] + Snew[2] * Sj[2]
            do = Sold[0] * Sj[0] + Sold[1] * Sj[1] + Sold[2] * Sj[2]
            de += nb_[k] * (dn * dn - do * do)
    return de


@_jit
def _cone_direction(u, cos_alpha, r0, r1, out):
    """Uniform direction within a cone of half-angle alpha about unit vector u."""
    c = 1.0 - r0 * (1.0 - cos_alpha)
    sn = np.sqrt(max(0.0, 1.0 - c * c))
    phi = 2.0 * np.pi * r1
    # orthonormal pair perpendicular to u
    if abs(u[2]) < 0.9:
        ax, ay, az = 0.0, 0.0, 1.0
    else:
        ax, ay, az = 1.0, 0.0, 0.0
    e1x = ay * u[2] - az * u[1]
    e1y = az * u[0] - ax * u[2]
    e1z = ax * u[1] - ay * u[0]
    n = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x /= n
    e1y /= n
    e1z /= n
    e2x = u[1] * e1z - u[2] * e1y
    e2y = u[2] * e1x - u[0] * e1z
    e2z = u[0] * e1y - u[1] * e1x
    cp = np.cos(phi) * sn
    sp = np.sin(phi) * sn
    out[0] = c * u[0] + cp * e1x + sp * e2x
    out[1] = c * u[1] + cp * e1y + sp * e2y
    out[2] = c * u[2] + cp * e1z + sp * e2z
    n = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2)
    out[0] /= n
    out[1] /= n
    out[2] /= n


PROPOSAL_UNIFORM = 0
PROPOSAL_CONE = 1
PROPOSAL_EXPLICIT = 2


@_jit
def propose(u, mode, cos_alpha, r0, r1, explicit, out):
    if mode == 0:
        c = 2.0 * r0 - 1.0
        sn = np.sqrt(max(0.0, 1.0 - c * c))
        phi = 2.0 * np.pi * r1
        out[0] = sn * np.cos(phi)
        out[1] = sn * np.sin(phi)
        out[2] = c
    elif mode == 1:
        _cone_direction(u, cos_alpha, r0, r1, out)
    else:
        out[0] = explicit[0]
        out[1] = explicit[1]
        out[2] = explicit[2]


@_jit
def metropolis(u, s, order, rand2, explicit, uniforms, mode, cos_alpha, beta, ptr, other, nJ, nb_, Q, h):
    """Sequential single-site Metropolis updates at the sites listed in ``order``.

    Updates ``u`` in place; returns (accepted count, total energy change).
    """
    N = u.shape[0]
    S = np.empty((N, 3))
    for i in range(N):
        for x in range(3):
            S[i, x] = s[i] * u[i, x]
    unew = np.empty(3)
    Snew = np.empty(3)
    acc = 0
    dE_tot = 0.0
    for k in range(order.shape[0]):
        i = order[k]
        propose(u[i], mode, cos_alpha, rand2[k, 0], rand2[k, 1], explicit[k], unew)
        for x in range(3):
            Snew[x] = s[i] * unew[x]
        de = site_energy_delta(S, i, Snew, ptr, other, nJ, nb_, Q, h)
        if de <= 0.0 or uniforms[k] < np.exp(-beta * de):
            for x in range(3):
                u[i, x] = unew[x]
                S[i, x] = Snew[x]
            acc += 1
            dE_tot += de
    return acc, dE_tot


@_jit
def metropolis_sweeps(u, s, rand2, uniforms, mode, cos_alpha, beta, E0, energies, moments,
                      ptr, other, nJ, nb_, Q, h):
    """``energies.shape[0]`` full sequential sweeps, recording E and the total moment after each.

    ``rand2`` has shape (nsweeps * N, 2) and ``uniforms`` (nsweeps * N,).
    Returns the accepted count.
    """
    N = u.shape[0]
    nsweeps = energies.shape[0]
    S = np.empty((N, 3))
    for i in range(N):
        for x in range(3):
            S[i, x] = s[i] * u[i, x]
    unew = np.empty(3)
    Snew = np.empty(3)
    dummy = np.zeros(3)
    E = E0
    acc = 0
    k = 0
    for sw in range(nsweeps):
        for i in range(N):
            propose(u[i], mode, cos_alpha, rand2[k, 0], rand2[k, 1], dummy, unew)
            for x in range(3):
                Snew[x] = s[i] * unew[x]
            de = site_energy_delta(S, i, Snew, ptr, other, nJ, nb_, Q, h)
            if de <= 0.0 or uniforms[k] < np.exp(-beta * de):
                for x in range(3):
                    u[i, x] = unew[x]
                    S[i, x] = Snew[x]
                acc += 1
                E += de
            k += 1
        energies[sw] = E
        for x in range(3):
            m = 0.0
            for i in range(N):
                m += S[i, x]
            moments[sw, x] = m
    return acc


@_jit
def wang_landau(u, s, E, e_min, e_max, ln_g, hist, visited, ln_f, ln_f_final, flatness,
                check_every, sites, rand2, uniforms, mode, cos_alpha, ptr, other, nJ, nb_, Q, h):
    """Run Wang-Landau steps until randoms are exhausted or ln_f < ln_f_final.

    Returns (steps taken, energy, ln_f, number of reductions).
    """
    N = u.shape[0]
    nbins = ln_g.shape[0]
    width = (e_max - e_min) / nbins
    S = np.empty((N, 3))
    for i in range(N):
        for x in range(3):
            S[i, x] = s[i] * u[i, x]
    unew = np.empty(3)
    Snew = np.empty(3)
    cur = min(int((E - e_min) / width), nbins - 1)
    reductions = 0
    nsteps = sites.shape[0]
    dummy = np.zeros(3)
    for step in range(nsteps):
        i = sites[step]
        propose(u[i], mode, cos_alpha, rand2[step, 0], rand2[step, 1], dummy, unew)
        for x in range(3):
            Snew[x] = s[i] * unew[x]
        de = site_energy_delta(S, i, Snew, ptr, other, nJ, nb_, Q, h)
        En = E + de
        if En >= e_min and En <= e_max:
            nbin = min(int((En - e_min) / width), nbins - 1)
            d = ln_g[cur] - ln_g[nbin]
            if d >= 0.0 or uniforms[step] < np.exp(d):
                for x in range(3):
                    u[i, x] = unew[x]
                    S[i, x] = Snew[x]
                E = En
                cur = nbin
        ln_g[cur] += ln_f
        hist[cur] += 1
        visited[cur] = True
        if (step + 1) % check_every == 0:
            hmin = np.inf
            hsum = 0.0
            nvis = 0
            for b in range(nbins):
                if visited[b]:
                    nvis += 1
                    hsum += hist[b]
                    if hist[b] < hmin:
                        hmin = hist[b]
            if nvis > 1 and hmin > flatness * hsum / nvis:
                for b in range(nbins):
                    hist[b] = 0
                ln_f = ln_f / 2.0
                reductions += 1
                if ln_f < ln_f_final:
                    return step + 1, E, ln_f, reductions
    return nsteps, E, ln_f, reductions


@_jit
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@_jit
def midpoint_step(u, s, dt, fp_tol, max_iters, ptr, other, nJ, nb_, Q, h, out):
    """Implicit midpoint step of du/dt = u x B(s u) by fixed-point iteration.

    Writes the unnormalized solution into ``out``; returns (iterations, change)
    with iterations = -1 on non-convergence.
    """
    N = u.shape[0]
    Sm = np.empty((N, 3))
    m = np.empty((N, 3))
    B = np.empty((N, 3))
    c = np.empty(3)
    for i in range(N):
        for x in range(3):
            out[i, x] = u[i, x]
    change = np.inf
    for it in range(max_iters):
        for i in range(N):
            for x in range(3):
                m[i, x] = 0.5 * (u[i, x] + out[i, x])
                Sm[i, x] = s[i] * m[i, x]
        fields(Sm, ptr, other, nJ, nb_, Q, h, B)
        change = 0.0
        for i in range(N):
            _cross(m[i], B[i], c)
            for x in range(3):
                v = u[i, x] + dt * c[x]
                d = abs(v - out[i, x])
                if d > change:
                    change = d
                out[i, x] = v
        if change < fp_tol:
            return it + 1, change
    return -1, change


@_jit
def _llg_rhs(u, s, lam, noise, ptr, other, nJ, nb_, Q, h, out):
    N = u.shape[0]
    S = np.empty((N, 3))
    B = np.empty((N, 3))
    for i in range(N):
        for x in range(3):
            S[i, x] = s[i] * u[i, x]
    fields(S, ptr, other, nJ, nb_, Q, h, B)
    c1 = np.empty(3)
    c2 = np.empty(3)
    for i in range(N):
        for x in range(3):
            B[i, x] += noise[i, x]
        _cross(u[i], B[i], c1)
        _cross(u[i], c1, c2)
        for x in range(3):
            out[i, x] = c1[x] - lam * c2[x]


@_jit
def heun_steps(u, s, dt, lam, sigma, normals, ptr, other, nJ, nb_, Q, h):
    """Apply len(normals) stochastic Heun steps in place.

    ``sigma`` is the per-site noise standard deviation (already divided by
    sqrt(dt)); ``normals`` has shape (nsteps, N, 3).
    """
    N = u.shape[0]
    xi = np.empty((N, 3))
    f0 = np.empty((N, 3))
    f1 = np.empty((N, 3))
    up = np.empty((N, 3))
    for step in range(normals.shape[0]):
        for i in range(N):
            for x in range(3):
                xi[i, x] = sigma[i] * normals[step, i, x]
        _llg_rhs(u, s, lam, xi, ptr, other, nJ, nb_, Q, h, f0)
        for i in range(N):
            for x in range(3):
                up[i, x] = u[i, x] + dt * f0[i, x]
        _llg_rhs(up, s, lam, xi, ptr, other, nJ, nb_, Q, h, f1)
        for i in range(N):
            n = 0.0
            for x in range(3):
                u[i, x] += 0.5 * dt * (f0[i, x] + f1[i, x])
                n += u[i, x] * u[i, x]
            n = np.sqrt(n)
            for x in range(3):
                u[i, x] /= n
