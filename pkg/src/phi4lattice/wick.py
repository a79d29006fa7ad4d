"""Wick renormalization constants C1, C2: Monte-Carlo, exact, and analytic.

C1 = E[line(y*)^2] at the reference point (the end-of-window slice; spatial
averaging over the periodic slice is exact by homogeneity).  C2 comes in two
flavours: the operational recentering constant of the YV composite at
(y*, T0 = 2 delta), and the diagonal pairing C2_diag = E[Y(y*) V(y*)].

Three estimation paths:

* ``mc``       -- seed ensemble through the actual lattice pipeline;
* ``exact``    -- deterministic lattice Green-function summation (adjoint
                  solves), same geometry as mc so discretisation bias cancels
                  in comparisons;
* ``analytic`` -- continuum quadrature via the per-axis separable reduction
                  of the kernel autocorrelation (optionally with torus
                  images), usable at regularisation scales far below what a
                  d = 3 lattice can afford.  In d = 3, C1 diverges like
                  1/delta and C2 like log(1/delta).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .geometry import Field, Lattice
from .mollifier import build_kernel, scale_bump, time_profile, space_profile
from .stochastic import (
    WickConstants, laplacian, regularize_noise, sample_white_noise, solve_heat,
)

__all__ = [
    "wick_lattice",
    "wick_constants",
    "wick_constants_mc",
    "wick_constants_exact",
    "wick_constants_analytic",
    "analytic_c1",
    "analytic_c2_diag",
]


def wick_lattice(d: int, h: float, delta: float, window: float = 0.25,
                 period: float = 1.0, c_cfl: Optional[float] = None) -> Lattice:
    """Reduced box for constant estimation: time [-(window + pad), 0],
    periodic space; the reference point is the final slice."""
    pad = 1.5 * delta * delta
    return Lattice.box(d, h, t_span=(-(window + pad), 0.0), x0=-period / 2,
                       period=period, c_cfl=c_cfl)


def _solve_start(zeta: Field) -> float:
    lat = zeta.lattice
    full = zeta.defined_mask().reshape(lat.n_t + 1, -1).all(axis=1)
    ks = np.argwhere(full)
    if not ks.size:
        raise ValueError("noise regularisation left no defined slices")
    return lat.t0 + lat.dt * int(ks.min())


def _slice_correlate(field_vals: np.ndarray, kern, k_out: int, lattice: Lattice,
                     batched: bool = False):
    """Kernel action on the single output time-slice k_out (all x at once).

    With ``batched`` the leading axis of ``field_vals`` enumerates fields
    sharing the kernel."""
    d = lattice.d
    kv, j0 = kern.values, kern.j0
    mt = kv.shape[0]
    if k_out - j0 - (mt - 1) < 0:
        raise ValueError("slice correlation reaches before the grid start")
    sl = slice(k_out - j0 - (mt - 1), k_out - j0 + 1)
    hist = field_vals[:, sl][:, ::-1] if batched else field_vals[sl][::-1][None]
    sp_shape = (lattice.n_x,) * d
    kfull = np.zeros((mt,) + sp_shape)
    m = [(kv.shape[1 + a] - 1) // 2 for a in range(d)]
    idx = np.ix_(np.arange(mt), *[
        (-(np.arange(kv.shape[1 + a]) - m[a])) % lattice.n_x for a in range(d)
    ])
    kfull[idx] = kv
    axes = tuple(range(2, 2 + d))
    F = sfft.rfftn(hist, axes=axes)
    K = sfft.rfftn(kfull, axes=tuple(range(1, 1 + d)))
    out = sfft.irfftn(F * K[None], s=sp_shape, axes=axes).sum(axis=1)
    out = out * lattice.cell_volume
    return out if batched else out[0]


def wick_constants_mc(lattice: Lattice, delta: float, seeds: Sequence[int],
                      eps_tol: float = 0.10) -> WickConstants:
    """Seed ensemble on the given lattice, single pass per seed.

    Y depends on C1 linearly (Y = solve(line^2) - C1 * solve(1)), so every
    seed records C1-free moments that are recombined once the ensemble C1 is
    known.  All statistics average over the periodic reference slice, which
    is exact by spatial homogeneity.  Errors out when the C1 standard error
    exceeds ``eps_tol`` of the value.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("Monte-Carlo path needs an ensemble")
    K = lattice.n_t
    T0 = 2 * delta
    kern = build_kernel(T0, None, lattice)

    rec = {k: [] for k in ("c1s", "a1", "a2", "a3", "b1", "mY1", "mqT", "d1")}
    k0 = None
    for seed in seeds:
        zeta = regularize_noise(sample_white_noise(lattice, seed), delta)
        t_start = _solve_start(zeta)
        k0 = lattice.time_index(t_start)
        line = solve_heat(zeta, lattice, t_start=t_start)
        m = line.defined_mask()
        q = Field(lattice, np.where(m, line.values ** 2, 0.0), m)
        Y1 = solve_heat(q, lattice, t_start=t_start)
        qv = np.nan_to_num(np.where(m, q.values, 0.0))
        y1 = np.nan_to_num(Y1.values)
        stack = np.stack([y1 * qv, qv, y1,
                          _y0_values(lattice, k0) * qv])
        corr = _slice_correlate(stack, kern, K, lattice, batched=True)
        rec["c1s"].append(float(np.mean(qv[K])))
        rec["a1"].append(float(np.mean(corr[0])))
        rec["mqT"].append(float(np.mean(corr[1])))
        rec["a2"].append(float(np.mean(corr[2])))
        rec["a3"].append(float(np.mean(corr[3])))
        rec["b1"].append(float(np.mean(y1[K] * corr[1])))
        rec["mY1"].append(float(np.mean(y1[K])))
        rec["d1"].append(float(np.mean(y1[K] * qv[K])))
    r = {k: np.asarray(v) for k, v in rec.items()}
    c1 = float(r["c1s"].mean())
    c1_se = float(r["c1s"].std(ddof=1) / np.sqrt(len(seeds)))
    if c1 > 0 and c1_se > eps_tol * c1:
        raise ValueError(
            f"ensemble too small: C1 standard error {c1_se:.3g} exceeds "
            f"{eps_tol:.0%} of {c1:.3g}"
        )
    y0K = (K - k0) * lattice.dt
    y0qT_det = float(np.mean(_slice_correlate(
        _y0_values(lattice, k0), kern, K, lattice)))
    # (YV)_T0 mean and the frozen-Y counterterm mean, recombined with C1
    op = (r["a1"] - c1 * r["a2"] - c1 * r["a3"] + c1 * c1 * y0qT_det) \
        - (r["b1"] - c1 * r["mY1"] - c1 * y0K * r["mqT"] + c1 * c1 * y0K)
    diag = r["d1"] - c1 * r["mY1"] - c1 * y0K * r["c1s"] + c1 * c1 * y0K
    n = np.sqrt(len(seeds))
    return WickConstants(
        c1=c1, c2=float(op.mean()), delta=delta, method="mc",
        c1_stderr=c1_se, c2_stderr=float(op.std(ddof=1) / n),
        c2_diag=float(diag.mean()), c2_diag_stderr=float(diag.std(ddof=1) / n),
        sample_count=len(seeds),
        reference=(lattice.t1, 0.0), t0_scale=T0,
    )


def _y0_values(lattice: Lattice, k0: int) -> np.ndarray:
    """solve(1): spatially constant ramp (k - k0)+ dt."""
    ramp = np.maximum(np.arange(lattice.n_t + 1) - k0, 0) * lattice.dt
    return np.broadcast_to(
        ramp.reshape((-1,) + (1,) * lattice.d), lattice.shape
    ).copy()


# ---------------------------------------------------------------------------
# exact lattice path (Green-function summation via adjoint solves)

def _heat_weights(lattice: Lattice, k0: int) -> np.ndarray:
    """p_m = P^(K-1-m) delta_{x*}, m = k0..K-1, P = 1 + dt*Lap (periodic).

    Row m gives the influence of the solve source at step m on the solution
    value at the final index K, site x* = 0."""
    d = lattice.d
    K = lattice.n_t
    sp_shape = (lattice.n_x,) * d
    p = np.zeros(sp_shape)
    p[(0,) * d] = 1.0   # x* = index of x=0 handled by caller via roll if needed
    out = np.zeros((K - k0,) + sp_shape)
    for m in range(K - 1, k0 - 1, -1):
        out[m - k0] = p
        p = p + lattice.dt * laplacian(p, lattice.h, d)
    return out


def _adjoint_noise_kernel(lattice: Lattice, delta: float, p: np.ndarray,
                          k0: int) -> np.ndarray:
    """K[n, y] = dt * vol * sum_j sum_i B[j,i] p_{n + j0 + j}[y - off_i].

    Accumulated in the spatial-frequency domain with a single inverse FFT.
    """
    bump = scale_bump(lattice, delta)
    kv, j0 = bump.values, bump.j0
    d = lattice.d
    K = lattice.n_t
    mt = kv.shape[0]
    sp_shape = (lattice.n_x,) * d
    sp_axes = tuple(range(d))
    m = [(kv.shape[1 + a] - 1) // 2 for a in range(d)]
    place = np.ix_(*[
        (np.arange(kv.shape[1 + a]) - m[a]) % lattice.n_x for a in range(d)
    ])
    Pf = sfft.rfftn(p, axes=tuple(range(1, 1 + d)))
    acc = np.zeros((K,) + Pf.shape[1:], dtype=complex)
    for j in range(mt):
        ksl = np.zeros(sp_shape)
        ksl[place] = kv[j]
        Kf = sfft.rfftn(ksl, axes=sp_axes)
        n_lo = max(k0 - (j0 + j), 0)
        n_hi = K - (j0 + j)
        if n_hi <= n_lo:
            continue
        acc[n_lo:n_hi] += Pf[n_lo + j0 + j - k0: n_hi + j0 + j - k0] * Kf[None, ...]
    out = sfft.irfftn(acc, s=sp_shape, axes=tuple(range(1, 1 + d)))
    out *= lattice.dt * lattice.cell_volume
    return out


def wick_constants_exact(lattice: Lattice, delta: float) -> WickConstants:
    """Deterministic C1 and C2_diag by lattice Green-function summation.

    Matches the Monte-Carlo pipeline's discretisation exactly (same bump,
    same explicit-Euler propagator, same zero start), so mc-vs-exact
    comparisons carry only the Monte-Carlo error.
    """
    zeta0 = regularize_noise(sample_white_noise(lattice, 0), delta)
    k0 = lattice.time_index(_solve_start(zeta0))
    vol = lattice.cell_volume
    p = _heat_weights(lattice, k0)
    Kker = _adjoint_noise_kernel(lattice, delta, p, k0)
    c1 = float(np.sum(Kker ** 2) / vol)

    # Cov(., y*) = F(K)/vol through the actual pipeline; the final noise slot
    # never feeds the solve, pad it with zeros
    Kpad = np.concatenate([Kker, np.zeros((1,) + Kker.shape[1:])], axis=0)
    noise = Field(lattice, Kpad / vol)
    cov = solve_heat(regularize_noise(noise, delta), lattice,
                     t_start=lattice.t0 + lattice.dt * k0)
    cov_vals = np.nan_to_num(cov.values)
    c2_diag = 0.0
    for m in range(k0, lattice.n_t):
        c2_diag += float(np.sum(p[m - k0] * cov_vals[m] ** 2))
    c2_diag *= 2.0 * lattice.dt
    return WickConstants(
        c1=c1, c2=c2_diag, delta=delta, method="exact",
        c2_diag=c2_diag, sample_count=0, reference=(lattice.t1, 0.0),
        t0_scale=2 * delta,
    )


# ---------------------------------------------------------------------------
# analytic path: separable continuum quadrature

def _profiles(delta: float, n_grid: int = 2048):
    """Normalized 1d mollifier profiles and their autocorrelations.

    Returns (Q_t grid/tau values over |tau|<delta^2, Q_s grid/r values over
    |r|<2 delta); both are autocorrelations of unit-mass profiles.
    """
    # time profile on (0, delta^2)
    s = (np.arange(n_grid) + 0.5) / n_grid
    ds = delta * delta / n_grid
    tau_prof = time_profile(s)
    tau_prof = tau_prof / (tau_prof.sum() * ds)
    qt = np.correlate(tau_prof, tau_prof, mode="full") * ds
    qt_tau = (np.arange(qt.size) - (n_grid - 1)) * ds
    # spatial profile on (-delta, delta)
    y = -1.0 + 2.0 * (np.arange(n_grid) + 0.5) / n_grid
    dy = 2.0 * delta / n_grid
    sp = space_profile(y)
    sp = sp / (sp.sum() * dy)
    qs = np.correlate(sp, sp, mode="full") * dy
    qs_r = (np.arange(qs.size) - (n_grid - 1)) * dy
    return (qt_tau, qt), (qs_r, qs)


def _w2_table(delta: float, W: float, torus: Optional[float],
              qs_r, qs, n_A: int = 192, n_x: int = 384, x_max: Optional[float] = None):
    """w2(A, x) = int g(A, x - r) Q_s(r) dr on a (log A, x) grid.

    Small A (heat kernel narrower than Q_s's sampling) integrates against the
    Gaussian with Gauss-Hermite; large A integrates over Q_s's support where
    the heat kernel is the smooth factor.  Torus periodisation adds images.
    """
    A_grid = np.geomspace(1e-4 * delta * delta, 2.2 * W + 4 * delta * delta, n_A)
    if x_max is None:
        x_max = 8.0 * np.sqrt(W) + 4 * delta
    x_grid = np.linspace(0.0, x_max, n_x)
    shifts = [0.0]
    if torus:
        shifts += [torus, -torus, 2 * torus, -2 * torus]
    nodes, weights = np.polynomial.hermite_e.hermegauss(31)
    qr_pos = np.abs(qs_r[qs_r >= 0])
    q_pos = qs[qs_r >= 0]
    # r-quadrature nodes over the Q_s support
    n_r = 257
    r_nodes = np.linspace(qs_r[0], qs_r[-1], n_r)
    dr = r_nodes[1] - r_nodes[0]
    q_at_r = np.interp(np.abs(r_nodes), qr_pos, q_pos, right=0.0)
    tab = np.zeros((n_A, n_x))
    for ia, A in enumerate(A_grid):
        acc = np.zeros(n_x)
        if np.sqrt(2 * A) < dr * 4:
            u = nodes * np.sqrt(2.0 * A)
            for sh in shifts:
                pts = x_grid[None, :] - u[:, None] + sh
                vals = np.interp(np.abs(pts).ravel(), qr_pos, q_pos,
                                 right=0.0).reshape(pts.shape)
                acc += (weights[:, None] * vals).sum(axis=0) / np.sqrt(2 * np.pi)
        else:
            sig2 = 2.0 * A
            for sh in shifts:
                z = x_grid[None, :] - r_nodes[:, None] + sh
                gvals = np.exp(-z * z / (2 * sig2)) / np.sqrt(2 * np.pi * sig2)
                acc += dr * (q_at_r[:, None] * gvals).sum(axis=0)
        tab[ia] = acc
    return A_grid, x_grid, tab


class _W2:
    def __init__(self, A_grid, x_grid, tab):
        self.logA = np.log(A_grid)
        self.x_grid = x_grid
        self.tab = tab

    def __call__(self, A, x):
        A = np.clip(A, np.exp(self.logA[0]), np.exp(self.logA[-1]))
        la = np.log(A)
        ia = np.clip(np.searchsorted(self.logA, la) - 1, 0, len(self.logA) - 2)
        wa = (la - self.logA[ia]) / (self.logA[ia + 1] - self.logA[ia])
        x = np.clip(np.abs(x), 0.0, self.x_grid[-1])
        ix = np.clip(np.searchsorted(self.x_grid, x) - 1, 0, len(self.x_grid) - 2)
        wx = (x - self.x_grid[ix]) / (self.x_grid[ix + 1] - self.x_grid[ix])
        t = self.tab
        return ((1 - wa) * (1 - wx) * t[ia, ix] + wa * (1 - wx) * t[ia + 1, ix]
                + (1 - wa) * wx * t[ia, ix + 1] + wa * wx * t[ia + 1, ix + 1])


def _u_grid(delta: float, W: float, n_fine: int = 96, n_coarse: int = 96):
    fine_end = min(6 * delta * delta, W)
    fine = np.linspace(0.0, fine_end, n_fine + 1)
    if W > fine_end * (1 + 1e-9):
        coarse = np.geomspace(fine_end, W, n_coarse + 1)[1:]
        edges = np.concatenate([fine, coarse])
    else:
        edges = fine
    mids = 0.5 * (edges[1:] + edges[:-1])
    widths = np.diff(edges)
    return mids, widths


def _cov_against_reference(u, xs, delta, W, w2, qt_tau, qt, n_a: int = 160):
    """Cov((t*-u, x), (t*, 0)) for a batch of spatial offsets xs (m, d)."""
    xs = np.atleast_2d(xs)
    depth = W - u
    if depth <= 0:
        return np.zeros(len(xs))
    a_mids, a_w = _u_grid(delta, depth, n_fine=32, n_coarse=n_a // 2)
    # tau quadrature over the Q_t support
    n_tau = 9
    tau_edges = np.linspace(qt_tau[0], qt_tau[-1], n_tau + 1)
    tau_mids = 0.5 * (tau_edges[1:] + tau_edges[:-1])
    tau_w = np.diff(tau_edges)
    qt_vals = np.interp(tau_mids, qt_tau, qt)
    total = np.zeros(len(xs))
    for tm, tw, qv in zip(tau_mids, tau_w, qt_vals):
        if qv <= 0:
            continue
        b = a_mids + u + tm
        ok = (b >= 0) & (b <= W)
        if not ok.any():
            continue
        A = a_mids[ok] + b[ok]
        prod = np.ones((len(xs), ok.sum()))
        for axis in range(xs.shape[1]):
            prod *= w2(A[None, :], xs[:, axis:axis + 1])
        total += qv * tw * (prod * a_w[ok][None, :]).sum(axis=1)
    return total


def analytic_c1(delta: float, d: int, window: float = 0.5,
                torus: Optional[float] = None) -> float:
    """C1 = Var line(y*) with zero data a time ``window`` before y*."""
    (qt_tau, qt), (qs_r, qs) = _profiles(delta)
    A_grid, x_grid, tab = _w2_table(delta, window, torus, qs_r, qs)
    w2 = _W2(A_grid, x_grid, tab)
    val = _cov_against_reference(0.0, np.zeros((1, d)), delta, window, w2, qt_tau, qt)
    return float(val[0])


def analytic_c2_diag(delta: float, d: int, window: float = 0.5,
                     torus: Optional[float] = None,
                     n_u: int = 72, gh_nodes: int = 13) -> float:
    """C2_diag = E[Y(y*) V(y*)] = 2 int_0^W du int dx G(u,x) Cov((t*-u,x), y*)^2."""
    (qt_tau, qt), (qs_r, qs) = _profiles(delta)
    A_grid, x_grid, tab = _w2_table(delta, window, torus, qs_r, qs)
    w2 = _W2(A_grid, x_grid, tab)
    u_mids, u_w = _u_grid(delta, window, n_fine=n_u // 2, n_coarse=n_u)
    nodes, weights = np.polynomial.hermite_e.hermegauss(gh_nodes)
    wnorm = weights / np.sqrt(2 * np.pi)
    total = 0.0
    for u, du in zip(u_mids, u_w):
        if u >= window:
            continue
        # x-integral against G(u, .) by Gauss-Hermite per axis (var 2u)
        pts_1d = nodes * np.sqrt(2.0 * max(u, 1e-12))
        grids = np.meshgrid(*([pts_1d] * d), indexing="ij")
        xs = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*([wnorm] * d), indexing="ij")
        ws = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        cov = _cov_against_reference(u, xs, delta, window, w2, qt_tau, qt)
        total += du * float(np.sum(ws * cov ** 2))
    return 2.0 * total


def wick_constants_analytic(delta: float, d: int, window: float = 0.5,
                            torus: Optional[float] = None) -> WickConstants:
    c1 = analytic_c1(delta, d, window, torus)
    c2d = analytic_c2_diag(delta, d, window, torus)
    return WickConstants(c1=c1, c2=c2d, delta=delta, method="analytic",
                         c2_diag=c2d, sample_count=0, t0_scale=2 * delta)


def wick_constants(lattice: Optional[Lattice], delta: float,
                   seeds: Optional[Sequence[int]] = None,
                   method: str = "mc", **kw) -> WickConstants:
    """Dispatcher over the three estimation paths."""
    if method == "mc":
        if seeds is None:
            raise ValueError("Monte-Carlo path needs seeds")
        return wick_constants_mc(lattice, delta, seeds, **kw)
    if method == "exact":
        return wick_constants_exact(lattice, delta)
    if method == "analytic":
        d = lattice.d if lattice is not None else kw.pop("d")
        window = kw.pop("window", (lattice.t1 - lattice.t0) if lattice else 0.5)
        torus = kw.pop("torus", lattice.period if lattice else None)
        return wick_constants_analytic(delta, d, window=window, torus=torus)
    raise ValueError(f"unknown method {method!r}")
