"""Parabolic Hölder seminorms, two-variable (germ) norms, multiscale norms.

Suprema over pairs are taken on declared offset samples: dyadic shells of
lattice offsets around a strided base-point set, with an exhaustive mode for
oracle tests.  Every norm function accepts either a ``Domain`` or a boolean
mask as the region.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import CollarError, Domain, Field, Lattice
from .mollifier import dyadic_scales, mollify, mollify_at

__all__ = [
    "PairSample",
    "region_mask",
    "hoelder_seminorm",
    "hoelder_seminorm_high",
    "two_variable_seminorm",
    "negative_norm",
    "sup_norm",
    "germ_sup_norm",
    "Germ",
    "SeparableGerm",
    "CallableGerm",
    "additive_germ",
    "expansion_germ",
    "spatial_gradient",
]


def region_mask(region, lattice: Lattice) -> np.ndarray:
    if isinstance(region, Domain):
        return region.mask(lattice)
    m = np.asarray(region, dtype=bool)
    if m.shape != lattice.shape:
        raise ValueError("region mask shape does not match the lattice")
    return m


@dataclass(frozen=True)
class PairSample:
    """Offset sample for pair suprema.

    ``exhaustive`` enumerates every lattice offset up to the cap (quadratic,
    oracle mode); otherwise offsets live on dyadic shells, a few per shell,
    always including the lattice-floor offsets where rough-field suprema sit.
    """

    base_stride: int = 2
    shell_factor: float = np.sqrt(2.0)
    exhaustive: bool = False

    def describe(self) -> dict:
        return {
            "base_stride": self.base_stride,
            "shell_factor": self.shell_factor,
            "exhaustive": self.exhaustive,
        }


def _offset_list(lattice: Lattice, cap: float, sample: PairSample):
    """Offsets (k, ii, dist) with k >= 0 time steps into the past."""
    dt, h, d = lattice.dt, lattice.h, lattice.d
    cap = min(cap, lattice.period / 2 - h)
    offs = {}

    def add(k: int, ii: tuple):
        if k == 0 and all(i == 0 for i in ii):
            return
        sp = max(abs(i) for i in ii) * h if ii else 0.0
        dist = max(np.sqrt(k * dt), sp)
        if dist <= cap + 1e-12 and dist > 0:
            offs.setdefault((k,) + ii, dist)

    if sample.exhaustive:
        K = int(np.floor(cap * cap / dt))
        I = int(np.floor(cap / h))
        rng = range(-I, I + 1)
        grids = np.meshgrid(*([list(rng)] * d), indexing="ij") if d else []
        spatial = (
            np.stack([g.ravel() for g in grids], axis=1) if d else np.zeros((1, 0), int)
        )
        for k in range(0, K + 1):
            for row in spatial:
                add(k, tuple(int(v) for v in row))
    else:
        r = cap
        floor = min(h, np.sqrt(dt))
        axes = list(range(d))
        kt_cap = int(np.floor(cap * cap / dt + 1e-9))
        ks_cap = int(np.floor(cap / h + 1e-9))
        while r >= floor / 2:
            kt = min(int(round(r * r / dt)), kt_cap)
            ks = min(int(round(r / h)), ks_cap)
            if kt >= 1:
                add(kt, (0,) * d)
            if ks >= 1:
                for a in axes:
                    for s in (+1, -1):
                        ii = [0] * d
                        ii[a] = s * ks
                        add(0, tuple(ii))
                add(0, (ks,) * d)
                add(0, tuple(-ks for _ in axes))
                if kt >= 1:
                    add(kt, (ks,) * d)
                    ii = [0] * d
                    ii[0] = ks
                    add(max(kt // 2, 1), tuple(ii))
            r /= sample.shell_factor
        add(1, (0,) * d)
        for a in axes:
            ii = [0] * d
            ii[a] = 1
            add(0, tuple(ii))
            add(1, tuple(ii))
    return [(key[0], key[1:], dist) for key, dist in sorted(offs.items())]


def _strided(mask: np.ndarray, stride: int) -> np.ndarray:
    if stride <= 1:
        return mask
    out = np.zeros_like(mask)
    sl = tuple(slice(None, None, stride) for _ in mask.shape)
    out[sl] = mask[sl]
    return out


def _shifted_view(values: np.ndarray, k: int, ii, lattice: Lattice):
    """values at z - offset, aligned with z; invalid time rows become nan."""
    out = values
    for a, i in enumerate(ii):
        if i:
            out = np.roll(out, i, axis=1 + a)
    if k:
        shifted = np.full_like(out, np.nan)
        shifted[k:] = out[:-k]
        out = shifted
    return out


def _shifted_mask(mask: np.ndarray, k: int, ii) -> np.ndarray:
    """mask at z - offset, aligned with z; rows before the grid start are False."""
    out = mask
    for a, i in enumerate(ii):
        if i:
            out = np.roll(out, i, axis=1 + a)
    if k:
        shifted = np.zeros_like(out)
        shifted[k:] = out[:-k]
        out = shifted
    return out


def spatial_gradient(field: Field, one_sided_flags: bool = False):
    """Centered spatial differences (one-sided at defined-mask edges).

    Returns (grad: (d, *shape), flags mask of one-sided points).
    """
    lat = field.lattice
    vals = np.where(field.defined_mask(), field.values, np.nan)
    grads = np.empty((lat.d,) + vals.shape)
    flags = np.zeros(vals.shape, dtype=bool)
    for a in range(lat.d):
        up = np.roll(vals, -1, axis=1 + a)
        dn = np.roll(vals, 1, axis=1 + a)
        cen = (up - dn) / (2 * lat.h)
        fwd = (up - vals) / lat.h
        bwd = (vals - dn) / lat.h
        g = cen
        bad = ~np.isfinite(cen)
        g = np.where(bad & np.isfinite(fwd), fwd, g)
        g = np.where(bad & ~np.isfinite(fwd) & np.isfinite(bwd), bwd, g)
        flags |= bad & (np.isfinite(fwd) | np.isfinite(bwd))
        grads[a] = g
    return grads, flags


def _pair_sup(field_vals, base_mask, part_mask, lattice, alpha, cap, sample,
              numerator):
    """Generic sup over sampled pairs of numerator(u, u_shift, off)/d^alpha."""
    best = 0.0
    count = 0
    for k, ii, dist in _offset_list(lattice, cap, sample):
        shifted = _shifted_view(field_vals, k, ii, lattice)
        valid = base_mask & _shifted_mask(part_mask, k, ii)
        if not valid.any():
            continue
        num = numerator(field_vals, shifted, k, ii)
        r = num[valid] / dist ** alpha
        r = r[np.isfinite(r)]
        if r.size:
            count += r.size
            m = float(r.max())
            if m > best:
                best = m
    if count == 0:
        raise ValueError("empty pair set for the seminorm")
    return best


def hoelder_seminorm(field: Field, alpha: float, region, cap: Optional[float] = None,
                     sample: Optional[PairSample] = None) -> float:
    """[u]_alpha for alpha in (0,1): sup |u(z)-u(z̄)| / d(z,z̄)^alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("hoelder_seminorm takes alpha in (0,1)")
    sample = sample or PairSample()
    lat = field.lattice
    reg = region_mask(region, lat) & field.defined_mask()
    if reg.sum() < 2:
        raise ValueError("region has fewer than two points")
    cap = cap if cap is not None else lat.period / 2 - lat.h
    if cap <= lat.h:
        raise ValueError("pair cap must exceed the lattice spacing")
    base = _strided(reg, sample.base_stride)
    vals = np.where(field.defined_mask(), field.values, np.nan)

    def numer(u, ushift, k, ii):
        return np.abs(u - ushift)

    return _pair_sup(vals, base, reg, lat, alpha, cap, sample, numer)


def hoelder_seminorm_high(field: Field, alpha: float, region,
                          cap: Optional[float] = None,
                          sample: Optional[PairSample] = None) -> float:
    """[u]_alpha for alpha in (1,2), subtracting the spatial-gradient term."""
    if not (1.0 < alpha < 2.0):
        raise ValueError("hoelder_seminorm_high takes alpha in (1,2)")
    sample = sample or PairSample()
    lat = field.lattice
    reg = region_mask(region, lat) & field.defined_mask()
    if reg.sum() < 2:
        raise ValueError("region has fewer than two points")
    cap = cap if cap is not None else lat.period / 2 - lat.h
    base = _strided(reg, sample.base_stride)
    grads, _ = spatial_gradient(field)
    vals = np.where(field.defined_mask(), field.values, np.nan)

    def numer(u, ushift, k, ii):
        # z̄ = z - off, so x - x̄ = +ii*h componentwise
        lin = np.zeros_like(u)
        for a, i in enumerate(ii):
            if i:
                lin = lin + grads[a] * (i * lat.h)
        return np.abs(u - ushift - lin)

    return _pair_sup(vals, base, reg, lat, alpha, cap, sample, numer)


def negative_norm(field: Field, alpha: float, region,
                  refinement: int = 1,
                  sample_indices: Optional[np.ndarray] = None,
                  scales: Optional[Sequence[float]] = None) -> float:
    """[theta]_{alpha, region} = sup_T ||(theta)_T||_region T^{-alpha}, alpha < 0.

    T runs over {1} plus dyadic scales down to the kernel floor (optionally
    refined).  With ``sample_indices`` the sup is taken over those lattice
    points only (declared-sample mode); otherwise the full region is scanned.
    """
    if alpha >= 0:
        raise ValueError("negative_norm takes alpha < 0")
    if alpha <= -(2 + field.lattice.d):
        raise ValueError("alpha at or below -(2+d) is not integrable")
    lat = field.lattice
    Ts = list(scales) if scales is not None else dyadic_scales(lat, refinement)
    if not Ts:
        raise CollarError("no admissible mollification scales on this lattice")
    reg = region_mask(region, lat)
    best = 0.0
    for T in Ts:
        if sample_indices is not None:
            v = mollify_at(field, T, sample_indices)
            if np.isnan(v).all():
                raise CollarError(
                    f"field lacks the collar of width {T} needed at scale T={T}"
                )
            s = float(np.nanmax(np.abs(v)))
        else:
            g = mollify(field, T)
            m = reg & g.defined_mask()
            if not m.any():
                raise CollarError(
                    f"field lacks the collar of width {T} needed at scale T={T}"
                )
            s = float(np.max(np.abs(g.values[m])))
        best = max(best, s * T ** (-alpha))
    return best


def sup_norm(field: Field, region) -> float:
    """Plain restricted sup norm."""
    return field.sup(region_mask(region, field.lattice))


# ---------------------------------------------------------------------------
# germs

class Germ:
    """Two-base-point function U(x, y) over lattice points."""

    lattice: Lattice

    def eval_offsets(self, k: int, ii) -> np.ndarray:
        """Grid array of U(z, z - offset) for every base z (nan if unusable)."""
        raise NotImplementedError

    def eval_pairs(self, x_idx, y_indices: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def diagonal(self, indices: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(indices)
        return self.eval_pairs_many(idx, idx)

    def eval_pairs_many(self, x_indices: np.ndarray, y_indices: np.ndarray) -> np.ndarray:
        out = np.empty(len(x_indices))
        for r, (xi, yi) in enumerate(zip(x_indices, y_indices)):
            out[r] = self.eval_pairs(tuple(xi), yi[None, :])[0]
        return out


class SeparableGerm(Germ):
    """U(x, y) = sum_k f_k(x) g_k(y), with grid-wide vectorised evaluation."""

    def __init__(self, lattice: Lattice, terms):
        self.lattice = lattice
        self.terms = [
            (
                None if f is None else np.asarray(f, dtype=float),
                None if g is None else np.asarray(g, dtype=float),
            )
            for f, g in terms
        ]

    def eval_offsets(self, k: int, ii) -> np.ndarray:
        lat = self.lattice
        out = np.zeros(lat.shape)
        for f, g in self.terms:
            gy = np.ones(lat.shape) if g is None else g
            gy = _shifted_view(gy, k, ii, lat)
            out = out + (gy if f is None else f * gy)
        return out

    def eval_pairs(self, x_idx, y_indices: np.ndarray) -> np.ndarray:
        ys = tuple(np.asarray(y_indices[:, a]) for a in range(y_indices.shape[1]))
        out = np.zeros(len(y_indices))
        for f, g in self.terms:
            fx = 1.0 if f is None else f[tuple(x_idx)]
            gy = 1.0 if g is None else g[ys]
            out = out + fx * gy
        return out

    def nu_diagonal(self) -> np.ndarray:
        """Spatial gradient of y -> U(x, y) at y = x, on the whole grid."""
        lat = self.lattice
        nu = np.zeros((lat.d,) + lat.shape)
        for f, g in self.terms:
            if g is None:
                continue
            gf = Field(lat, g)
            gg, _ = spatial_gradient(gf)
            for a in range(lat.d):
                nu[a] += gg[a] if f is None else f * gg[a]
        return nu


class CallableGerm(Germ):
    """U from a callable fn(x_point, y_points) on coordinates."""

    def __init__(self, lattice: Lattice, fn: Callable):
        self.lattice = lattice
        self.fn = fn

    def eval_pairs(self, x_idx, y_indices: np.ndarray) -> np.ndarray:
        lat = self.lattice
        x = lat.point(x_idx)
        ys = np.stack([lat.point(tuple(row)) for row in np.atleast_2d(y_indices)])
        return np.asarray(self.fn(x, ys), dtype=float)

    def eval_offsets(self, k: int, ii) -> np.ndarray:
        raise NotImplementedError("callable germs use the per-base-point path")


def additive_germ(field: Field) -> SeparableGerm:
    """U(x,y) = w(y) - w(x)."""
    w = field.values
    return SeparableGerm(field.lattice, [(None, w), (-w, None)])


def expansion_germ(v: Field, y_prime: Field, y: Field) -> SeparableGerm:
    """The local-description germ of the remainder:

    U(x, y) = v(y) - v(x) + Y'(y) - Y'(x) + 3 v(x) (Y(y) - Y(x)).
    """
    a = v.values + y_prime.values
    return SeparableGerm(v.lattice, [
        (None, a),
        (-a - 3.0 * v.values * y.values, None),
        (3.0 * v.values, y.values),
    ])


def germ_sup_norm(germ: Germ, region, cap: float,
                  sample: Optional[PairSample] = None) -> float:
    """||U||_{B, r}: sup over sampled pairs in the region at distance <= cap."""
    sample = sample or PairSample()
    lat = germ.lattice
    reg = region_mask(region, lat)
    base = _strided(reg, sample.base_stride)
    best = 0.0
    found = False
    for k, ii, dist in _offset_list(lat, cap, sample):
        if isinstance(germ, SeparableGerm):
            u = germ.eval_offsets(k, ii)
            valid = base & _shifted_mask(reg, k, ii)
            vals = u[valid]
            vals = vals[np.isfinite(vals)]
            if vals.size:
                found = True
                best = max(best, float(np.max(np.abs(vals))))
        else:
            idx = np.argwhere(base)
            for xi in idx:
                yi = xi.copy()
                yi[0] -= k
                if yi[0] < 0:
                    continue
                yi[1:] = (yi[1:] - np.asarray(ii)) % lat.n_x
                # partner must be in region too
                if not reg[tuple(yi)]:
                    continue
                found = True
                best = max(best, float(abs(germ.eval_pairs(tuple(xi), yi[None, :])[0])))
    if not found:
        raise ValueError("empty pair set for the germ sup norm")
    return best


@dataclass
class TwoVariableReport:
    value: float
    alpha: float
    cap: float
    base_count: int
    pair_count: int
    diag_check: float
    one_sided_flags: int
    sample: dict = dataclass_field(default_factory=dict)


def two_variable_seminorm(germ: Germ, alpha: float, region,
                          cap: Optional[float] = None,
                          sample: Optional[PairSample] = None,
                          nu_mode: str = "diagonal",
                          diag_tol: float = 1e-7):
    """[U]_alpha per the two-variable definition, alpha in (1,2).

    nu(x) is the discrete spatial gradient of y -> U(x,y) at the diagonal
    (``nu_mode="least_squares"`` refines it by a weighted local fit).  Returns
    (value, nu array (d, *grid) masked to the region, report).  The result is
    within a factor ~2 of the exact infimum over nu.
    """
    if not (1.0 < alpha < 2.0):
        raise ValueError("two_variable_seminorm takes alpha in (1,2)")
    sample = sample or PairSample()
    lat = germ.lattice
    reg = region_mask(region, lat)
    base = _strided(reg, sample.base_stride)
    if not base.any():
        raise ValueError("no base points in region")
    cap = cap if cap is not None else lat.period / 2 - lat.h
    offsets = _offset_list(lat, cap, sample)

    base_idx = np.argwhere(base)
    diag = germ.diagonal(base_idx[: min(len(base_idx), 64)])
    diag_err = float(np.max(np.abs(diag))) if diag.size else 0.0
    scale_hint = 1.0
    if isinstance(germ, SeparableGerm):
        scale_hint = max(
            max(
                (np.max(np.abs(t)) if t is not None else 1.0)
                for t in (f, g)
            )
            for f, g in germ.terms
        ) or 1.0
    if diag_err > diag_tol * max(scale_hint, 1.0):
        raise ValueError(f"U(x,x) != 0 beyond tolerance: {diag_err}")

    if isinstance(germ, SeparableGerm):
        nu = germ.nu_diagonal()
        if nu_mode == "least_squares":
            nu = _nu_least_squares(germ, reg, offsets, alpha, nu)
        best = 0.0
        pair_count = 0
        for k, ii, dist in offsets:
            u = germ.eval_offsets(k, ii)
            # y = z - offset, so X(y - x) = -ii*h
            lin = np.zeros(lat.shape)
            for a, i in enumerate(ii):
                if i:
                    lin = lin + nu[a] * (-(i * lat.h))
            valid = base & _shifted_mask(reg, k, ii)
            vals = np.abs(u - lin)[valid] / dist ** alpha
            vals = vals[np.isfinite(vals)]
            if vals.size:
                pair_count += vals.size
                best = max(best, float(np.max(vals)))
        nu_out = nu
    else:
        best = 0.0
        pair_count = 0
        nu_out = np.zeros((lat.d,) + lat.shape)
        for xi in base_idx:
            xt = tuple(xi)
            nu_x = np.zeros(lat.d)
            for a in range(lat.d):
                up = list(xi); dn = list(xi)
                up[1 + a] = (up[1 + a] + 1) % lat.n_x
                dn[1 + a] = (dn[1 + a] - 1) % lat.n_x
                pair = np.array([up, dn])
                uu = germ.eval_pairs(xt, pair)
                nu_x[a] = (uu[0] - uu[1]) / (2 * lat.h)
                nu_out[(a,) + xt] = nu_x[a]
            ys, dists, dxs = [], [], []
            for k, ii, dist in offsets:
                yi = xi.copy()
                yi[0] -= k
                if yi[0] < 0:
                    continue
                yi[1:] = (yi[1:] - np.asarray(ii, dtype=int)) % lat.n_x
                if not reg[tuple(yi)]:
                    continue
                ys.append(yi)
                dists.append(dist)
                dxs.append(-np.asarray(ii, dtype=float) * lat.h)
            if not ys:
                continue
            uu = germ.eval_pairs(xt, np.asarray(ys))
            lin = np.asarray(dxs) @ nu_x
            vals = np.abs(uu - lin) / np.asarray(dists) ** alpha
            pair_count += vals.size
            best = max(best, float(np.max(vals)))
    if pair_count == 0:
        raise ValueError("empty pair set for the two-variable seminorm")
    report = TwoVariableReport(
        value=best, alpha=alpha, cap=cap, base_count=int(base.sum()),
        pair_count=pair_count, diag_check=diag_err, one_sided_flags=0,
        sample=sample.describe(),
    )
    return best, nu_out, report


def _nu_least_squares(germ: SeparableGerm, reg, offsets, alpha, nu0):
    """Weighted local fit of nu minimising sum (U - nu.Dx)^2 / d^{2 alpha}."""
    lat = germ.lattice
    d = lat.d
    A = np.zeros((d, d) + lat.shape)
    b = np.zeros((d,) + lat.shape)
    for k, ii, dist in offsets:
        dx = -np.asarray(ii, dtype=float) * lat.h
        if not np.any(dx):
            continue
        w = dist ** (-2 * alpha)
        u = np.nan_to_num(germ.eval_offsets(k, ii))
        for a in range(d):
            b[a] += w * dx[a] * u
            for c in range(d):
                A[a, c] += w * dx[a] * dx[c]
    nu = nu0.copy()
    flat_shape = (-1,)
    Af = A.reshape(d, d, -1)
    bf = b.reshape(d, -1)
    det_ok = np.ones(Af.shape[-1], dtype=bool)
    try:
        sol = np.linalg.solve(
            np.moveaxis(Af, -1, 0) + 1e-30 * np.eye(d), np.moveaxis(bf, -1, 0)[..., None]
        )[..., 0]
        nu = np.moveaxis(sol, 0, -1).reshape((d,) + lat.shape)
    except np.linalg.LinAlgError:
        pass
    return nu
