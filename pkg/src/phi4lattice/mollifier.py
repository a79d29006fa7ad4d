"""Causal compactly supported mollifiers with a dyadic semigroup structure.

The base bump Phi is a smooth plateau profile supported in the past unit
ball, symmetric in space, with values in [0, 1] and unit discrete mass.  The
scaled copies Phi_T(s, y) = T^-(2+d) Phi(s/T^2, y/T) convolve into the stage
kernels

    Psi_{T,n} = Phi_{T/2} * Phi_{T/4} * ... * Phi_{T 2^-n},

and the full kernel Psi_T is realised as Psi_{T, n_max} with
n_max = max{n : T 2^-n >= 4h}.  Because the discrete kernels are exact
discrete convolutions of the same sampled factors, the dyadic relation
(.)_T = ((.)_{T/2})_{T,1} holds to rounding error, which is what the
reconstruction telescoping relies on.

Mollification reads strictly into the past: (theta)_T(z) depends on theta at
times < t_z only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import fft as sfft
from scipy.signal import fftconvolve

from .geometry import CollarError, Field, Lattice, ResolutionError

_KERNEL_CACHE: dict = {}
_KERNEL_CACHE_MAX = 64

__all__ = [
    "BaseBump",
    "Kernel",
    "build_base_bump",
    "scale_bump",
    "build_kernel",
    "n_max_stage",
    "mollify",
    "mollify_stage",
    "mollify_at",
    "semigroup_defect",
    "kernel_moment",
    "dyadic_scales",
]

# smooth step: 0 below 0, 1 above 1, C^inf in between
def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x >= 1.0] = 1.0
    mid = (x > 0.0) & (x < 1.0)
    if np.any(mid):
        xm = x[mid]
        a = np.exp(-1.0 / xm)
        b = np.exp(-1.0 / (1.0 - xm))
        out[mid] = a / (a + b)
    return out


def time_profile(u: np.ndarray) -> np.ndarray:
    """Plateau bump on (0, 1); the time factor of Phi is time_profile(-s)."""
    u = np.asarray(u, dtype=float)
    return _smoothstep(u / 0.25) * _smoothstep((1.0 - u) / 0.25)


def space_profile(y: np.ndarray) -> np.ndarray:
    """Even plateau bump on (-1, 1), one factor per spatial axis."""
    y = np.asarray(y, dtype=float)
    return _smoothstep((1.0 + y) / 0.5) * _smoothstep((1.0 - y) / 0.5)


@dataclass(frozen=True)
class Kernel:
    """Sampled kernel on lattice offsets.

    ``values[j, i1, .., id]`` is the kernel at time offset -(j0 + j) dt and
    spatial offset (i - m) h per axis, where m = (values.shape[axis]-1)//2.
    The discrete mass sum(values) * dt * h^d is 1.
    """

    scale: float
    stage: Optional[int]          # None marks the full Psi_T (stage n_max)
    d: int
    dt: float
    h: float
    j0: int                       # first time offset, in steps (>= 1 unless Dirac)
    values: np.ndarray
    support_radius: float

    @property
    def is_dirac(self) -> bool:
        return self.j0 == 0 and self.values.size == 1

    def mass(self) -> float:
        return float(self.values.sum() * self.dt * self.h ** self.d)

    def time_offsets(self) -> np.ndarray:
        return -(self.j0 + np.arange(self.values.shape[0])) * self.dt

    def spatial_offsets(self, axis: int) -> np.ndarray:
        n = self.values.shape[1 + axis]
        m = (n - 1) // 2
        return (np.arange(n) - m) * self.h

    def offset_distances(self) -> np.ndarray:
        """Parabolic distance from 0 to each sampled offset."""
        tpart = np.sqrt(np.abs(self.time_offsets()))
        grid = tpart.reshape((-1,) + (1,) * self.d)
        sp = np.zeros(self.values.shape[1:])
        for a in range(self.d):
            off = np.abs(self.spatial_offsets(a))
            shape = [1] * self.d
            shape[a] = off.size
            sp = np.maximum(sp, off.reshape(shape))
        return np.maximum(grid, sp)


def _sample_phi(T: float, lattice: Lattice) -> np.ndarray:
    """Sample Phi_T at lattice offsets; axis 0 runs over j = 1.. (s = -j dt)."""
    dt, h, d = lattice.dt, lattice.h, lattice.d
    mt = int(np.ceil(T * T / dt)) - 1
    mx = int(np.ceil(T / h)) - 1
    if mt < 1 or mx < 1:
        raise ResolutionError(f"scale T={T} below the resolution floor (h={h})")
    ss = -(np.arange(1, mt + 1)) * dt
    tvals = time_profile(-ss / (T * T))
    yy = (np.arange(-mx, mx + 1)) * h
    svals = space_profile(yy / T)
    out = tvals.reshape((-1,) + (1,) * d)
    for a in range(d):
        shape = [1] * (1 + d)
        shape[1 + a] = svals.size
        out = out * svals.reshape(shape)
    return out / (T ** (2 + d))


def build_base_bump(lattice: Lattice) -> Kernel:
    """The unit-scale bump Phi as a kernel (scale T = 1)."""
    return scale_bump(lattice, 1.0)


BaseBump = Kernel


def scale_bump(lattice: Lattice, T: float) -> Kernel:
    """Phi_T = T^-(2+d) Phi(./T^2, ./T), renormalised to unit discrete mass."""
    if T < 4 * lattice.h - 1e-12:
        raise ResolutionError(
            f"scale T={T} not resolvable: need T >= 4h = {4 * lattice.h}"
        )
    vals = _sample_phi(T, lattice)
    mass = vals.sum() * lattice.cell_volume
    if mass <= 0:
        raise ResolutionError(f"empty sampled kernel at T={T}")
    vals = vals / mass
    return Kernel(
        scale=T, stage=None, d=lattice.d, dt=lattice.dt, h=lattice.h,
        j0=1, values=vals, support_radius=T,
    )


def n_max_stage(T: float, lattice: Lattice) -> int:
    """max{n >= 0 : T 2^-n >= 4h}; the truncation depth of Psi_T."""
    n = int(np.floor(np.log2(T / (4 * lattice.h)) + 1e-9))
    return max(n, 0)


def _dirac(lattice: Lattice, T: float, stage: int) -> Kernel:
    vals = np.full((1,) + (1,) * lattice.d, 1.0 / lattice.cell_volume)
    return Kernel(scale=T, stage=stage, d=lattice.d, dt=lattice.dt,
                  h=lattice.h, j0=0, values=vals, support_radius=0.0)


def build_kernel(T: float, n: Optional[int], lattice: Lattice) -> Kernel:
    """Psi_{T,n}; n = None gives the truncated full kernel Psi_T = Psi_{T,n_max}.

    n = 0 is the identity (lattice Dirac); n >= 1 requires T 2^-n >= 4h.
    Kernels are immutable and cached per (T, n, lattice).
    """
    key = (float(T), n, lattice)
    hit = _KERNEL_CACHE.get(key)
    if hit is not None:
        return hit
    kern = _build_kernel(T, n, lattice)
    if len(_KERNEL_CACHE) >= _KERNEL_CACHE_MAX:
        _KERNEL_CACHE.pop(next(iter(_KERNEL_CACHE)))
    _KERNEL_CACHE[key] = kern
    return kern


def _build_kernel(T: float, n: Optional[int], lattice: Lattice) -> Kernel:
    if T > 1.0 + 1e-12:
        raise ValueError("kernel scales are restricted to T <= 1")
    full = n is None
    if full:
        n = n_max_stage(T, lattice)
        if n < 1:
            raise ResolutionError(
                f"Psi_T needs T >= 8h; got T={T}, h={lattice.h}"
            )
    if n == 0:
        return _dirac(lattice, T, 0)
    if T * 2.0 ** (-n) < 4 * lattice.h - 1e-12:
        raise ResolutionError(
            f"stage kernel factor T 2^-n = {T * 2.0 ** (-n)} below 4h = {4 * lattice.h}"
        )
    vals = None
    j0 = 0
    for k in range(1, n + 1):
        fac = scale_bump(lattice, T * 2.0 ** (-k))
        if vals is None:
            vals, j0 = fac.values, fac.j0
        else:
            vals = fftconvolve(vals, fac.values) * lattice.cell_volume
            j0 += fac.j0
    vals = np.maximum(vals, 0.0)
    vals = vals / (vals.sum() * lattice.cell_volume)
    return Kernel(
        scale=T, stage=None if full else n, d=lattice.d, dt=lattice.dt,
        h=lattice.h, j0=j0, values=vals,
        support_radius=T * (1.0 - 2.0 ** (-n)),
    )


def dyadic_scales(lattice: Lattice, refinement: int = 1,
                  include_one: bool = True) -> list:
    """Scales {2^-j} (refined by 2^{-j/refinement}) down to the Psi_T floor 8h."""
    floor = 8 * lattice.h
    out = []
    j = 0
    while True:
        j += 1
        T = 2.0 ** (-j / refinement)
        if T < floor - 1e-12:
            break
        out.append(T)
    if include_one and 1.0 >= floor:
        out.insert(0, 1.0)
    return out


# ---------------------------------------------------------------------------
# applying kernels to fields

def _kernel_slot(kernel: Kernel, lattice: Lattice):
    if abs(kernel.dt - lattice.dt) > 1e-12 * lattice.dt or abs(kernel.h - lattice.h) > 1e-12:
        raise ValueError("kernel was sampled on a different lattice resolution")


def _correlate_full(field: Field, kernel: Kernel) -> Field:
    """(theta)_K over the whole grid via FFT; time is linear, space circular.

    Reads theta(z + zeta) at the sampled offsets zeta, so the orientation is
    exact for asymmetric kernels too (the X-weighted composites need this).
    """
    lat = field.lattice
    _kernel_slot(kernel, lat)
    vals = np.nan_to_num(np.where(field.defined_mask(), field.values, 0.0))
    kv = kernel.values
    mt = kv.shape[0]
    j0 = kernel.j0
    n_t = lat.n_t + 1

    # out[k, x] = sum_{j,i} K[j, i] theta[k - j0 - j, x + i - m]
    Lt = sfft.next_fast_len(n_t + j0 + mt)
    fshape = [Lt] + [lat.n_x] * lat.d
    axes = tuple(range(0, 1 + lat.d))
    F = sfft.rfftn(vals, s=fshape, axes=axes)
    kfull = np.zeros(fshape)
    m = [(kv.shape[1 + a] - 1) // 2 for a in range(lat.d)]
    idx = np.ix_(np.arange(j0, j0 + mt), *[
        (-(np.arange(kv.shape[1 + a]) - m[a])) % lat.n_x for a in range(lat.d)
    ])
    kfull[idx] = kv
    K = sfft.rfftn(kfull, s=fshape, axes=axes)
    out = sfft.irfftn(F * K, s=fshape, axes=axes)[:n_t]
    out *= lat.cell_volume

    if field.mask is None:
        new_mask = np.zeros(lat.shape, dtype=bool)
        new_mask[j0 + mt - 1:] = True
    else:
        cov = sfft.rfftn(field.defined_mask().astype(float), s=fshape, axes=axes)
        sfull = np.zeros(fshape)
        sfull[idx] = 1.0
        S = sfft.rfftn(sfull, s=fshape, axes=axes)
        hits = sfft.irfftn(cov * S, s=fshape, axes=axes)[:n_t]
        new_mask = hits > kv.size - 0.5
    out = np.where(new_mask, out, np.nan)
    return Field(lat, out, new_mask)


def _correlate_at(field: Field, kernel: Kernel, indices: np.ndarray,
                  max_slices: int = 512) -> np.ndarray:
    """Kernel action at selected points (m, 1+d) by direct summation.

    Long kernels are time-binned (mass preserving) before summation; the
    kernels are smooth at scale T^2 >> dt so this is just a coarser midpoint
    rule in time.
    """
    lat = field.lattice
    _kernel_slot(kernel, lat)
    kv, j0 = kernel.values, kernel.j0
    mt = kv.shape[0]
    if mt > max_slices:
        binsize = int(np.ceil(mt / max_slices))
        pad = (-mt) % binsize
        kvp = np.pad(kv, [(0, pad)] + [(0, 0)] * lat.d)
        kv = kvp.reshape((-1, binsize) + kv.shape[1:]).sum(axis=1)
        # bin centers: offsets j0 + binsize*b + (binsize-1)/2; snap to int
        j0 = j0 + (binsize - 1) // 2
        stride = binsize
    else:
        stride = 1
    vals = field.values
    defined = field.defined_mask()
    m = [(kv.shape[1 + a] - 1) // 2 for a in range(lat.d)]
    out = np.empty(indices.shape[0])
    off_sp = [
        ((np.arange(kv.shape[1 + a]) - m[a])) for a in range(lat.d)
    ]
    for r, idx in enumerate(indices):
        k = idx[0]
        jt = k - (j0 + stride * np.arange(kv.shape[0]))
        if jt[-1] < 0:
            raise CollarError(
                f"kernel at scale {kernel.scale} reaches before the grid start; "
                f"needs {kernel.scale ** 2:.4g} of past time"
            )
        sp = np.ix_(jt, *[(idx[1 + a] + off_sp[a]) % lat.n_x for a in range(lat.d)])
        if not defined[sp].all():
            out[r] = np.nan
            continue
        out[r] = np.sum(vals[sp] * kv) * lat.cell_volume * stride
    return out


def mollify(field: Field, T: float, mode: str = "fft") -> Field:
    """(theta)_T: convolution with Psi_T; the output mask shrinks by T."""
    kern = build_kernel(T, None, field.lattice)
    if mode == "fft":
        return _correlate_full(field, kern)
    raise ValueError(f"unknown mode {mode!r}")


def mollify_with(field: Field, kern: Kernel) -> Field:
    """Apply an explicit kernel (any sampled offset kernel) to a field."""
    if kern.is_dirac:
        return field
    return _correlate_full(field, kern)


def bump_factors(lattice: Lattice, T: float):
    """Separable factors of the sampled bump: Phi_T = tau (x) s (x) ... (x) s.

    tau has unit mass against dt (time offsets -(1+j) dt), s against h.
    """
    if T < 4 * lattice.h - 1e-12:
        raise ResolutionError(f"scale T={T} not resolvable (4h={4 * lattice.h})")
    dt, h = lattice.dt, lattice.h
    mt = int(np.ceil(T * T / dt)) - 1
    mx = int(np.ceil(T / h)) - 1
    tau = time_profile((np.arange(1, mt + 1) * dt) / (T * T))
    s = space_profile((np.arange(-mx, mx + 1) * h) / T)
    tau = tau / (tau.sum() * dt)
    s = s / (s.sum() * h)
    return tau, s


def mollify_bump_separable(field: Field, T: float) -> Field:
    """(theta)_{Phi_T} via per-axis convolutions (fast path, unmasked fields).

    Equal to mollify_with(field, scale_bump(lattice, T)) to rounding error;
    the spatial profile is even so orientation is immaterial there.
    """
    from scipy import ndimage

    lat = field.lattice
    if field.mask is not None:
        return mollify_with(field, scale_bump(lat, T))
    tau, s = bump_factors(lat, T)
    mt = tau.size
    n_t = lat.n_t + 1
    Lt = sfft.next_fast_len(n_t + mt + 1)
    Fv = sfft.rfft(field.values, Lt, axis=0)
    kt = np.zeros(Lt)
    kt[1: 1 + mt] = tau * lat.dt
    out = sfft.irfft(Fv * sfft.rfft(kt).reshape((-1,) + (1,) * lat.d), Lt,
                     axis=0)[:n_t]
    for a in range(lat.d):
        out = ndimage.convolve1d(out, s * lat.h, axis=1 + a, mode="wrap")
    mask = np.zeros(lat.shape, dtype=bool)
    mask[mt:] = True
    out = np.where(mask, out, np.nan)
    return Field(lat, out, mask)


def mollify_stage(field: Field, T: float, n: int) -> Field:
    """(theta)_{T,n}: convolution with the stage kernel Psi_{T,n}."""
    kern = build_kernel(T, n, field.lattice)
    if kern.is_dirac:
        return field
    return _correlate_full(field, kern)


def mollify_at(field: Field, T: float, indices: np.ndarray,
               stage: Optional[int] = None) -> np.ndarray:
    """Pointwise (theta)_T (or (theta)_{T,stage}) at index rows (m, 1+d)."""
    kern = build_kernel(T, stage, field.lattice)
    if kern.is_dirac:
        return field.values[tuple(indices.T)]
    return _correlate_at(field, kern, np.atleast_2d(indices))


def semigroup_defect(field: Field, T: float, region=None) -> float:
    """sup |(theta)_T - ((theta)_{T/2})_{T,1}| / sup |(theta)_T| on the common mask."""
    a = mollify(field, T)
    half = mollify(field, T / 2)
    b = mollify_stage(half, T, 1)
    m = a.defined_mask() & b.defined_mask()
    if region is not None:
        m = m & region
    if not m.any():
        raise CollarError("no common region to compare the dyadic relation on")
    denom = float(np.max(np.abs(a.values[m])))
    if denom == 0.0:
        return float(np.max(np.abs(a.values[m] - b.values[m])))
    return float(np.max(np.abs(a.values[m] - b.values[m])) / denom)


def kernel_moment(T: float, n: Optional[int], alpha: float,
                  lattice: Lattice) -> tuple:
    """Discrete moments (int |Psi| d^alpha, int |grad Psi| d^alpha).

    The first is bounded by T^alpha (Eq.-level contract, 5% quadrature slack);
    the gradient moment scales like T^(alpha-1).
    """
    if alpha <= -(2 + lattice.d):
        raise ValueError(
            f"moment exponent must exceed -(2+d) = {-(2 + lattice.d)}"
        )
    kern = build_kernel(T, n, lattice)
    if kern.is_dirac:
        raise ResolutionError("moments of the identity stage are degenerate")
    dists = kern.offset_distances()
    w = dists ** alpha
    vol = lattice.cell_volume
    mom = float(np.sum(np.abs(kern.values) * w) * vol)
    grad = np.zeros_like(kern.values)
    for a in range(lattice.d):
        g = np.gradient(kern.values, lattice.h, axis=1 + a)
        grad = np.maximum(grad, np.abs(g))
    mom_grad = float(np.sum(grad * w) * vol)
    return mom, mom_grad
