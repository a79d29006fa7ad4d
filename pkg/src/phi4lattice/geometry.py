"""Space-time lattice geometry: parabolic metric, past balls, shrunk domains.

Everything downstream (kernels, norms, solvers) lives on a ``Lattice``: a
uniform grid over a time interval crossed with a periodic spatial box, with
the parabolic coupling dt = c_cfl * h^2 baked in.  Points are plain arrays
``(t, x_1, .., x_d)``; regions are ``Domain`` boxes or boolean masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Lattice",
    "Domain",
    "Field",
    "PastBall",
    "ResolutionError",
    "CollarError",
    "parabolic_distance",
    "past_ball",
    "shrink_domain",
    "cone_witness",
    "unit_box",
    "save_field",
    "load_field",
]


class ResolutionError(ValueError):
    """A requested scale is below what the lattice resolves."""


class CollarError(ValueError):
    """A field is not defined on a large enough collar for the operation."""


def _default_cfl(d: int) -> float:
    # explicit Euler needs dt <= h^2/(2d); 1/4 is the d=1 choice, 1/8 keeps
    # d=2 off the marginal line and d=3 strictly stable
    return 0.25 if d == 1 else 0.125


@dataclass(frozen=True)
class Lattice:
    """Uniform space-time grid with parabolic scaling dt = c_cfl * h**2.

    Time runs over ``t0 + dt*k`` for ``k = 0..n_t`` (not periodic); each of
    the ``d`` spatial axes has ``n_x`` sites ``x0 + h*i`` with period
    ``n_x * h``.
    """

    d: int
    h: float
    t0: float
    n_t: int
    x0: float
    n_x: int
    c_cfl: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.h <= 0 or self.n_t < 1 or self.n_x < 2:
            raise ValueError("degenerate lattice")

    @property
    def dt(self) -> float:
        return self.c_cfl * self.h * self.h

    @property
    def t1(self) -> float:
        return self.t0 + self.n_t * self.dt

    @property
    def period(self) -> float:
        return self.n_x * self.h

    @property
    def shape(self) -> tuple:
        return (self.n_t + 1,) + (self.n_x,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.dt * self.h ** self.d

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_t + 1)

    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n_x)

    def time_index(self, t: float, snap: bool = True) -> int:
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if not snap and abs(k - kr) > 1e-6:
            raise ValueError(f"time {t} not on the lattice")
        return min(max(kr, 0), self.n_t)

    def space_index(self, x: float) -> int:
        i = int(round((x - self.x0) / self.h))
        return i % self.n_x

    def index_of(self, point) -> tuple:
        point = np.asarray(point, dtype=float)
        return (self.time_index(point[0]),) + tuple(
            self.space_index(point[1 + a]) for a in range(self.d)
        )

    def point(self, idx: Sequence[int]) -> np.ndarray:
        out = np.empty(1 + self.d)
        out[0] = self.t0 + self.dt * idx[0]
        for a in range(self.d):
            out[1 + a] = self.x0 + self.h * (idx[1 + a] % self.n_x)
        return out

    @classmethod
    def box(cls, d: int, h: float, t_span=(-1.25, 1.0), x0: float = -2.0,
            period: float = 4.0, c_cfl: Optional[float] = None) -> "Lattice":
        c = _default_cfl(d) if c_cfl is None else c_cfl
        dt = c * h * h
        n_t = int(round((t_span[1] - t_span[0]) / dt))
        n_x = int(round(period / h))
        return cls(d=d, h=h, t0=t_span[0], n_t=n_t, x0=x0, n_x=n_x, c_cfl=c)

    @classmethod
    def standard(cls, d: int, n_x: int = 128, c_cfl: Optional[float] = None) -> "Lattice":
        """Unit box P = (0,1) x (-1,1)^d plus a causal collar: t in [-1.25, 1],
        space periodic with period 4 so convolutions near P never wrap."""
        h = 4.0 / n_x
        return cls.box(d, h, t_span=(-1.25, 1.0), x0=-2.0, period=4.0, c_cfl=c_cfl)


def parabolic_distance(z1, z2) -> float:
    """max{ sqrt|t1-t2|, |x1-x2|_inf } for z = (t, x_1..x_d)."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape:
        raise ValueError(f"dimension mismatch: {z1.shape} vs {z2.shape}")
    if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
        raise ValueError("non-finite coordinates")
    dt_part = np.sqrt(abs(z1[0] - z2[0]))
    dx_part = np.max(np.abs(z1[1:] - z2[1:])) if z1.size > 1 else 0.0
    return float(max(dt_part, dx_part))


def offset_distance(k: int, ii: Sequence[int], lattice: Lattice) -> float:
    """Parabolic length of a lattice offset (k time steps, ii spatial steps)."""
    sp = max(abs(int(i)) for i in ii) * lattice.h if len(ii) else 0.0
    return max(np.sqrt(abs(k) * lattice.dt), sp)


@dataclass(frozen=True)
class Domain:
    """Parabolic box (t_lo, t_hi] x prod_a (x_lo[a], x_hi[a]).

    ``shrink(R)`` moves the parabolic boundary in by R: time start by R^2,
    spatial faces by R; the final-time slice stays.
    """

    t_lo: float
    t_hi: float
    x_lo: tuple
    x_hi: tuple

    @property
    def d(self) -> int:
        return len(self.x_lo)

    @property
    def is_empty(self) -> bool:
        if self.t_lo >= self.t_hi:
            return True
        return any(lo >= hi for lo, hi in zip(self.x_lo, self.x_hi))

    def shrink(self, R: float) -> "Domain":
        if R < 0:
            raise ValueError("shrink parameter must be >= 0")
        return Domain(
            t_lo=self.t_lo + R * R,
            t_hi=self.t_hi,
            x_lo=tuple(lo + R for lo in self.x_lo),
            x_hi=tuple(hi - R for hi in self.x_hi),
        )

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        if self.is_empty:
            return False
        if not (self.t_lo < point[0] <= self.t_hi):
            return False
        return all(
            self.x_lo[a] < point[1 + a] < self.x_hi[a] for a in range(self.d)
        )

    def mask(self, lattice: Lattice) -> np.ndarray:
        """Boolean mask of lattice points inside the domain."""
        if lattice.d != self.d:
            raise ValueError("dimension mismatch")
        out = np.zeros(lattice.shape, dtype=bool)
        if self.is_empty:
            return out
        tt = lattice.times()
        sel_t = (tt > self.t_lo) & (tt <= self.t_hi)
        xs = lattice.xs()
        sel_x = [
            (xs > self.x_lo[a]) & (xs < self.x_hi[a]) for a in range(self.d)
        ]
        grid = sel_t
        for a in range(self.d):
            grid = grid[..., None] & sel_x[a]
        out[:] = grid
        return out

    def sample_indices(self, lattice: Lattice, stride=1,
                       target: Optional[int] = None) -> np.ndarray:
        """Index array (m, 1+d) of in-domain lattice points on a stride grid.

        ``stride`` may be an int or a per-axis tuple; ``target`` picks strides
        automatically to land near that many points.
        """
        m = self.mask(lattice)
        idx = np.argwhere(m)
        if idx.size == 0:
            return idx
        if target is not None:
            total = len(idx)
            # time is the long axis: thin space mildly, push the rest into time
            ratio = max(total / target, 1.0)
            s_space = max(int(np.floor(ratio ** (1.0 / (2 + lattice.d)))), 1)
            s_time = max(int(np.ceil(ratio / s_space ** lattice.d)), 1)
            stride = (s_time,) + (s_space,) * lattice.d
        if np.isscalar(stride):
            stride = (int(stride),) * (1 + lattice.d)
        stride_arr = np.asarray(stride, dtype=int)
        if np.any(stride_arr > 1):
            keep = np.all(idx % stride_arr == 0, axis=1)
            if keep.any():
                idx = idx[keep]
        return idx

    def half_width(self) -> float:
        return min((hi - lo) / 2.0 for lo, hi in zip(self.x_lo, self.x_hi))


def unit_box(d: int) -> Domain:
    """P = (0, 1) x (-1, 1)^d."""
    return Domain(t_lo=0.0, t_hi=1.0, x_lo=(-1.0,) * d, x_hi=(1.0,) * d)


def shrink_domain(domain: Domain, R: float) -> Domain:
    """D_R; for D = P this is (R^2, 1) x {|x| < 1-R}. Empty stays explicit."""
    if domain.is_empty:
        raise ValueError("cannot shrink an empty domain")
    return domain.shrink(R)


@dataclass(frozen=True)
class PastBall:
    """Lattice points strictly in the past cone piece {d(z, .) < R, t < t_z}."""

    center: np.ndarray
    radius: float
    indices: np.ndarray        # (m, 1+d) integer indices, spatial wrapped
    points: np.ndarray         # (m, 1+d) coordinates (unwrapped offsets)
    flagged_empty: bool


def past_ball(z, R: float, lattice: Lattice) -> PastBall:
    """All lattice points z̄ with d(z, z̄) < R and t̄ < t_z."""
    if R <= 0:
        raise ValueError("radius must be positive")
    if R > lattice.period / 2:
        raise ValueError("radius exceeds half the spatial period")
    z = np.asarray(z, dtype=float)
    if z.size != 1 + lattice.d:
        raise ValueError("dimension mismatch between point and lattice")
    kc = lattice.time_index(z[0])
    ic = [lattice.space_index(z[1 + a]) for a in range(lattice.d)]

    n_back = int(np.ceil(R * R / lattice.dt)) - 1  # strict: t_z - t < R^2
    n_back = min(n_back, kc)
    m_side = int(np.ceil(R / lattice.h)) - 1       # strict: |dx| < R
    if n_back < 1:
        empty = np.zeros((0, 1 + lattice.d), dtype=int)
        return PastBall(z, R, empty, empty.astype(float), True)

    ks = np.arange(1, n_back + 1)
    offs = np.arange(-m_side, m_side + 1)
    grids = np.meshgrid(ks, *([offs] * lattice.d), indexing="ij")
    flat = [g.ravel() for g in grids]
    idx = np.empty((flat[0].size, 1 + lattice.d), dtype=int)
    idx[:, 0] = kc - flat[0]
    pts = np.empty_like(idx, dtype=float)
    pts[:, 0] = z[0] - flat[0] * lattice.dt
    for a in range(lattice.d):
        idx[:, 1 + a] = (ic[a] + flat[1 + a]) % lattice.n_x
        pts[:, 1 + a] = z[1 + a] + flat[1 + a] * lattice.h
    return PastBall(z, R, idx, pts, False)


def cone_witness(domain: Domain, x, nu, r: float, lattice: Lattice,
                 lam: float = np.sqrt(2.0) / 2.0) -> np.ndarray:
    """A point y in the domain with d(x,y) = r (lattice shell) and
    |nu . X(y-x)| >= lam |nu| d(x,y).

    The witness moves spatially at the same time slice; on each axis the move
    is clipped to stay inside the box, and the better of the two sign
    patterns (against positive or negative components of nu) is taken.
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if nu.size != domain.d or x.size != 1 + domain.d:
        raise ValueError("dimension mismatch")
    if not domain.contains(x):
        raise ValueError("base point outside the domain")
    r_shell = np.floor(r / lattice.h + 1e-9) * lattice.h
    if r_shell < lattice.h:
        raise ResolutionError(
            f"no witness at lattice resolution: requested r={r} but spacing is h={lattice.h}"
        )
    if r_shell >= domain.half_width():
        raise ValueError("cone radius too large for the domain half-width")

    lo = np.array(domain.x_lo)
    hi = np.array(domain.x_hi)
    xs = x[1:]
    # feasible per-axis moves, strictly inside the open box
    u_min = np.maximum(-r_shell, lo - xs + lattice.h / 2)
    u_max = np.minimum(r_shell, hi - xs - lattice.h / 2)

    def build(sign: float) -> np.ndarray:
        # push each component as far as allowed in the direction sign*nu_a
        u = np.where(sign * nu >= 0, u_max, u_min)
        u = np.round(u / lattice.h) * lattice.h
        u = np.clip(u, u_min, u_max)
        # enforce the sup-norm shell |u|_inf = r_shell on the roomiest axis
        if np.max(np.abs(u)) < r_shell - 1e-12:
            a = int(np.argmax(np.maximum(np.abs(u_min), np.abs(u_max))))
            u[a] = r_shell if u_max[a] >= r_shell - 1e-12 else -r_shell
        return u

    best = None
    for sign in (+1.0, -1.0):
        u = build(sign)
        if np.max(np.abs(u)) < r_shell - 1e-12:
            continue
        score = abs(float(np.dot(nu, u)))
        if best is None or score > best[0]:
            best = (score, u)
    if best is None:
        raise ResolutionError(
            f"no admissible shell move at spacing h={lattice.h}"
        )
    score, u = best
    nrm = float(np.linalg.norm(nu))
    if nrm > 0 and score + 1e-12 < lam * nrm * r_shell:
        raise ResolutionError(
            f"cone witness failed the angle bound at spacing h={lattice.h}"
        )
    y = x.copy()
    y[1:] = xs + u
    return y


@dataclass
class Field:
    """Scalar samples on a lattice, with an optional defined-region mask."""

    lattice: Lattice
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.lattice.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match lattice {self.lattice.shape}"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape mismatch")
        self.values.setflags(write=False)

    @classmethod
    def constant(cls, lattice: Lattice, c: float) -> "Field":
        return cls(lattice, np.full(lattice.shape, float(c)))

    @classmethod
    def from_function(cls, lattice: Lattice, fn) -> "Field":
        """Sample fn(t, x_1..x_d) on the grid (fn must broadcast)."""
        tt = lattice.times().reshape((-1,) + (1,) * lattice.d)
        axes = []
        for a in range(lattice.d):
            shape = [1] * (1 + lattice.d)
            shape[1 + a] = lattice.n_x
            axes.append(lattice.xs().reshape(shape))
        return cls(lattice, np.asarray(fn(tt, *axes), dtype=float) * np.ones(lattice.shape))

    def defined_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.lattice.shape, dtype=bool)
        return self.mask

    def check_finite(self):
        vals = self.values[self.defined_mask()]
        if vals.size and not np.all(np.isfinite(vals)):
            raise ValueError("non-finite values on the defined region")

    def sup(self, region: Optional[np.ndarray] = None) -> float:
        """Sup norm over region (mask array) intersected with the defined mask."""
        m = self.defined_mask()
        if region is not None:
            m = m & region
        if not m.any():
            raise ValueError("empty region in sup norm")
        return float(np.max(np.abs(self.values[m])))

    def with_values(self, values, mask=None) -> "Field":
        return Field(self.lattice, values, self.mask if mask is None else mask)


_MAGIC = b"PHI4FLD1"


def save_field(field: Field, path) -> None:
    """Field binary format: magic, JSON header line, then the little-endian
    float64 row-major value block, then a uint8 mask block when present."""
    lat = field.lattice
    header = {
        "dimension": lat.d,
        "h": lat.h,
        "dt": lat.dt,
        "c_cfl": lat.c_cfl,
        "t0": lat.t0,
        "n_t": lat.n_t,
        "x0": lat.x0,
        "n_x": lat.n_x,
        "shape": list(field.values.shape),
        "dtype": "<f8",
        "order": "C",
        "mask": "inline" if field.mask is not None else "none",
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
        if field.mask is not None:
            fh.write(np.ascontiguousarray(field.mask, dtype=np.uint8).tobytes())


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a field binary")
        header = json.loads(fh.readline().decode("utf-8"))
        lat = Lattice(
            d=header["dimension"], h=header["h"], t0=header["t0"],
            n_t=header["n_t"], x0=header["x0"], n_x=header["n_x"],
            c_cfl=header["c_cfl"],
        )
        count = int(np.prod(header["shape"]))
        vals = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(header["shape"]).copy()
        mask = None
        if header["mask"] == "inline":
            mask = np.frombuffer(fh.read(count), dtype=np.uint8).reshape(header["shape"]).astype(bool)
    return Field(lat, vals, mask)
