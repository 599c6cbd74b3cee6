"""Optimization targets, their derivatives and grid tabulations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from .numerics import Stencil, central_difference_stencil, circulant_apply, sym_eig

Role = Literal["position", "momentum", "bath_s", "bath_ps"]


# ---------------------------------------------------------------------------
# Grids


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid per dimension: coordinate_i = offset + i * spacing."""

    points: tuple[int, ...]
    spacing: tuple[float, ...]
    offset: tuple[float, ...]
    role: Role = "position"

    def __post_init__(self):
        if not (len(self.points) == len(self.spacing) == len(self.offset)):
            raise ValueError("points, spacing and offset need one entry per dimension")
        for n in self.points:
            if n < 4 or not _is_pow2(n):
                raise ValueError(f"grid point counts must be powers of two >= 4, got {n}")
        for h in self.spacing:
            if not h > 0:
                raise ValueError("grid spacing must be positive")

    @classmethod
    def symmetric(cls, n: int, x_max: float, dims: int = 1, role: Role = "position") -> "GridSpec":
        """n points per axis on [-x_max, x_max), periodic."""
        h = 2.0 * x_max / n
        return cls((n,) * dims, (h,) * dims, (-x_max,) * dims, role)

    @classmethod
    def from_axes(cls, ns: Sequence[int], lo: Sequence[float], hi: Sequence[float],
                  role: Role = "position") -> "GridSpec":
        """Periodic grids on [lo, hi) per axis."""
        return cls(tuple(int(n) for n in ns),
                   tuple((b - a) / n for n, a, b in zip(ns, lo, hi)),
                   tuple(float(a) for a in lo), role)

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.offset, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        """Last grid coordinate on each axis."""
        return np.array([c + (n - 1) * h for n, h, c in zip(self.points, self.spacing, self.offset)])

    def axes(self) -> list[np.ndarray]:
        return [c + h * np.arange(n) for n, h, c in zip(self.points, self.spacing, self.offset)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def coordinates(self) -> np.ndarray:
        """All grid points, shape (size, dims), row-major."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def wavenumbers(self) -> list[np.ndarray]:
        return [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.points, self.spacing)]

    def header(self) -> str:
        return (f"# grid points={','.join(map(str, self.points))} "
                f"spacing={','.join(repr(h) for h in self.spacing)} "
                f"offset={','.join(repr(c) for c in self.offset)} role={self.role}")

    @classmethod
    def parse_header(cls, line: str) -> "GridSpec":
        toks = line.lstrip("#").split()
        if not toks or toks[0] != "grid":
            raise ValueError(f"not a grid header: {line.strip()!r}")
        items = dict(tok.split("=", 1) for tok in toks[1:])
        return cls(tuple(int(v) for v in items["points"].split(",")),
                   tuple(float(v) for v in items["spacing"].split(",")),
                   tuple(float(v) for v in items["offset"].split(",")),
                   items.get("role", "position"))


# ---------------------------------------------------------------------------
# Objectives


def _dw(x):
    return (x * x - 1.0) ** 2


BUILTINS = ("quadratic1d", "quadratic2d", "double_well", "asym_double_well", "anisotropic2d")


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective f on a box domain.

    Quadratic objectives (including the quadratic builtins) carry A, x_star
    and c; other builtins are closed-form functions; tabulated objectives
    hold one value per point of a GridSpec.
    """

    kind: Literal["quadratic", "builtin", "tabulated"]
    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    A: np.ndarray | None = field(default=None, repr=False)
    x_star: np.ndarray | None = field(default=None, repr=False)
    c: float = 0.0
    name: str | None = None
    params: tuple[tuple[str, float], ...] = ()
    grid: GridSpec | None = None
    values: np.ndarray | None = field(default=None, repr=False)
    fprime_max: float | None = None
    fsecond_max: float | None = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def quadratic(cls, A, x_star=None, c: float = 0.0, x_max: float = 10.0,
                  lower=None, upper=None, name: str | None = None,
                  params: Mapping[str, float] | None = None) -> "ObjectiveSpec":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        w, _ = sym_eig(A)
        if w[0] <= 0:
            raise ValueError(f"quadratic needs A positive definite (lambda_min = {w[0]:.3e})")
        xs = np.zeros(n) if x_star is None else np.atleast_1d(np.asarray(x_star, dtype=float))
        lo = tuple([-x_max] * n) if lower is None else tuple(np.broadcast_to(lower, n).astype(float))
        hi = tuple([x_max] * n) if upper is None else tuple(np.broadcast_to(upper, n).astype(float))
        lo_a, hi_a = np.array(lo), np.array(hi)
        # gradient bound over the box: max over corners of |A (x - x*)|_inf
        far = np.maximum(np.abs(lo_a - xs), np.abs(hi_a - xs))
        fp = float(np.max(np.abs(A) @ far))
        return cls("quadratic", n, lo, hi, A=A, x_star=xs, c=float(c), name=name,
                   params=tuple(sorted((params or {}).items())),
                   fprime_max=fp, fsecond_max=float(w[-1]))

    @classmethod
    def builtin(cls, name: str, x_max: float = 10.0, lower=None, upper=None,
                **params: float) -> "ObjectiveSpec":
        if name == "quadratic1d":
            a = float(params.get("a", 1.0))
            return cls.quadratic([[a]], [params.get("x_star", 0.0)], params.get("c", 0.0),
                                 x_max, lower, upper, name=name, params=params)
        if name == "quadratic2d":
            A = np.diag([float(params.get("a1", 1.0)), float(params.get("a2", 1.0))])
            xs = [params.get("x1", 0.0), params.get("x2", 0.0)]
            return cls.quadratic(A, xs, params.get("c", 0.0), x_max, lower, upper,
                                 name=name, params=params)
        if name == "anisotropic2d":
            kappa = float(params.get("kappa", 10.0))
            th = float(params.get("angle", 0.0))
            R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
            A = R @ np.diag([1.0, kappa]) @ R.T
            return cls.quadratic(0.5 * (A + A.T), [0.0, 0.0], 0.0, x_max, lower, upper,
                                 name=name, params=params)
        if name in ("double_well", "asym_double_well"):
            tilt = float(params.get("tilt", 0.3 if name == "asym_double_well" else 0.0))
            lo = (-x_max,) if lower is None else (float(np.ravel([lower])[0]),)
            hi = (x_max,) if upper is None else (float(np.ravel([upper])[0]),)
            r = max(abs(lo[0]), abs(hi[0]))
            fp = 4.0 * r ** 3 + 4.0 * r + abs(tilt)
            fpp = max(12.0 * r * r - 4.0, 8.0)
            p = dict(params)
            p["tilt"] = tilt
            return cls("builtin", 1, lo, hi, name=name, params=tuple(sorted(p.items())),
                       fprime_max=fp, fsecond_max=fpp)
        raise ValueError(f"unknown builtin objective {name!r}; choose from {BUILTINS}")

    @classmethod
    def tabulated(cls, grid: GridSpec, values: np.ndarray) -> "ObjectiveSpec":
        v = np.asarray(values, dtype=float)
        if v.size != grid.size:
            raise ValueError(f"tabulated objective needs {grid.size} values, got {v.size}")
        v = v.reshape(grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("tabulated values must be finite")
        return cls("tabulated", grid.dims, tuple(grid.lower), tuple(grid.upper),
                   grid=grid, values=v)

    # -- helpers ------------------------------------------------------------

    @property
    def param_map(self) -> dict[str, float]:
        return dict(self.params)

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    @property
    def f_star(self) -> float:
        if self.is_quadratic:
            return self.c
        raise ValueError("minimum value known in closed form only for quadratics")

    def in_domain(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = np.array(self.lower), np.array(self.upper)
        span = np.maximum(hi - lo, 1.0)
        return np.all((x >= lo - tol * span) & (x <= hi + tol * span), axis=-1)

    def with_box(self, lower, upper) -> "ObjectiveSpec":
        lo = tuple(np.broadcast_to(np.asarray(lower, float), self.dim))
        hi = tuple(np.broadcast_to(np.asarray(upper, float), self.dim))
        if self.is_quadratic:
            return ObjectiveSpec.quadratic(self.A, self.x_star, self.c, lower=lo, upper=hi,
                                           name=self.name, params=self.param_map)
        if self.kind == "builtin":
            p = self.param_map
            return ObjectiveSpec.builtin(self.name, lower=lo, upper=hi, **p)
        raise ValueError("tabulated objectives have a fixed box")

    # raw evaluators without domain checks, x shape (..., dim)

    def value_unchecked(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            d = x - self.x_star
            return 0.5 * np.einsum("...i,ij,...j->...", d, self.A, d) + self.c
        if self.kind == "builtin":
            x1 = x[..., 0]
            return _dw(x1) + self.param_map.get("tilt", 0.0) * x1
        idx = self._grid_index(x)
        return self.values[tuple(idx[..., k] for k in range(self.dim))]

    def gradient_unchecked(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return (x - self.x_star) @ self.A.T
        if self.kind == "builtin":
            x1 = x[..., :1]
            return 4.0 * x1 * (x1 * x1 - 1.0) + self.param_map.get("tilt", 0.0)
        raise ValueError("tabulated objective needs a stencil to differentiate")

    def second_derivative_unchecked(self, x: np.ndarray) -> np.ndarray:
        """Diagonal of the Hessian."""
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return np.broadcast_to(np.diag(self.A), x.shape).copy()
        if self.kind == "builtin":
            return 12.0 * x[..., :1] ** 2 - 4.0
        raise ValueError("tabulated objective has no analytic second derivative")

    def _grid_index(self, x: np.ndarray) -> np.ndarray:
        g = self.grid
        rel = (x - np.array(g.offset)) / np.array(g.spacing)
        idx = np.rint(rel).astype(int)
        if np.any(np.abs(rel - idx) > 1e-6):
            raise ValueError("tabulated objective evaluated off its grid")
        return np.clip(idx, 0, np.array(g.points) - 1)


def _check_point(obj: ObjectiveSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (obj.dim,):
        if obj.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        else:
            raise ValueError(f"point has trailing dimension {x.shape[-1:]}, expected {obj.dim}")
    if not np.all(obj.in_domain(x)):
        raise ValueError("point outside the objective's domain box")
    return x


def eval(obj: ObjectiveSpec, x) -> float | np.ndarray:  # noqa: A001 - mirrors the operation name
    """f(x) for a point or a stack of points (trailing axis = dimension)."""
    v = obj.value_unchecked(_check_point(obj, x))
    return float(v) if np.ndim(v) == 0 else v


def gradient(obj: ObjectiveSpec, x, stencil: Stencil | None = None) -> np.ndarray:
    """Gradient; tabulated objectives need a stencil and grid-point arguments."""
    xp = _check_point(obj, x)
    if obj.kind != "tabulated":
        return obj.gradient_unchecked(xp)
    if stencil is None:
        raise ValueError("tabulated objective gradient needs a stencil context")
    idx = obj._grid_index(xp)
    out = np.empty(xp.shape)
    for k in range(obj.dim):
        st = central_difference_stencil(stencil.order, "first", obj.grid.spacing[k])
        dk = circulant_apply(st, obj.values, axis=k)
        out[..., k] = dk[tuple(idx[..., j] for j in range(obj.dim))]
    return out


def hessian_spectrum(obj: ObjectiveSpec) -> tuple[float, float, float]:
    if not obj.is_quadratic:
        raise ValueError("Hessian spectrum is defined here only for quadratic objectives")
    w, _ = sym_eig(obj.A)
    return float(w[0]), float(w[-1]), float(w[-1] / w[0])


def grid_tabulate(obj: ObjectiveSpec, grid: GridSpec) -> np.ndarray:
    """f on every grid point, shaped like the grid (row-major)."""
    if obj.kind == "tabulated" and obj.grid == grid:
        return obj.values.copy()
    pts = np.stack(grid.mesh(), axis=-1)
    return obj.value_unchecked(pts).reshape(grid.shape)


def quantized_eval(obj: ObjectiveSpec, x, bits: int, f_range: tuple[float, float]) -> float:
    """f(x) rounded to a b-bit fixed-point grid on f_range (bit-oracle model)."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    lo, hi = f_range
    v = min(max(eval(obj, x), lo), hi)
    step = (hi - lo) / (2 ** bits - 1)
    return lo + step * round((v - lo) / step)


# ---------------------------------------------------------------------------
# CSV I/O for tabulated objectives


def save_tabulated(obj: ObjectiveSpec, path: str | Path) -> None:
    if obj.kind != "tabulated":
        raise ValueError("only tabulated objectives serialize to CSV")
    with open(path, "w") as fh:
        fh.write(obj.grid.header() + "\n")
        fh.write("value\n")
        for v in obj.values.ravel():
            fh.write(f"{v:.17g}\n")


def load_tabulated(path: str | Path) -> ObjectiveSpec:
    with open(path) as fh:
        grid = GridSpec.parse_header(fh.readline())
        header = fh.readline().strip()
        if header != "value":
            raise ValueError(f"expected 'value' column header, got {header!r}")
        vals = np.array([float(line) for line in fh if line.strip()])
    return ObjectiveSpec.tabulated(grid, vals)


def from_function(fn: Callable[[np.ndarray], np.ndarray], grid: GridSpec) -> ObjectiveSpec:
    pts = np.stack(grid.mesh(), axis=-1)
    return ObjectiveSpec.tabulated(grid, fn(pts))
