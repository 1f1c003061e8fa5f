"""Cartesian grid graphs with one edge-weight field per axis.

Layout conventions used by every module in this package:

* Vertices of a grid with vertex counts ``dims = (n_1, ..., n_d)`` are
  numbered row-major (C order), so vertex ``(i_1, ..., i_d)`` has linear
  index ``np.ravel_multi_index``.
* Axis ``a`` owns the edges that connect ``(..., i_a, ...)`` to
  ``(..., i_a + 1, ...)``.  Its weight field has shape ``dims`` with axis
  ``a`` reduced by one, stored row-major.
* A flat weight vector is the concatenation of the axis fields in axis
  order.  In 2-D, axis 0 is "vertical" (row-to-row edges) and axis 1 is
  "horizontal" (column-to-column edges).

Gradients, file formats and the CLI all depend on this ordering; do not
change it without versioning the on-disk format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from . import tensorio


@dataclass(frozen=True)
class GridSpec:
    """A d-dimensional grid of vertices, ``dims[a]`` vertices per axis."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ValueError("grid needs at least one axis")
        if any(int(n) < 2 for n in self.dims):
            raise ValueError("every axis needs at least 2 vertices, got %r" % (self.dims,))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def num_vertices(self) -> int:
        return int(np.prod(self.dims))


def field_shape(spec: GridSpec, axis: int) -> tuple[int, ...]:
    """Shape of the axis-``axis`` edge-weight field."""
    shape = list(spec.dims)
    shape[axis] -= 1
    return tuple(shape)


def field_sizes(spec: GridSpec) -> list[int]:
    return [int(np.prod(field_shape(spec, a))) for a in range(spec.d)]


def field_slices(spec: GridSpec) -> list[slice]:
    """Slices of each axis field inside the flat weight vector."""
    sizes = field_sizes(spec)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(int(offsets[a]), int(offsets[a + 1])) for a in range(spec.d)]


def edge_count(spec: GridSpec) -> int:
    return sum(field_sizes(spec))


def axis_fields(spec: GridSpec, w: np.ndarray) -> list[np.ndarray]:
    """Views of the flat weight vector as per-axis fields (no copy)."""
    w = np.asarray(w)
    if w.shape != (edge_count(spec),):
        raise ValueError(
            "weight vector has length %d, expected %d" % (w.size, edge_count(spec))
        )
    return [w[sl].reshape(field_shape(spec, a)) for a, sl in enumerate(field_slices(spec))]


def flatten_fields(fields) -> np.ndarray:
    return np.concatenate([np.asarray(f, dtype=np.float64).ravel() for f in fields])


def constant_weights(spec: GridSpec, value: float = 1.0) -> np.ndarray:
    return np.full(edge_count(spec), float(value))


def build_laplacian(spec: GridSpec, w: np.ndarray) -> sp.csr_matrix:
    """Weighted graph Laplacian L = W - diag(degree).

    Off-diagonal entry (i, j) is w_ij for connected vertex pairs, the
    diagonal carries minus the weighted degree, so every row sums to zero
    and L is symmetric negative semi-definite.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("edge weights must be strictly positive")
    n = spec.num_vertices
    vid = np.arange(n).reshape(spec.dims)
    rows, cols, vals = [], [], []
    for a, f in enumerate(axis_fields(spec, w)):
        lo = [slice(None)] * spec.d
        hi = [slice(None)] * spec.d
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        i = vid[tuple(lo)].ravel()
        j = vid[tuple(hi)].ravel()
        we = f.ravel()
        rows.append(i)
        cols.append(j)
        vals.append(we)
        rows.append(j)
        cols.append(i)
        vals.append(we)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    deg = np.zeros(n)
    np.add.at(deg, rows, vals)
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, -deg])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _edge_axis_and_index(spec: GridSpec, e: int):
    sizes = field_sizes(spec)
    if not 0 <= e < sum(sizes):
        raise IndexError("edge index %d out of range" % e)
    for a, size in enumerate(sizes):
        if e < size:
            return a, np.unravel_index(e, field_shape(spec, a))
        e -= size
    raise AssertionError("unreachable")


def parallel_neighbors(spec: GridSpec, e: int) -> list[int]:
    """Same-orientation edges one grid step away from edge ``e``.

    Neighbors are edges of the same axis whose field position differs by
    exactly +-1 along exactly one axis (including the edge's own axis);
    within each axis field this is the von Neumann stencil.  Boundary
    edges get fewer neighbors.
    """
    a, idx = _edge_axis_and_index(spec, e)
    fshape = field_shape(spec, a)
    offset = field_slices(spec)[a].start
    out = []
    for ax in range(spec.d):
        for step in (-1, 1):
            nidx = list(idx)
            nidx[ax] += step
            if 0 <= nidx[ax] < fshape[ax]:
                out.append(offset + int(np.ravel_multi_index(tuple(nidx), fshape)))
    return sorted(out)


def parallel_difference(spec: GridSpec, w: np.ndarray) -> np.ndarray:
    """Apply e -> sum_{e' in N(e)} (w_e - w_{e'}) to every edge at once.

    This is the symmetric operator D = diag(neighbor count) - A over the
    same-orientation neighborhoods; the smoothness penalty is ||D w||^2.
    """
    out = np.empty_like(np.asarray(w, dtype=np.float64))
    for a, (f, sl) in enumerate(zip(axis_fields(spec, w), field_slices(spec))):
        acc = np.zeros_like(f)
        deg = np.zeros_like(f)
        for ax in range(f.ndim):
            if f.shape[ax] < 2:
                continue
            lo = [slice(None)] * f.ndim
            hi = [slice(None)] * f.ndim
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            acc[lo] += f[hi]
            acc[hi] += f[lo]
            deg[lo] += 1.0
            deg[hi] += 1.0
        out[sl] = (deg * f - acc).ravel()
    return out


def upsample_weights(spec_src: GridSpec, w: np.ndarray, spec_dst: GridSpec) -> np.ndarray:
    """Resample a weight field onto a finer grid.

    Field entries are treated as samples at edge midpoints; each axis field
    is resampled by multilinear interpolation (clamped at the boundary), so
    a constant field stays constant and values remain strictly positive.
    """
    if spec_src.d != spec_dst.d:
        raise ValueError("grids have different dimension")
    if any(m < n for m, n in zip(spec_dst.dims, spec_src.dims)):
        raise ValueError("target grid must be at least as fine as the source")
    fields_src = axis_fields(spec_src, w)
    out = []
    for a in range(spec_src.d):
        fdst_shape = field_shape(spec_dst, a)
        coords_1d = []
        for b in range(spec_src.d):
            n_src = spec_src.dims[b]
            n_dst = spec_dst.dims[b]
            scale = (n_src - 1) / (n_dst - 1)
            if b == a:
                # edge midpoints: k + 1/2 in vertex units on each grid
                k = np.arange(fdst_shape[b])
                coords_1d.append((k + 0.5) * scale - 0.5)
            else:
                coords_1d.append(np.arange(fdst_shape[b]) * scale)
        mesh = np.meshgrid(*coords_1d, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh])
        vals = map_coordinates(fields_src[a], coords, order=1, mode="nearest")
        out.append(vals.reshape(fdst_shape))
    return flatten_fields(out)


def save_weights(dirpath, spec: GridSpec, w: np.ndarray) -> None:
    """Write one GMLT tensor per axis field: weights_axis0.gmlt, ..."""
    import os

    os.makedirs(dirpath, exist_ok=True)
    for a, f in enumerate(axis_fields(spec, w)):
        tensorio.write_tensor(os.path.join(dirpath, "weights_axis%d.gmlt" % a), f)


def load_weights(dirpath, spec: GridSpec) -> np.ndarray:
    import os

    fields = []
    for a in range(spec.d):
        t = tensorio.read_tensor(os.path.join(dirpath, "weights_axis%d.gmlt" % a))
        if t.shape != field_shape(spec, a):
            raise ValueError(
                "weights_axis%d has shape %r, expected %r"
                % (a, t.shape, field_shape(spec, a))
            )
        fields.append(t)
    return flatten_fields(fields)
