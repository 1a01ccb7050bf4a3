"""Cell masks on uniform grids, connected components and cell-centered fields.

A :class:`GridDomain` is a boolean mask of active cells on a uniform grid of
spacing ``h`` in one or two dimensions.  A :class:`Field` stores one value per
active cell and is implicitly zero on every inactive cell, which is how the
homogeneous Dirichlet condition enters all discrete operators.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path as FilePath

import numpy as np
import scipy.sparse as sp
from scipy import ndimage


class EmptyDomainError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class GridDomain:
    """Active-cell mask on a uniform grid.

    Parameters
    ----------
    mask : array_like of bool
        One entry per cell, ``True`` for active cells.  Must be 1D or 2D.
    h : float
        Grid spacing.
    """

    def __init__(self, mask, h: float):
        m = np.array(mask, dtype=bool)
        if m.ndim not in (1, 2):
            raise ValueError(f"only 1D and 2D masks are supported, got ndim={m.ndim}")
        h = float(h)
        if not h > 0 or not np.isfinite(h):
            raise ValueError(f"grid spacing must be positive, got {h}")
        self.mask = _readonly(m)
        self.h = h

    # -- construction helpers -------------------------------------------------

    @classmethod
    def interval(cls, n: int, h: float | None = None) -> "GridDomain":
        """``n`` active cells in a row; default ``h = 1/(n+1)`` models (0, 1)."""
        return cls(np.ones(n, dtype=bool), 1.0 / (n + 1) if h is None else h)

    @classmethod
    def box(cls, shape, h: float | None = None) -> "GridDomain":
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if h is None:
            h = 1.0 / (shape[0] + 1)
        return cls(np.ones(shape, dtype=bool), h)

    # -- basic properties -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.mask.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mask.shape

    @cached_property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def measure(self) -> float:
        return measure(self)

    def same_grid(self, other: "GridDomain") -> bool:
        return self.shape == other.shape and self.h == other.h

    def __eq__(self, other):
        if not isinstance(other, GridDomain):
            return NotImplemented
        return self.h == other.h and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.h, self.shape, self.mask.tobytes()))

    def __repr__(self):
        return f"GridDomain(shape={self.shape}, h={self.h!r}, active={self.n_active})"

    def require_nonempty(self):
        if self.n_active == 0:
            raise EmptyDomainError("empty domain")

    # -- indexing ---------------------------------------------------------------

    @cached_property
    def index(self) -> np.ndarray:
        """Grid-shaped array holding the active-cell number, or -1."""
        idx = np.full(self.shape, -1, dtype=np.int64)
        idx[self.mask] = np.arange(self.n_active)
        return _readonly(idx)

    @cached_property
    def _face_data(self):
        lower, upper, axis = [], [], []
        for ax in range(self.dim):
            pad = [(0, 0)] * self.dim
            pad[ax] = (1, 1)
            ip = np.pad(self.index, pad, constant_values=-1)
            n = ip.shape[ax]
            a = np.take(ip, np.arange(0, n - 1), axis=ax).ravel()
            b = np.take(ip, np.arange(1, n), axis=ax).ravel()
            keep = (a >= 0) | (b >= 0)
            lower.append(a[keep])
            upper.append(b[keep])
            axis.append(np.full(int(keep.sum()), ax))
        return tuple(_readonly(np.concatenate(x)) for x in (lower, upper, axis))

    @property
    def faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Face list as ``(lower, upper)`` active-cell numbers (-1 = ghost).

        Faces are enumerated axis by axis, including the faces between an
        active cell and an inactive or out-of-grid neighbor.  Faces with two
        inactive sides are dropped since every field vanishes there.
        """
        return self._face_data[0], self._face_data[1]

    @property
    def face_axis(self) -> np.ndarray:
        return self._face_data[2]

    @cached_property
    def difference_matrix(self) -> sp.csr_matrix:
        """Sparse forward-difference operator, faces x active cells, scaled by 1/h."""
        lower, upper = self.faces
        nf = lower.size
        f = np.arange(nf)
        hi = upper >= 0
        lo = lower >= 0
        rows = np.concatenate([f[hi], f[lo]])
        cols = np.concatenate([upper[hi], lower[lo]])
        vals = np.concatenate([np.full(hi.sum(), 1.0 / self.h), np.full(lo.sum(), -1.0 / self.h)])
        D = sp.csr_matrix((vals, (rows, cols)), shape=(nf, self.n_active))
        D.sort_indices()
        return D

    @cached_property
    def stencil_matrix(self) -> sp.csc_matrix:
        """The p=2 Dirichlet stencil ``D^T D`` (3-point in 1D, 5-point in 2D)."""
        D = self.difference_matrix
        return (D.T @ D).tocsc()

    # -- sub-domains ------------------------------------------------------------

    def with_mask(self, mask) -> "GridDomain":
        return GridDomain(mask, self.h)

    def scaled(self, t: float) -> "GridDomain":
        """Same mask with spacing ``t*h`` (a dilation of the domain by ``t``)."""
        return GridDomain(self.mask, self.h * t)

    def cell_centers(self) -> list[np.ndarray]:
        """Coordinates of cell centres, cell ``i`` sitting at ``(i+1)*h``."""
        axes = [(np.arange(n) + 1) * self.h for n in self.shape]
        return np.meshgrid(*axes, indexing="ij")


def measure(domain: GridDomain) -> float:
    return domain.cell_volume * domain.n_active


# -- fields -------------------------------------------------------------------


class Field:
    """Real values on the active cells of a domain, zero elsewhere."""

    __array_priority__ = 100

    def __init__(self, domain: GridDomain, values):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size != domain.n_active:
            raise ValueError(f"expected {domain.n_active} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.domain = domain
        self.values = _readonly(v)

    @classmethod
    def zeros(cls, domain: GridDomain) -> "Field":
        return cls(domain, np.zeros(domain.n_active))

    @classmethod
    def ones(cls, domain: GridDomain) -> "Field":
        return cls(domain, np.ones(domain.n_active))

    @classmethod
    def from_grid(cls, domain: GridDomain, array) -> "Field":
        """Take the active-cell entries of a grid-shaped array."""
        a = np.asarray(array, dtype=float)
        if a.shape != domain.shape:
            raise ValueError(f"array shape {a.shape} does not match grid {domain.shape}")
        return cls(domain, a[domain.mask])

    @classmethod
    def from_function(cls, domain: GridDomain, fn) -> "Field":
        return cls.from_grid(domain, fn(*domain.cell_centers()))

    def full(self) -> np.ndarray:
        """Grid-shaped array with the zero extension outside the mask."""
        out = np.zeros(self.domain.shape)
        out[self.domain.mask] = self.values
        return out

    def on(self, domain: GridDomain) -> "Field":
        """Re-express on another mask of the same grid (zero where newly active).

        Raises if the field is nonzero on a cell that ``domain`` deactivates.
        """
        if not self.domain.same_grid(domain):
            raise ValueError("domains live on different grids")
        full = self.full()
        dropped = full[~domain.mask]
        if np.any(dropped != 0):
            raise ValueError("field is nonzero outside the target mask")
        return Field.from_grid(domain, full)

    def _coerce(self, other):
        if isinstance(other, Field):
            if other.domain is not self.domain and other.domain != self.domain:
                raise ValueError("fields live on different domains")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.domain, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.domain, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.domain, self._coerce(other) - self.values)

    def __mul__(self, other):
        return Field(self.domain, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.domain, self.values / self._coerce(other))

    def __neg__(self):
        return Field(self.domain, -self.values)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"Field({self.domain!r})"

    def support(self) -> np.ndarray:
        return self.values != 0


# -- components ---------------------------------------------------------------


@dataclass(frozen=True)
class ComponentLabeling:
    """Face-adjacency components of a mask.

    ``labels`` holds one id per active cell (ids contiguous from 0, numbered
    in raster order of each component's first cell).
    """

    labels: np.ndarray
    count: int
    sizes: tuple[int, ...]

    def cells(self, component_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == component_id)


def components(domain: GridDomain) -> ComponentLabeling:
    domain.require_nonempty()
    structure = ndimage.generate_binary_structure(domain.dim, 1)
    grid_labels, count = ndimage.label(domain.mask, structure=structure)
    labels = grid_labels[domain.mask] - 1
    sizes = tuple(int(s) for s in np.bincount(labels, minlength=count))
    return ComponentLabeling(_readonly(labels.astype(np.int64)), int(count), sizes)


def component_domain(domain: GridDomain, labeling: ComponentLabeling, component_id: int) -> GridDomain:
    """The sub-mask of one component, on the same grid."""
    if not 0 <= component_id < labeling.count:
        raise IndexError(f"component id {component_id} out of range 0..{labeling.count - 1}")
    sub = np.zeros(domain.shape, dtype=bool)
    sub[domain.mask] = labeling.labels == component_id
    return domain.with_mask(sub)


def restrict(u: Field, component_id: int, labeling: ComponentLabeling | None = None) -> Field:
    """Restriction of ``u`` to one component, living on that component's sub-mask."""
    labeling = components(u.domain) if labeling is None else labeling
    sub = component_domain(u.domain, labeling, component_id)
    return Field(sub, u.values[labeling.labels == component_id])


# -- mask files -----------------------------------------------------------------


def format_mask(domain: GridDomain) -> str:
    header = " ".join([str(domain.dim), *map(str, domain.shape), repr(domain.h)])
    rows = np.atleast_2d(domain.mask)
    body = "\n".join("".join("1" if c else "0" for c in row) for row in rows)
    return f"{header}\n{body}\n"


def parse_mask(text: str) -> GridDomain:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty mask file")
    head = lines[0].split()
    try:
        dim = int(head[0])
        shape = tuple(int(s) for s in head[1 : 1 + dim])
        h = float(head[1 + dim])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed mask header {lines[0]!r}") from exc
    if dim not in (1, 2) or len(head) != dim + 2:
        raise ValueError(f"malformed mask header {lines[0]!r}")
    rows = lines[1:]
    expect_rows = 1 if dim == 1 else shape[0]
    width = shape[-1]
    if len(rows) != expect_rows or any(len(r) != width or set(r) - {"0", "1"} for r in rows):
        raise ValueError("mask body does not match header shape")
    mask = np.array([[c == "1" for c in r] for r in rows], dtype=bool).reshape(shape)
    return GridDomain(mask, h)


def read_mask(path) -> GridDomain:
    return parse_mask(FilePath(path).read_text())


def write_mask(domain: GridDomain, path) -> None:
    FilePath(path).write_text(format_mask(domain))


def write_field(u: Field, path) -> None:
    """Mask-aligned ASCII dump: mask header, then one row of values per grid row."""
    dom = u.domain
    rows = np.atleast_2d(u.full())
    lines = [format_mask(dom).rstrip("\n")]
    lines += [" ".join(format(x, ".17g") for x in row) for row in rows]
    FilePath(path).write_text("\n".join(lines) + "\n")
