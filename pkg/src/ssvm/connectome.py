"""Grid parcellations, connectome vectors and the augmented 6-D edge lattice.

Nodes live on a regular ``Nx x Ny x Nz`` lattice; only the lattice points
flagged in ``support`` are real (brain) nodes, the rest are ghost nodes.
Real nodes are numbered by their C-order lattice index, which is the
lexicographic order of ``(x, y, z)``.

An edge between nodes ``a > b`` is stored once.  Edges are enumerated by a
column-major scan of the strictly lower triangle of the node-by-node matrix:
``(1,0), (2,0), ..., (d-1,0), (2,1), ...``.

For the solver the ``p`` edges are scattered into a full 6-D array of shape
``(Nx, Ny, Nz, Nx, Ny, Nz)``: edge ``(a, b)`` lands at the position given by
the lattice coordinates of ``a`` followed by those of ``b``.  Everything else
in that array (ghost nodes, the diagonal, the upper triangle) is a
structural zero.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import K, N_DIRECTIONS
from .exceptions import StructuralError

DEFAULT_SPACING_MM = 18.0


@dataclass(frozen=True, eq=False)
class GridParcellation:
    """Lattice geometry plus the boolean brain-support mask.

    Parameters
    ----------
    dims : tuple of int
        ``(Nx, Ny, Nz)`` lattice extent.
    support : array_like of bool
        Either of shape ``dims`` or flat of length ``Nx*Ny*Nz`` (C order).
    spacing_mm : float
        Node spacing; metadata only.
    """

    dims: tuple
    support: np.ndarray
    spacing_mm: float = DEFAULT_SPACING_MM
    node_lattice_index: np.ndarray = field(init=False, repr=False)
    lattice_to_node: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(v) for v in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise StructuralError(f"dims must be three positive integers, got {self.dims!r}")
        support = np.asarray(self.support)
        n_lattice = dims[0] * dims[1] * dims[2]
        if support.size != n_lattice:
            raise StructuralError(
                f"support has {support.size} entries, lattice {dims} has {n_lattice}")
        support = support.reshape(dims).astype(bool)
        support.setflags(write=False)
        nodes = np.flatnonzero(support.reshape(-1))
        if nodes.size < 2:
            raise StructuralError("a parcellation needs at least two real nodes")
        lookup = np.full(n_lattice, -1, dtype=np.int64)
        lookup[nodes] = np.arange(nodes.size)
        nodes.setflags(write=False)
        lookup.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "spacing_mm", float(self.spacing_mm))
        object.__setattr__(self, "node_lattice_index", nodes)
        object.__setattr__(self, "lattice_to_node", lookup)

    @classmethod
    def full(cls, dims, spacing_mm=DEFAULT_SPACING_MM):
        """Parcellation whose every lattice point is a real node."""
        return cls(dims, np.ones(dims, dtype=bool), spacing_mm)

    @property
    def n_lattice(self):
        """``D``, the number of lattice points including ghost nodes."""
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def node_count(self):
        return int(self.node_lattice_index.size)

    @property
    def n_features(self):
        d = self.node_count
        return d * (d - 1) // 2

    @property
    def shape6(self):
        return self.dims + self.dims

    @property
    def node_coords(self):
        """``(d, 3)`` lattice coordinates of the real nodes, in node order."""
        return np.stack(np.unravel_index(self.node_lattice_index, self.dims), axis=1)

    def __eq__(self, other):
        if not isinstance(other, GridParcellation):
            return NotImplemented
        return (self.dims == other.dims and self.spacing_mm == other.spacing_mm
                and np.array_equal(self.support, other.support))

    def __hash__(self):
        return hash((self.dims, self.support.tobytes()))

    def to_dict(self):
        return {
            "dims": list(self.dims),
            "support": [int(v) for v in self.support.reshape(-1)],
            "spacing_mm": self.spacing_mm,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(tuple(doc["dims"]), np.asarray(doc["support"]),
                       doc.get("spacing_mm", DEFAULT_SPACING_MM))
        except KeyError as exc:
            raise StructuralError(f"parcellation document lacks {exc}") from None


def load_parcellation(path):
    with open(path) as fh:
        return GridParcellation.from_dict(json.load(fh))


def save_parcellation(parc, path):
    with open(path, "w") as fh:
        json.dump(parc.to_dict(), fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# edge indexing
# ---------------------------------------------------------------------------

def n_edges(d):
    return d * (d - 1) // 2


def nodes_from_features(p):
    """Invert ``p = d(d-1)/2``; raises if ``p`` is not triangular."""
    d = int(round((1 + np.sqrt(1 + 8 * p)) / 2))
    if n_edges(d) != p or d < 2:
        raise StructuralError(f"{p} is not a valid connectome length d(d-1)/2")
    return d


def edge_nodes(d):
    """Node pair ``(a, b)``, ``a > b``, of every edge in canonical order."""
    b, a = np.triu_indices(d, 1)
    return a, b


def edge_index(a, b, d):
    """Canonical index of the edge joining nodes ``a`` and ``b`` (any order)."""
    a = np.asarray(a)
    b = np.asarray(b)
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    if np.any(hi == lo):
        raise StructuralError("an edge needs two distinct nodes")
    if np.any(lo < 0) or np.any(hi >= d):
        raise StructuralError(f"node index out of range for {d} nodes")
    return lo * d - lo * (lo + 1) // 2 + (hi - lo - 1)


def vectorize_connectome(corr, parc):
    """Strict lower triangle of ``corr`` in canonical edge order."""
    corr = np.asarray(corr, dtype=np.float64)
    d = parc.node_count
    if corr.shape != (d, d):
        raise StructuralError(f"expected a {d}x{d} matrix, got {corr.shape}")
    a, b = edge_nodes(d)
    return corr[a, b].copy()


def matricize(x):
    """Symmetric matrix with zero diagonal whose strict lower triangle is ``x``."""
    x = np.asarray(x, dtype=np.float64)
    d = nodes_from_features(x.size)
    a, b = edge_nodes(d)
    m = np.zeros((d, d))
    m[a, b] = x
    m[b, a] = x
    return m


# ---------------------------------------------------------------------------
# neighbourhoods in connectome space
# ---------------------------------------------------------------------------

_STEPS6 = [(axis, step) for axis in range(6) for step in (1, -1)]


def neighborhood(j, parc):
    """Edges adjacent to edge ``j`` in the 6-D connectome lattice.

    A neighbour is obtained by moving one endpoint of ``j`` by one lattice
    step along one axis, without wrap-around.  Moves that leave the brain
    support, hit the other endpoint, or flip the ``a > b`` ordering of the
    endpoints (so that the edge's canonical position lies elsewhere in the
    6-D array) are dropped.
    """
    p = parc.n_features
    if not 0 <= j < p:
        raise StructuralError(f"edge index {j} out of range [0, {p})")
    return set(_Neighbors(parc)(j))


class _Neighbors:
    def __init__(self, parc):
        self.parc = parc
        self.d = parc.node_count
        self.a_nodes, self.b_nodes = edge_nodes(self.d)
        self.coords = parc.node_coords
        self.dims6 = parc.shape6

    def __call__(self, j):
        parc = self.parc
        point = np.concatenate([self.coords[self.a_nodes[j]], self.coords[self.b_nodes[j]]])
        out = []
        for axis, step in _STEPS6:
            moved = point.copy()
            moved[axis] += step
            if not 0 <= moved[axis] < self.dims6[axis]:
                continue
            la = np.ravel_multi_index(tuple(moved[:3]), parc.dims)
            lb = np.ravel_multi_index(tuple(moved[3:]), parc.dims)
            na = parc.lattice_to_node[la]
            nb = parc.lattice_to_node[lb]
            if na < 0 or nb < 0 or na <= nb:
                continue
            out.append(int(edge_index(na, nb, self.d)))
        return sorted(out)


def neighbor_pairs(parc):
    """All directed adjacent pairs ``(j, k)``, ``k`` in ``neighborhood(j)``."""
    nbr = _Neighbors(parc)
    rows, cols = [], []
    for j in range(parc.n_features):
        ks = nbr(j)
        rows.extend([j] * len(ks))
        cols.extend(ks)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def neighborhood_penalty(w, parc, q, pairs=None):
    """``sum_j sum_{k in N_j} |w_j - w_k|^q`` evaluated edge by edge."""
    if q not in (1, 2):
        raise StructuralError(f"q must be 1 or 2, got {q!r}")
    rows, cols = neighbor_pairs(parc) if pairs is None else pairs
    diff = np.abs(np.asarray(w)[rows] - np.asarray(w)[cols])
    return float(np.sum(diff ** q))


# ---------------------------------------------------------------------------
# augmentation A and mask B
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AugmentationMap:
    """Index form of the zero-padding matrix ``A`` and the mask ``B``.

    ``forward_index[j]`` is the flat position of edge ``j`` in the 6-D
    array.  ``mask`` has one entry per difference row (``12 * p_tilde``
    rows, see :func:`apply_difference`) and is true exactly when the row
    joins two populated positions without wrapping around the torus.
    """

    shape6: tuple
    forward_index: np.ndarray
    mask: np.ndarray

    @property
    def p(self):
        return int(self.forward_index.size)

    @property
    def p_tilde(self):
        return int(np.prod(self.shape6))

    @property
    def e_tilde(self):
        return N_DIRECTIONS * self.p_tilde

    @property
    def populated(self):
        out = np.zeros(self.p_tilde, dtype=bool)
        out[self.forward_index] = True
        return out


def build_augmentation(parc):
    d = parc.node_count
    D = parc.n_lattice
    a, b = edge_nodes(d)
    lat = parc.node_lattice_index
    forward = lat[a] * D + lat[b]
    shape6 = parc.shape6
    p_tilde = D * D

    populated = np.zeros(p_tilde, dtype=bool)
    populated[forward] = True
    pos = np.arange(p_tilde)
    lengths = np.asarray(shape6)
    strides = np.ones(6, dtype=np.int64)
    for ax in range(4, -1, -1):
        strides[ax] = strides[ax + 1] * lengths[ax + 1]
    mask = np.zeros((N_DIRECTIONS, p_tilde), dtype=bool)
    for ax in range(6):
        c = (pos // strides[ax]) % lengths[ax]
        fwd_ok = c < lengths[ax] - 1
        bwd_ok = c > 0
        fwd = np.where(fwd_ok, pos + strides[ax], pos)
        bwd = np.where(bwd_ok, pos - strides[ax], pos)
        mask[2 * ax] = fwd_ok & populated & populated[fwd]
        mask[2 * ax + 1] = bwd_ok & populated & populated[bwd]
    forward.setflags(write=False)
    mask = mask.reshape(-1)
    mask.setflags(write=False)
    return AugmentationMap(shape6=shape6, forward_index=forward, mask=mask)


def augment(w, amap):
    """Scatter ``w`` (length ``p``) into the zero-padded 6-D lattice (``A w``)."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (amap.p,):
        raise StructuralError(f"expected a vector of length {amap.p}, got {w.shape}")
    out = np.zeros(amap.p_tilde)
    out[amap.forward_index] = w
    return out


def adjoint_augment(wt, amap):
    """Gather the populated positions back out (``A^T wt``)."""
    wt = np.asarray(wt, dtype=np.float64)
    if wt.shape != (amap.p_tilde,):
        raise StructuralError(f"expected a vector of length {amap.p_tilde}, got {wt.shape}")
    return wt[amap.forward_index]


def _shape6(obj):
    shape = getattr(obj, "shape6", obj)
    return tuple(int(v) for v in shape)


def apply_difference(wt, geometry):
    """Periodic first differences of a 6-D array (``C~ wt``).

    ``geometry`` is anything with a ``shape6`` attribute (parcellation or
    augmentation map) or the 6-tuple itself.  Output has ``12 * p_tilde``
    entries; block ``2*a`` is ``wt[i + e_a] - wt[i]`` and block ``2*a+1`` is
    ``wt[i - e_a] - wt[i]``, indices taken modulo the axis length.
    """
    shape = _shape6(geometry)
    wt = np.asarray(wt, dtype=np.float64)
    if wt.size != int(np.prod(shape)):
        raise StructuralError(f"expected {int(np.prod(shape))} entries, got {wt.size}")
    return K["diff_forward"](wt.reshape(-1), shape)


def apply_difference_adjoint(z, geometry):
    """Transpose of :func:`apply_difference` (``C~^T z``)."""
    shape = _shape6(geometry)
    z = np.asarray(z, dtype=np.float64)
    if z.size != N_DIRECTIONS * int(np.prod(shape)):
        raise StructuralError("difference vector has the wrong length")
    return K["diff_adjoint"](z.reshape(-1), shape)


def spatial_penalty(w, parc, amap, q):
    """``||B C~ A w||_q^q``, which equals :func:`neighborhood_penalty`."""
    if q not in (1, 2):
        raise StructuralError(f"q must be 1 or 2, got {q!r}")
    diffs = apply_difference(augment(w, amap), amap)[amap.mask]
    if q == 1:
        return float(np.sum(np.abs(diffs)))
    return float(diffs @ diffs)


# ---------------------------------------------------------------------------
# connectome CSV files
# ---------------------------------------------------------------------------

def read_connectome_csv(path):
    """Read a subjects-by-edges CSV.

    Returns ``(X, y)``; ``y`` is None when there is no ``label`` column.
    Lines starting with ``#`` are provenance comments and are skipped.
    """
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise StructuralError(f"{path}: no header row")
    header = lines[0].strip().split(",")
    has_label = header[0] == "label"
    rows = [ln.strip().split(",") for ln in lines[1:]]
    width = len(header)
    if any(len(r) != width for r in rows):
        raise StructuralError(f"{path}: ragged rows")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    if has_label:
        return np.ascontiguousarray(data[:, 1:]), data[:, 0].astype(np.int64)
    return data, None
