"""Structured brick meshes and trilinear finite element operators.

Sign convention: the stiffness matrix is assembled as

    S_ij = - int grad(psi_i) . D grad(psi_j) dz

so that it is symmetric negative semidefinite and the semi-discrete
potential equation reads ``M dx/dt = S x + M f + b i_s``.  The same
convention is recorded in the header of exported stiffness files.

External operator files use the Matrix Market coordinate format for
matrices (1-based indices) and plain text, one value per line, for vectors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import AssemblyError, DimensionError, InvalidArgumentError, ValidationError

__all__ = [
    "Mesh",
    "AssembledOperators",
    "build_block_mesh",
    "assemble_operators",
    "save_operators",
    "load_operators",
    "read_vector",
    "write_vector",
    "mesh_hash",
]

# reference-cube corner signs in the usual hexahedron ordering
_CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class Mesh:
    """Hexahedral mesh.

    Attributes
    ----------
    nodes : (n_nodes, 3) ndarray
        Node coordinates in mm.
    elements : (n_elements, 8) int ndarray
        Connectivity in the standard hexahedron ordering (bottom face
        counter-clockwise, then top face).
    node_sets : dict[str, ndarray]
        Named, sorted node index sets.
    """

    nodes: np.ndarray
    elements: np.ndarray
    node_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise InvalidArgumentError("node coordinates must have shape (n, 3)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 8:
            raise InvalidArgumentError("connectivity must have shape (n_elements, 8)")
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise InvalidArgumentError("connectivity references a node outside the mesh")
        srt = np.sort(self.elements, axis=1)
        dup = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
        if dup.size:
            raise InvalidArgumentError(f"element {dup[0]} repeats a node")
        for name, idx in self.node_sets.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise InvalidArgumentError(f"node set {name!r} has invalid indices")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)


@dataclass(frozen=True)
class AssembledOperators:
    """Spatial operators of the monodomain equation on ``N`` nodes.

    ``mass`` is SPD, ``stiffness`` is negative semidefinite (see module
    docstring), ``load`` holds the integrals of the shape functions and
    ``flux`` is the output row so that ``flux @ Phi`` approximates the
    total electrical flux along the chosen direction.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    load: np.ndarray
    flux: np.ndarray
    node_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.mass.shape[0]
        if self.mass.shape != (n, n) or self.stiffness.shape != (n, n):
            raise DimensionError(
                f"mass {self.mass.shape} and stiffness {self.stiffness.shape} must both be N x N"
            )
        if self.load.shape != (n,) or self.flux.shape != (n,):
            raise DimensionError(
                f"load {self.load.shape} and flux {self.flux.shape} must have length N={n}"
            )

    @property
    def dimension(self) -> int:
        return self.mass.shape[0]


def build_block_mesh(nx, ny, nz, lengths=(1.0, 1.0, 1.0), s2_box=((0.0, 0.5), (0.0, 0.5))) -> Mesh:
    """Structured brick mesh of the box ``[0, Lx] x [0, Ly] x [0, Lz]``.

    Nodes are numbered x-fastest.  Two node sets are created: ``left_edge``
    (the face ``x = 0``) and ``s2_region``, the nodes whose x and y lie in
    the fractional ranges ``s2_box = ((x0, x1), (y0, y1))`` of the extents
    (the lower-left quadrant by default).
    """
    counts = (nx, ny, nz)
    if any(int(c) != c or c < 1 for c in counts):
        raise InvalidArgumentError(f"element counts must be positive integers, got {counts}")
    lengths = np.asarray(lengths, dtype=float)
    if lengths.shape != (3,) or np.any(lengths <= 0):
        raise InvalidArgumentError(f"extents must be three positive lengths, got {lengths}")
    nx, ny, nz = (int(c) for c in counts)

    x = np.linspace(0.0, lengths[0], nx + 1)
    y = np.linspace(0.0, lengths[1], ny + 1)
    z = np.linspace(0.0, lengths[2], nz + 1)
    Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    elements = np.column_stack(
        [
            nid(i, j, k),
            nid(i + 1, j, k),
            nid(i + 1, j + 1, k),
            nid(i, j + 1, k),
            nid(i, j, k + 1),
            nid(i + 1, j, k + 1),
            nid(i + 1, j + 1, k + 1),
            nid(i, j + 1, k + 1),
        ]
    ).astype(np.int64)

    tol = 1e-12 * lengths.max()
    left = np.flatnonzero(nodes[:, 0] <= tol)
    (x0, x1), (y0, y1) = s2_box
    if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
        raise InvalidArgumentError(f"S2 box must be fractional ranges inside [0, 1], got {s2_box}")
    px, py = nodes[:, 0], nodes[:, 1]
    s2 = np.flatnonzero(
        (px >= x0 * lengths[0] - tol) & (px <= x1 * lengths[0] + tol)
        & (py >= y0 * lengths[1] - tol) & (py <= y1 * lengths[1] + tol)
    )
    return Mesh(nodes=nodes, elements=elements, node_sets={"left_edge": left, "s2_region": s2})


def _gauss_2x2x2():
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[a, b, c] for c in (-g, g) for b in (-g, g) for a in (-g, g)])
    return pts, np.ones(8)


def _shape(xi):
    """Trilinear shape functions and reference gradients at points ``xi``."""
    xi = np.atleast_2d(xi)
    s = 1.0 + xi[:, None, :] * _CORNERS[None, :, :]  # (q, 8, 3)
    N = 0.125 * s.prod(axis=2)
    dN = np.empty(s.shape)
    dN[..., 0] = 0.125 * _CORNERS[:, 0] * s[..., 1] * s[..., 2]
    dN[..., 1] = 0.125 * _CORNERS[:, 1] * s[..., 0] * s[..., 2]
    dN[..., 2] = 0.125 * _CORNERS[:, 2] * s[..., 0] * s[..., 1]
    return N, dN


def assemble_operators(mesh: Mesh, d_iso, flux_direction=(1.0, 0.0, 0.0)) -> AssembledOperators:
    """Assemble mass, stiffness, load and flux operators.

    Uses trilinear hexahedra with 2x2x2 Gauss quadrature, vectorized over
    elements.  The flux row holds ``d_iso * int grad(psi_j) . n dz``.
    """
    if not d_iso > 0:
        raise InvalidArgumentError(f"conductivity must be positive, got {d_iso}")
    n_dir = np.asarray(flux_direction, dtype=float)
    if n_dir.shape != (3,) or abs(np.linalg.norm(n_dir) - 1.0) > 1e-12:
        raise InvalidArgumentError("flux direction must be a unit 3-vector")

    pts, wts = _gauss_2x2x2()
    N, dN = _shape(pts)  # (q, 8), (q, 8, 3)
    xe = mesh.nodes[mesh.elements]  # (e, 8, 3)
    J = np.einsum("qai,eaj->eqij", dN, xe)  # J[..., i, j] = dx_j / dxi_i
    detJ = np.linalg.det(J)
    bad = np.flatnonzero(np.any(detJ <= 1e-14 * np.abs(detJ).max(initial=1.0), axis=1))
    if bad.size:
        raise AssemblyError(f"degenerate element {bad[0]} (non-positive Jacobian)", element=int(bad[0]))
    Jinv = np.linalg.inv(J)
    grad = np.einsum("eqij,qaj->eqai", Jinv, dN)  # physical gradients
    wdet = detJ * wts[None, :]

    Me = np.einsum("eq,qa,qb->eab", wdet, N, N)
    Ke = -d_iso * np.einsum("eq,eqai,eqbi->eab", wdet, grad, grad)
    be = np.einsum("eq,qa->ea", wdet, N)
    ce = d_iso * np.einsum("eq,eqai,i->ea", wdet, grad, n_dir)

    n = mesh.n_nodes
    rows = np.repeat(mesh.elements, 8, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 8)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    S = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = 0.5 * (M + M.T)
    S = 0.5 * (S + S.T)
    load = np.bincount(mesh.elements.ravel(), weights=be.ravel(), minlength=n)
    flux = np.bincount(mesh.elements.ravel(), weights=ce.ravel(), minlength=n)
    return AssembledOperators(
        mass=M.tocsr(), stiffness=S.tocsr(), load=load, flux=flux,
        node_sets={k: np.asarray(v) for k, v in mesh.node_sets.items()},
    )


def mesh_hash(ops: AssembledOperators) -> str:
    """Short content hash identifying a set of operators."""
    import hashlib

    h = hashlib.sha256()
    for mat in (ops.mass, ops.stiffness):
        m = mat.tocsr()
        m.sort_indices()
        for arr in (m.indptr, m.indices, np.round(m.data, 12)):
            h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.round(ops.load, 12).tobytes())
    h.update(np.round(ops.flux, 12).tobytes())
    return h.hexdigest()[:16]


def write_vector(path, values, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for v in np.asarray(values, dtype=float).ravel():
            fh.write(f"{float(v)!r}\n")


def read_vector(path) -> np.ndarray:
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line[0] in "#%":
                continue
            try:
                vals.append(float(line))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: not a number: {line!r}") from exc
    return np.asarray(vals, dtype=float)


_FILES = {"mass": "mass.mtx", "stiffness": "stiffness.mtx", "load": "load.txt", "flux": "flux.txt"}


def save_operators(ops: AssembledOperators, directory) -> dict:
    """Write operators to ``directory``; returns the path mapping."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {k: directory / v for k, v in _FILES.items()}
    scipy.io.mmwrite(str(paths["mass"]), ops.mass.tocoo(), comment="mass matrix M_ij = int psi_i psi_j",
                     precision=17)
    scipy.io.mmwrite(
        str(paths["stiffness"]), ops.stiffness.tocoo(),
        comment="stiffness S_ij = -int grad psi_i . D grad psi_j (negative semidefinite)", precision=17,
    )
    write_vector(paths["load"], ops.load, "load b_i = int psi_i")
    write_vector(paths["flux"], ops.flux, "flux output row c_j = int (D grad psi_j) . n")
    for name, idx in ops.node_sets.items():
        p = directory / f"nodeset_{name}.txt"
        np.savetxt(p, np.asarray(idx, dtype=np.int64) + 1, fmt="%d")
        paths[f"nodeset_{name}"] = p
    return paths


def _read_matrix(path):
    try:
        return sp.csr_matrix(scipy.io.mmread(str(path)))
    except (ValueError, OSError) as exc:
        raise ValidationError(f"cannot parse matrix file {path}: {exc}") from exc


def load_operators(paths, symmetry_tol=1e-12) -> AssembledOperators:
    """Read operators written by :func:`save_operators` or exported elsewhere.

    Parameters
    ----------
    paths : str, Path or dict
        Either a directory containing ``mass.mtx``, ``stiffness.mtx``,
        ``load.txt`` and ``flux.txt`` (plus optional ``nodeset_<name>.txt``
        files with 1-based indices) or a mapping with keys ``mass``,
        ``stiffness``, ``load``, ``flux`` and optionally ``node_sets``
        (name -> file).
    """
    if isinstance(paths, (str, os.PathLike)):
        directory = Path(paths)
        if not directory.is_dir():
            raise FileNotFoundError(f"operator directory not found: {directory}")
        mapping = {k: directory / v for k, v in _FILES.items()}
        sets = {p.stem[len("nodeset_"):]: p for p in sorted(directory.glob("nodeset_*.txt"))}
    else:
        mapping = {k: Path(paths[k]) for k in _FILES}
        sets = {k: Path(v) for k, v in dict(paths.get("node_sets", {})).items()}
    for p in list(mapping.values()) + list(sets.values()):
        if not p.exists():
            raise FileNotFoundError(f"operator file not found: {p}")

    M = _read_matrix(mapping["mass"])
    S = _read_matrix(mapping["stiffness"])
    load = read_vector(mapping["load"])
    flux = read_vector(mapping["flux"])
    n = M.shape[0]
    if M.shape != (n, n) or S.shape != (n, n) or load.shape != (n,) or flux.shape != (n,):
        raise DimensionError(
            f"inconsistent shapes: mass {M.shape}, stiffness {S.shape}, load {load.shape}, flux {flux.shape}"
        )
    scale = abs(M).max() if M.nnz else 0.0
    asym = abs(M - M.T).max() if M.nnz else 0.0
    if asym > symmetry_tol * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"mass matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    node_sets = {name: np.loadtxt(p, dtype=np.int64, ndmin=1) - 1 for name, p in sets.items()}
    for name, idx in node_sets.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValidationError(f"node set {name!r} references nodes outside 1..{n}")
    return AssembledOperators(mass=M, stiffness=S, load=load, flux=flux, node_sets=node_sets)
