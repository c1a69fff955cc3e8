"""Curved quadrilateral / hexahedral elements, metric terms and meshes.

Faces are numbered ``f = 2 * axis + side`` where ``side = 0`` is the face at
``xi_axis = -1`` and ``side = 1`` the face at ``xi_axis = +1``. Nodal arrays
on an element have the tensor node indices first (``xi`` fastest varying in
files, first axis in memory) followed by component axes.

Metric terms:

* 2-D: ``Ja^1 = (y_eta, -x_eta)``, ``Ja^2 = (-y_xi, x_xi)``, which satisfy the
  discrete metric identity exactly because collocation derivatives commute.
* 3-D: the curl (invariant) form
  ``(Ja^i)_n = -e_i . curl_xi( I^N(X_l grad_xi X_m) )`` with ``(n, m, l)``
  cyclic; the naive cross product ``a_j x a_k`` is available for comparison.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .spectral_ops import apply_along, differentiation_matrix, interpolate, lgl_rule

__all__ = [
    "GeometryError",
    "MappingSpec",
    "FaceGeometry",
    "CurvedElement",
    "Interface",
    "BoundaryFace",
    "Mesh",
    "build_element",
    "metric_identity_residual",
    "face_trace",
    "face_axis_side",
    "orient_face",
    "build_mesh",
    "builtin_mesh",
    "builtin_mesh_names",
    "curved_hex_spec",
    "parse_mesh",
    "load_mesh",
    "format_mesh",
]

MESH_FORMAT_VERSION = 1
_MATCH_TOL = 1e-10


class GeometryError(ValueError):
    pass


def face_axis_side(face: int) -> tuple[int, int]:
    return face // 2, face % 2


@dataclass(frozen=True, eq=False)
class MappingSpec:
    """How an element is mapped from the reference square/cube.

    kind ``affine``: ``data`` holds the 2^d corner vertices (multilinear map),
    corner index ``c = i + 2 j + 4 k`` for reference corner (i, j, k) in {0, 1}.
    kind ``transfinite`` (2-D): ``data`` holds four face curves sampled at the
    LGL nodes of order ``ngeo``, in face order, each running in the direction
    of increasing tangential reference coordinate.
    kind ``analytic``: ``data`` holds the mapping sampled at the tensor LGL
    nodes of order ``ngeo`` (shape ``(ngeo+1,)*dim + (dim,)``).
    """

    dim: int
    kind: str
    ngeo: int
    data: tuple

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {self.dim}")
        if self.kind not in ("affine", "transfinite", "analytic"):
            raise GeometryError(f"unknown mapping kind {self.kind!r}")
        if self.kind == "transfinite" and self.dim != 2:
            raise GeometryError("transfinite face data is supported for 2-D elements only")

    @classmethod
    def affine(cls, vertices) -> "MappingSpec":
        v = np.asarray(vertices, dtype=float)
        dim = v.shape[1]
        if v.shape != (2**dim, dim):
            raise GeometryError(f"affine mapping needs {2**dim} vertices of dimension {dim}")
        return cls(dim, "affine", 1, (v,))

    @classmethod
    def transfinite(cls, faces: Sequence) -> "MappingSpec":
        curves = tuple(np.asarray(c, dtype=float) for c in faces)
        if len(curves) != 4:
            raise GeometryError("2-D transfinite mapping needs four face curves")
        ngeo = len(curves[0]) - 1
        if any(c.shape != (ngeo + 1, 2) for c in curves):
            raise GeometryError("face curves must share one degree and be 2-D points")
        return cls(2, "transfinite", ngeo, curves)

    @classmethod
    def analytic(cls, func: Callable[[np.ndarray], np.ndarray], dim: int, ngeo: int) -> "MappingSpec":
        """Sample ``func`` (reference coords ``(..., dim)`` -> physical) at LGL nodes."""
        r = lgl_rule(ngeo).nodes
        ref = np.stack(np.meshgrid(*([r] * dim), indexing="ij"), axis=-1)
        return cls(dim, "analytic", ngeo, (np.asarray(func(ref), dtype=float),))

    def nodes(self, N: int) -> np.ndarray:
        """Physical coordinates of the order-N tensor LGL nodes."""
        if N < self.ngeo:
            raise GeometryError(f"geometry degree {self.ngeo} exceeds solution order {N}")
        r = lgl_rule(N).nodes
        d = self.dim
        if self.kind == "affine":
            v = self.data[0]
            ref = np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1)
            out = np.zeros(ref.shape[:-1] + (d,))
            for c in range(2**d):
                bits = [(c >> a) & 1 for a in range(d)]
                w = np.ones(ref.shape[:-1])
                for a, b in enumerate(bits):
                    w = w * (0.5 * (1 + ref[..., a]) if b else 0.5 * (1 - ref[..., a]))
                out += w[..., None] * v[c]
            return out
        if self.kind == "analytic":
            out = self.data[0]
            for a in range(d):
                out = interpolate(out, N, axis=a)
            return out
        f0, f1, f2, f3 = (interpolate(c, N, axis=0) for c in self.data)
        xi = r[:, None, None]
        eta = r[None, :, None]
        c00, c01, c10, c11 = f0[0], f0[-1], f1[0], f1[-1]
        return (
            0.5 * (1 - xi) * f0[None, :, :]
            + 0.5 * (1 + xi) * f1[None, :, :]
            + 0.5 * (1 - eta) * f2[:, None, :]
            + 0.5 * (1 + eta) * f3[:, None, :]
            - 0.25 * ((1 - xi) * (1 - eta) * c00 + (1 - xi) * (1 + eta) * c01
                      + (1 + xi) * (1 - eta) * c10 + (1 + xi) * (1 + eta) * c11)
        )


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    axis: int
    side: int
    x: np.ndarray
    normal: np.ndarray
    surface_jacobian: np.ndarray

    @property
    def reference_normal_sign(self) -> float:
        return 1.0 if self.side else -1.0


@dataclass(frozen=True, eq=False)
class CurvedElement:
    N: int
    dim: int
    x: np.ndarray
    a: np.ndarray
    Ja: np.ndarray
    J: np.ndarray
    faces: tuple
    spec: MappingSpec
    metric_form: str = "curl"
    id: int = 0


def _grad(field: np.ndarray, N: int, dim: int) -> list[np.ndarray]:
    D = differentiation_matrix(N)
    return [apply_along(D, field, a) for a in range(dim)]


def _cross_metrics(a: np.ndarray) -> np.ndarray:
    Ja = np.empty_like(a)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        Ja[..., i, :] = np.cross(a[..., j, :], a[..., k, :])
    return Ja


def _curl_metrics(x: np.ndarray, N: int) -> np.ndarray:
    Ja = np.empty(x.shape[:-1] + (3, 3))
    for n in range(3):
        m, l = (n + 1) % 3, (n + 2) % 3
        grad_xm = np.stack(_grad(x[..., m], N, 3), axis=-1)
        v = x[..., l][..., None] * grad_xm
        dv = [_grad(v[..., c], N, 3) for c in range(3)]  # dv[c][j] = d v_c / d xi_j
        curl = np.stack([dv[2][1] - dv[1][2], dv[0][2] - dv[2][0], dv[1][0] - dv[0][1]], axis=-1)
        Ja[..., :, n] = -curl
    return Ja


def build_element(spec: MappingSpec, N: int, metric_form: str = "curl", id: int = 0) -> CurvedElement:
    if metric_form not in ("curl", "cross"):
        raise GeometryError(f"unknown metric form {metric_form!r}")
    d = spec.dim
    x = spec.nodes(N)
    a = np.stack(_grad(x, N, d), axis=-2)  # a[..., i, :] = dX/dxi^i
    if d == 2:
        Ja = np.empty_like(a)
        Ja[..., 0, 0], Ja[..., 0, 1] = a[..., 1, 1], -a[..., 1, 0]
        Ja[..., 1, 0], Ja[..., 1, 1] = -a[..., 0, 1], a[..., 0, 0]
        J = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    else:
        Ja = _curl_metrics(x, N) if metric_form == "curl" else _cross_metrics(a)
        J = np.einsum("...k,...k->...", a[..., 0, :], np.cross(a[..., 1, :], a[..., 2, :]))
    if np.any(J <= 0):
        node = tuple(int(i) for i in np.argwhere(J <= 0)[0])
        raise GeometryError(f"element {id}: nonpositive Jacobian {J[node]:.3e} at node {node}")
    faces = []
    for f in range(2 * d):
        axis, side = face_axis_side(f)
        idx = -1 if side else 0
        ja = np.take(Ja[..., axis, :], idx, axis=axis)
        sj = np.linalg.norm(ja, axis=-1)
        sign = 1.0 if side else -1.0
        faces.append(FaceGeometry(axis, side, np.take(x, idx, axis=axis), sign * ja / sj[..., None], sj))
    return CurvedElement(N, d, x, a, Ja, J, tuple(faces), spec, metric_form, id)


def metric_identity_residual(element: CurvedElement) -> float:
    """max over nodes and components of |sum_i d(Ja^i)/dxi^i|."""
    D = differentiation_matrix(element.N)
    div = sum(apply_along(D, element.Ja[..., i, :], i) for i in range(element.dim))
    return float(np.max(np.abs(div)))


def face_trace(element: CurvedElement, face: int, field) -> np.ndarray:
    """Restriction of volume nodal data to a face (exact: LGL grids contain +-1)."""
    if not 0 <= face < 2 * element.dim:
        raise GeometryError(f"face id {face} out of range for a {element.dim}-D element")
    axis, side = face_axis_side(face)
    return np.take(np.asarray(field), -1 if side else 0, axis=axis)


def orient_face(arr: np.ndarray, orientation: int, face_dim: int) -> np.ndarray:
    """Apply one of the node permutations of a face grid.

    Edges (face_dim 1) have 2 orientations, quadrilateral faces (face_dim 2)
    have 8 (four rotations, optionally transposed).
    """
    if face_dim == 1:
        return arr[::-1] if orientation else arr
    out = np.swapaxes(arr, 0, 1) if orientation >= 4 else arr
    return np.rot90(out, orientation % 4, axes=(0, 1))


def _n_orientations(face_dim: int) -> int:
    return 2 if face_dim == 1 else 8


@dataclass(frozen=True)
class Interface:
    """Conforming interior face: node ``orient_face(trace(nbr), orientation)`` matches ``trace(elem)``."""

    elem: int
    face: int
    nbr: int
    nbr_face: int
    orientation: int
    shift: tuple = ()


@dataclass(frozen=True)
class BoundaryFace:
    elem: int
    face: int
    tag: str = "wall"


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    N: int
    elements: tuple
    interfaces: tuple
    boundary: tuple
    specs: tuple
    periodic: tuple = ()
    tags: dict = field(default_factory=dict)
    name: str = "mesh"

    @property
    def K(self) -> int:
        return len(self.elements)

    def rebuild(self, N: int) -> "Mesh":
        return build_mesh(self.specs, N, periodic=self.periodic, tags=self.tags, name=self.name)

    def stacked(self, attr: str) -> np.ndarray:
        return np.stack([getattr(e, attr) for e in self.elements])


def build_mesh(specs: Sequence[MappingSpec], N: int, periodic: Sequence = (), tags: dict | None = None,
               name: str = "mesh", metric_form: str = "curl") -> Mesh:
    """Build elements and detect conforming face adjacency by node matching.

    ``periodic`` lists translation vectors; a face whose nodes equal another
    face's nodes shifted by one of them is treated as interior (periodic).
    ``tags`` maps (elem, face) to a boundary tag; unmatched faces default to "wall".
    """
    tags = dict(tags or {})
    specs = tuple(specs)
    if not specs:
        raise GeometryError("mesh has no elements")
    dim = specs[0].dim
    elements = tuple(build_element(s, N, metric_form, id=k) for k, s in enumerate(specs))
    shifts = [np.zeros(dim)] + [np.asarray(s, dtype=float) for s in periodic] + [-np.asarray(s, dtype=float) for s in periodic]
    face_dim = dim - 1
    scale = max(np.ptp(e.x.reshape(-1, dim), axis=0).max() for e in elements)
    tol = _MATCH_TOL * max(scale, 1.0)
    matched: dict[tuple[int, int], tuple] = {}
    interfaces = []
    for (k, ek), (f) in itertools.product(enumerate(elements), range(2 * dim)):
        if (k, f) in matched:
            continue
        xa = ek.faces[f].x
        found = None
        for (k2, e2), f2 in itertools.product(enumerate(elements), range(2 * dim)):
            if (k2, f2) == (k, f) or (k2, f2) in matched:
                continue
            xb = e2.faces[f2].x
            for s in shifts:
                for o in range(_n_orientations(face_dim)):
                    if np.max(np.abs(orient_face(xb, o, face_dim) + s - xa)) < tol:
                        found = (k2, f2, o, tuple(float(c) for c in s))
                        break
                if found:
                    break
            if found:
                break
        if found:
            k2, f2, o, s = found
            matched[(k, f)] = matched[(k2, f2)] = found
            interfaces.append(Interface(k, f, k2, f2, o, s))
    boundary = tuple(
        BoundaryFace(k, f, tags.get((k, f), "wall"))
        for k in range(len(elements)) for f in range(2 * dim) if (k, f) not in matched
    )
    return Mesh(dim, N, elements, tuple(interfaces), boundary, specs,
                tuple(tuple(float(c) for c in p) for p in periodic), tags, name)


# -- built-in meshes ---------------------------------------------------------

def _sample_edge(func, p0, p1, ngeo):
    r = lgl_rule(ngeo).nodes
    s = 0.5 * (1 - r)[:, None] * np.asarray(p0, float) + 0.5 * (1 + r)[:, None] * np.asarray(p1, float)
    return func(s)


def _global_map_specs(func, nx, ny, ngeo, lo=(-1.0, -1.0), hi=(1.0, 1.0)):
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    specs = []
    for j in range(ny):
        for i in range(nx):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            specs.append(MappingSpec.transfinite([
                _sample_edge(func, (x0, y0), (x0, y1), ngeo),
                _sample_edge(func, (x1, y0), (x1, y1), ngeo),
                _sample_edge(func, (x0, y0), (x1, y0), ngeo),
                _sample_edge(func, (x0, y1), (x1, y1), ngeo),
            ]))
    return specs


def _wavy_map(delta):
    def func(p):
        s, t = p[..., 0], p[..., 1]
        return np.stack([s + delta * np.sin(np.pi * t) * np.cos(0.5 * np.pi * s),
                         t + delta * np.sin(np.pi * s) * np.cos(0.5 * np.pi * t)], axis=-1)
    return func


def curved_hex_spec(ngeo: int, perturbation: str = "poly", delta: float = 0.1) -> MappingSpec:
    """Single hexahedron on [-1,1]^3 with curved faces.

    ``poly`` bumps are cubic polynomials (representable exactly once ngeo >= 3);
    ``trig`` bumps are trigonometric and only interpolated.
    """
    def func(r):
        xi, eta, zeta = r[..., 0], r[..., 1], r[..., 2]
        if perturbation == "poly":
            return np.stack([xi + delta * eta**2 * zeta,
                             eta + delta * zeta * xi**2,
                             zeta + delta * xi * eta**2], axis=-1)
        if perturbation == "trig":
            bump = np.cos(0.5 * np.pi * xi) * np.cos(0.5 * np.pi * eta) * np.cos(0.5 * np.pi * zeta)
            return np.stack([xi + delta * np.sin(np.pi * eta) * np.sin(np.pi * zeta) * np.cos(0.5 * np.pi * xi),
                             eta + delta * bump * np.sin(np.pi * xi),
                             zeta + delta * np.sin(np.pi * xi) * np.sin(np.pi * eta)], axis=-1)
        raise GeometryError(f"unknown perturbation {perturbation!r}")
    return MappingSpec.analytic(func, 3, ngeo)


def _builtin_specs(name: str, ngeo: int):
    """Return (specs, periodic shifts, tags) for a built-in mesh."""
    if name == "curved-quad":
        top = lambda p: np.stack([p[..., 0], p[..., 1] + 0.15 * np.sin(np.pi * p[..., 0])], axis=-1)
        ident = lambda p: p
        spec = MappingSpec.transfinite([
            _sample_edge(ident, (-1, -1), (-1, 1), ngeo),
            _sample_edge(ident, (1, -1), (1, 1), ngeo),
            _sample_edge(ident, (-1, -1), (1, -1), ngeo),
            _sample_edge(top, (-1, 1), (1, 1), ngeo),
        ])
        return [spec], (), {}
    if name == "curved-periodic-2x2":
        return _global_map_specs(_wavy_map(0.1), 2, 2, ngeo), ((2.0, 0.0), (0.0, 2.0)), {}
    if name == "periodic-2x2":
        return _global_map_specs(lambda p: p, 2, 2, 1), ((2.0, 0.0), (0.0, 2.0)), {}
    if name == "curved-2x2":
        return _global_map_specs(_wavy_map(0.1), 2, 2, ngeo), (), {}
    if name == "curved-hex":
        return [curved_hex_spec(ngeo, "poly")], (), {}
    if name == "trilinear-hex":
        verts = np.array([[i, j, k] for k in (-1, 1) for j in (-1, 1) for i in (-1, 1)], dtype=float)
        verts[7] += (0.15, 0.1, -0.2)
        return [MappingSpec.affine(verts)], (), {}
    raise GeometryError(f"unknown built-in mesh {name!r}; choose from {builtin_mesh_names()}")


def builtin_mesh_names() -> tuple[str, ...]:
    return ("curved-quad", "curved-periodic-2x2", "periodic-2x2", "curved-2x2", "curved-hex", "trilinear-hex")


def builtin_mesh(name: str, N: int, ngeo: int | None = None, metric_form: str = "curl") -> Mesh:
    """Deterministic fixture meshes.

    ``curved-quad``: one quad with a sinusoidal top face (all faces "wall").
    ``curved-periodic-2x2``: 2x2 quads on [-1,1]^2 with curved interior faces,
    straight outer faces and periodic wrap in x and y.
    ``periodic-2x2``: the Cartesian version of the same.
    ``curved-2x2``: the curved mesh without periodicity.
    ``curved-hex`` / ``trilinear-hex``: single hexahedra for the 3-D metric path.
    """
    specs, periodic, tags = _builtin_specs(name, N if ngeo is None else ngeo)
    return build_mesh(specs, N, periodic, tags, name=name, metric_form=metric_form)


# -- mesh files ----------------------------------------------------------------

def format_mesh(specs: Sequence[MappingSpec], periodic: Sequence = (), tags: dict | None = None) -> str:
    """Serialize mapping specs to the plain-text mesh format (see docs/mesh_format.md)."""
    specs = list(specs)
    dim = specs[0].dim
    lines = [f"dgsem-mesh {MESH_FORMAT_VERSION}", f"dim {dim}"]
    lines += ["periodic " + " ".join(repr(float(c)) for c in p) for p in periodic]
    fmt = lambda row: " ".join(repr(float(c)) for c in row)
    for s in specs:
        if s.kind == "affine":
            lines.append("element affine")
            lines += [fmt(v) for v in s.data[0]]
        elif s.kind == "transfinite":
            lines.append(f"element transfinite {s.ngeo}")
            for f, curve in enumerate(s.data):
                lines.append(f"face {f}")
                lines += [fmt(p) for p in curve]
        else:
            lines.append(f"element nodal {s.ngeo}")
            # xi fastest
            arr = np.transpose(s.data[0], tuple(range(dim))[::-1] + (dim,)).reshape(-1, dim)
            lines += [fmt(p) for p in arr]
        lines.append("end")
    for (k, f), tag in sorted((tags or {}).items()):
        lines.append(f"boundary {k} {f} {tag}")
    return "\n".join(lines) + "\n"


def parse_mesh(text: str) -> tuple[list[MappingSpec], tuple, dict]:
    """Parse the mesh format; returns (specs, periodic shifts, boundary tags)."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1][0] != "dgsem-mesh":
        raise GeometryError("mesh file must start with 'dgsem-mesh <version>'")
    version = int(rows[0][1][1])
    if version != MESH_FORMAT_VERSION:
        raise GeometryError(f"unsupported mesh format version {version}")
    it = iter(rows[1:])
    dim = None
    specs, periodic, tags = [], [], {}

    def numbers(lineno, toks, n):
        if len(toks) != n:
            raise GeometryError(f"line {lineno}: expected {n} numbers, got {len(toks)}")
        return [float(t) for t in toks]

    for lineno, toks in it:
        key = toks[0]
        if key == "dim":
            dim = int(toks[1])
        elif key == "periodic":
            periodic.append(tuple(numbers(lineno, toks[1:], dim)))
        elif key == "boundary":
            tags[(int(toks[1]), int(toks[2]))] = toks[3]
        elif key == "element":
            if dim is None:
                raise GeometryError(f"line {lineno}: 'dim' must precede elements")
            kind = toks[1]
            block = []
            for ln, tk in it:
                if tk[0] == "end":
                    break
                block.append((ln, tk))
            else:
                raise GeometryError(f"line {lineno}: element block not terminated by 'end'")
            if kind == "affine":
                specs.append(MappingSpec.affine([numbers(ln, tk, dim) for ln, tk in block]))
            elif kind == "transfinite":
                ngeo = int(toks[2])
                curves = []
                pos = 0
                for f in range(4):
                    ln, tk = block[pos]
                    if tk != ["face", str(f)]:
                        raise GeometryError(f"line {ln}: expected 'face {f}'")
                    curves.append([numbers(l2, t2, 2) for l2, t2 in block[pos + 1: pos + 2 + ngeo]])
                    pos += ngeo + 2
                specs.append(MappingSpec.transfinite(curves))
            elif kind == "nodal":
                ngeo = int(toks[2])
                pts = np.array([numbers(ln, tk, dim) for ln, tk in block])
                if len(pts) != (ngeo + 1) ** dim:
                    raise GeometryError(f"line {lineno}: nodal element needs {(ngeo + 1) ** dim} points")
                arr = pts.reshape((ngeo + 1,) * dim + (dim,))
                arr = np.transpose(arr, tuple(range(dim))[::-1] + (dim,))
                specs.append(MappingSpec(dim, "analytic", ngeo, (arr,)))
            else:
                raise GeometryError(f"line {lineno}: unknown element kind {kind!r}")
        else:
            raise GeometryError(f"line {lineno}: unknown keyword {key!r}")
    if not specs:
        raise GeometryError("mesh file defines no elements")
    return specs, tuple(periodic), tags


def load_mesh(source, N: int, metric_form: str = "curl") -> Mesh:
    """Build a mesh from a file path or from mesh-format text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        path = Path(source)
        text, name = path.read_text(), path.stem
    else:
        text, name = source, "mesh"
    specs, periodic, tags = parse_mesh(text)
    return build_mesh(specs, N, periodic, tags, name=name, metric_form=metric_form)
