"""Analytic fields with exact jets: harmonics, point sources, polynomials, bumps.

These supply manufactured solutions, boundary-data recipes for the CLI and
the smooth multiplier fields used by the diagnostics probes.  All jets are
closed-form; nothing here differentiates numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .kernels import KernelSpec, _lame_tensors, conormal_of_field, laplace_profile, radial_tensors

__all__ = [
    "PolynomialField",
    "BumpField",
    "solid_harmonic",
    "harmonic_pole",
    "KelvinField",
    "random_smooth_density",
    "named_field",
]


@dataclass(frozen=True)
class PolynomialField:
    """Scalar polynomial sum(c * x^alpha) with exact derivatives of any order.

    terms: tuple of (coefficient, exponent tuple).
    """

    terms: tuple
    dim: int

    @staticmethod
    def from_dict(coeffs: dict, dim: int) -> "PolynomialField":
        return PolynomialField(tuple((float(c), tuple(a)) for a, c in coeffs.items()), dim)

    def _term_value(self, c, alpha, pts):
        acc = np.full(len(pts), c)
        for axis, p in enumerate(alpha):
            if p:
                acc = acc * pts[:, axis] ** p
        return acc

    def value(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        acc = np.zeros(len(pts))
        for c, alpha in self.terms:
            acc += self._term_value(c, alpha, pts)
        return acc

    def derivative(self, axes: tuple) -> "PolynomialField":
        terms = self.terms
        for axis in axes:
            out = []
            for c, alpha in terms:
                if alpha[axis] > 0:
                    beta = list(alpha)
                    beta[axis] -= 1
                    out.append((c * alpha[axis], tuple(beta)))
            terms = tuple(out)
        return PolynomialField(terms, self.dim)

    def gradient(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.stack([self.derivative((a,)).value(pts) for a in range(self.dim)], axis=1)

    def hessian(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = self.dim
        out = np.zeros((len(pts), n, n))
        for a in range(n):
            for b in range(a, n):
                v = self.derivative((a, b)).value(pts)
                out[:, a, b] = v
                out[:, b, a] = v
        return out

    def third(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = self.dim
        out = np.zeros((len(pts), n, n, n))
        for a in range(n):
            for b in range(a, n):
                for c in range(b, n):
                    v = self.derivative((a, b, c)).value(pts)
                    for idx in {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}:
                        out[(slice(None),) + idx] = v
        return out

    def __call__(self, pts):
        return self.value(pts)


@dataclass(frozen=True)
class BumpField:
    """Compactly supported radial bump ((1 - |x-c|^2/R^2)_+)^q, q >= 4.

    C^3 for q = 4, with exact gradient and Hessian; support is the closed
    ball of radius R about the center.
    """

    center: np.ndarray
    radius: float
    power: int = 4

    def _s(self, pts):
        z = np.atleast_2d(pts) - self.center
        return 1.0 - (z**2).sum(axis=1) / self.radius**2, z

    def value(self, pts):
        s, _ = self._s(pts)
        return np.where(s > 0, s, 0.0) ** self.power

    def gradient(self, pts):
        s, z = self._s(pts)
        q = self.power
        coef = np.where(s > 0, q * np.where(s > 0, s, 0.0) ** (q - 1), 0.0)
        return coef[:, None] * (-2.0 * z / self.radius**2)

    def hessian(self, pts):
        s, z = self._s(pts)
        q = self.power
        pos = np.where(s > 0, s, 0.0)
        n = z.shape[1]
        eye = np.eye(n)
        c1 = np.where(s > 0, q * pos ** (q - 1), 0.0)
        c2 = np.where(s > 0, q * (q - 1) * pos ** (q - 2), 0.0)
        zz = z[:, :, None] * z[:, None, :]
        return (
            c2[:, None, None] * (4.0 * zz / self.radius**4)
            - c1[:, None, None] * (2.0 * eye / self.radius**2)
        )

    def __call__(self, pts):
        return self.value(pts)


def solid_harmonic(k: int, dim: int = 3) -> PolynomialField:
    """Low-degree solid harmonics used as eigen-test densities on spheres.

    Degree 1: x_n; degree 2: x_1 x_2; degree 3: x_1 x_2 x_3 (3-D) or
    Re((x_1 + i x_2)^3) in the plane.
    """
    if dim == 3:
        table = {
            1: {(0, 0, 1): 1.0},
            2: {(1, 1, 0): 1.0},
            3: {(1, 1, 1): 1.0},
        }
    else:
        table = {
            1: {(0, 1): 1.0},
            2: {(1, 1): 1.0},
            3: {(3, 0): 1.0, (1, 2): -3.0},
        }
    if k not in table:
        raise SpecError(f"solid harmonic of degree {k} not tabulated")
    return PolynomialField.from_dict(table[k], dim)


class harmonic_pole:
    """u(x) = G(x - x0) for the -lap fundamental solution with exterior pole x0."""

    def __init__(self, x0, dim: int = 3):
        self.x0 = np.asarray(x0, dtype=float)
        self.dim = dim
        self.profile = laplace_profile(dim)

    def value(self, pts):
        z = np.atleast_2d(pts) - self.x0
        return radial_tensors(self.profile, z, 0)[0]

    def gradient(self, pts):
        z = np.atleast_2d(pts) - self.x0
        return radial_tensors(self.profile, z, 1)[1]

    def hessian(self, pts):
        z = np.atleast_2d(pts) - self.x0
        return radial_tensors(self.profile, z, 2)[2]

    def __call__(self, pts):
        return self.value(pts)


class KelvinField:
    """Elastostatic field u(x) = Kelvin(x - x0) c with the pole outside the domain."""

    def __init__(self, spec: KernelSpec, x0, charge):
        if spec.family != "lame":
            raise SpecError("KelvinField requires an elastostatic kernel spec")
        self.spec = spec
        self.x0 = np.asarray(x0, dtype=float)
        self.charge = np.asarray(charge, dtype=float)

    def value(self, pts):
        z = np.atleast_2d(pts) - self.x0
        mat = _lame_tensors(self.spec, z, 0)[0]
        return np.einsum("qkl,l->qk", mat, self.charge)

    def gradient(self, pts):
        """grad[q, k, j] = D_j u^k."""
        z = np.atleast_2d(pts) - self.x0
        g = _lame_tensors(self.spec, z, 1)[1]
        return np.einsum("qklj,l->qkj", g, self.charge)

    def traction(self, pts, normals):
        g = self.gradient(pts)
        out = np.empty((len(g), self.spec.dim))
        for q in range(len(g)):
            out[q] = conormal_of_field(self.spec, g[q], normals[q])
        return out

    def __call__(self, pts):
        return self.value(pts)


def random_smooth_density(mesh, m: int, seed: int) -> np.ndarray:
    """Random low-order polynomial trace, the 'random smooth density' of the tests."""
    rng = np.random.default_rng(seed)
    n = mesh.dim
    pts = mesh.nodes
    out = np.zeros((mesh.n_nodes, m))
    for comp in range(m):
        vals = rng.normal() * np.ones(mesh.n_nodes)
        for a in range(n):
            vals = vals + rng.normal() * pts[:, a]
        for a in range(n):
            for b in range(a, n):
                vals = vals + 0.5 * rng.normal() * pts[:, a] * pts[:, b]
        out[:, comp] = vals
    return out


def named_field(name: str, dim: int):
    """Boundary-data recipes for the CLI: y1|y2|y3, constant:c, pole:x,y[,z]."""
    if name.startswith("y") and name[1:].isdigit():
        return solid_harmonic(int(name[1:]), dim)
    if name.startswith("constant:"):
        c = float(name.split(":", 1)[1])
        return PolynomialField(((c, (0,) * dim),), dim)
    if name.startswith("pole:"):
        coords = [float(t) for t in name.split(":", 1)[1].split(",")]
        if len(coords) != dim:
            raise SpecError(f"pole coordinates must have dimension {dim}")
        return harmonic_pole(coords, dim)
    raise SpecError(f"unknown field recipe {name!r}")
