"""Fundamental solutions, conormal kernels and boundary differential operators.

Sign conventions, pinned by the flux tests in ``tests/test_kernels.py``:

* The scalar family solves ``L = -lap``; the fundamental solution satisfies
  ``-lap G = delta``, i.e. ``G(x) = 1/(4 pi |x|)`` for n=3 and
  ``G(x) = -(1/2 pi) log|x|`` for n=2.
* The elastostatic family solves ``L = -mu lap - (lam+mu) grad div`` with the
  Kelvin matrix as fundamental solution (``L`` applied to each column gives
  ``delta`` times the corresponding basis vector).
* The biharmonic family uses ``lap^2 B = delta``.  ``lap B`` is then the
  fundamental solution of ``+lap`` (note the sign relative to the scalar
  family), which matters in every trace formula downstream.

All fundamental solutions are even functions of the offset and the Kelvin
matrix is symmetric in its components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PoleError, SpecError

__all__ = [
    "KernelSpec",
    "KernelValue",
    "sphere_area",
    "fundamental_solution",
    "fundamental_derivatives",
    "conormal_kernel",
    "conormal_of_field",
    "mrho_pointwise",
    "krho_tangential_coords",
    "rellich_tensors",
    "theta_from_rho",
    "rho_from_theta",
]


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n (4 pi for n=3, 2 pi^2 for n=4)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


# ---------------------------------------------------------------------------
# Radial profiles and their derivative tensors
# ---------------------------------------------------------------------------
#
# Every scalar kernel here is a finite sum of terms  c * r^a  and
# c * r^a * log(r).  Differentiating term lists keeps all radial derivatives
# exact, which the derivative tensors below rely on.


@dataclass(frozen=True)
class RadialProfile:
    """Sum of ``c * r**a`` and ``c * r**a * log(r)`` terms."""

    terms: tuple  # of (coefficient, exponent, with_log)

    def differentiate(self) -> "RadialProfile":
        out = []
        for c, a, with_log in self.terms:
            if with_log:
                if a != 0:
                    out.append((c * a, a - 1, True))
                out.append((c, a - 1, False))
            else:
                if a != 0:
                    out.append((c * a, a - 1, False))
        return RadialProfile(tuple(out))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        acc = np.zeros_like(r)
        for c, a, with_log in self.terms:
            term = c * r**a
            if with_log:
                term = term * np.log(r)
            acc = acc + term
        return acc

    def derivative_table(self, r: np.ndarray, order: int) -> list:
        """[f, f', ..., f^(order)] evaluated at r."""
        table = []
        prof = self
        for _ in range(order + 1):
            table.append(prof(r))
            prof = prof.differentiate()
        return table


def laplace_profile(n: int) -> RadialProfile:
    """Radial profile of the fundamental solution of -lap."""
    if n == 2:
        return RadialProfile(((-1.0 / (2.0 * math.pi), 0, True),))
    return RadialProfile(((1.0 / ((n - 2) * sphere_area(n)), 2 - n, False),))


def laplacian_fundamental_profile(n: int) -> RadialProfile:
    """Radial profile of the fundamental solution of +lap (negated scalar one)."""
    return RadialProfile(tuple((-c, a, lg) for c, a, lg in laplace_profile(n).terms))


def biharmonic_profile(n: int) -> RadialProfile:
    """Radial profile of B with lap^2 B = delta."""
    if n == 2:
        c = 1.0 / (8.0 * math.pi)
        return RadialProfile(((-c, 2, False), (c, 2, True)))
    if n == 4:
        return RadialProfile(((-1.0 / (4.0 * sphere_area(4)), 0, True),))
    c = 1.0 / (2.0 * (n - 2) * (n - 4) * sphere_area(n))
    return RadialProfile(((c, 4 - n, False),))


def _radial_coeffs(profile: RadialProfile, r: np.ndarray, order: int) -> dict:
    """Coefficients of the derivative tensors of a radial function.

    With f radial, writing z for the offset and d for its norm:

        D f        = (f'/r) z
        D^2 f      = A z z + B1 I,          A  = (f'' - f'/r)/r^2,  B1 = f'/r
        D^3 f      = C2 z z z + A (I z)_sym3,            C2 = A'/r
        D^4 f      = C4 z^4 + C2 (I z z)_sym6 + A (I I)_sym3,  C4 = (A'/r)'/r
    """
    d = profile.derivative_table(r, order)
    out = {"f": d[0]}
    if order >= 1:
        out["f1"] = d[1]
        out["B1"] = d[1] / r
    if order >= 2:
        out["A"] = (d[2] - d[1] / r) / r**2
    if order >= 3:
        Ap = d[3] / r**2 - 3.0 * d[2] / r**3 + 3.0 * d[1] / r**4
        out["Ap"] = Ap
        out["C2"] = Ap / r
    if order >= 4:
        App = d[4] / r**2 - 5.0 * d[3] / r**3 + 12.0 * d[2] / r**4 - 12.0 * d[1] / r**5
        out["C4"] = App / r**2 - out["Ap"] / r**3
    return out


def radial_tensors(profile: RadialProfile, z: np.ndarray, order: int) -> list:
    """Derivative tensors of a radial function at offsets z, orders 0..order.

    z has shape (..., n); the k-th entry of the result has shape (..., n^k).
    Exact closed forms, no finite differencing.  z must stay away from 0.
    """
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    r = np.linalg.norm(z, axis=-1)
    c = _radial_coeffs(profile, r, order)
    eye = np.eye(n)
    out = [c["f"]]
    if order >= 1:
        out.append(c["B1"][..., None] * z)
    if order >= 2:
        zz = z[..., :, None] * z[..., None, :]
        out.append(c["A"][..., None, None] * zz + c["B1"][..., None, None] * eye)
    if order >= 3:
        zzz = zz[..., :, :, None] * z[..., None, None, :]
        # (I z)_sym3 = d_ij z_k + d_ik z_j + d_jk z_i
        iz = (
            np.einsum("ij,...k->...ijk", eye, z)
            + np.einsum("ik,...j->...ijk", eye, z)
            + np.einsum("jk,...i->...ijk", eye, z)
        )
        out.append(c["C2"][..., None, None, None] * zzz + c["A"][..., None, None, None] * iz)
    if order >= 4:
        zzzz = zzz[..., :, :, :, None] * z[..., None, None, None, :]
        izz = (
            np.einsum("il,...jk->...ijkl", eye, zz)
            + np.einsum("jl,...ik->...ijkl", eye, zz)
            + np.einsum("kl,...ij->...ijkl", eye, zz)
            + np.einsum("ij,...kl->...ijkl", eye, zz)
            + np.einsum("ik,...jl->...ijkl", eye, zz)
            + np.einsum("jk,...il->...ijkl", eye, zz)
        )
        ii = (
            np.einsum("ij,kl->ijkl", eye, eye)
            + np.einsum("ik,jl->ijkl", eye, eye)
            + np.einsum("jk,il->ijkl", eye, eye)
        )
        out.append(
            c["C4"][..., None, None, None, None] * zzzz
            + c["C2"][..., None, None, None, None] * izz
            + c["A"][..., None, None, None, None] * ii
        )
    return out


# ---------------------------------------------------------------------------
# Kernel specification
# ---------------------------------------------------------------------------

LAPLACE = "laplace"
LAME = "lame"
BIHARMONIC = "biharmonic"


@dataclass(frozen=True)
class KernelSpec:
    """PDE family, dimension and material parameters.

    For the elastostatic family ``mu > 0`` and ``lam > -2 mu / n`` are
    required; for the biharmonic family ``1/(1-n) < rho < 1``.
    """

    family: str
    dim: int
    mu: float = 1.0
    lam: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.family not in (LAPLACE, LAME, BIHARMONIC):
            raise SpecError(f"unknown kernel family {self.family!r}")
        if self.dim < 2:
            raise SpecError("dimension must be >= 2")
        if self.family == LAME:
            if not self.mu > 0:
                raise SpecError("Lame constant mu must be positive")
            if not self.lam > -2.0 * self.mu / self.dim:
                raise SpecError("Lame constant lam must exceed -2 mu / n")
        if self.family == BIHARMONIC:
            lo = 1.0 / (1.0 - self.dim)
            if not (lo < self.rho < 1.0):
                raise SpecError(f"rho must lie in ({lo}, 1), got {self.rho}")

    # -- constructors -------------------------------------------------
    @staticmethod
    def laplace(dim: int) -> "KernelSpec":
        return KernelSpec(LAPLACE, dim)

    @staticmethod
    def lame(dim: int, mu: float, lam: float) -> "KernelSpec":
        return KernelSpec(LAME, dim, mu=mu, lam=lam)

    @staticmethod
    def biharmonic(dim: int, rho: float) -> "KernelSpec":
        return KernelSpec(BIHARMONIC, dim, rho=rho)

    # -- derived quantities -------------------------------------------
    @property
    def m(self) -> int:
        """Number of field components per node."""
        return self.dim if self.family == LAME else 1

    @property
    def theta(self) -> float:
        if self.family != BIHARMONIC:
            raise SpecError("theta is defined for the biharmonic family only")
        return theta_from_rho(self.rho, self.dim)

    def coefficient_tensor(self) -> np.ndarray:
        """a[i, j, k, l] with (L u)^k = -a_ij^kl D_i D_j u^l."""
        n = self.dim
        eye = np.eye(n)
        if self.family == LAPLACE:
            return eye[:, :, None, None] * np.ones((1, 1))
        if self.family == LAME:
            return (
                self.mu * np.einsum("ij,kl->ijkl", eye, eye)
                + self.lam * np.einsum("ik,jl->ijkl", eye, eye)
                + self.mu * np.einsum("il,jk->ijkl", eye, eye)
            )
        raise SpecError("no second-order coefficient tensor for the biharmonic family")

    def scalar_profile(self) -> RadialProfile:
        if self.family == LAPLACE:
            return laplace_profile(self.dim)
        if self.family == BIHARMONIC:
            return biharmonic_profile(self.dim)
        raise SpecError("the Kelvin matrix is not a scalar radial profile")

    def kelvin_constants(self) -> tuple:
        """(alpha, beta, profile_a, profile_b) with G_kl = alpha d_kl pa + beta z_k z_l pb."""
        if self.family != LAME:
            raise SpecError("Kelvin constants require the elastostatic family")
        n, mu, lam = self.dim, self.mu, self.lam
        denom = 2.0 * sphere_area(n) * mu * (lam + 2.0 * mu)
        if n == 2:
            alpha = (lam + 3.0 * mu) / denom
            beta = (lam + mu) / denom
            pa = RadialProfile(((-1.0, 0, True),))
            pb = RadialProfile(((1.0, -2, False),))
        else:
            alpha = (lam + 3.0 * mu) / ((n - 2) * denom)
            beta = (lam + mu) / denom
            pa = RadialProfile(((1.0, 2 - n, False),))
            pb = RadialProfile(((1.0, -n, False),))
        return alpha, beta, pa, pb


@dataclass
class KernelValue:
    """Fundamental-solution components and optional derivative tensors.

    ``value`` has shape (m, m); when present, ``gradient`` is (m, m, n),
    ``hessian`` (m, m, n, n) and ``third`` (m, m, n, n, n), derivative
    indices trailing.
    """

    value: np.ndarray
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    third: np.ndarray | None = None


_MAX_ORDER = {LAPLACE: 3, LAME: 2, BIHARMONIC: 3}


def _check_offset(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise PoleError("non-finite offset")
    if np.linalg.norm(x) == 0.0:
        raise PoleError("fundamental solution evaluated at its pole")
    return x


def _lame_tensors(spec: KernelSpec, z: np.ndarray, order: int) -> list:
    """Kelvin matrix and derivatives; entry k has shape (..., m, m, n^k)."""
    alpha, beta, pa, pb = spec.kelvin_constants()
    n = spec.dim
    r = np.linalg.norm(z, axis=-1)
    ca = _radial_coeffs(pa, r, order)
    cb = _radial_coeffs(pb, r, order)
    eye = np.eye(n)
    zz = z[..., :, None] * z[..., None, :]
    out = []
    val = alpha * ca["f"][..., None, None] * eye + beta * cb["f"][..., None, None] * zz
    out.append(val)
    if order >= 1:
        # D_m [d_kl pa] = d_kl B1a z_m ; D_m [z_k z_l pb] =
        #   (d_mk z_l + d_ml z_k) pb + z_k z_l B1b z_m
        g1 = alpha * np.einsum("kl,...m->...klm", eye, ca["B1"][..., None] * z)
        g2 = beta * (
            np.einsum("mk,...l->...klm", eye, cb["f"][..., None] * z)
            + np.einsum("ml,...k->...klm", eye, cb["f"][..., None] * z)
            + np.einsum("...kl,...m->...klm", zz, cb["B1"][..., None] * z)
        )
        out.append(g1 + g2)
    if order >= 2:
        Aa = ca["A"]
        Ab = cb["A"]
        h1 = alpha * np.einsum(
            "kl,...mp->...klmp", eye, Aa[..., None, None] * zz + ca["B1"][..., None, None] * eye
        )
        t_pair = np.einsum("mk,pl->klmp", eye, eye) + np.einsum("ml,pk->klmp", eye, eye)
        bz = cb["B1"][..., None] * z
        h2 = beta * (
            cb["f"][..., None, None, None, None] * t_pair
            + np.einsum("mk,...l,...p->...klmp", eye, z, bz)
            + np.einsum("ml,...k,...p->...klmp", eye, z, bz)
            + np.einsum("pk,...l,...m->...klmp", eye, z, bz)
            + np.einsum("pl,...k,...m->...klmp", eye, z, bz)
            + np.einsum("...kl,...mp->...klmp", zz, Ab[..., None, None] * zz + cb["B1"][..., None, None] * eye)
        )
        out.append(h1 + h2)
    return out


def fundamental_solution(spec: KernelSpec, x) -> KernelValue:
    """Matrix of fundamental solutions at offset x (pole at 0)."""
    x = _check_offset(x)
    if spec.family == LAME:
        return KernelValue(value=_lame_tensors(spec, x, 0)[0])
    val = spec.scalar_profile()(np.linalg.norm(x))
    return KernelValue(value=np.array([[val]]))


def fundamental_derivatives(spec: KernelSpec, x, order: int) -> KernelValue:
    """Fundamental solution with closed-form derivative tensors up to ``order``."""
    x = _check_offset(x)
    if order < 0 or order > _MAX_ORDER[spec.family]:
        raise SpecError(
            f"derivative order {order} unsupported for family {spec.family!r}"
        )
    if spec.family == LAME:
        tensors = _lame_tensors(spec, x, order)
        kv = KernelValue(value=tensors[0])
        if order >= 1:
            kv.gradient = tensors[1]
        if order >= 2:
            kv.hessian = tensors[2]
        return kv
    tensors = radial_tensors(spec.scalar_profile(), x, order)
    kv = KernelValue(value=np.array([[tensors[0]]]))
    if order >= 1:
        kv.gradient = tensors[1][None, None]
    if order >= 2:
        kv.hessian = tensors[2][None, None]
    if order >= 3:
        kv.third = tensors[3][None, None]
    return kv


# ---------------------------------------------------------------------------
# Conormal derivatives
# ---------------------------------------------------------------------------


def conormal_kernel(spec: KernelSpec, x, y, normal_y) -> np.ndarray:
    """Conormal derivative in y of each row of G(y - x); shape (m, m).

    Entry [k, l] multiplies density component l to produce output component k
    of the double layer potential.  For the scalar family this is the
    classical double-layer kernel; for the elastostatic family it applies the
    traction operator to the Kelvin columns.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = y - x
    if np.linalg.norm(z) == 0.0:
        raise PoleError("conormal kernel evaluated on its diagonal")
    normal_y = np.asarray(normal_y, dtype=float)
    if spec.family == LAPLACE:
        grad = radial_tensors(laplace_profile(spec.dim), z, 1)[1]
        return np.array([[float(grad @ normal_y)]])
    if spec.family == LAME:
        grad = _lame_tensors(spec, z, 1)[1]  # (m, m, n), derivative in the offset
        return _lame_traction_contract(spec, grad, normal_y)
    raise SpecError("conormal_kernel covers the second-order families only")


def _lame_traction_contract(spec: KernelSpec, grad: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Contract a_ij^{lm} D_j G^{km} N_i for kernel derivative tensors.

    grad[..., k, m, j] = D_j G^{km} and normal broadcasts over the leading
    axes; returns [..., k, l].
    """
    mu, lam = spec.mu, spec.lam
    t1 = mu * np.einsum("...klj,...j->...kl", grad, normal)
    t2 = lam * np.einsum("...kmm,...l->...kl", grad, normal)
    t3 = mu * np.einsum("...kml,...m->...kl", grad, normal)
    return t1 + t2 + t3


def conormal_of_field(spec: KernelSpec, grad_u: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Conormal derivative of a field from its gradient; grad_u[k, j] = D_j u^k.

    Scalar family: normal derivative.  Elastostatic family: the traction
    lam (div u) N + mu (grad u + grad u^T) N.
    """
    grad_u = np.asarray(grad_u, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if spec.family == LAPLACE:
        g = grad_u.reshape(1, -1) if grad_u.ndim == 1 else grad_u
        return g @ normal
    if spec.family == LAME:
        div = np.trace(grad_u)
        return spec.lam * div * normal + spec.mu * (grad_u + grad_u.T) @ normal
    raise SpecError("conormal_of_field covers the second-order families only")


# ---------------------------------------------------------------------------
# Biharmonic boundary operators and the Rellich tensors
# ---------------------------------------------------------------------------


def _require_symmetric(mat: np.ndarray, what: str):
    mat = np.asarray(mat, dtype=float)
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > 1e-10 * scale:
        raise SpecError(f"{what} must be symmetric")
    return mat


def mrho_pointwise(rho: float, hessian: np.ndarray, normal: np.ndarray) -> float:
    """rho lap(u) + (1 - rho) d^2 u / dN^2 from the Hessian of u at a point."""
    h = _require_symmetric(hessian, "Hessian")
    normal = np.asarray(normal, dtype=float)
    return float(rho * np.trace(h) + (1.0 - rho) * normal @ h @ normal)


def krho_tangential_coords(rho: float, hessian: np.ndarray, third: np.ndarray, normal: np.ndarray):
    """Distributional coordinates (h, h0) of the third-order boundary operator.

    Returns the antisymmetric tangential-flux coefficients
    ``h_ij = (1/2)(1 - rho) N_k dT_ij(D_k u)`` and the function part
    ``h0 = dN(lap u)`` so the full operator is dT_ij(h_ij) + h0, the
    tangential divergence being applied downstream by weak pairing.
    """
    h = _require_symmetric(hessian, "Hessian")
    third = np.asarray(third, dtype=float)
    normal = np.asarray(normal, dtype=float)
    h0 = float(np.einsum("a,akk->", normal, third))
    nh = h @ normal  # N_k D_j D_k u
    nij = np.outer(normal, nh) - np.outer(nh, normal)
    return 0.5 * (1.0 - rho) * nij, h0


def rellich_tensors(theta: float, alpha_grad, alpha_hess, u_grad, u_hess):
    """(E, L) matrices of the biharmonic Rellich identity at one point.

    ``alpha_grad[i, m] = D_i alpha^m``, ``alpha_hess[i, j, m] = D_i D_j alpha^m``,
    ``u_grad[m] = D_m u`` and ``u_hess`` the Hessian of u.  L_ij collects
    D_i D_j u + theta d_ij lap u; E_ij is the interior-term density whose
    contraction with L_ij forms the solid integral.
    """
    ag = np.asarray(alpha_grad, dtype=float)
    ah = np.asarray(alpha_hess, dtype=float)
    ug = np.asarray(u_grad, dtype=float)
    uh = _require_symmetric(u_hess, "Hessian of u")
    n = ug.shape[0]
    eye = np.eye(n)
    lap_u = np.trace(uh)
    L = uh + theta * eye * lap_u
    div_a = np.trace(ag)
    L_alpha = ah + theta * eye[:, :, None] * np.trace(ah, axis1=0, axis2=1)[None, None, :]
    E = (
        0.5 * div_a * L
        - np.einsum("ijm,m->ij", L_alpha, ug)
        - 2.0 * np.einsum("im,mj->ij", ag, uh)
        - 2.0 * theta * eye * np.einsum("km,mk->", ag, uh)
    )
    return E, L


def rho_from_theta(theta: float, n: int) -> float:
    """The biharmonic parameter correspondence rho(theta)."""
    return (n * theta + n * theta**2) / (1.0 + 2.0 * theta + n * theta**2)


def theta_from_rho(rho: float, n: int) -> float:
    """Invert rho(theta) on the branch continuous with theta(0) = 0.

    Solves n (rho - 1) theta^2 + (2 rho - n) theta + rho = 0 and picks the
    root of smaller magnitude, which is the continuous branch for every
    admissible rho.
    """
    lo = 1.0 / (1.0 - n)
    if not (lo < rho < 1.0):
        raise SpecError(f"rho must lie in ({lo}, 1), got {rho}")
    if rho == 0.0:
        return 0.0
    a = n * (rho - 1.0)
    b = 2.0 * rho - n
    c = rho
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        raise SpecError("theta-rho relation has no real root")
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a]
    if q != 0.0:
        roots.append(c / q)
    return min(roots, key=abs)
