import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bielab.errors import PoleError, SpecError
from bielab import kernels as K
from bielab.kernels import (
    KernelSpec,
    conormal_kernel,
    conormal_of_field,
    fundamental_derivatives,
    fundamental_solution,
    krho_tangential_coords,
    mrho_pointwise,
    radial_tensors,
    rellich_tensors,
    rho_from_theta,
    sphere_area,
    theta_from_rho,
)


def sphere_quadrature(n_theta=200, n_phi=400):
    """Gauss-Legendre x uniform-phi quadrature on the unit sphere (independent oracle)."""
    u, wu = np.polynomial.legendre.leggauss(n_theta)  # u = cos(theta)
    p = (np.arange(n_phi) + 0.5) * 2.0 * math.pi / n_phi
    U, P = np.meshgrid(u, p, indexing="ij")
    s = np.sqrt(1.0 - U**2)
    pts = np.stack([s * np.cos(P), s * np.sin(P), U], axis=-1).reshape(-1, 3)
    w = (wu[:, None] * np.full_like(P, 2.0 * math.pi / n_phi)).reshape(-1)
    return pts, w


def circle_quadrature(n=2000):
    a = (np.arange(n) + 0.5) * 2.0 * math.pi / n
    pts = np.stack([np.cos(a), np.sin(a)], axis=-1)
    w = np.full(n, 2.0 * math.pi / n)
    return pts, w


def radial_flux(values_grad, pts, w):
    """Flux of a gradient field through the unit sphere/circle."""
    return float(np.sum(w * np.einsum("qi,qi->q", values_grad, pts)))


# ---------------------------------------------------------------------------
# fundamental_solution
# ---------------------------------------------------------------------------


def test_laplace_value_n3():
    kv = fundamental_solution(KernelSpec.laplace(3), [1.0, 0.0, 0.0])
    assert_allclose(kv.value[0, 0], 1.0 / (4.0 * math.pi), rtol=1e-14)


def test_laplace_flux_oracle_n3():
    # flux of grad(G) through the unit sphere must be -1 for the -lap convention
    spec = KernelSpec.laplace(3)
    pts, w = sphere_quadrature()
    grad = radial_tensors(K.laplace_profile(3), pts, 1)[1]
    assert_allclose(radial_flux(grad, pts, w), -1.0, atol=1e-10)


def test_laplace_flux_oracle_n2():
    spec = KernelSpec.laplace(2)
    pts, w = circle_quadrature()
    grad = radial_tensors(K.laplace_profile(2), pts, 1)[1]
    assert_allclose(radial_flux(grad, pts, w), -1.0, atol=1e-12)


def test_biharmonic_values_at_unit_radius():
    # lap^2 B = delta with omega_3 = 4 pi gives B = -r/(8 pi) in 3-D; the 2-D
    # closed form -(1/8 pi) r^2 (1 - log r) takes the same value at r = 1.
    for n in (2, 3):
        kv = fundamental_solution(KernelSpec.biharmonic(n, rho=0.5), np.eye(n)[0])
        assert_allclose(kv.value[0, 0], -1.0 / (8.0 * math.pi), rtol=1e-14)


def test_biharmonic_flux_oracle():
    # lap B is the fundamental solution of +lap, so its gradient flux is +1.
    pts, w = sphere_quadrature()
    prof = K.biharmonic_profile(3)
    third = radial_tensors(prof, pts, 3)[3]
    grad_lap = np.einsum("qikk->qi", third)
    assert_allclose(radial_flux(grad_lap, pts, w), 1.0, atol=1e-8)

    pts2, w2 = circle_quadrature()
    third2 = radial_tensors(K.biharmonic_profile(2), pts2, 3)[3]
    grad_lap2 = np.einsum("qikk->qi", third2)
    assert_allclose(radial_flux(grad_lap2, pts2, w2), 1.0, atol=1e-10)


def test_biharmonic_lap_b_equals_laplacian_fundamental():
    rng = np.random.default_rng(7)
    for n in (2, 3):
        z = rng.normal(size=(5, n))
        hess = radial_tensors(K.biharmonic_profile(n), z, 2)[2]
        lap_b = np.einsum("qkk->q", hess)
        gamma = K.laplacian_fundamental_profile(n)(np.linalg.norm(z, axis=-1))
        assert_allclose(lap_b, gamma, rtol=1e-11)


def test_pole_error():
    with pytest.raises(PoleError):
        fundamental_solution(KernelSpec.laplace(3), [0.0, 0.0, 0.0])
    with pytest.raises(PoleError):
        conormal_kernel(KernelSpec.laplace(3), [1.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0])


def test_spec_validation():
    with pytest.raises(SpecError):
        KernelSpec.lame(3, mu=-1.0, lam=0.0)
    with pytest.raises(SpecError):
        KernelSpec.lame(3, mu=1.0, lam=-0.7)  # lam must exceed -2/3
    with pytest.raises(SpecError):
        KernelSpec.biharmonic(3, rho=1.0)
    with pytest.raises(SpecError):
        KernelSpec.biharmonic(3, rho=-0.51)


def test_kernel_evenness_and_kelvin_symmetry():
    rng = np.random.default_rng(3)
    lame = KernelSpec.lame(3, mu=1.3, lam=0.7)
    for _ in range(5):
        x = rng.normal(size=3)
        for spec in (KernelSpec.laplace(3), KernelSpec.biharmonic(3, 0.4), lame):
            a = fundamental_solution(spec, x).value
            b = fundamental_solution(spec, -x).value
            assert_allclose(a, b, rtol=1e-13)
        kelvin = fundamental_solution(lame, x).value
        assert_allclose(kelvin, kelvin.T, rtol=1e-13)


def test_kelvin_spec_normalization_n3():
    # Kelvin matrix (1/(8 pi mu (lam+2mu))) [(lam+3mu) d_kl / r + (lam+mu) x_k x_l / r^3]
    mu, lam = 1.1, 0.6
    spec = KernelSpec.lame(3, mu=mu, lam=lam)
    x = np.array([0.3, -0.4, 1.2])
    r = np.linalg.norm(x)
    c = 1.0 / (8.0 * math.pi * mu * (lam + 2.0 * mu))
    expected = c * ((lam + 3 * mu) * np.eye(3) / r + (lam + mu) * np.outer(x, x) / r**3)
    assert_allclose(fundamental_solution(spec, x).value, expected, rtol=1e-13)


# ---------------------------------------------------------------------------
# derivatives: finite-difference oracle
# ---------------------------------------------------------------------------


def fd_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(out, axis=-1)


@pytest.mark.parametrize(
    "spec",
    [
        KernelSpec.laplace(2),
        KernelSpec.laplace(3),
        KernelSpec.biharmonic(2, 0.3),
        KernelSpec.biharmonic(3, 0.3),
        KernelSpec.lame(2, 1.0, 0.5),
        KernelSpec.lame(3, 1.0, 0.5),
    ],
)
def test_derivatives_match_finite_differences(spec):
    rng = np.random.default_rng(11)
    x = rng.normal(size=spec.dim)
    x *= 1.0 / np.linalg.norm(x)  # |x| = 1 per the stated oracle
    max_order = 2 if spec.family == "lame" else 3
    kv = fundamental_derivatives(spec, x, max_order)

    fd_g = fd_gradient(lambda p: fundamental_solution(spec, p).value, x)
    assert_allclose(kv.gradient, fd_g, rtol=1e-6, atol=1e-9)

    fd_h = fd_gradient(
        lambda p: fundamental_derivatives(spec, p, 1).gradient, x, h=1e-5
    )
    assert_allclose(kv.hessian, fd_h, rtol=1e-5, atol=1e-8)

    if max_order >= 3:
        fd_t = fd_gradient(
            lambda p: fundamental_derivatives(spec, p, 2).hessian, x, h=1e-4
        )
        assert_allclose(kv.third, fd_t, rtol=1e-4, atol=1e-7)


def test_radial_order4_matches_fd_of_order3():
    prof = K.biharmonic_profile(3)
    x = np.array([0.6, -0.3, 0.9])
    t4 = radial_tensors(prof, x, 4)[4]
    fd = fd_gradient(lambda p: radial_tensors(prof, p, 3)[3], x, h=1e-4)
    assert_allclose(t4, fd, rtol=1e-4, atol=1e-7)


def test_derivative_tensors_symmetric():
    spec = KernelSpec.biharmonic(3, 0.2)
    kv = fundamental_derivatives(spec, [0.5, 0.2, -0.7], 3)
    t = kv.third[0, 0]
    for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
        assert_allclose(t, np.transpose(t, perm), rtol=1e-12)


def test_laplace_gradient_example():
    kv = fundamental_derivatives(KernelSpec.laplace(3), [1.0, 0.0, 0.0], 1)
    assert_allclose(kv.gradient[0, 0], [-1.0 / (4 * math.pi), 0.0, 0.0], atol=1e-15)


def test_order_caps():
    with pytest.raises(SpecError):
        fundamental_derivatives(KernelSpec.lame(3, 1.0, 0.0), [1.0, 0, 0], 3)
    with pytest.raises(SpecError):
        fundamental_derivatives(KernelSpec.laplace(3), [1.0, 0, 0], 4)


# ---------------------------------------------------------------------------
# PDE residual oracle (finite-difference application of the operator)
# ---------------------------------------------------------------------------


def fd_laplacian(f, x, h):
    x = np.asarray(x, dtype=float)
    acc = -2.0 * x.size * f(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        acc = acc + f(x + e) + f(x - e)
    return acc / h**2


def test_pde_residual_laplace_and_biharmonic():
    rng = np.random.default_rng(5)
    for n in (2, 3):
        pts = []
        for _ in range(4):
            x = rng.normal(size=n)
            pts.append(x * (0.5 + 1.5 * rng.random()) / np.linalg.norm(x))
        for fam, op in [
            (KernelSpec.laplace(n), "minus_lap"),
            (KernelSpec.biharmonic(n, 0.25), "bilap"),
        ]:
            f = lambda p: fundamental_solution(fam, p).value[0, 0]
            residuals = []
            for h in (4e-2, 2e-2):
                res = 0.0
                for x in pts:
                    if op == "minus_lap":
                        res = max(res, abs(fd_laplacian(f, x, h)))
                    else:
                        g = lambda p: fd_laplacian(f, p, h)
                        res = max(res, abs(fd_laplacian(g, x, h)))
                residuals.append(res)
            # second-order truncation: halving h cuts the residual ~4x
            assert residuals[1] < 0.5 * residuals[0] + 1e-9


def test_pde_residual_lame():
    # L u = -mu lap u - (lam + mu) grad div u applied to Kelvin columns
    mu, lam = 0.9, 0.8
    for n in (2, 3):
        spec = KernelSpec.lame(n, mu, lam)
        rng = np.random.default_rng(17)
        x = rng.normal(size=n)
        x *= 1.2 / np.linalg.norm(x)

        def column(p, col):
            return fundamental_solution(spec, p).value[:, col]

        for h in (1e-2,):
            for col in range(n):
                lap = fd_laplacian(lambda p: column(p, col), x, h)
                div = fd_gradient(
                    lambda p: np.trace(
                        fd_gradient(lambda q: column(q, col), p, h)
                    ),
                    x,
                    h,
                )
                res = -mu * lap - (lam + mu) * div
                assert np.abs(res).max() < 5e-3


# ---------------------------------------------------------------------------
# conormal kernels
# ---------------------------------------------------------------------------


def test_laplace_conormal_example():
    spec = KernelSpec.laplace(3)
    val = conormal_kernel(spec, np.zeros(3), [1.0, 0, 0], [1.0, 0, 0])
    assert_allclose(val[0, 0], -1.0 / (4.0 * math.pi), rtol=1e-14)


def test_conormal_gauss_identity_sphere():
    # Sum of the conormal kernel over a sphere around the pole gives -I.
    pts, w = sphere_quadrature(100, 200)
    for spec in (KernelSpec.laplace(3), KernelSpec.lame(3, 1.0, 0.9)):
        m = spec.m
        acc = np.zeros((m, m))
        for q in range(0, len(pts), 5000):
            chunk = slice(q, q + 5000)
            for p, ww in zip(pts[chunk], w[chunk]):
                acc += ww * conormal_kernel(spec, np.zeros(3), p, p)
        assert_allclose(acc, -np.eye(m), atol=2e-2)


def test_conormal_of_field_rigid_motion():
    spec = KernelSpec.lame(3, 1.4, 0.2)
    A = np.array([[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]])
    out = conormal_of_field(spec, A.T @ np.eye(3) * 0 + A, np.array([0.3, 0.4, 0.5]))
    # grad of u = A x is A itself (grad_u[k, j] = A_kj); skew A gives zero traction
    out = conormal_of_field(spec, A, np.array([0.3, 0.4, 0.5]))
    assert_allclose(out, np.zeros(3), atol=1e-15)


def test_conormal_of_field_identity_field():
    n = 3
    mu, lam = 1.1, 0.4
    spec = KernelSpec.lame(n, mu, lam)
    N = np.array([1.0, 2.0, 2.0]) / 3.0
    out = conormal_of_field(spec, np.eye(n), N)
    assert_allclose(out, (lam * n + 2 * mu) * N, rtol=1e-14)


def test_conormal_of_field_matches_coefficient_contraction():
    rng = np.random.default_rng(23)
    spec = KernelSpec.lame(3, 1.7, 0.3)
    a = spec.coefficient_tensor()
    for _ in range(5):
        g = rng.normal(size=(3, 3))
        N = rng.normal(size=3)
        N /= np.linalg.norm(N)
        via_form = conormal_of_field(spec, g, N)
        via_tensor = np.einsum("ijkl,lj,i->k", a, g, N)
        assert_allclose(via_form, via_tensor, atol=1e-14)


def test_coefficient_tensor_symmetry_and_ellipticity():
    spec = KernelSpec.lame(3, 1.0, 0.5)
    a = spec.coefficient_tensor()
    assert_allclose(a, np.transpose(a, (1, 0, 3, 2)), atol=0)
    rng = np.random.default_rng(2)
    for _ in range(50):
        xi = rng.normal(size=3)
        eta = rng.normal(size=3)
        quad = np.einsum("ijkl,i,j,k,l->", a, xi, xi, eta, eta)
        bound = spec.mu * (xi @ xi) * (eta @ eta)
        assert quad >= bound * (1 - 1e-12)


# ---------------------------------------------------------------------------
# biharmonic boundary operators
# ---------------------------------------------------------------------------


def test_mrho_flat_example():
    # u = x1^2 on a flat boundary with N = e_n: lap u = 2, d^2u/dN^2 = 0
    hess = np.diag([2.0, 0.0, 0.0])
    N = np.array([0.0, 0.0, 1.0])
    for rho in (0.1, 0.5, 0.9):
        assert_allclose(mrho_pointwise(rho, hess, N), 2.0 * rho, rtol=1e-15)


def test_krho_flat_example():
    # u = x_n^3 on {x_n = 0}: dN(lap u) = 6, tangential part vanishes
    hess = np.zeros((3, 3))
    third = np.zeros((3, 3, 3))
    third[2, 2, 2] = 6.0
    N = np.array([0.0, 0.0, 1.0])
    h, h0 = krho_tangential_coords(0.4, hess, third, N)
    assert_allclose(h0, 6.0, rtol=1e-15)
    assert_allclose(h, np.zeros((3, 3)), atol=1e-15)


def test_krho_antisymmetric_and_scaled():
    rng = np.random.default_rng(4)
    hess = rng.normal(size=(3, 3))
    hess = 0.5 * (hess + hess.T)
    third = rng.normal(size=(3, 3, 3))
    third = (third + third.transpose(1, 0, 2) + third.transpose(2, 1, 0)) / 3.0
    third = (third + third.transpose(0, 2, 1)) / 2.0
    N = np.array([0.0, 0.6, 0.8])
    rho = 0.3
    h, h0 = krho_tangential_coords(rho, hess, third, N)
    assert_allclose(h, -h.T, atol=1e-14)
    nh = hess @ N
    expected = 0.5 * (1 - rho) * (np.outer(N, nh) - np.outer(nh, N))
    assert_allclose(h, expected, atol=1e-14)


def test_mrho_rejects_unsymmetric():
    with pytest.raises(SpecError):
        mrho_pointwise(0.5, np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([1.0, 0.0]))


def test_theta_rho_relation():
    # round trip and the pinned example values
    assert theta_from_rho(0.0, 3) == 0.0
    n = 3
    rho_at_theta_one = rho_from_theta(1.0, n)
    assert_allclose(rho_at_theta_one, 2.0 * n / (n + 3.0), rtol=1e-15)
    for nn in (2, 3):
        lo = 1.0 / (1.0 - nn)
        for rho in np.linspace(lo + 0.05, 0.95, 19):
            th = theta_from_rho(float(rho), nn)
            assert_allclose(rho_from_theta(th, nn), rho, atol=1e-12)
    # branch continuity: small rho -> small theta
    assert abs(theta_from_rho(1e-6, 3)) < 1e-6


def test_rellich_tensors_examples():
    n = 3
    rng = np.random.default_rng(9)
    u_grad = rng.normal(size=n)
    u_hess = rng.normal(size=(n, n))
    u_hess = 0.5 * (u_hess + u_hess.T)

    # constant alpha field: all alpha-derivative terms vanish
    E, L = rellich_tensors(0.7, np.zeros((n, n)), np.zeros((n, n, n)), u_grad, u_hess)
    assert_allclose(E, np.zeros((n, n)), atol=1e-15)

    # linear u: L vanishes
    E2, L2 = rellich_tensors(0.7, rng.normal(size=(n, n)), rng.normal(size=(n, n, n)),
                             u_grad, np.zeros((n, n)))
    assert_allclose(L2, np.zeros((n, n)), atol=1e-15)

    # theta = 0, alpha = x: E = (n/2) Hess - 2 Hess  (symbolic expansion oracle)
    E3, L3 = rellich_tensors(0.0, np.eye(n), np.zeros((n, n, n)), u_grad, u_hess)
    assert_allclose(E3, (n / 2.0 - 2.0) * u_hess, atol=1e-13)
    assert_allclose(L3, u_hess, atol=1e-15)
