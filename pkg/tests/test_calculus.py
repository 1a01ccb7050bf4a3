import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plapspec.calculus import (
    Exponent,
    ZeroFieldError,
    conjugate,
    dirichlet_energy,
    eigen_residual,
    gradient,
    lp_norm,
    monotonicity_gap,
    monotonicity_lower_bound,
    normalize,
    p_laplacian,
    picone_integrand,
    rayleigh,
)
from plapspec.grid import Field, GridDomain

EXPONENTS = [1.5, 2.0, 3.0]


def loop_gradient(u: Field):
    """Per-face differences by explicit loops, in axis-major face order."""
    dom = u.domain
    g = u.full()
    out = []
    if dom.dim == 1:
        g = g[None, :]
        mask = dom.mask[None, :]
        axes = [1]
    else:
        mask = dom.mask
        axes = [0, 1]
    rows, cols = g.shape
    for ax in axes:
        faces = []
        for i in range(rows + (ax == 0)):
            for j in range(cols + (ax == 1)):
                lo = (i - 1, j) if ax == 0 else (i, j - 1)
                hi = (i, j)
                def val(c):
                    ok = 0 <= c[0] < rows and 0 <= c[1] < cols
                    return g[c] if ok else 0.0
                def act(c):
                    return 0 <= c[0] < rows and 0 <= c[1] < cols and mask[c]
                if act(lo) or act(hi):
                    faces.append(((hi, lo), (val(hi) - val(lo)) / dom.h))
        out.append(faces)
    return out


def test_exponent():
    e = Exponent(3.0)
    assert 1 / e.p + 1 / e.conjugate == pytest.approx(1.0, abs=1e-15)
    assert conjugate(1.5) == 3.0
    for bad in (1.0, 0.5, np.inf):
        with pytest.raises(ValueError):
            Exponent(bad)


def test_gradient_bump_example():
    dom = GridDomain.interval(3, h=1.0)
    g = gradient(Field(dom, [0.0, 1.0, 0.0]))
    assert np.array_equal(np.sort(g[g != 0]), [-1.0, 1.0])
    assert dirichlet_energy(Field(dom, [0.0, 1.0, 0.0]), 2) == 2.0


def test_gradient_constant_only_boundary():
    dom = GridDomain.box((4, 5), h=0.5)
    g = gradient(Field.ones(dom))
    nonzero = np.count_nonzero(g)
    assert nonzero == 2 * 4 + 2 * 5


def test_gradient_matches_loop_oracle(rng):
    for shape in [(9,), (5, 6)]:
        m = rng.random(shape) < 0.7
        dom = GridDomain(m, 0.3)
        u = Field(dom, rng.standard_normal(dom.n_active))
        ref = [v for faces in loop_gradient(u) for _, v in faces]
        assert np.allclose(np.sort(gradient(u)), np.sort(ref), rtol=0, atol=1e-12)
        assert dirichlet_energy(u, 2.5) == pytest.approx(dom.cell_volume * np.sum(np.abs(ref) ** 2.5), rel=1e-12)


def test_energy_zero_field():
    assert dirichlet_energy(Field.zeros(GridDomain.box((3, 3))), 3) == 0.0


def test_energy_of_sine_mode():
    n = 512
    dom = GridDomain.interval(n)
    h = dom.h
    u = Field.from_function(dom, lambda x: np.sin(np.pi * x))
    lam = 4 / h**2 * np.sin(np.pi * h / 2) ** 2
    assert dirichlet_energy(u, 2) == pytest.approx(lam * lp_norm(u, 2) ** 2, rel=1e-12)
    assert rayleigh(u, 2) == pytest.approx(lam, rel=1e-12)


def test_lp_norm_examples(rng):
    assert lp_norm(Field.zeros(GridDomain.interval(4)), 2) == 0.0
    assert lp_norm(Field(GridDomain([1], 1.0), [2.0]), 3) == pytest.approx(2.0, rel=1e-15)
    dom = GridDomain(rng.random((6, 7)) < 0.5, 0.2)
    x = rng.standard_normal(dom.n_active)
    assert lp_norm(Field(dom, x), 1.7) == pytest.approx((0.04 * sum(abs(v) ** 1.7 for v in x)) ** (1 / 1.7), rel=1e-12)


def test_normalize(rng):
    dom = GridDomain.box((5, 4), h=0.2)
    u = Field(dom, rng.standard_normal(dom.n_active))
    for p in EXPONENTS:
        n = normalize(u, p)
        assert lp_norm(n, p) == pytest.approx(1.0, rel=1e-12)
        assert np.allclose(normalize(7 * u, p).values, n.values, rtol=1e-14)
        again = normalize(n, p)
        assert np.allclose(again.values, n.values, rtol=1e-15, atol=0)
    with pytest.raises(ZeroFieldError, match="cannot normalize zero"):
        normalize(Field.zeros(dom), 2)


def test_rayleigh(rng):
    dom = GridDomain.box((5, 4), h=0.2)
    u = Field(dom, rng.standard_normal(dom.n_active))
    for p in EXPONENTS:
        n = normalize(u, p)
        assert rayleigh(n, p) == pytest.approx(dirichlet_energy(n, p), rel=1e-12)
        assert rayleigh(3 * u, p) == pytest.approx(rayleigh(u, p), rel=1e-12)
    with pytest.raises(ZeroFieldError):
        rayleigh(Field.zeros(dom), 2)


def test_p_laplacian_p2_stencil_row(rng):
    dom = GridDomain.interval(8)
    u = Field(dom, rng.standard_normal(8))
    L = p_laplacian(u, 2).values
    x = u.values
    i = 4
    assert L[i] == pytest.approx((2 * x[i] - x[i - 1] - x[i + 1]) / dom.h**2, rel=1e-12)
    assert not np.any(p_laplacian(Field.zeros(dom), 3).values)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_p_laplacian_finite_differences(rng, p):
    dom = GridDomain(rng.random((6, 6)) < 0.8, 0.2)
    u = Field(dom, rng.standard_normal(dom.n_active))
    L = p_laplacian(u, p).values
    eps = 1e-6
    for k in range(dom.n_active):
        e = np.zeros(dom.n_active)
        e[k] = eps
        fd = (dirichlet_energy(Field(dom, u.values + e), p) - dirichlet_energy(Field(dom, u.values - e), p)) / (2 * eps * p)
        assert dom.cell_volume * L[k] == pytest.approx(fd, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("p", EXPONENTS)
def test_weak_form_directional_derivatives(rng, p):
    dom = GridDomain(rng.random((7, 5)) < 0.75, 0.15)
    u = Field(dom, rng.standard_normal(dom.n_active))
    L = p_laplacian(u, p).values
    for _ in range(20):
        phi = rng.standard_normal(dom.n_active)
        s = 1e-6
        fd = (dirichlet_energy(Field(dom, u.values + s * phi), p) - dirichlet_energy(Field(dom, u.values - s * phi), p)) / (2 * s * p)
        assert dom.cell_volume * L @ phi == pytest.approx(fd, rel=1e-6)


def test_eigen_residual_exact_pair():
    n = 24
    dom = GridDomain.interval(n)
    A = dom.stencil_matrix.toarray()
    w, V = np.linalg.eigh(A)
    for k in range(3):
        u = normalize(Field(dom, V[:, k]), 2)
        assert eigen_residual(u, w[k], 2) <= 1e-10


@pytest.mark.parametrize("p", EXPONENTS)
def test_eigen_residual_positive_off_critical(rng, p):
    dom = GridDomain.box((5, 5))
    u = normalize(Field(dom, rng.random(dom.n_active)), p)
    assert eigen_residual(u, rayleigh(u, p), p) > 0


def test_eigen_residual_lambda_shift():
    n = 16
    dom = GridDomain.interval(n)
    w, V = np.linalg.eigh(dom.stencil_matrix.toarray())
    u = normalize(Field(dom, V[:, 0]), 2)
    expect = lp_norm(Field(dom, np.abs(u.values)), 2)
    assert eigen_residual(u, w[0] + 1, 2) == pytest.approx(expect, rel=1e-8)


def test_scaling_law(rng):
    m = rng.random((6, 8)) < 0.7
    u_vals = rng.standard_normal(int(m.sum()))
    for p in EXPONENTS:
        for t in (0.5, 3.0):
            a = GridDomain(m, 0.1)
            b = a.scaled(t)
            ra = rayleigh(Field(a, u_vals), p)
            rb = rayleigh(Field(b, u_vals), p)
            assert rb == pytest.approx(t ** (-p) * ra, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1.05, 6.0),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
)
def test_strong_monotonicity_property(p, xi, eta):
    xi, eta = np.array(xi), np.array(eta)
    gap = monotonicity_gap(xi, eta, p)
    bound = monotonicity_lower_bound(xi, eta, p)
    assert gap >= bound - 1e-12 * max(1.0, abs(gap), abs(bound))


@settings(max_examples=50, deadline=None)
@given(st.floats(1.1, 4.0), st.integers(0, 2**31 - 1))
def test_picone_nonnegative_property(p, seed):
    r = np.random.default_rng(seed)
    dom = GridDomain(r.random((6, 6)) < 0.8 if r.random() < 0.5 else np.ones(12, bool), 0.2)
    u = Field(dom, r.random(dom.n_active))
    v = Field(dom, r.random(dom.n_active))
    assert picone_integrand(u, v, p).min() >= -1e-12
