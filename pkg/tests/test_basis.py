"""Fixed basis families: closed forms, identities, domains, orderings."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewmpi.basis import (BasisConfig, BasisDomainError, complex_kernel,
                           eval_fixed_basis, eval_fixed_basis_batch, jacobi,
                           legendre, make_config, radial_P)


def random_directions(rng, count, min_vz=0.75):
    """Unit vectors with v_z above the tightest family domain bound."""
    vz = rng.uniform(min_vz, 1.0, count)
    ang = rng.uniform(0, 2 * np.pi, count)
    r = np.sqrt(1.0 - vz**2)
    return np.stack([r * np.cos(ang), r * np.sin(ang), vz], axis=-1)


class TestOrthogonalPolynomials:
    def test_legendre_degree_zero_is_one(self):
        xs = np.linspace(-1, 1, 17)
        assert np.allclose(legendre(0, xs), 1.0)

    def test_legendre_degree_one_is_x(self):
        # expanding the closed-form sum at n=1 gives L1(x) = x
        assert legendre(1, 0.5) == pytest.approx(0.5, abs=1e-12)
        xs = np.linspace(-1, 1, 9)
        assert np.allclose(legendre(1, xs), xs, atol=1e-12)

    def test_orthogonality_by_quadrature(self):
        # 1024-point Gauss-Legendre quadrature of L2*L3 and L1*L3 over [-1, 1]
        nodes, weights = np.polynomial.legendre.leggauss(1024)
        for m, n in [(2, 3), (1, 3)]:
            integral = np.sum(weights * legendre(m, nodes) * legendre(n, nodes))
            assert abs(integral) < 1e-6

    def test_jacobi_b0_equals_legendre(self):
        xs = np.linspace(-1, 1, 101)
        for n in range(7):
            assert np.max(np.abs(jacobi(n, 0.0, xs) - legendre(n, xs))) < 1e-10

    def test_jacobi_known_low_degrees(self):
        xs = np.linspace(-1, 1, 11)
        assert np.allclose(jacobi(0, 2.0, xs), 1.0)
        # n=1, weight b: (x-1)/2*(1+b) + (x+1)/2
        b = 2.0
        expected = (xs - 1) / 2 * (1 + b) + (xs + 1) / 2
        assert np.allclose(jacobi(1, b, xs), expected, atol=1e-12)


class TestKernelAndRadial:
    def test_kernel_equator_point(self):
        re, im = complex_kernel(-1.0, 1, (1.0, 0.0, 0.0))
        assert re == pytest.approx(0.5, abs=1e-12)
        assert im == pytest.approx(0.0, abs=1e-12)

    def test_kernel_pole_vanishes(self):
        re, im = complex_kernel(-1.0, 1, (0.0, 0.0, 1.0))
        assert re == 0.0 and im == 0.0

    def test_kernel_domain_error_at_boundary(self):
        with pytest.raises(BasisDomainError):
            complex_kernel(0.0, 2, (0.0, 1.0, 0.0))

    @pytest.mark.parametrize("a,b,m,vz,expected", [
        (-1.0, 0.0, 1, 1.0, 0.5),
        (0.0, 0.0, 0, 1.0, 0.5),
        (1.0 / np.sqrt(2.0), 2.0, 1, 1.0, 1.0 / 3.0),
    ])
    def test_radial_plug_ins(self, a, b, m, vz, expected):
        assert radial_P(a, b, m, (0.0, 0.0, vz)) == pytest.approx(expected, abs=1e-12)

    def test_radial_rejects_degenerate_domain(self):
        with pytest.raises(ValueError):
            radial_P(1.0, 0.0, 1, (0, 0, 1))


class TestFixedFamilies:
    def test_sh_first_five_vanish_at_pole(self):
        vals = eval_fixed_basis(make_config("sh", 5), (0.0, 0.0, 1.0))
        assert np.allclose(vals, 0.0, atol=1e-15)

    def test_fs_at_pole(self):
        vals = eval_fixed_basis(make_config("fs", 4), (0.0, 0.0, 1.0))
        assert np.allclose(vals, [1.0, 0.0, 1.0, 0.0], atol=1e-15)

    def test_ts_graded_lex_ordering(self):
        vx, vy = 0.3, -0.2
        v = np.array([vx, vy, np.sqrt(1 - vx**2 - vy**2)])
        vals = eval_fixed_basis(make_config("ts", 6), v)
        expected = [vx, vy, vx**2, vx * vy, vy**2, vx**3]
        assert np.allclose(vals, expected, atol=1e-14)

    def test_jh_reduces_to_sh(self):
        # the generic ladder at (a, b) = (-1, 0) is the full-sphere family
        rng = np.random.default_rng(3)
        dirs = random_directions(rng, 100, min_vz=-0.95)
        jh = eval_fixed_basis_batch(BasisConfig("jh", 8, -1.0, 0.0), dirs)
        sh = eval_fixed_basis_batch(make_config("sh", 8), dirs)
        assert np.max(np.abs(jh - sh)) < 1e-9

    def test_jh_reduces_to_hsh(self):
        rng = np.random.default_rng(4)
        dirs = random_directions(rng, 100, min_vz=0.05)
        jh = eval_fixed_basis_batch(BasisConfig("jh", 8, 0.0, 0.0), dirs)
        hsh = eval_fixed_basis_batch(make_config("hsh", 8), dirs)
        assert np.max(np.abs(jh - hsh)) < 1e-9

    def test_printed_sh_terms_match_ladder(self):
        # the published five-term SH list: entries 1, 2, 5 equal the ladder;
        # entries 3, 4 are the ladder's radial factor renormalized to 1 at
        # v_z = 1, i.e. scaled by (b + 2m + 2)/(m + 1) = 2 for m = 1, b = 0
        rng = np.random.default_rng(5)
        for v in random_directions(rng, 20, min_vz=-0.9):
            vx, vy, vz = v
            vals = eval_fixed_basis(make_config("sh", 5), v)
            assert vals[0] == pytest.approx(vx / 2, abs=1e-9)
            assert vals[1] == pytest.approx(vy / 2, abs=1e-9)
            assert 2 * vals[2] == pytest.approx(vz * vx / 2, abs=1e-9)
            assert 2 * vals[3] == pytest.approx(vz * vy / 2, abs=1e-9)
            assert vals[4] == pytest.approx((vx**2 - vy**2) / 4, abs=1e-9)

    def test_zonal_shift_identity(self):
        # hemisphere radial factor at cos(theta) equals the full-sphere radial
        # factor at 2 cos(theta) - 1, for the first two frequency levels
        for vz in np.linspace(0.05, 1.0, 23):
            for m in (1, 2):
                hemi = radial_P(0.0, 0.0, m, (0, 0, vz))
                full = radial_P(-1.0, 0.0, m, (0, 0, 2 * vz - 1))
                assert hemi == pytest.approx(full, abs=1e-9)

    @pytest.mark.parametrize("family", ["sh", "hsh", "jh", "fs", "ts"])
    def test_truncation_prefix_property(self, family):
        rng = np.random.default_rng(6)
        dirs = random_directions(rng, 16)
        for n in range(1, 10):
            short = eval_fixed_basis_batch(make_config(family, n), dirs)
            longer = eval_fixed_basis_batch(make_config(family, n + 1), dirs)
            assert np.array_equal(short, longer[:, :n])

    def test_domain_masking_in_batches(self):
        dirs = np.array([[0.6, 0.0, 0.8], [0.8, 0.0, -0.6]])
        vals = eval_fixed_basis_batch(make_config("hsh", 4), dirs)
        assert np.all(vals[1] == 0.0)
        assert np.any(vals[0] != 0.0)

    def test_standalone_domain_violation_raises(self):
        with pytest.raises(BasisDomainError):
            eval_fixed_basis(make_config("hsh", 4), (0.8, 0.0, -0.6))

    def test_n_zero_means_no_view_dependence(self):
        assert eval_fixed_basis(make_config("sh", 0), (0, 0, 1)).shape == (0,)

    def test_learned_family_rejected_here(self):
        with pytest.raises(ValueError):
            eval_fixed_basis(make_config("learned", 4), (0, 0, 1))

    def test_family_domain_pins(self):
        with pytest.raises(ValueError):
            BasisConfig("sh", 4, a=0.0, b=0.0)
        cfg = make_config("jh", 4)
        assert cfg.a == pytest.approx(1 / np.sqrt(2))
        assert cfg.b == 2.0


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["sh", "hsh", "fs", "ts"]), st.integers(0, 12),
       st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
def test_vector_length_matches_truncation(family, n, vx, vy):
    vz = np.sqrt(max(1.0 - vx * vx - vy * vy, 0.0))
    if vz <= 0.05:
        return
    vals = eval_fixed_basis(make_config(family, n), (vx, vy, vz))
    assert vals.shape == (n,)
