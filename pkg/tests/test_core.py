"""Finite spaces, distributions, kernels and distances."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcircuits import (
    Dist,
    FiniteSpace,
    Kernel,
    ValueFn,
    compose_kernels,
    direct_sum,
    pair_with_policy,
    product_space,
    sup_norm_diff,
    tensor_kernels,
    tv_distance,
    unit_space,
)
from dcircuits.errors import SpaceMismatch, StochasticityError
from dcircuits.instances import random_stochastic

sizes = st.integers(min_value=1, max_value=5)
seeds = st.integers(min_value=0, max_value=2**31 - 1)


def kernel(rng, x, y, sparsity=0.0):
    return Kernel(x, y, random_stochastic(rng, (x.size, y.size), sparsity))


class TestFiniteSpace:
    def test_labels_unique(self):
        with pytest.raises(ValueError):
            FiniteSpace("S", ("a", "a"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            FiniteSpace("S", ())

    def test_index_roundtrip(self):
        s = FiniteSpace("S", ("x", "y", "z"))
        assert [s.index(lab) for lab in s.labels] == [0, 1, 2]

    def test_product_labels_row_major(self):
        p = product_space(FiniteSpace("A", ("a", "b")), FiniteSpace("B", ("0", "1", "2")))
        assert p.size == 6
        assert p.labels[:3] == ("(a|0)", "(a|1)", "(a|2)")

    def test_direct_sum(self):
        s = direct_sum(FiniteSpace.of_size("X", 2), FiniteSpace.of_size("Z", 1))
        assert s.size == 3 and s.kind == "sum"

    def test_unit(self):
        assert unit_space().size == 1


class TestDist:
    def test_point_and_uniform(self):
        s = FiniteSpace.of_size("S", 4)
        assert Dist.point(s, 2).probs.tolist() == [0, 0, 1, 0]
        assert np.allclose(Dist.uniform(s).probs, 0.25)

    def test_rejects_negative(self):
        with pytest.raises(StochasticityError):
            Dist(FiniteSpace.of_size("S", 2), [1.5, -0.5])

    def test_small_deviation_renormalized(self):
        d = Dist(FiniteSpace.of_size("S", 2), [0.5, 0.5 + 5e-10])
        assert abs(d.probs.sum() - 1.0) <= 1e-15

    def test_large_deviation_rejected(self):
        with pytest.raises(StochasticityError):
            Dist(FiniteSpace.of_size("S", 2), [0.5, 0.5 + 1e-6])

    def test_nan_rejected(self):
        with pytest.raises(StochasticityError):
            Dist(FiniteSpace.of_size("S", 2), [np.nan, 1.0])


class TestKernel:
    def test_shape_checked(self):
        s = FiniteSpace.of_size("S", 2)
        with pytest.raises((SpaceMismatch, StochasticityError, ValueError)):
            Kernel(s, s, [[1.0, 0.0, 0.0]])

    def test_identity_left_unit(self, rng):
        x, y = FiniteSpace.of_size("x", 3), FiniteSpace.of_size("y", 4)
        k = kernel(rng, x, y)
        assert compose_kernels(Kernel.identity(x), k).allclose(k)

    def test_identity_right_unit(self):
        s2 = FiniteSpace.of_size("s", 2)
        k = Kernel(FiniteSpace.of_size("x", 1), s2, [[0.5, 0.5]])
        assert compose_kernels(k, Kernel.identity(s2)).allclose(k)

    def test_compose_double_sum_oracle(self, rng):
        s = FiniteSpace.of_size("s", 3)
        k, l = kernel(rng, s, s), kernel(rng, s, s)
        out = compose_kernels(k, l).rows
        for x, z in itertools.product(range(3), range(3)):
            assert out[x, z] == pytest.approx(sum(k.rows[x, y] * l.rows[y, z] for y in range(3)), abs=1e-15)

    def test_compose_mismatch(self, rng):
        x, y = FiniteSpace.of_size("x", 2), FiniteSpace.of_size("y", 2)
        with pytest.raises(SpaceMismatch):
            compose_kernels(kernel(rng, x, y), kernel(rng, x, y))

    def test_tensor_deltas(self):
        a, b = FiniteSpace.of_size("a", 2), FiniteSpace.of_size("b", 3)
        t = tensor_kernels(Kernel.deterministic(a, a, [1, 0]), Kernel.deterministic(b, b, [2, 0, 1]))
        assert np.all((t.rows == 0) | (t.rows == 1))
        assert t.rows[0, 1 * 3 + 2] == 1.0

    def test_tensor_identity_blocks(self, rng):
        a, b = FiniteSpace.of_size("a", 2), FiniteSpace.of_size("b", 3)
        k2 = kernel(rng, b, b)
        t = tensor_kernels(Kernel.identity(a), k2).rows
        assert np.array_equal(t[:3, :3], k2.rows) and np.array_equal(t[3:, 3:], k2.rows)
        assert not t[:3, 3:].any()

    def test_tensor_entrywise(self, rng):
        s = FiniteSpace.of_size("s", 2)
        k1, k2 = kernel(rng, s, s), kernel(rng, s, s)
        t = tensor_kernels(k1, k2).rows
        for x1, x2, y1, y2 in itertools.product(range(2), repeat=4):
            assert t[2 * x1 + x2, 2 * y1 + y2] == k1.rows[x1, y1] * k2.rows[x2, y2]

    def test_pair_with_policy_uniform(self):
        s, a = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("a", 2)
        pk = pair_with_policy(Kernel(s, a, [[0.5, 0.5], [0.5, 0.5]]))
        assert pk.rows.tolist() == [[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]]

    def test_pair_with_deterministic_policy(self):
        s, a = FiniteSpace.of_size("s", 3), FiniteSpace.of_size("a", 2)
        pk = pair_with_policy(Kernel.deterministic(s, a, [0, 1, 1]))
        assert ((pk.rows > 0).sum(axis=1) == 1).all()

    def test_pair_then_dynamics_matches_closed_loop(self, rng):
        s, a = FiniteSpace.of_size("s", 3), FiniteSpace.of_size("a", 2)
        pi = kernel(rng, s, a)
        p = random_stochastic(rng, (3, 2, 3))
        dyn = Kernel(product_space(s, a), s, p.reshape(6, 3))
        direct = np.einsum("sa,sat->st", pi.rows, p)
        assert np.allclose(compose_kernels(pair_with_policy(pi), dyn).rows, direct, atol=1e-15)


class TestDistances:
    def test_tv_identical(self):
        d = Dist.uniform(FiniteSpace.of_size("s", 3))
        assert tv_distance(d, d) == 0.0

    def test_tv_disjoint_is_two(self):
        s = FiniteSpace.of_size("s", 2)
        assert tv_distance(Dist.point(s, 0), Dist.point(s, 1)) == 2.0

    def test_tv_space_mismatch(self):
        with pytest.raises(SpaceMismatch):
            tv_distance(Dist.point(FiniteSpace.of_size("s", 2), 0), Dist.point(FiniteSpace.of_size("t", 2), 0))

    @given(seeds, st.integers(min_value=1, max_value=10))
    def test_tv_equals_sign_vector_sup(self, seed, n):
        rng = np.random.default_rng(seed)
        s = FiniteSpace.of_size("s", n)
        mu, nu = Dist(s, rng.dirichlet(np.ones(n))), Dist(s, rng.dirichlet(np.ones(n)))
        brute = max(abs(np.dot(f, mu.probs - nu.probs)) for f in itertools.product((-1.0, 1.0), repeat=n))
        assert tv_distance(mu, nu) == pytest.approx(brute, abs=1e-14)

    def test_sup_norm_diff(self, rng):
        s = FiniteSpace.of_size("s", 5)
        v = ValueFn(s, rng.normal(size=5))
        assert sup_norm_diff(v, v) == 0.0
        assert sup_norm_diff(v, ValueFn(s, v.values + 0.3)) == pytest.approx(0.3)
        w = ValueFn(s, rng.normal(size=5))
        assert sup_norm_diff(v, w) == max(abs(a - b) for a, b in zip(v.values, w.values))

    def test_value_radius_enforced(self):
        s = FiniteSpace.of_size("s", 2)
        with pytest.raises(ValueError):
            ValueFn(s, [1.0, 3.0], radius=2.0)


class TestKernelProperties:
    @given(seeds, sizes, sizes, sizes, sizes)
    def test_compose_associative(self, seed, a, b, c, d):
        rng = np.random.default_rng(seed)
        w, x, y, z = (FiniteSpace.of_size(n, k) for n, k in zip("wxyz", (a, b, c, d)))
        k1, k2, k3 = kernel(rng, w, x, 0.3), kernel(rng, x, y, 0.3), kernel(rng, y, z, 0.3)
        lhs = compose_kernels(compose_kernels(k1, k2), k3)
        rhs = compose_kernels(k1, compose_kernels(k2, k3))
        assert np.abs(lhs.rows - rhs.rows).max() <= 1e-12

    @given(seeds, sizes, sizes, sizes)
    def test_interchange_law(self, seed, a, b, c):
        rng = np.random.default_rng(seed)
        x, y, z = FiniteSpace.of_size("x", a), FiniteSpace.of_size("y", b), FiniteSpace.of_size("z", c)
        k1, l1, k2, l2 = kernel(rng, x, y), kernel(rng, y, z), kernel(rng, z, x), kernel(rng, x, y)
        lhs = compose_kernels(tensor_kernels(k1, k2), tensor_kernels(l1, l2))
        rhs = tensor_kernels(compose_kernels(k1, l1), compose_kernels(k2, l2))
        assert np.abs(lhs.rows - rhs.rows).max() <= 1e-12

    @given(seeds, sizes, sizes)
    def test_rows_stay_stochastic(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = FiniteSpace.of_size("x", a), FiniteSpace.of_size("y", b)
        out = tensor_kernels(compose_kernels(kernel(rng, x, y), kernel(rng, y, x)), kernel(rng, y, y)).rows
        assert (out >= 0).all() and np.abs(out.sum(axis=1) - 1).max() <= 1e-12

    @given(seeds, st.integers(min_value=1, max_value=8))
    def test_tv_test_function_bound(self, seed, n):
        rng = np.random.default_rng(seed)
        s = FiniteSpace.of_size("s", n)
        mu, nu = Dist(s, rng.dirichlet(np.ones(n))), Dist(s, rng.dirichlet(np.ones(n)))
        f = rng.uniform(-3, 3, n)
        assert abs(mu.expect(f) - nu.expect(f)) <= np.abs(f).max() * tv_distance(mu, nu) + 1e-12
