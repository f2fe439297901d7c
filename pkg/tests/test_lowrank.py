import numpy as np
import pytest

from charcom.lowrank import LowRankUpdate, fuse, fused_apply, make_lowrank, materialize


def matmul_oracle(b, a):
    """Triple-loop matrix product, independent of numpy's implementation."""
    out = np.zeros((b.shape[0], a.shape[1]))
    for i in range(b.shape[0]):
        for j in range(a.shape[1]):
            acc = 0.0
            for k in range(b.shape[1]):
                acc += b[i, k] * a[k, j]
            out[i, j] = acc
    return out


def test_fresh_update_materializes_to_zero():
    u = make_lowrank(2, 2, 1, seed=3)
    assert np.array_equal(materialize(u), np.zeros((2, 2)))


def test_make_lowrank_deterministic():
    u1 = make_lowrank(4, 4, 4, seed=7)
    u2 = make_lowrank(4, 4, 4, seed=7)
    assert np.array_equal(u1.b, u2.b)
    assert np.array_equal(u1.a, u2.a)


def test_make_lowrank_shapes():
    u = make_lowrank(3, 5, 2, seed=1)
    assert u.b.shape == (3, 2)
    assert u.a.shape == (2, 5)
    assert u.rank == 2


@pytest.mark.parametrize("d_out,d_in,rank", [(0, 3, 1), (3, 0, 1), (3, 3, 0)])
def test_make_lowrank_rejects_degenerate(d_out, d_in, rank):
    with pytest.raises(ValueError):
        make_lowrank(d_out, d_in, rank)


def test_materialize_hand_case():
    u = LowRankUpdate(b=np.array([[1.0], [2.0]]), a=np.array([[3.0, 4.0]]))
    assert np.array_equal(materialize(u), np.array([[3.0, 4.0], [6.0, 8.0]]))


def test_materialize_identity_b_reproduces_a():
    a = np.arange(6.0).reshape(2, 3) + 1
    u = LowRankUpdate(b=np.eye(2), a=a)
    np.testing.assert_allclose(materialize(u), matmul_oracle(np.eye(2), a))
    np.testing.assert_allclose(materialize(u), a)


def test_materialize_matches_loop_oracle_random():
    rng = np.random.default_rng(11)
    b = rng.normal(size=(5, 3))
    a = rng.normal(size=(3, 4))
    np.testing.assert_allclose(
        materialize(LowRankUpdate(b=b, a=a)), matmul_oracle(b, a), rtol=1e-12
    )


def test_factor_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        LowRankUpdate(b=np.zeros((2, 3)), a=np.zeros((2, 4)))


def test_fuse_empty_set_is_bit_identical():
    base = np.random.default_rng(0).normal(size=(3, 3))
    out = fuse(base, [])
    assert np.array_equal(out, base)
    assert out is not base


def test_fuse_zero_weight_is_bit_identical():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(4, 4))
    u = LowRankUpdate(b=rng.normal(size=(4, 2)), a=rng.normal(size=(2, 4)))
    assert np.array_equal(fuse(base, [(u, 0.0)]), base)


def test_fuse_hand_case():
    base = np.zeros((2, 2))
    u = LowRankUpdate(b=np.array([[1.0], [2.0]]), a=np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(
        fuse(base, [(u, 0.5)]), np.array([[1.5, 2.0], [3.0, 4.0]])
    )


def test_fuse_does_not_mutate_base():
    base = np.ones((2, 2))
    snapshot = base.copy()
    u = LowRankUpdate(b=np.ones((2, 1)), a=np.ones((1, 2)))
    fuse(base, [(u, 1.0)])
    assert np.array_equal(base, snapshot)


def test_fuse_rejects_shape_mismatch():
    u = LowRankUpdate(b=np.ones((3, 1)), a=np.ones((1, 3)))
    with pytest.raises(ValueError):
        fuse(np.zeros((2, 2)), [(u, 1.0)])


def test_fuse_rejects_out_of_range_weight():
    u = LowRankUpdate(b=np.ones((2, 1)), a=np.ones((1, 2)))
    with pytest.raises(ValueError):
        fuse(np.zeros((2, 2)), [(u, 1.5)])


def test_fuse_linear_in_weight():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(6, 6))
    u = LowRankUpdate(b=rng.normal(size=(6, 2)), a=rng.normal(size=(2, 6)))
    delta_full = fuse(base, [(u, 1.0)]) - base
    for w in (0.0, 0.25, 0.5, 1.0):
        np.testing.assert_allclose(
            fuse(base, [(u, w)]) - base, w * delta_full, atol=1e-12
        )


def test_fuse_order_independent():
    rng = np.random.default_rng(9)
    base = rng.normal(size=(8, 8))
    entries = [
        (LowRankUpdate(b=rng.normal(size=(8, 2)), a=rng.normal(size=(2, 8))),
         float(w))
        for w in rng.uniform(0, 1, size=4)
    ]
    ref = fuse(base, entries)
    for perm_seed in range(5):
        perm = np.random.default_rng(perm_seed).permutation(len(entries))
        shuffled = [entries[i] for i in perm]
        np.testing.assert_allclose(fuse(base, shuffled), ref, atol=1e-9)


def test_fused_apply_empty_identity():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(fused_apply(np.eye(3), [], x), x)


def test_fused_apply_matches_materialized_path():
    rng = np.random.default_rng(21)
    for _ in range(20):
        d_out = int(rng.integers(1, 65))
        d_in = int(rng.integers(1, 65))
        base = rng.normal(size=(d_out, d_in))
        entries = []
        for _ in range(int(rng.integers(0, 5))):
            r = int(rng.integers(1, 9))
            entries.append(
                (LowRankUpdate(b=rng.normal(size=(d_out, r)),
                               a=rng.normal(size=(r, d_in))),
                 float(rng.uniform(0, 1)))
            )
        x = rng.normal(size=d_in)
        expected = fuse(base, entries) @ x
        got = fused_apply(base, entries, x)
        np.testing.assert_allclose(got, expected, rtol=1e-6, atol=1e-9)


def test_fused_apply_superposition():
    rng = np.random.default_rng(33)
    base = rng.normal(size=(5, 5))
    u1 = LowRankUpdate(b=rng.normal(size=(5, 2)), a=rng.normal(size=(2, 5)))
    u2 = LowRankUpdate(b=rng.normal(size=(5, 3)), a=rng.normal(size=(3, 5)))
    x = rng.normal(size=5)
    both = fused_apply(base, [(u1, 0.3), (u2, 0.7)], x)
    part1 = fused_apply(base, [(u1, 1.0)], x) - base @ x
    part2 = fused_apply(base, [(u2, 1.0)], x) - base @ x
    np.testing.assert_allclose(both, base @ x + 0.3 * part1 + 0.7 * part2,
                               rtol=1e-12)


def test_fused_apply_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        fused_apply(np.eye(3), [], np.ones(4))


def test_scale_factor_applies():
    u = LowRankUpdate(b=np.array([[1.0], [2.0]]), a=np.array([[3.0, 4.0]]),
                      scale=0.5)
    np.testing.assert_allclose(materialize(u), np.array([[1.5, 2.0], [3.0, 4.0]]))
