import numpy as np
import pytest

from byzres.exceptions import DimensionError, NonFiniteError, RankDeficientError
from byzres.numeric import (
    SeededRng, as_stack, as_vector, derive_seed, finite_difference_check, l2_norm,
    solve_least_squares, splitmix64, vec_add, vec_dot, vec_scale, vec_sub,
)


def test_vector_ops():
    assert vec_add([1, 2], [3, 4]).tolist() == [4, 6]
    assert vec_sub([1, 2], [3, 4]).tolist() == [-2, -2]
    assert vec_scale([1, 2], 2).tolist() == [2, 4]
    assert l2_norm([3, 4]) == 5
    assert vec_dot([1, 0], [0, 1]) == 0


def test_vector_ops_reject_mismatch_and_overflow():
    with pytest.raises(DimensionError):
        vec_add([1, 2], [1, 2, 3])
    with pytest.raises(NonFiniteError):
        vec_scale([1e308], 10.0)
    with pytest.raises(NonFiniteError):
        as_vector([1.0, float("nan")])


def test_as_stack_checks_shape():
    assert as_stack([[1, 2], [3, 4]]).shape == (2, 2)
    with pytest.raises((DimensionError, ValueError)):
        as_stack([[1, 2], [3]])


def test_least_squares_examples():
    assert np.allclose(solve_least_squares(np.eye(2), [3, 4]), [3, 4])
    assert np.allclose(solve_least_squares([[1], [1], [1]], [1, 2, 3]), [2])


def test_least_squares_matches_normal_equations():
    rng = SeededRng(0)
    H = rng.normal(size=(8, 2))
    y = rng.normal(size=8)
    w = solve_least_squares(H, y)
    oracle = np.linalg.solve(H.T @ H, H.T @ y)
    assert np.allclose(w, oracle, atol=1e-8)


def test_least_squares_residual_orthogonal():
    rng = SeededRng(1)
    for _ in range(100):
        H = rng.normal(size=(int(rng.integers(3, 12)), 3))
        y = rng.normal(size=H.shape[0])
        r = y - H @ solve_least_squares(H, y)
        assert np.linalg.norm(H.T @ r) <= 1e-8 * max(np.linalg.norm(H.T @ y), 1e-300)


def test_least_squares_rank_deficient():
    with pytest.raises(RankDeficientError) as exc:
        solve_least_squares([[1, 2], [2, 4], [3, 6]], [1, 2, 3])
    assert exc.value.rank == 1


def test_finite_difference_check():
    assert finite_difference_check(lambda w: 0.5 * w @ w, lambda w: w, [0.3, -1.2, 2.0]) <= 1e-7
    wrong = finite_difference_check(lambda w: 0.5 * w @ w, lambda w: 2 * w, [0.3, -1.2, 2.0])
    assert abs(wrong - 0.5) < 0.01 or abs(wrong - 1.0) < 0.01
    with pytest.raises(ValueError):
        finite_difference_check(lambda w: 0.0, lambda w: w, [1.0], eps=0.1)


def test_rng_reproducible_streams():
    a = SeededRng(42).random(10**6)
    b = SeededRng(42).random(10**6)
    assert np.array_equal(a, b)
    assert not np.array_equal(SeededRng(42).child(1).random(5), SeededRng(42).child(2).random(5))


def test_rng_open_uniform_and_known_values():
    x = SeededRng(3).open_uniform(0.0, 1e-5, 10_000)
    assert np.all(x > 0) and np.all(x < 1e-5)
    # PCG64 via SeedSequence is a documented, portable stream
    expected = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7))).random(3)
    assert np.array_equal(SeededRng(7).random(3), expected)


def test_splitmix_and_derived_seeds():
    # reference value of the SplitMix64 finalizer for input 0 (first output of seed 0)
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    seeds = {derive_seed(5, i) for i in range(1000)}
    assert len(seeds) == 1000
