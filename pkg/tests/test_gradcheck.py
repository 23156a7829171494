import numpy as np
import pytest

from swinlip import autodiff as ad
from swinlip import ops
from swinlip.autodiff import Tensor, make
from swinlip.errors import NondeterminismError, TapeError
from swinlip.gradcheck import finite_diff_check, relative_error
from swinlip.gradsuite import OP_CHECKS, failures, projected, run_suite
from swinlip.rng import Rng


def T64(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def test_sum_of_squares_gradient_is_twice_x():
    x = T64([1.0, 2.0])
    with ad.Tape() as tape:
        x.requires_grad = True
        loss = ad.sum_(ad.square(x))
    tape.backward(loss)
    np.testing.assert_array_equal(tape.grad(x), [2.0, 4.0])
    report = finite_diff_check(lambda v: ad.sum_(ad.square(v)), T64([1.0, 2.0]))
    assert report.passed and report.max_error < 1e-8


def test_inputs_keep_their_trainable_flag():
    x = T64([1.0, 2.0])
    finite_diff_check(lambda v: ad.sum_(v * v), x)
    assert x.requires_grad is False


def _square_with_wrong_backward(x):
    out = x.data * x.data
    return make("bad_square", out, (x,), lambda g, n: (g * 3.0 * x.data,))


def test_corrupted_backward_is_caught_and_named():
    def bad_check(rng, tol):
        x = T64(rng.uniform((4,), 0.5, 1.5))
        return finite_diff_check(lambda v: ad.sum_(_square_with_wrong_backward(v)), x, tolerance=tol)

    reports = run_suite(checks={"square": OP_CHECKS["sum/mean/square"], "bad_square": bad_check},
                        model=False)
    assert failures(reports) == ["bad_square"]
    assert "FAIL" in str(reports["bad_square"])


def test_nondeterministic_function_raises():
    rng = Rng(0)
    with pytest.raises(NondeterminismError):
        finite_diff_check(lambda v: ad.sum_(ops.dropout(v, 0.5, rng, training=True)),
                          T64(np.arange(1.0, 65.0)))


def test_non_scalar_function_raises():
    with pytest.raises(TapeError):
        finite_diff_check(lambda v: v * 2.0, T64([1.0, 2.0]))


def test_relu_kink_is_skipped_not_failed():
    x = T64([0.0, 1.0, -1.0])
    report = finite_diff_check(lambda v: ad.sum_(ops.relu(v)), x, step=1e-3)
    assert report.skipped == 1
    assert report.checked == 2 and report.passed


def test_all_coordinates_at_kinks_is_a_failure():
    report = finite_diff_check(lambda v: ad.sum_(ops.relu(v)), T64([0.0]))
    assert report.checked == 0 and not report.passed


def test_max_entries_limits_coordinates():
    report = finite_diff_check(lambda v: ad.sum_(v * v), T64(np.ones(50)), max_entries=4, rng=Rng(0))
    assert report.checked == 4


def test_relative_error_floor():
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_projection_is_fixed_across_calls(rng):
    f = projected(lambda v: v * 1.0, rng)
    x = T64(np.ones((3, 2)))
    assert float(f(x).data) == float(f(x).data)


@pytest.mark.parametrize("name", sorted(OP_CHECKS))
def test_every_op_passes_at_seed_zero(name):
    report = OP_CHECKS[name](Rng(0), 1e-4)
    assert report.passed, str(report)
