import numpy as np
import pytest

from dance_retarget.errors import InfeasibleQpError, NumericalError
from dance_retarget.qp import solve_dense_qp


def test_unconstrained_minimum():
    result = solve_dense_qp(np.diag([2.0, 4.0]), np.array([-2.0, 4.0]))
    assert np.allclose(result.x, [1.0, -1.0])
    assert result.kkt_residual < 1e-9


def test_equality_constraint_splits_evenly():
    result = solve_dense_qp(
        np.eye(2), np.zeros(2), eq_matrix=np.array([[1.0, 1.0]]), eq_vector=np.array([1.0])
    )
    assert np.allclose(result.x, [0.5, 0.5])
    assert 0 in result.active


def test_inequality_and_equality_together():
    result = solve_dense_qp(
        np.eye(2),
        np.zeros(2),
        eq_matrix=np.array([[1.0, 1.0]]),
        eq_vector=np.array([1.0]),
        ineq_matrix=np.array([[1.0, 0.0]]),
        ineq_vector=np.array([0.2]),
    )
    assert np.allclose(result.x, [0.2, 0.8])
    assert result.kkt_residual < 1e-9


def test_infinite_bounds_are_ignored():
    result = solve_dense_qp(
        np.eye(2),
        np.array([-3.0, 3.0]),
        lower=np.array([-np.inf, -1.0]),
        upper=np.array([2.0, np.inf]),
    )
    assert np.allclose(result.x, [2.0, -1.0])


def test_inconsistent_constraints_raise():
    with pytest.raises(InfeasibleQpError):
        solve_dense_qp(
            np.eye(1),
            np.zeros(1),
            lower=np.array([1.0]),
            upper=np.array([0.0]),
        )


def test_indefinite_hessian_raises():
    with pytest.raises(NumericalError):
        solve_dense_qp(np.diag([1.0, -1.0]), np.zeros(2))
