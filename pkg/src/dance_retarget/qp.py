"""Dense strictly convex QP front-end over quadprog's Goldfarb-Idnani active-set solver."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import quadprog

from dance_retarget.errors import InfeasibleQpError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    multipliers: np.ndarray
    active: np.ndarray  # indices of active constraints in the stacked order


def solve_dense_qp(
    hessian: np.ndarray,
    gradient: np.ndarray,
    eq_matrix: Optional[np.ndarray] = None,
    eq_vector: Optional[np.ndarray] = None,
    ineq_matrix: Optional[np.ndarray] = None,
    ineq_vector: Optional[np.ndarray] = None,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
) -> QpResult:
    """
    Solve ``min 1/2 x'Px + q'x`` s.t. ``A x = b``, ``G x <= h``, ``lower <= x <= upper``.

    Infinite bound entries are dropped. Constraints are stacked as
    equalities, general inequalities, lower bounds, upper bounds when
    reporting multipliers.

    Raises:
        InfeasibleQpError: If the constraints are inconsistent
        NumericalError: If the Hessian is not positive definite
    """
    hessian = np.asarray(hessian, dtype=float)
    n = hessian.shape[0]
    rows = []
    rhs = []
    n_eq = 0
    if eq_matrix is not None and len(eq_matrix):
        rows.append(np.asarray(eq_matrix, dtype=float).reshape(-1, n))
        rhs.append(np.asarray(eq_vector, dtype=float).reshape(-1))
        n_eq = rows[-1].shape[0]
    if ineq_matrix is not None and len(ineq_matrix):
        rows.append(-np.asarray(ineq_matrix, dtype=float).reshape(-1, n))
        rhs.append(-np.asarray(ineq_vector, dtype=float).reshape(-1))
    identity = np.eye(n)
    if lower is not None:
        finite = np.isfinite(lower)
        rows.append(identity[finite])
        rhs.append(np.asarray(lower, dtype=float)[finite])
    if upper is not None:
        finite = np.isfinite(upper)
        rows.append(-identity[finite])
        rhs.append(-np.asarray(upper, dtype=float)[finite])

    constraint = np.vstack(rows) if rows else np.zeros((0, n))
    bound = np.concatenate(rhs) if rhs else np.zeros(0)
    linear = -np.asarray(gradient, dtype=float)
    try:
        if len(bound):
            x, objective, _, iterations, multipliers, active = quadprog.solve_qp(
                hessian, linear, constraint.T.copy(), bound, n_eq
            )
        else:
            x, objective, _, iterations, multipliers, active = quadprog.solve_qp(hessian, linear)
    except ValueError as exc:
        message = str(exc)
        if "inconsistent" in message:
            raise InfeasibleQpError(f"QP infeasible: {message}") from exc
        raise NumericalError(f"QP failed: {message}") from exc

    stationarity = hessian @ x - linear - constraint.T @ multipliers
    slack = constraint @ x - bound
    violation = np.concatenate([np.abs(slack[:n_eq]), np.maximum(-slack[n_eq:], 0.0)])
    complementarity = np.abs(multipliers[n_eq:] * slack[n_eq:])
    kkt = max(
        float(np.max(np.abs(stationarity), initial=0.0)),
        float(np.max(violation, initial=0.0)),
        float(np.max(complementarity, initial=0.0)),
    )
    return QpResult(
        x=x,
        objective=float(objective),
        iterations=int(iterations[0]),
        kkt_residual=kkt,
        multipliers=multipliers,
        active=np.asarray(active[active > 0], dtype=int) - 1,
    )
