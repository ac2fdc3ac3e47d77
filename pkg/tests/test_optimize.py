import numpy as np
import pytest

from knightwalras.optimize import ConcaveProgram, grid_oracle, kkt_certificate, lp_feasibility, maximize_concave


def quad_program(center, lower, upper, **kw):
    center = np.asarray(center, float)
    return ConcaveProgram(
        lambda x: np.atleast_1d(-np.sum((np.asarray(x) - center) ** 2, axis=-1))[..., None]
        if np.asarray(x).ndim == 2 else np.array([-np.sum((x - center) ** 2)]),
        lambda x: (-2 * (np.asarray(x) - center))[None, :],
        lower, upper, **kw)


def test_box_projection():
    res = maximize_concave(quad_program([2.0, -1.0, 0.5], np.zeros(3), np.ones(3)))
    assert res.optimal
    np.testing.assert_allclose(res.point, [1.0, 0.0, 0.5], atol=1e-9)
    assert res.certificate_gap < 1e-7


def test_min_of_linear_pieces_against_grid():
    A = np.array([[1.0, 2.0], [3.0, 1.0], [2.0, 2.0]])

    def pieces(x):
        return np.asarray(x) @ A.T

    prog = ConcaveProgram(pieces, lambda x: A, np.zeros(2), np.full(2, 5.0),
                          A_ub=np.array([[1.0, 1.0]]), b_ub=np.array([3.0]))
    res = maximize_concave(prog)
    oracle = grid_oracle(prog, 601, lipschitz=3.0)
    assert res.value >= oracle.value - 1e-9
    assert res.value - oracle.value <= oracle.certificate_gap + 1e-9


def test_equality_constraint_and_kkt():
    prog = quad_program([1.0, 1.0], np.zeros(2), np.full(2, 3.0),
                        A_eq=np.array([[1.0, -1.0]]), b_eq=np.array([1.0]))
    res = maximize_concave(prog)
    np.testing.assert_allclose(res.point, [1.5, 0.5], atol=1e-8)
    kkt, gap = kkt_certificate(prog, res.point)
    assert gap < 1e-7


def test_infeasible_program():
    prog = quad_program([0.0, 0.0], np.zeros(2), np.ones(2), A_ub=np.array([[1.0, 1.0]]), b_ub=np.array([-1.0]))
    assert maximize_concave(prog).status == "infeasible"


def test_lp_feasibility_witness_and_farkas():
    ok = lp_feasibility(A_ub=np.array([[1.0, 1.0]]), b_ub=np.array([1.0]), n=2)
    assert ok.feasible and ok.witness.sum() <= 1 + 1e-9
    bad = lp_feasibility(A_ub=np.array([[1.0, 1.0]]), b_ub=np.array([-1.0]), n=2)
    assert not bad.feasible
    y = np.asarray(bad.certificate["y"])
    # Farkas: y >= 0, A^T y >= 0 and b^T y < 0
    assert np.all(y >= -1e-12) and y @ np.array([-1.0]) < 0


def test_grid_cap():
    prog = quad_program(np.zeros(4), np.zeros(4), np.ones(4))
    with pytest.raises(MemoryError):
        grid_oracle(prog, 1000, point_cap=10**6)
