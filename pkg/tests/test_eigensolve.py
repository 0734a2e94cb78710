import numpy as np
import pytest
import scipy.sparse as sp

from thinlayer import (
    AssembledOperator,
    GeometryFamily,
    SolverError,
    assemble_effective,
    assemble_full,
    build_patch,
    gershgorin_bounds,
    layer_geometry,
    lowest_eigenpairs,
    opnorm_estimate,
    renormalize,
    resolvent_apply,
    zero_layer_potential,
)
from thinlayer.convergence import TransverseMode


def test_interval_laplacian_classical_value():
    p = build_patch(GeometryFamily("segment", {"length": 1.0}), (199,))
    lam1 = lowest_eigenpairs(assemble_effective(p), 1).values[0]
    assert abs(lam1 - np.pi**2) / np.pi**2 < 1e-3


def test_identity_matrix_pairs():
    op = AssembledOperator.from_matrix(sp.eye_array(40, format="csr"))
    spec = lowest_eigenpairs(op, 3)
    assert np.allclose(spec.values, 1.0, atol=1e-12)
    gram = spec.vectors.T @ spec.vectors
    assert np.max(np.abs(gram - np.eye(3))) < 1e-10


def test_circle_effective_ground_state(circle_patch):
    p = build_patch(GeometryFamily("circle", {"radius": 1.0}), (256,))
    lam1 = lowest_eigenpairs(assemble_effective(p), 1).values[0]
    assert abs(lam1 + 0.25) < 5e-4


def test_dense_and_iterative_paths_agree(circle_patch):
    lay = layer_geometry(circle_patch, 0.1, 9)
    H = renormalize(assemble_full(lay, zero_layer_potential(lay)))
    assert H.n_dof < 4000
    dense = lowest_eigenpairs(H, 5, dense_cutoff=10_000)
    sparse = lowest_eigenpairs(H, 5, dense_cutoff=100)
    assert sparse.meta["method"] == "shift-invert-lanczos"
    assert np.max(np.abs(dense.values - sparse.values)) < 1e-8


def test_seed_independence(circle_patch):
    lay = layer_geometry(circle_patch, 0.1, 9)
    H = renormalize(assemble_full(lay, zero_layer_potential(lay)))
    vals = [
        lowest_eigenpairs(H, 3, dense_cutoff=100, seed=s, tol=1e-12).values
        for s in (1, 2, 3)
    ]
    assert np.max(np.abs(vals[0] - vals[1])) < 1e-10
    assert np.max(np.abs(vals[0] - vals[2])) < 1e-10


def test_residuals_and_orthonormality(sphere_patch):
    heff = assemble_effective(sphere_patch)
    spec = lowest_eigenpairs(heff, 6, tol=1e-10)
    hi = gershgorin_bounds(heff.matrix)[1]
    assert np.max(spec.residuals) < 1e-8 * max(1.0, abs(hi))
    gram = spec.vectors.conj().T @ spec.vectors
    assert np.max(np.abs(gram - np.eye(6))) < 1e-10
    assert np.isrealobj(spec.values)


def test_too_many_pairs_rejected():
    op = AssembledOperator.from_matrix(sp.eye_array(5, format="csr"))
    with pytest.raises(SolverError):
        lowest_eigenpairs(op, 9)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------


def test_resolvent_trivial_cases():
    zero = AssembledOperator.from_matrix(sp.csr_array((2, 2)))
    v = np.array([1.0, 2.0])
    assert np.allclose(resolvent_apply(zero, 2.0, v), v / 2.0, atol=1e-14)
    diag = AssembledOperator.from_matrix(sp.csr_array(np.diag([1.0, 3.0])))
    out = resolvent_apply(diag, 1.0, np.array([1.0, 1.0]))
    assert np.allclose(out, [0.5, 0.25], atol=1e-14)


def test_resolvent_residual_and_cache(circle_patch):
    lay = layer_geometry(circle_patch, 0.1, 9)
    H = renormalize(assemble_full(lay, zero_layer_potential(lay)))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(H.n_dof)
    x = resolvent_apply(H, 2.0, v)
    res = np.linalg.norm(H.matrix @ x + 2.0 * x - v)
    assert res <= 1e-10 * np.linalg.norm(v)
    assert len(H._factors) == 1
    resolvent_apply(H, 2.0, v)
    assert len(H._factors) == 1  # factorization reused
    resolvent_apply(H, 3.0, v)
    assert len(H._factors) == 2


def test_resolvent_rejects_shift_at_eigenvalue():
    diag = AssembledOperator.from_matrix(sp.csr_array(np.diag([1.0, 3.0])))
    lowest_eigenpairs(diag, 1)  # caches lambda_min
    with pytest.raises(SolverError, match="resolvent set"):
        resolvent_apply(diag, -1.0, np.array([1.0, 1.0]))


# ---------------------------------------------------------------------------
# operator norm estimation
# ---------------------------------------------------------------------------


def test_opnorm_scaled_identity():
    est = opnorm_estimate(lambda v: 2.0 * v, 30, iters=10, seed=1)
    assert abs(est.value - 2.0) < 1e-12
    assert est.monotone


def test_opnorm_diagonal_dominant():
    d = np.array([1.0, 0.5, 0.1])
    est = opnorm_estimate(lambda v: d * v, 3, iters=60, seed=1)
    assert abs(est.value - 1.0) < 1e-6
    assert est.monotone


def test_opnorm_difference_map_against_dense(circle_patch):
    # coarse grid so the dense norm is exact and cheap
    p = build_patch(GeometryFamily("circle", {"radius": 1.0}), (48,))
    lay = layer_geometry(p, 0.1, 9)
    Hren = renormalize(assemble_full(lay, zero_layer_potential(lay)))
    heff = assemble_effective(p)
    mode = TransverseMode.from_count(9)
    k = 2.0

    def mv(v):
        x = resolvent_apply(Hren, k, v)
        y = resolvent_apply(heff, k, mode.project_ground(v))
        return x - mode.embed(y)

    n = Hren.n_dof
    M = np.zeros((n, n))
    eye = np.eye(n)
    for j in range(n):
        M[:, j] = mv(eye[:, j])
    dense_norm = np.max(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T))))
    est = opnorm_estimate(mv, n, iters=200, seed=3)
    assert est.value <= dense_norm * (1 + 1e-9)
    assert est.value >= dense_norm * (1 - 5e-3)
    assert 0 < est.value < 1


def test_opnorm_flags_nonmonotone_map():
    # a nilpotent (non-self-adjoint) map drives the iterate norm to zero,
    # which the monotonicity check must flag
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    est = opnorm_estimate(lambda v: M @ v, 2, iters=6, seed=0)
    assert not est.monotone


def test_dense_and_iterative_agree_on_comparison_operator(circle_patch):
    from thinlayer import assemble_comparison, potential_grids

    lay = layer_geometry(circle_patch, 0.1, 9)
    pot = zero_layer_potential(lay)
    op, _ = assemble_comparison(lay, pot, +1, potentials=potential_grids(lay))
    dense = lowest_eigenpairs(op, 4, dense_cutoff=10_000)
    sparse = lowest_eigenpairs(op, 4, dense_cutoff=100)
    assert np.max(np.abs(dense.values - sparse.values)) < 1e-8


def test_dense_threshold_env_override(monkeypatch):
    from thinlayer.eigensolve import dense_threshold

    monkeypatch.delenv("THINLAYER_DENSE_THRESHOLD", raising=False)
    assert dense_threshold() == 4000
    monkeypatch.setenv("THINLAYER_DENSE_THRESHOLD", "123")
    assert dense_threshold() == 123
    assert dense_threshold(77) == 77  # explicit argument wins
