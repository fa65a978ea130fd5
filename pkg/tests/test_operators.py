"""Generators, semigroups, resolvents, and the box constants."""

import math

import numpy as np
import pytest
import scipy.linalg

from condlab.environment import ConductanceField, Constant, Lattice, TwoPoint, Uniform, sample_field
from condlab.errors import BackendError, ParameterError, SolverError
from condlab.operators import (
    DENSE_LIMIT,
    FieldFunction,
    box_spectral_gap,
    build_generator,
    dirichlet_form,
    resolvent_solve,
    save_operator_coo,
    save_spectrum_csv,
    semigroup_apply,
    simple_generator,
    sobolev_constant,
)


def _random_op(d, n, seed, law=None):
    field = sample_field(law or Uniform(1.0, 3.0), Lattice(d, n), seed)
    return field, build_generator(field, "conductance")


@pytest.mark.parametrize("n", [3, 4, 5])
def test_unit_ring_spectrum_closed_form(n):
    field = sample_field(Constant(1.0), Lattice(1, n), 0)
    lam, vecs = build_generator(field, "conductance").eigensystem()
    expected = np.sort(2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n))
    assert np.max(np.abs(lam - expected)) < 1e-10
    # eigenvectors orthonormal and complete
    assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)


def test_generator_rows_sum_to_zero_and_match_conductances():
    field, op = _random_op(2, 6, 11)
    dense = op.matrix.toarray()
    assert np.max(np.abs(dense.sum(axis=1))) < 1e-12
    assert np.allclose(dense, dense.T)
    lat = field.lattice
    x = lat.site_index((2, 3))
    assert dense[x, lat.shift(x, 0, 1)] == field.omega[0, x]
    assert dense[x, lat.shift(x, 1, -1)] == field.omega[1, lat.shift(x, 1, -1)]
    assert dense[x, x] == -field.rates()[x]


def test_simple_generator_ignores_the_field():
    lat = Lattice(2, 5)
    op0 = simple_generator(lat)
    dense = op0.matrix.toarray()
    x = lat.site_index((1, 1))
    assert dense[x, x] == -4.0
    assert sorted(dense[x][dense[x] > 0]) == [1.0, 1.0, 1.0, 1.0]


def test_semigroup_property_and_mean_preservation():
    _, op = _random_op(1, 12, 3)
    rng = np.random.default_rng(0)
    g = rng.normal(size=12)
    one_step = semigroup_apply(op, semigroup_apply(op, g, 0.7), 0.4).values
    two_step = semigroup_apply(op, g, 1.1).values
    assert np.max(np.abs(one_step - two_step)) < 1e-12
    for t in (0.0, 0.5, 3.0):
        assert semigroup_apply(op, g, t).values.mean() == pytest.approx(g.mean(), abs=1e-13)
    assert np.max(np.abs(semigroup_apply(op, g, 0.0).values - g)) < 1e-12
    with pytest.raises(ParameterError):
        semigroup_apply(op, g, -0.1)


def test_uniformization_matches_dense_backend():
    _, op = _random_op(2, 7, 21, law=TwoPoint(0.5, 1.0, 4.0))
    rng = np.random.default_rng(1)
    g = rng.normal(size=49)
    for t in (0.05, 0.9, 4.0):
        a = semigroup_apply(op, g, t, backend="dense").values
        b = semigroup_apply(op, g, t, backend="uniformization").values
        assert np.max(np.abs(a - b)) < 1e-10
    with pytest.raises(ParameterError):
        semigroup_apply(op, g, 1.0, backend="magic")


def test_semigroup_matches_expm_oracle():
    _, op = _random_op(1, 9, 5)
    g = np.random.default_rng(2).normal(size=9)
    dense = op.matrix.toarray()
    for t in (0.3, 2.0):
        ref = scipy.linalg.expm(t * dense) @ g
        assert np.max(np.abs(semigroup_apply(op, g, t).values - ref)) < 1e-10


def test_dirichlet_form_hand_value_and_domination():
    field = sample_field(Constant(1.0), Lattice(1, 3), 0)
    op = build_generator(field, "conductance")
    assert dirichlet_form(op, np.array([1.0, 0.0, 0.0])) == pytest.approx(2.0 / 3.0)

    for seed in range(5):
        field, op = _random_op(2, 6, 100 + seed, law=TwoPoint(0.4, 1.0, 5.0))
        op0 = simple_generator(field.lattice)
        g = np.random.default_rng(seed).normal(size=36)
        # conductances >= 1, so the weighted form dominates the simple one
        assert dirichlet_form(op0, g) <= dirichlet_form(op, g) + 1e-12
        assert dirichlet_form(op, g) >= 0.0


def test_resolvent_solves_the_defining_equation():
    _, op = _random_op(2, 8, 13)
    g = np.random.default_rng(3).normal(size=64)
    for mu in (5.0, 0.5, 1e-3):
        u = resolvent_solve(op, g, mu).values
        recovered = mu * u - op.matrix @ u
        assert np.max(np.abs(recovered - g)) < 1e-8 * np.linalg.norm(g)
    with pytest.raises(ParameterError):
        resolvent_solve(op, g, 0.0)


def test_resolvent_matches_dense_solve():
    _, op = _random_op(1, 11, 8)
    g = np.random.default_rng(4).normal(size=11)
    dense = op.matrix.toarray()
    for mu in (1.0, 0.01):
        ref = np.linalg.solve(mu * np.eye(11) - dense, g)
        assert np.max(np.abs(resolvent_solve(op, g, mu).values - ref)) < 1e-8


def test_resolvent_zero_input_short_circuits():
    _, op = _random_op(1, 6, 9)
    out = resolvent_solve(op, np.zeros(6), 1.0).values
    assert np.array_equal(out, np.zeros(6))


def test_eigensystem_refuses_oversize_dense_work():
    lat = Lattice(1, DENSE_LIMIT + 1)
    field = ConductanceField(lat, np.ones((1, lat.n_sites)))
    op = build_generator(field, "conductance")
    with pytest.raises(BackendError):
        op.eigensystem()
    # but the semigroup still works through uniformization
    g = np.zeros(lat.n_sites)
    g[0] = 1.0
    out = semigroup_apply(op, g, 0.5).values
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


def test_box_spectral_gap_matches_cosine_form_and_is_d_independent():
    for n in (1, 2, 3, 7, 20):
        m = 2 * n + 1
        closed = 2.0 * (1.0 - math.cos(math.pi / m))
        assert box_spectral_gap(1, n) == pytest.approx(closed, rel=1e-12)
        assert box_spectral_gap(3, n) == box_spectral_gap(1, n)
    assert box_spectral_gap(1, 1) == pytest.approx(1.0, rel=1e-12)
    assert sobolev_constant(2, 4) == pytest.approx(4.0 / (16.0 * box_spectral_gap(2, 4)))


def test_operator_and_spectrum_serialization(tmp_path):
    _, op = _random_op(1, 5, 2)
    coo_path = tmp_path / "gen.txt"
    save_operator_coo(op, coo_path)
    lines = coo_path.read_text().splitlines()
    assert lines[0] == "# condlab-coo v1 generator"
    triplets = [line.split() for line in lines[1:]]
    dense = np.zeros((5, 5))
    for r, c, v in triplets:
        dense[int(r), int(c)] = float(v)
    assert np.allclose(dense, op.matrix.toarray(), atol=1e-9)

    spec_path = tmp_path / "spectrum.csv"
    save_spectrum_csv(op, spec_path)
    lines = spec_path.read_text().splitlines()
    assert lines[0] == "# condlab-csv v1 spectrum"
    assert lines[1] == "index,eigenvalue"
    vals = np.array([float(line.split(",")[1]) for line in lines[2:]])
    assert vals[0] == 0.0 and np.all(np.diff(vals) >= 0)


def test_field_function_wrapping():
    lat = Lattice(1, 4)
    f = FieldFunction(np.array([1.0, 2.0, 3.0, 4.0]), lat)
    assert f.mean() == pytest.approx(2.5)
    assert np.array_equal(np.asarray(f), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ParameterError):
        FieldFunction(np.ones(3), lat)
