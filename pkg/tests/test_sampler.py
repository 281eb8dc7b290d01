import numpy as np
import pytest

from conftest import random_dataset
from misspec_subsampling import (AliasTable, BasisSpec, algorithm1, algorithm2,
                                 draw_with_replacement, two_stage, uniform_probs)
from misspec_subsampling.probs import METHODS
from misspec_subsampling.sampler import (cdf_draw, method_probs, pilot_stage,
                                         second_stage, stream)


def test_stream_reproducible_and_distinct():
    a = stream(7, 1, 2).random(5)
    assert np.array_equal(a, stream(7, 1, 2).random(5))
    assert not np.array_equal(a, stream(7, 2, 1).random(5))
    assert not np.array_equal(a, stream(8, 1, 2).random(5))


def test_alias_draws_concatenate():
    phi = np.array([0.1, 0.0, 0.6, 0.3])
    t = AliasTable(phi)
    g1 = np.random.default_rng(3)
    parts = np.concatenate([t.draw(7, g1), t.draw(5, g1)])
    whole = t.draw(12, np.random.default_rng(3))
    assert np.array_equal(parts, whole)


def test_alias_never_draws_zero_mass():
    phi = np.array([0.5, 0.0, 0.5, 0.0])
    idx = AliasTable(phi).draw(20000, np.random.default_rng(0))
    assert set(np.unique(idx)) <= {0, 2}


def test_alias_frequencies(rng):
    phi = rng.dirichlet(np.ones(10))
    idx = AliasTable(phi).draw(200000, rng)
    freq = np.bincount(idx, minlength=10) / idx.size
    np.testing.assert_allclose(freq, phi, atol=0.005)


def test_cdf_draw_frequencies(rng):
    phi = np.array([0.2, 0.5, 0.3])
    freq = np.bincount(cdf_draw(phi, 100000, rng), minlength=3) / 100000
    np.testing.assert_allclose(freq, phi, atol=0.01)


def test_alias_rejects_bad_weights():
    with pytest.raises(ValueError):
        AliasTable([0.0, 0.0])
    with pytest.raises(ValueError):
        AliasTable([0.5, -0.1])


def test_draw_records_phi(rng):
    phi = rng.dirichlet(np.ones(20))
    d = draw_with_replacement(phi, 30, rng)
    assert len(d) == 30
    np.testing.assert_array_equal(d.phis, phi[d.indices])
    with pytest.raises(ValueError):
        draw_with_replacement(phi, 0, rng)


def test_algorithm1_uniform_gaussian(rng):
    full, _ = random_dataset(rng, "gaussian", n=500, d=3)
    fit, draw = algorithm1(full, uniform_probs(500), 100, "gaussian", rng)
    sub = full.subset(draw.indices)
    ols = np.linalg.lstsq(sub.X, sub.y, rcond=None)[0]
    np.testing.assert_allclose(fit.beta, ols, atol=1e-10)
    with pytest.raises(ValueError):
        algorithm1(full, uniform_probs(500), 2, "gaussian", rng)


def test_uniform_two_stage_equals_one_uniform_draw(rng):
    full, _ = random_dataset(rng, "poisson", n=400, d=3)
    res = two_stage(full, "poisson", 60, 90, "random", rng=stream(5, 0))
    fit, draw = algorithm1(full, uniform_probs(400), 150, "poisson", stream(5, 0))
    assert np.array_equal(res.indices, draw.indices)
    np.testing.assert_allclose(res.beta_final.beta, fit.beta, atol=1e-8)


@pytest.mark.parametrize("method", METHODS)
def test_method_probs_valid(rng, method):
    full, _ = random_dataset(rng, "bernoulli", n=400, d=3)
    pilot = pilot_stage(full, "bernoulli", 80, rng)
    alpha = 3.0 if method in ("rlmamse-pow", "rlmamse-logodds") else None
    pv = method_probs(full, "bernoulli", pilot, method, alpha)
    assert pv.phi.shape == (400,)
    assert abs(pv.phi.sum() - 1) < 1e-12
    assert np.all(pv.phi > 0)


def test_scaled_methods_need_alpha(rng):
    full, _ = random_dataset(rng, "bernoulli", n=300, d=3)
    pilot = pilot_stage(full, "bernoulli", 80, rng)
    with pytest.raises(ValueError):
        method_probs(full, "bernoulli", pilot, "rlmamse-pow")
    with pytest.raises(ValueError):
        method_probs(full, "bernoulli", pilot, "unknown")


def test_pilot_without_basis(rng):
    full, _ = random_dataset(rng, "poisson", n=300, d=3)
    pilot = pilot_stage(full, "poisson", 50, rng, basis=None)
    assert pilot.f_tilde is None and pilot.ext_fit is None
    with pytest.raises(ValueError):
        method_probs(full, "poisson", pilot, "rlmamse")


def test_second_stage_weights(rng):
    full, _ = random_dataset(rng, "gaussian", n=300, d=3)
    pilot = pilot_stage(full, "gaussian", 50, rng)
    pv = method_probs(full, "gaussian", pilot, "lopt")
    draw2, fit = second_stage(full, "gaussian", pilot, pv, 100, rng)
    idx = np.concatenate([pilot.draw.indices, draw2.indices])
    w = 1.0 / np.concatenate([pilot.draw.phis, draw2.phis])
    X, y = full.X[idx], full.y[idx]
    oracle = np.linalg.solve((X.T * w) @ X, (X.T * w) @ y)
    np.testing.assert_allclose(fit.beta, oracle, atol=1e-9)


def test_algorithm2_outputs(rng):
    full, _ = random_dataset(rng, "bernoulli", n=2000, d=3)
    res = algorithm2(full, "bernoulli", 150, 250, "rlmamse-pow", 5.0, rng=rng)
    assert res.indices.shape == (400,)
    assert res.draw1.stage == "stage1" and res.draw2.stage == "stage2"
    assert res.beta_final.converged
    assert res.loss is not None and res.loss.n_rows == 400
    assert res.f_tilde.f.shape == (2000,)


def test_algorithm2_rejects_small_pilot(rng):
    full, _ = random_dataset(rng, "bernoulli", n=500, d=3)
    with pytest.raises(ValueError, match="r0"):
        algorithm2(full, "bernoulli", 5, 100, rng=rng)
    with pytest.raises(ValueError):
        algorithm2(full, "bernoulli", 100, 100, "aopt", rng=rng)
