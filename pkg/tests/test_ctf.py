import numpy as np
import pytest

from causalgen import ctf, scm
from causalgen.ctf import CtfRequest, counterfactual_paths, ctf_probability, reconstruction_paths
from causalgen.model import CausalVae
from causalgen.oracle import InterventionSpec, ctf_belief_recursion


def make_request(checkpoint, pair_spec, intervention_value=0.0, horizon=3,
                 n_samples=256, seed=0, history_seed=60):
    t_len = checkpoint.config.sequence_length
    t_int = t_len - horizon - 1
    factual = scm.simulate(pair_spec, 1, t_int + 1, seed=history_seed)
    return CtfRequest(
        checkpoint,
        factual,
        InterventionSpec("X", t_int, intervention_value),
        horizon=horizon,
        n_samples=n_samples,
        seed=seed,
    )


def test_paths_shape_and_determinism(small_checkpoint, pair_spec):
    request = make_request(small_checkpoint, pair_spec)
    a = counterfactual_paths(request)
    b = counterfactual_paths(request)
    t_len = request.factual.length + request.horizon
    assert a.values.shape == (request.n_samples, t_len, 2)
    assert np.array_equal(a.values, b.values)


def test_null_intervention_matches_factual_valued_pin(small_checkpoint, pair_spec):
    base = make_request(small_checkpoint, pair_spec)
    factual_value = float(base.factual.values[0, -1, 0])
    null_request = CtfRequest(
        base.checkpoint, base.factual,
        InterventionSpec("X", base.intervention.time_index, factual_value),
        horizon=base.horizon, n_samples=base.n_samples, seed=base.seed,
    )
    twice = counterfactual_paths(null_request)
    again = counterfactual_paths(null_request)
    assert np.array_equal(twice.values, again.values)


def test_past_matches_reconstruction_bitwise(small_checkpoint, pair_spec):
    request = make_request(small_checkpoint, pair_spec, intervention_value=2.0)
    cf = counterfactual_paths(request)
    recon = reconstruction_paths(request)
    t_int = request.intervention.time_index
    assert np.array_equal(cf.values[:, :t_int, :], recon.values[:, :t_int, :])
    # and the pin holds exactly at the intervention index
    assert np.all(cf.values[:, t_int, 0] == 2.0)


def test_non_descendant_variable_is_untouched(small_checkpoint, pair_spec):
    t_len = small_checkpoint.config.sequence_length
    factual = scm.simulate(pair_spec, 1, t_len - 2, seed=3)
    request = CtfRequest(
        small_checkpoint, factual,
        InterventionSpec("Y", factual.length - 1, -1.5),
        horizon=2, n_samples=128, seed=4,
    )
    cf = counterfactual_paths(request)
    recon = reconstruction_paths(request)
    assert np.array_equal(cf.values[:, :, 0], recon.values[:, :, 0])
    assert not np.array_equal(cf.values[:, :, 1], recon.values[:, :, 1])


def test_counterfactual_mean_tracks_oracle(quality_checkpoint, pair_spec):
    t_int = 4
    factual = scm.simulate(pair_spec, 1, t_int + 1, seed=15)
    intervention = InterventionSpec("X", t_int, 0.0)
    request = CtfRequest(
        quality_checkpoint, factual, intervention, horizon=1, n_samples=4096, seed=2
    )
    paths = counterfactual_paths(request)
    y_next = paths.values[:, t_int + 1, 1]
    y_t = factual.values[0, -1, 1]
    assert abs(y_next.mean() - 0.7 * y_t) <= 0.1


def test_probability_sure_event(small_checkpoint, pair_spec):
    request = make_request(small_checkpoint, pair_spec)
    estimate = ctf_probability(request, threshold=-1e300, target="Y", step=1)
    assert estimate.probability == 1.0
    assert estimate.n_samples == request.n_samples


def test_direction_complementarity(small_checkpoint, pair_spec):
    request = make_request(small_checkpoint, pair_spec, n_samples=512)
    greater = ctf_probability(request, 0.3, "Y", 2, "greater")
    less = ctf_probability(request, 0.3, "Y", 2, "less")
    assert abs(greater.probability + less.probability - 1.0) <= 1.0 / 512


def test_estimates_converge_with_samples(small_checkpoint, pair_spec):
    small = ctf_probability(
        make_request(small_checkpoint, pair_spec, n_samples=1000, seed=8),
        0.0, "Y", 2, "greater",
    )
    large = ctf_probability(
        make_request(small_checkpoint, pair_spec, n_samples=100_000, seed=8),
        0.0, "Y", 2, "greater",
    )
    combined = np.hypot(small.std_error, large.std_error)
    assert abs(small.probability - large.probability) <= 4.0 * combined


def test_request_validation(small_checkpoint, pair_spec):
    t_len = small_checkpoint.config.sequence_length
    factual = scm.simulate(pair_spec, 1, t_len - 1, seed=5)
    with pytest.raises(ValueError, match="exceeds the trained window"):
        CtfRequest(small_checkpoint, factual,
                   InterventionSpec("X", factual.length - 1, 0.0),
                   horizon=2, n_samples=8, seed=0).validate()
    with pytest.raises(ValueError, match="unknown intervention variable"):
        CtfRequest(small_checkpoint, factual,
                   InterventionSpec("Q", factual.length - 1, 0.0),
                   horizon=1, n_samples=8, seed=0).validate()
    with pytest.raises(ValueError, match="last factual index"):
        CtfRequest(small_checkpoint, factual,
                   InterventionSpec("X", 0, 0.0),
                   horizon=1, n_samples=8, seed=0).validate()
    with pytest.raises(ValueError, match="one sequence"):
        CtfRequest(small_checkpoint, scm.simulate(pair_spec, 2, 3, seed=5),
                   InterventionSpec("X", 2, 0.0),
                   horizon=1, n_samples=8, seed=0).validate()


def test_step_bounds_checked(small_checkpoint, pair_spec):
    request = make_request(small_checkpoint, pair_spec, horizon=2)
    with pytest.raises(ValueError, match="outside"):
        ctf_probability(request, 0.0, "Y", 3)
