import json
import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conceptnav.concepts import (
    Instruction,
    SpatialConceptModel,
    concept_log_likelihood,
    emission_log_field,
    load_model,
    model_to_dict,
    reward_field,
    save_model,
    word_likelihood,
)
from conceptnav.errors import InstructionError, ModelFormatError, ValidationError
from conceptnav.gridmap import CellState, OccupancyGrid, build_costmap

from conftest import open_costmap, place_model


def single_model(words=("kitchen", "other"), W=(0.5, 0.5), mu=(2.3, 1.7), sigma=None):
    sigma = np.eye(2) if sigma is None else np.asarray(sigma)
    return SpatialConceptModel(words, [1.0], [list(W)], [[1.0]], [list(mu)], [sigma])


def test_word_likelihood_single_word():
    assert word_likelihood(single_model(), {"kitchen": 1}, 0) == pytest.approx(math.log(0.5), abs=1e-15)


def test_word_likelihood_product_rule():
    m = single_model(words=("a", "b"))
    assert word_likelihood(m, {"a": 2, "b": 1}, 0) == pytest.approx(3 * math.log(0.5), abs=1e-15)


def test_oov_words_are_ignored_with_warning():
    m = single_model()
    with pytest.warns(UserWarning, match="pizza"):
        value = word_likelihood(m, {"kitchen": 1, "pizza": 2}, 0)
    assert value == pytest.approx(math.log(0.5))


def test_empty_instruction_is_rejected():
    with pytest.raises(InstructionError):
        word_likelihood(single_model(), {}, 0)


def test_all_oov_instruction_is_rejected():
    with pytest.warns(UserWarning), pytest.raises(InstructionError):
        word_likelihood(single_model(), {"pizza": 1}, 0)


def test_instruction_stop_words_and_counts():
    instr = Instruction.from_words("go to the bedroom bedroom north".split(), ["go", "to", "the"])
    assert instr.counts == {"bedroom": 2, "north": 1}
    with pytest.raises(InstructionError):
        Instruction({"a": -1})


def test_single_component_field_is_gaussian_plus_constant():
    cm = open_costmap(6, 5)
    m = single_model(W=(0.25, 0.75))
    field = emission_log_field(m, cm, "kitchen")
    centers = cm.grid.cell_centers()
    ref = multivariate_normal(m.means[0], m.covariances[0]).logpdf(centers) + math.log(0.25)
    np.testing.assert_allclose(field, ref, rtol=0, atol=1e-12)
    row, col = np.unravel_index(np.argmax(field), field.shape)
    assert cm.grid.world_to_cell(*m.means[0]) == (col, row)


def test_obstacle_cell_is_minus_inf():
    cells = np.zeros((4, 4), dtype=np.int8)
    cells[1, 2] = CellState.OCCUPIED
    cm = build_costmap(OccupancyGrid.from_array(cells), 0.0, 0.0)
    field = emission_log_field(single_model(), cm, "kitchen")
    assert field[1, 2] == -np.inf
    assert np.isfinite(np.delete(field.ravel(), 1 * 4 + 2)).all()
    assert not field.flags.writeable


def test_costmap_factor_adds_its_log():
    cm = open_costmap(3, 3)
    values = cm.values.copy()
    values[0, 0] = 0.5
    half = type(cm)(cm.grid, values, 0.0, 0.0)
    m = single_model()
    diff = emission_log_field(m, half, "kitchen") - emission_log_field(m, cm, "kitchen")
    assert diff[0, 0] == pytest.approx(math.log(0.5), abs=1e-12)
    assert np.all(diff.ravel()[1:] == 0)


def test_field_matches_direct_probability_sum(rng):
    """Log-domain evaluation against the plain sum of probability products."""
    for _ in range(10):
        L, K, V = 3, 4, 5
        vocab = [f"w{j}" for j in range(V)]
        W = rng.dirichlet(np.ones(V), size=L)
        phi = rng.dirichlet(np.ones(K), size=L)
        pi = rng.dirichlet(np.ones(L))
        mu = rng.uniform(0, 6, size=(K, 2))
        A = rng.normal(size=(K, 2, 2))
        sig = A @ A.transpose(0, 2, 1) + 0.5 * np.eye(2)
        sig = (sig + sig.transpose(0, 2, 1)) / 2
        m = SpatialConceptModel(vocab, pi, W, phi, mu, sig)
        counts = {f"w{j}": int(c) for j, c in enumerate(rng.integers(0, 3, V))}
        counts["w0"] += 1
        cm = open_costmap(6, 6)
        field = emission_log_field(m, cm, counts)
        for (col, row) in [(0, 0), (3, 2), (5, 5)]:
            x = cm.grid.cell_to_world((col, row))
            total = 0.0
            for l in range(L):
                mult = math.prod(W[l, j] ** counts[f"w{j}"] for j in range(V))
                for k in range(K):
                    total += mult * pi[l] * phi[l, k] * multivariate_normal(mu[k], sig[k]).pdf(x)
            assert field[row, col] == pytest.approx(math.log(total), abs=1e-9)


def test_uniform_words_make_field_instruction_independent():
    m = place_model([((1, 1), {}), ((4, 4), {})], ["a", "b", "c"])
    cm = open_costmap(6, 6)
    fa = emission_log_field(m, cm, "a")
    fb = emission_log_field(m, cm, {"b": 2, "c": 1})
    diff = fb - fa
    np.testing.assert_allclose(diff, diff[0, 0], atol=1e-12)
    assert diff[0, 0] == pytest.approx(2 * math.log(1 / 3), abs=1e-12)


def test_word_order_does_not_matter():
    m = place_model([((1, 1), {"a": 0.6}), ((4, 4), {"b": 0.6})], ["a", "b", "c"])
    cm = open_costmap(6, 6)
    np.testing.assert_array_equal(emission_log_field(m, cm, "a b a"), emission_log_field(m, cm, "b a a"))


def test_reward_field_equals_emission_field():
    m = place_model([((1, 1), {"a": 0.6}), ((4, 4), {"b": 0.6})], ["a", "b", "c"])
    cm = open_costmap(6, 6)
    np.testing.assert_array_equal(reward_field(m, cm, "a"), emission_log_field(m, cm, "a"))


def test_same_named_rooms_give_two_local_maxima():
    m = place_model([((2.5, 2.5), {"bedroom": 0.9}), ((12.5, 2.5), {"bedroom": 0.9}),
                     ((7.5, 8.5), {"kitchen": 0.9})],
                    ["bedroom", "kitchen"], sigma=1.0)
    cm = open_costmap(15, 10)
    field = emission_log_field(m, cm, "bedroom")
    for mx, my in [(2.5, 2.5), (12.5, 2.5)]:
        col, row = cm.grid.world_to_cell(mx, my)
        patch = field[row - 1:row + 2, col - 1:col + 2]
        assert field[row, col] == patch.max()
        assert (patch == patch.max()).sum() == 1


def test_concept_log_likelihood_shape():
    m = place_model([((1, 1), {"a": 0.6}), ((4, 4), {"b": 0.6})], ["a", "b"])
    assert concept_log_likelihood(m, np.zeros((3, 4, 2)), "a").shape == (3, 4)


def test_model_rejects_bad_invariants():
    with pytest.raises(ValidationError):
        single_model(W=(0.5, 0.6))
    with pytest.raises(ValidationError):
        single_model(sigma=[[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        single_model(sigma=[[1.0, 2.0], [2.0, 1.0]])


def test_model_round_trip():
    m = place_model([((1, 1), {"a": 0.6}), ((4, 4), {"b": 0.6})], ["a", "b", "c"], mixture=[0.3, 0.7])
    data = save_model(m)
    again = load_model(data)
    assert again == m
    assert save_model(again) == data


def test_model_mixture_off_by_1e3_is_rejected():
    doc = model_to_dict(single_model())
    doc["pi"] = [1.001]
    with pytest.raises(ValidationError):
        load_model(json.dumps(doc))


def test_model_phi_length_mismatch_is_schema_error():
    doc = model_to_dict(single_model())
    doc["concepts"][0]["phi"] = [0.5, 0.5]
    with pytest.raises(ModelFormatError, match="phi"):
        load_model(json.dumps(doc))


@pytest.mark.parametrize("change", [{"version": 2}, {"format": "other"}])
def test_model_version_mismatch(change):
    doc = dict(model_to_dict(single_model()), **change)
    with pytest.raises(ModelFormatError):
        load_model(json.dumps(doc))


def test_model_missing_key_and_bad_json():
    doc = model_to_dict(single_model())
    del doc["positions"]
    with pytest.raises(ModelFormatError):
        load_model(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(b"{not json")
