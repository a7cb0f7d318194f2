from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    cosine_matrix_oracle,
    minmax_oracle,
    reduce_oracle,
    score_oracle,
    threshold_oracle,
    weight_pipeline_oracle,
)
from streetscope.errors import (
    DegenerateMatrixError,
    NoSignalError,
    SchemaMismatchError,
    UnknownLabelError,
    ValidationError,
)
from streetscope.locatability import (
    LabelSchema,
    LocatabilityWeights,
    SegmentationProfile,
    SimilarityMatrix,
    build_similarity_matrix,
    build_weights,
    class_proportion_curve,
    filter_by_locatability,
    load_profiles_jsonl,
    load_weights_json,
    locatability_score,
    minmax_normalize,
    partition_scores,
    reduce_to_weights,
    save_weights_json,
    score_profiles,
    threshold_zero,
)


def _profile(image_id, ratios, schema="s1"):
    return SegmentationProfile(image_id=image_id, label_schema_id=schema, ratios=np.array(ratios))


def _weights(values, schema="s1", tau=0.5):
    return LocatabilityWeights(weights=np.array(values), label_schema_id=schema, tau=tau)


# --- similarity matrix ------------------------------------------------------


def test_identical_unit_vectors_have_similarity_one():
    v = np.array([[0.6, 0.8]])
    matrix = build_similarity_matrix(v, v)
    assert matrix.values[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert matrix.stage == "raw"


def test_orthogonal_vectors_have_similarity_zero():
    matrix = build_similarity_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert matrix.values[0, 0] == 0.0


def test_three_by_two_fixture_matches_dot_product_oracle():
    clues = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.6, 0.8, 0.0]]
    labels = [[0.0, 0.0, 1.0], [0.8, 0.6, 0.0]]
    matrix = build_similarity_matrix(np.array(clues), np.array(labels))
    expected = cosine_matrix_oracle(clues, labels)
    assert matrix.values.shape == (3, 2)
    assert np.max(np.abs(matrix.values - np.array(expected))) < 1e-12


def test_dimension_mismatch_rejected():
    with pytest.raises(ValidationError, match="dimensionality"):
        build_similarity_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))


def test_zero_and_non_unit_vectors_rejected():
    with pytest.raises(ValidationError, match="zero clue"):
        build_similarity_matrix(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    with pytest.raises(ValidationError, match="not unit-normalized"):
        build_similarity_matrix(np.array([[3.0, 4.0]]), np.array([[1.0, 0.0]]))


# --- min-max normalization --------------------------------------------------


def test_minmax_affine_map():
    matrix = SimilarityMatrix(values=np.array([[0.0, 1.0], [2.0, 1.0]]), stage="raw")
    out = minmax_normalize(matrix)
    assert out.values.tolist() == [[0.0, 0.5], [1.0, 0.5]]
    assert out.stage == "normalized"


def test_minmax_is_identity_when_zero_and_one_present():
    matrix = SimilarityMatrix(values=np.array([[0.0, 1.0], [1.0, 0.0]]), stage="raw")
    assert minmax_normalize(matrix).values.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_minmax_random_matrix_matches_oracle():
    rng = np.random.default_rng(5)
    values = rng.uniform(-1, 1, size=(5, 7))
    out = minmax_normalize(SimilarityMatrix(values=values, stage="raw"))
    expected = np.array(minmax_oracle(values.tolist()))
    assert np.max(np.abs(out.values - expected)) < 1e-12


def test_minmax_rejects_constant_matrix():
    matrix = SimilarityMatrix(values=np.full((3, 3), 0.7), stage="raw")
    with pytest.raises(DegenerateMatrixError, match="embedding service"):
        minmax_normalize(matrix)


def test_minmax_rejects_wrong_stage():
    matrix = SimilarityMatrix(values=np.array([[0.0, 1.0]]), stage="normalized")
    with pytest.raises(ValidationError, match="stage"):
        minmax_normalize(matrix)


# --- thresholding -----------------------------------------------------------


def test_threshold_zero_tau_zero_is_identity():
    values = np.array([[0.0, 0.3], [0.9, 1.0]])
    out = threshold_zero(SimilarityMatrix(values=values, stage="normalized"), 0.0)
    assert out.values.tolist() == values.tolist()
    assert out.stage == "thresholded"
    assert out.tau == 0.0


def test_threshold_tau_one_keeps_only_exact_ones():
    values = np.array([[0.999999, 1.0], [0.5, 1.0]])
    out = threshold_zero(SimilarityMatrix(values=values, stage="normalized"), 1.0)
    assert out.values.tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_threshold_boundary_value_survives():
    values = np.array([[0.2, 0.5, 0.7]])
    out = threshold_zero(SimilarityMatrix(values=values, stage="normalized"), 0.5)
    assert out.values.tolist() == [[0.0, 0.5, 0.7]]


def test_threshold_matches_oracle_and_is_monotone_in_tau():
    rng = np.random.default_rng(11)
    values = rng.uniform(0, 1, size=(6, 4))
    previous = None
    for tau in (0.0, 0.25, 0.5, 0.75, 1.0):
        out = threshold_zero(SimilarityMatrix(values=values, stage="normalized"), tau)
        expected = np.array(threshold_oracle(values.tolist(), tau))
        assert np.array_equal(out.values, expected)
        if previous is not None:
            assert np.all(out.values <= previous)
        previous = out.values


# --- reduction to weights ---------------------------------------------------


def test_reduce_symmetric_identity_matrix():
    matrix = SimilarityMatrix(values=np.eye(2), stage="thresholded", tau=0.5)
    weights = reduce_to_weights(matrix, "s1")
    assert weights.weights.tolist() == [0.5, 0.5]


def test_reduce_single_column_mass():
    matrix = SimilarityMatrix(
        values=np.array([[1.0, 0.0], [1.0, 0.0]]), stage="thresholded", tau=0.5
    )
    weights = reduce_to_weights(matrix, "s1")
    assert weights.weights.tolist() == [1.0, 0.0]


def test_reduce_random_matrix_matches_oracle():
    rng = np.random.default_rng(17)
    values = np.where(rng.uniform(0, 1, size=(4, 6)) > 0.4, rng.uniform(0.5, 1, size=(4, 6)), 0.0)
    matrix = SimilarityMatrix(values=values, stage="thresholded", tau=0.5)
    weights = reduce_to_weights(matrix, "s1")
    expected = np.array(reduce_oracle(values.tolist()))
    assert np.max(np.abs(weights.weights - expected)) < 1e-12


def test_reduce_rejects_all_zero_matrix():
    matrix = SimilarityMatrix(values=np.zeros((3, 4)), stage="thresholded", tau=0.9)
    with pytest.raises(NoSignalError):
        reduce_to_weights(matrix, "s1")


def test_reduce_is_scale_invariant():
    rng = np.random.default_rng(23)
    values = rng.uniform(0.2, 1.0, size=(5, 3))
    base = reduce_to_weights(SimilarityMatrix(values=values, stage="thresholded", tau=0.0), "s1")
    for c in (0.001, 3.0, 1e6):
        scaled = reduce_to_weights(
            SimilarityMatrix(values=c * values, stage="thresholded", tau=0.0), "s1"
        )
        assert np.max(np.abs(scaled.weights - base.weights)) < 1e-12


# --- scoring ----------------------------------------------------------------


def test_one_hot_profile_scores_the_single_weight():
    weights = _weights([0.6, 0.1, 0.3])
    profile = _profile("img", [0.0, 1.0, 0.0])
    assert locatability_score(profile, weights).score == pytest.approx(0.1, abs=1e-15)


def test_uniform_profile_scores_one_over_n():
    weights = _weights([0.6, 0.1, 0.3])
    profile = _profile("img", [1 / 3, 1 / 3, 1 / 3])
    assert locatability_score(profile, weights).score == pytest.approx(1 / 3, abs=1e-12)


def test_hand_computed_score():
    # 0.3*0.6 + 0.5*0.1 + 0.2*0.3 = 0.29
    weights = _weights([0.6, 0.1, 0.3])
    profile = _profile("img", [0.3, 0.5, 0.2])
    got = locatability_score(profile, weights).score
    assert got == pytest.approx(0.29, abs=1e-12)
    assert got == pytest.approx(score_oracle([0.3, 0.5, 0.2], [0.6, 0.1, 0.3]), abs=1e-15)


def test_schema_mismatch_rejected():
    with pytest.raises(SchemaMismatchError):
        locatability_score(_profile("img", [1.0], schema="other"), _weights([1.0]))


def test_score_linearity():
    rng = np.random.default_rng(3)
    weights = _weights([0.25, 0.25, 0.5])
    p = rng.uniform(0, 1 / 3, size=3)
    q = rng.uniform(0, 1 / 3, size=3)
    for alpha in (0.0, 0.3, 0.5, 1.0):
        blend = _profile("b", alpha * p + (1 - alpha) * q)
        lhs = locatability_score(blend, weights).score
        rhs = (
            alpha * locatability_score(_profile("p", p), weights).score
            + (1 - alpha) * locatability_score(_profile("q", q), weights).score
        )
        assert lhs == pytest.approx(rhs, abs=1e-12)


@given(
    ratios=st.lists(st.floats(min_value=0, max_value=0.2), min_size=5, max_size=5),
)
@settings(max_examples=100, deadline=None)
def test_score_bounded_by_max_weight(ratios):
    weights = _weights([0.1, 0.2, 0.3, 0.25, 0.15])
    profile = _profile("img", ratios)
    score = locatability_score(profile, weights).score
    assert 0.0 <= score <= float(np.max(weights.weights)) + 1e-12
    assert score <= 1.0


# --- filtering --------------------------------------------------------------


def test_all_zero_scores_give_empty_high():
    weights = _weights([1.0])
    profiles = [_profile(f"i{k}", [0.0]) for k in range(5)]
    high, low = filter_by_locatability(profiles, weights, 0.4)
    assert high == []
    assert len(low) == 5


def test_boundary_partition_at_040():
    weights = _weights([1.0])
    profiles = [
        _profile("a", [0.39]),
        _profile("b", [0.40]),
        _profile("c", [0.41]),
    ]
    high, low = filter_by_locatability(profiles, weights, 0.40)
    assert high == ["c", "b"]  # descending score, 0.40 kept by the >= rule
    assert low == ["a"]


def test_hundred_image_partition_matches_oracle():
    rng = np.random.default_rng(41)
    weights = _weights([0.5, 0.3, 0.2])
    profiles = [
        _profile(f"img{k:03d}", rng.dirichlet([1, 1, 1]) * rng.uniform(0.3, 1.0))
        for k in range(100)
    ]
    high, low = filter_by_locatability(profiles, weights, 0.4)
    expected_high = {
        p.image_id
        for p in profiles
        if score_oracle(p.ratios.tolist(), weights.weights.tolist()) >= 0.4
    }
    assert set(high) == expected_high
    assert set(high) | set(low) == {p.image_id for p in profiles}
    assert set(high) & set(low) == set()
    scores = {s.image_id: s.score for s in score_profiles(profiles, weights)}
    assert all(scores[a] >= scores[b] for a, b in zip(high, high[1:]))


def test_raising_threshold_never_grows_high_set():
    rng = np.random.default_rng(43)
    weights = _weights([0.5, 0.5])
    profiles = [_profile(f"i{k}", rng.uniform(0, 0.5, size=2)) for k in range(60)]
    previous: set[str] | None = None
    for threshold in np.linspace(0, 1, 11):
        high, _ = filter_by_locatability(profiles, weights, float(threshold))
        if previous is not None:
            assert set(high) <= previous
        previous = set(high)


# --- composed pipeline ------------------------------------------------------


def test_full_pipeline_matches_straight_line_oracle():
    rng = np.random.default_rng(57)
    for _ in range(25):
        m, n = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        raw = rng.uniform(-1, 1, size=(m, n))
        raw.flat[int(rng.integers(0, m * n))] = 1.0  # ensure a spread
        raw.flat[int(rng.integers(0, m * n))] = -1.0
        for tau in (0.0, 0.3, 0.5, 1.0):
            matrix = SimilarityMatrix(values=raw.copy(), stage="raw")
            weights = reduce_to_weights(
                threshold_zero(minmax_normalize(matrix), tau), "s1"
            )
            expected = np.array(weight_pipeline_oracle(raw.tolist(), tau))
            assert np.max(np.abs(weights.weights - expected)) < 1e-12


def test_pipeline_is_bit_deterministic():
    rng = np.random.default_rng(61)
    clues = rng.normal(size=(4, 8))
    clues /= np.linalg.norm(clues, axis=1, keepdims=True)
    labels = rng.normal(size=(5, 8))
    labels /= np.linalg.norm(labels, axis=1, keepdims=True)
    first = build_weights(clues, labels, 0.5, "s1")
    second = build_weights(clues, labels, 0.5, "s1")
    assert first.weights.tobytes() == second.weights.tobytes()


# --- class proportion curve -------------------------------------------------


def _schema():
    return LabelSchema(id="s1", labels=("building", "sky", "vegetation"))


def test_curve_all_zero_ratios_populate_only_first_bin():
    profiles = [_profile(f"i{k}", [0.0, 0.5, 0.2]) for k in range(10)]
    scores = {p.image_id: 0.3 for p in profiles}
    curve = class_proportion_curve(profiles, scores, _schema(), "building", bin_width=0.05)
    assert len(curve) == 20
    center, mean, count = curve[0]
    assert center == pytest.approx(0.025)
    assert mean == pytest.approx(0.3)
    assert count == 10
    assert all(c == 0 and m is None for _, m, c in curve[1:])


def test_curve_monotone_when_score_equals_label_ratio():
    # One-hot weights on "building" make score == building ratio exactly.
    weights = _weights([1.0, 0.0, 0.0])
    rng = np.random.default_rng(71)
    profiles = [
        _profile(f"i{k:03d}", [float(r), 0.0, 0.0]) for k, r in enumerate(rng.uniform(0, 1, 400))
    ]
    scores = {s.image_id: s.score for s in score_profiles(profiles, weights)}
    curve = class_proportion_curve(profiles, scores, _schema(), "building", bin_width=0.1)
    means = [m for _, m, c in curve if c > 0]
    assert means == sorted(means)


def test_curve_unknown_label_rejected():
    with pytest.raises(UnknownLabelError):
        class_proportion_curve([], {}, _schema(), "lava", bin_width=0.1)


# --- persistence ------------------------------------------------------------


def test_weights_json_round_trip(tmp_path):
    weights = _weights([0.25, 0.75], schema="ade", tau=0.4)
    path = tmp_path / "weights.json"
    save_weights_json(weights, path)
    loaded = load_weights_json(path)
    assert loaded.label_schema_id == "ade"
    assert loaded.tau == 0.4
    assert loaded.weights.tolist() == [0.25, 0.75]
    payload = json.loads(path.read_text())
    assert set(payload) == {"label_schema_id", "tau", "weights"}


def test_profiles_jsonl_validation(tmp_path):
    path = tmp_path / "profiles.jsonl"
    path.write_text(
        '{"image_id": "a", "label_schema_id": "s1", "ratios": [0.2, 0.3]}\n'
        '{"image_id": "b", "label_schema_id": "s1", "ratios": [0.9, 0.8]}\n',
        encoding="utf-8",
    )
    with pytest.raises(Exception, match="line 2"):
        load_profiles_jsonl(path)


def test_partition_scores_validates_threshold():
    with pytest.raises(ValidationError):
        partition_scores([], threshold=1.5)
