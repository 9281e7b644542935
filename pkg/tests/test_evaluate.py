import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualgate.data import make_synthetic
from dualgate.encoder import Encoder, EncoderConfig
from dualgate.errors import ConfigurationError, ContractError
from dualgate.evaluate import (
    FeatureSet,
    ProbeSchedule,
    export_policy,
    extract_features,
    knn_top1,
    linear_probe,
    load_features,
    policy_from_masks,
    save_features,
)

SMALL = EncoderConfig(stage_widths=[8, 16], blocks_per_stage=[1, 1], input_size=16)


def fs(x, y, normalized=False):
    return FeatureSet(np.asarray(x, dtype=np.float32), np.asarray(y, dtype=np.int64), normalized)


def brute_force_knn(train, test):
    preds = []
    for q in test.features.astype(np.float64):
        best, best_d = 0, None
        for i, p in enumerate(train.features.astype(np.float64)):
            d = sum((a - b) ** 2 for a, b in zip(p, q))
            if best_d is None or d < best_d:
                best, best_d = i, d
        preds.append(train.labels[best])
    return float(np.mean(np.array(preds) == test.labels))


# -- kNN ------------------------------------------------------------------------

def test_knn_self_match():
    rng = np.random.default_rng(0)
    s = fs(rng.standard_normal((30, 5)), rng.integers(0, 3, 30))
    assert knn_top1(s, s) == 1.0


def test_knn_two_points():
    train = fs([[0.0, 0.0], [10.0, 0.0]], [0, 1])
    assert knn_top1(train, fs([[1.0, 0.5]], [0])) == 1.0
    assert knn_top1(train, fs([[1.0, 0.5]], [1])) == 0.0


def test_knn_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    train = fs(rng.standard_normal((50, 6)), rng.integers(0, 5, 50))
    test = fs(rng.standard_normal((50, 6)), rng.integers(0, 5, 50))
    assert knn_top1(train, test) == brute_force_knn(train, test)


def test_knn_tie_goes_to_lowest_index():
    train = fs([[1.0, 0.0], [-1.0, 0.0]], [3, 4])
    assert knn_top1(train, fs([[0.0, 0.0]], [3])) == 1.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_knn_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, q = rng.standard_normal((40, 5)), rng.standard_normal((25, 5))
    y, yq = rng.integers(0, 4, 40), rng.integers(0, 4, 25)
    rot, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    base = knn_top1(fs(x, y), fs(q, yq))
    assert knn_top1(fs(x @ rot, y), fs(q @ rot, yq)) == base


def test_knn_dimension_mismatch():
    with pytest.raises(ContractError):
        knn_top1(fs(np.zeros((3, 2)), [0, 1, 2]), fs(np.zeros((1, 3)), [0]))


# -- linear probe -------------------------------------------------------------------

def test_probe_separable_two_class():
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(-2, 0.3, (40, 2)), rng.normal(2, 0.3, (40, 2))])
    y = np.repeat([0, 1], 40)
    s = fs(x, y)
    assert linear_probe(s, s, ProbeSchedule.toy()) == 1.0


def test_probe_shuffled_labels_is_chance():
    rng = np.random.default_rng(3)
    train = fs(rng.standard_normal((1000, 16)), rng.integers(0, 10, 1000))
    test = fs(rng.standard_normal((1000, 16)), rng.integers(0, 10, 1000))
    acc = linear_probe(train, test, ProbeSchedule.toy(), repeats=3)
    assert abs(acc - 0.1) <= 0.05


def test_probe_single_class_rejected():
    s = fs(np.ones((4, 2)), [1, 1, 1, 1])
    with pytest.raises(ContractError):
        linear_probe(s, s)


def test_probe_schedules():
    full, toy = ProbeSchedule(), ProbeSchedule.toy()
    assert (full.epochs, full.batch_size, full.lr, full.milestones, full.decay) == (100, 512, 0.3, (60, 80), 0.1)
    assert (toy.epochs, toy.milestones) == (30, (18, 24))


# -- features -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def encoder():
    return Encoder(SMALL)


@pytest.fixture(scope="module")
def small_data():
    return make_synthetic(20, size=16, seed=4)


def test_extract_features_normalized_and_deterministic(encoder, small_data):
    a = extract_features(encoder, "gated", small_data)
    b = extract_features(encoder, "gated", small_data)
    np.testing.assert_allclose(np.linalg.norm(a.features, axis=1), 1.0, atol=1e-5)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.features.shape == (20, 16)


def test_extract_features_empty(encoder, small_data):
    empty = type(small_data)([], [], small_data.class_names)
    with pytest.raises(ContractError):
        extract_features(encoder, "dense", empty)


def test_feature_file_round_trip(tmp_path):
    s = fs(np.random.default_rng(5).standard_normal((7, 3)), [0, 1, 2, 3, 4, 5, 6], True)
    save_features(tmp_path / "f.bin", s)
    raw = (tmp_path / "f.bin").read_bytes()
    assert len(raw) == 9 + 7 * 3 * 4 + 7 * 4
    back = load_features(tmp_path / "f.bin")
    assert back.features.tobytes() == s.features.tobytes()
    assert back.labels.tolist() == s.labels.tolist() and back.normalized


# -- policy -------------------------------------------------------------------------

def test_zero_gate_model_is_all_off(small_data):
    enc = Encoder(EncoderConfig(**{**SMALL.__dict__, "gate_bias_init": 0.0, "gate_w2_std": 0.0}))
    policy = export_policy(enc, small_data)
    for b in policy["blocks"]:
        assert b["off"] == b["width"] and b["always_on"] == 0
    assert policy["mean_active_fraction"] == 0.0


def test_fresh_model_opens_every_gate(encoder, small_data):
    policy = export_policy(encoder, small_data)
    assert all(b["always_on"] == b["width"] for b in policy["blocks"])
    assert policy["flops_ratio"] > 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), hi=st.floats(0.5, 1.0), lo=st.floats(0.0, 0.49))
def test_policy_partition_and_threshold_monotonicity(seed, hi, lo):
    rng = np.random.default_rng(seed)
    probs = rng.random(12) ** 3
    masks = [(rng.random((60, 12)) < probs).astype(np.float32), np.ones((60, 4), np.float32)]
    p = policy_from_masks(masks, (hi, lo))
    for b in p["blocks"]:
        assert b["always_on"] + b["data_dependent"] + b["off"] == b["width"]
    looser = policy_from_masks(masks, (max(lo + 1e-3, hi - 0.2), lo))
    tighter_off = policy_from_masks(masks, (hi, min(lo + 0.2, hi - 1e-3)))
    assert looser["blocks"][0]["always_on"] >= p["blocks"][0]["always_on"]
    assert tighter_off["blocks"][0]["off"] >= p["blocks"][0]["off"]


def test_policy_threshold_validation():
    with pytest.raises(ConfigurationError):
        policy_from_masks([np.ones((2, 2))], (0.1, 0.5))
