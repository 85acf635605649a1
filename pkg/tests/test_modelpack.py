"""Model quantization, the JSON pack format, and integer scoring."""

import json
import math
import random
from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / "data" / "golden_model.json"

from learnedcache.discretizer import FeatureBins
from learnedcache.errors import PackValidationError, QuantizationError
from learnedcache.features import FEATURE_NAMES, MISSING, AccessTracker
from learnedcache.modelpack import (
    DEFAULT_WEIGHT_SCALE,
    PreparedScorer,
    export_json,
    float_score,
    int_score,
    load_json,
    pack_from_dict,
    pack_to_dict,
    quantize,
)
from learnedcache.ranker import LinearRanker

from packbuild import build_pack, make_accesses, random_pack, zero_pack
from reference_impls import ref_pack_score

U64_MAX = 2**64 - 1


def _ranker(weights, edges_per_feature, names=None):
    bins = tuple(FeatureBins(tuple(e)) for e in edges_per_feature)
    return LinearRanker(bins, np.array(weights, dtype=np.float64)), names


def test_quantization_truncates_toward_zero():
    r, _ = _ranker([0.12349, -0.99999, 0.5, 1.00009999], [(10, 20, 30)])
    pack = quantize(r, names=["page_delta1"])
    assert pack.features[0].weights_int == (1234, -9999, 5000, 10000)
    assert pack.features[0].weights_float == (0.12349, -0.99999, 0.5, 1.00009999)
    assert pack.weight_scale == DEFAULT_WEIGHT_SCALE


def test_quantization_respects_custom_scale():
    r, _ = _ranker([0.1239, -0.1239], [(5,)])
    pack = quantize(r, weight_scale=1000, names=["page_delta1"])
    assert pack.features[0].weights_int == (123, -123)
    assert pack.weight_scale == 1000


def test_quantization_error_is_below_one_step_per_weight():
    rng = np.random.default_rng(0)
    r, _ = _ranker(rng.uniform(-4, 4, size=6), [(1, 2), (9, 10)])
    pack = quantize(r, names=["page_delta1", "page_delta2"])
    for fe in pack.features:
        for wf, wi in zip(fe.weights_float, fe.weights_int):
            assert abs(wf * pack.weight_scale - wi) < 1.0


def test_quantize_validates_inputs():
    r, _ = _ranker([0.1, 0.2], [(5,)])
    with pytest.raises(QuantizationError):
        quantize(r, weight_scale=0, names=["a"])
    with pytest.raises(QuantizationError):
        quantize(r, names=["a", "b"])  # wrong arity
    huge, _ = _ranker([2.0e15], [()])
    with pytest.raises(QuantizationError):
        quantize(huge, names=["a"])  # 2e19 does not fit in 64-bit


def test_pack_dict_schema_field_names():
    pack = build_pack([([10], [0.5, -0.5]), ([], [0.0])])
    obj = pack_to_dict(pack)
    assert list(obj) == ["feature_names", "n_features", "weight_scale", "features"]
    assert obj["n_features"] == 2
    for fe in obj["features"]:
        assert list(fe) == [
            "index",
            "name",
            "n_bins",
            "bin_edges",
            "weights_float",
            "weights_int",
        ]
    assert obj["features"][0]["n_bins"] == 2
    assert obj["features"][0]["bin_edges"] == [10]


def test_export_load_export_is_byte_identical(tmp_path):
    rng = random.Random(8)
    pack = random_pack(rng)
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    export_json(pack, str(p1))
    loaded = load_json(str(p1))
    assert loaded == pack
    export_json(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_export_ends_with_newline_and_parses_as_json(tmp_path):
    pack = zero_pack()
    path = tmp_path / "m.json"
    export_json(pack, str(path))
    raw = path.read_bytes()
    assert raw.endswith(b"\n")
    obj = json.loads(raw)
    assert obj["feature_names"] == list(FEATURE_NAMES)


def _valid_dict():
    return pack_to_dict(build_pack([([10, 20], [0.1, -0.2, 0.3]), ([], [1.5])]))


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda d: d.pop("weight_scale"), "weight_scale"),
        (lambda d: d.update(weight_scale=0), "weight_scale"),
        (lambda d: d.update(n_features=3), "n_features"),
        (lambda d: d["feature_names"].append("extra"), "feature_names"),
        (lambda d: d["features"][0].update(index=1), "features[0].index"),
        (lambda d: d["features"][0].update(name="wrong"), "features[0].name"),
        (lambda d: d["features"][0].update(n_bins=0), "features[0].n_bins"),
        (lambda d: d["features"][0].update(n_bins=11), "features[0].n_bins"),
        (lambda d: d["features"][0]["bin_edges"].append(30), "features[0].bin_edges"),
        (lambda d: d["features"][0].update(bin_edges=[20, 10]), "features[0].bin_edges[1]"),
        (lambda d: d["features"][0].update(bin_edges=[10, 10]), "features[0].bin_edges[1]"),
        (lambda d: d["features"][0].update(bin_edges=[-1, 10]), "features[0].bin_edges[0]"),
        (
            lambda d: d["features"][0].update(bin_edges=[10, U64_MAX + 1]),
            "features[0].bin_edges[1]",
        ),
        (lambda d: d["features"][0]["weights_float"].pop(), "features[0].weights_float"),
        (
            lambda d: d["features"][0]["weights_float"].__setitem__(1, float("inf")),
            "features[0].weights_float[1]",
        ),
        (lambda d: d["features"][0]["weights_int"].pop(), "features[0].weights_int"),
        (
            lambda d: d["features"][0]["weights_int"].__setitem__(0, 0.5),
            "features[0].weights_int[0]",
        ),
        (
            lambda d: d["features"][0]["weights_int"].__setitem__(2, 3001),
            "features[0].weights_int[2]",
        ),
    ],
)
def test_validation_names_the_offending_field(mutate, field):
    obj = _valid_dict()
    mutate(obj)
    with pytest.raises(PackValidationError) as err:
        pack_from_dict(obj)
    assert err.value.field == field


def test_tampered_integer_weight_is_caught():
    obj = _valid_dict()
    obj["features"][0]["weights_int"][1] += 1
    with pytest.raises(PackValidationError) as err:
        pack_from_dict(obj)
    assert "weights_int" in str(err.value)


def test_load_rejects_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(PackValidationError):
        load_json(str(path))


def test_load_rejects_non_object_document(tmp_path):
    path = tmp_path / "arr.json"
    path.write_text("[1, 2]\n")
    with pytest.raises(PackValidationError):
        load_json(str(path))


def test_integer_score_sums_one_weight_per_feature():
    pack = build_pack([([10], [0.1, 0.2]), ([100, 200], [-0.5, 0.0, 0.5])])
    # below both edges: bins (0, 0) -> 1000 + (-5000)
    assert int_score(pack, [0, 0]) == 1000 - 5000
    # at an edge the value belongs to the upper bin
    assert int_score(pack, [10, 200]) == 2000 + 5000
    assert int_score(pack, [9, 100]) == 1000 + 0
    assert int_score(pack, [MISSING, MISSING]) == 2000 + 5000


def test_integer_and_float_scores_stay_within_quantization_slack():
    rng = random.Random(5)
    for _ in range(20):
        pack = random_pack(rng, n_features=6)
        for _ in range(20):
            raw = [rng.randrange(2**64) for _ in range(6)]
            fs = float_score(pack, raw)
            isc = int_score(pack, raw)
            assert abs(fs * pack.weight_scale - isc) < pack.n_features


@pytest.mark.parametrize("seed", range(8))
def test_integer_score_matches_serialized_form_reference(seed):
    rng = random.Random(seed)
    pack = random_pack(rng)
    obj = pack_to_dict(pack)
    edges = [e for fe in pack.features for e in fe.bin_edges]
    probes = []
    for _ in range(40):
        probes.append([rng.randrange(2**64) for _ in range(9)])
        probes.append([rng.choice(edges + [0, 1, MISSING]) for _ in range(9)])
    for raw in probes:
        assert int_score(pack, raw) == ref_pack_score(obj, raw)


def _tracker_with_traffic(seed, n=400):
    rng = random.Random(seed)
    tracker = AccessTracker()
    accs = make_accesses(rng, n, n_inodes=6, pages_per_inode=8,
                         t_step_max=300_000_000)
    for key, t in accs:
        tracker.on_access(key, t)
    return tracker, rng


@pytest.mark.parametrize("seed", range(6))
def test_batch_scoring_agrees_with_scalar_scoring(seed):
    tracker, rng = _tracker_with_traffic(seed)
    pack = random_pack(rng)
    scorer = PreparedScorer(pack)
    t_now = tracker.last_t + rng.randrange(2_500_000_000)
    n_slots = len(tracker.page_keys)
    slots = np.array([rng.randrange(n_slots) for _ in range(64)], dtype=np.int64)

    feats = [tracker.extract_features(tracker.page_keys[s], t_now) for s in slots.tolist()]
    expected = [int_score(pack, list(f)) for f in feats]

    assert [scorer.score_one(f) for f in feats] == expected
    many = scorer.score_many(np.array(feats, dtype=np.uint64))
    assert many.tolist() == expected
    window = scorer.score_window(tracker, slots, t_now)
    assert window.tolist() == expected


def test_batch_scoring_handles_small_and_single_windows():
    tracker, rng = _tracker_with_traffic(99, n=50)
    pack = random_pack(rng)
    scorer = PreparedScorer(pack)
    t_now = tracker.last_t
    for size in (1, 2, 3, 17):
        slots = np.arange(size, dtype=np.int64)
        got = scorer.score_window(tracker, slots, t_now)
        keys = tracker.page_keys
        want = [int_score(pack, list(tracker.extract_features(keys[s], t_now))) for s in range(size)]
        assert got.tolist() == want


def test_batch_scorer_reuses_buffers_across_window_sizes():
    tracker, rng = _tracker_with_traffic(3, n=120)
    pack = random_pack(rng)
    scorer = PreparedScorer(pack)
    keys = tracker.page_keys
    for t_extra in (0, 1_000_000_000, 5_000_000_000):
        t_now = tracker.last_t + t_extra
        for size in (40, 8, 40, 25):
            slots = np.array([rng.randrange(len(keys)) for _ in range(size)], dtype=np.int64)
            got = scorer.score_window(tracker, slots, t_now)
            want = [
                int_score(pack, list(tracker.extract_features(keys[s], t_now)))
                for s in slots.tolist()
            ]
            assert got.tolist() == want


def test_constant_pack_scores_every_candidate_with_the_base():
    pack = build_pack([([], [0.25]) for _ in range(9)])
    scorer = PreparedScorer(pack)
    assert scorer.base == 9 * 2500
    assert scorer.score_one([0] * 9) == 22500
    many = scorer.score_many(np.zeros((5, 9), dtype=np.uint64))
    assert many.tolist() == [22500] * 5
    tracker, _ = _tracker_with_traffic(1, n=30)
    window = scorer.score_window(tracker, np.arange(10, dtype=np.int64), tracker.last_t)
    assert window.tolist() == [22500] * 10


def test_zero_pack_scores_are_all_zero():
    scorer = PreparedScorer(zero_pack())
    assert scorer.score_one([MISSING] * 9) == 0
    assert scorer.score_many(np.ones((4, 9), dtype=np.uint64)).tolist() == [0] * 4


def test_huge_weights_fall_back_to_exact_big_integers():
    # each weight fits in 64 bits but the 9-feature sum cannot
    pack = build_pack([([1000], [9.0e14, -9.0e14]) for _ in range(9)])
    scorer = PreparedScorer(pack)
    low = scorer.score_one([0] * 9)
    high = scorer.score_one([2000] * 9)
    assert low == 9 * 9_000_000_000_000_000_000
    assert high == -low
    assert low > 2**63 - 1  # would overflow a fixed-width accumulator
    assert int_score(pack, [0] * 9) == low

    many = scorer.score_many(np.array([[0] * 9, [2000] * 9], dtype=np.uint64))
    assert many.tolist() == [low, high]

    tracker, _ = _tracker_with_traffic(2, n=40)
    window = scorer.score_window(tracker, np.arange(6, dtype=np.int64), tracker.last_t)
    keys = tracker.page_keys
    want = [
        int_score(pack, list(tracker.extract_features(keys[s], tracker.last_t)))
        for s in range(6)
    ]
    assert window.tolist() == want


def test_edges_near_the_u64_limit_bin_correctly():
    pack = build_pack(
        [([U64_MAX - 1, U64_MAX], [1.0, 2.0, 3.0])] + [([], [0.0])] * 8
    )
    s = PreparedScorer(pack)
    assert s.score_one([U64_MAX - 2] + [0] * 8) == 10000
    assert s.score_one([U64_MAX - 1] + [0] * 8) == 20000
    assert s.score_one([U64_MAX] + [0] * 8) == 30000
    raw = np.array(
        [[U64_MAX - 2] + [0] * 8, [U64_MAX - 1] + [0] * 8, [U64_MAX] + [0] * 8],
        dtype=np.uint64,
    )
    assert s.score_many(raw).tolist() == [10000, 20000, 30000]


def test_float_score_uses_float_weights():
    pack = build_pack([([10], [0.25, -1.5])])
    assert float_score(pack, [3]) == 0.25
    assert float_score(pack, [10]) == -1.5
    assert math.isclose(
        float_score(pack, [3]) * pack.weight_scale, int_score(pack, [3]), abs_tol=1.0
    )


def test_golden_pack_round_trips_byte_for_byte(tmp_path):
    pack = load_json(str(GOLDEN))
    out = tmp_path / "reexport.json"
    export_json(pack, str(out))
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_golden_pack_scores_known_vectors():
    pack = load_json(str(GOLDEN))
    scorer = PreparedScorer(pack)
    raw = [5, 5, 5, 5, 5, 5, 5, 5, 5]
    assert scorer.score_one(raw) == int_score(pack, raw)
    raw = [MISSING] * 9
    assert scorer.score_one(raw) == int_score(pack, raw)
