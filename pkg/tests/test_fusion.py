import json
import math
import random

import pytest

from misdetect.fusion import (
    REFERENCE_MAP,
    EvaluationReport,
    FusionConfig,
    evaluate,
    fuse,
    map_at_m,
    softmax_normalize,
)
from misdetect.labels import parse_label
from misdetect.pipeline import read_predictions
from misdetect.ranking import ScoredRanking
from oracles import ap_at_m

L1 = parse_label("False_Misconception:L1")
L2 = parse_label("False_Misconception:L2")
AA = parse_label("False_Misconception:Adding_across")
IN = parse_label("False_Misconception:Incomplete")
FN = parse_label("False_Neither:NA")


def ranking(pairs):
    return ScoredRanking.from_scores(dict(pairs))


class TestSoftmax:
    def test_uniform(self):
        assert softmax_normalize([0, 0, 0]) == pytest.approx([1 / 3] * 3, abs=1e-15)

    def test_singleton(self):
        assert softmax_normalize([-7.5]) == [1.0]

    def test_two_values(self):
        # e^0.1 = 1.105171, e^0.9 = 2.459603, sum 3.564774
        assert softmax_normalize([0.1, 0.9]) == pytest.approx([0.3100, 0.6900], abs=1e-4)

    def test_large_values_stable(self):
        assert softmax_normalize([1000.0, 1000.0]) == [0.5, 0.5]

    def test_empty(self):
        with pytest.raises(ValueError):
            softmax_normalize([])


class TestFuse:
    def test_worked_example(self):
        # softmax(2, 0) = (0.880797, 0.119203); softmax(0.1, 0.9) = (0.310026, 0.689974)
        # L1: 0.7 * 0.880797 + 0.3 * 0.310026 = 0.709566
        out = fuse(ranking({L1: 2.0, L2: 0.0}), ranking({L1: 0.1, L2: 0.9}))
        assert out.labels == [L1, L2]
        assert out.scores == pytest.approx([0.709566, 0.290434], abs=1e-6)

    def test_crafted_truth_recovered(self):
        # truth FN is second in both modules, behind IN (rerank) and AA (retrieval)
        rerank = ranking({AA: -1.0, FN: 1.0, IN: 1.04})
        retrieve = ranking({AA: 0.7, FN: 0.6, IN: 0.4})
        assert rerank.rank_of(FN) == 2 and rerank.labels[0] == IN
        assert retrieve.rank_of(FN) == 2 and retrieve.labels[0] == AA
        out = fuse(rerank, retrieve, FusionConfig(0.7, 0.3))
        # hand: softmax rerank (0.062191, 0.459528, 0.478282), retrieval (0.377977, 0.342007, 0.280013)
        assert out.labels == [FN, IN, AA]
        assert out.as_dict()[FN] == pytest.approx(0.424272, abs=1e-5)
        assert out.as_dict()[IN] == pytest.approx(0.418801, abs=1e-5)
        assert out.as_dict()[AA] == pytest.approx(0.156927, abs=1e-5)

    def test_rerank_only(self):
        rr = ranking({L1: 0.2, L2: 1.5, AA: -0.3})
        out = fuse(rr, ranking({L1: 0.9, L2: 0.1, AA: 0.5}), FusionConfig(1.0, 0.0))
        assert out.labels == rr.labels

    def test_retrieval_only(self):
        rt = ranking({L1: 0.9, L2: 0.1, AA: 0.5})
        assert fuse(ranking({L1: 0.2, L2: 1.5, AA: -0.3}), rt, FusionConfig(0.0, 1.0)).labels == rt.labels

    def test_equal_orders_preserved(self):
        a = ranking({L1: 3.0, L2: 2.0, AA: 1.0})
        b = ranking({L1: 0.9, L2: 0.5, AA: 0.1})
        assert fuse(a, b, FusionConfig(0.5, 0.5)).labels == a.labels

    def test_positive_rescaling(self):
        rng = random.Random(1)
        for _ in range(100):
            labs = [parse_label(f"False_Misconception:x{i}") for i in range(5)]
            rr = ranking({lab: rng.uniform(-5, 5) for lab in labs})
            rt = ranking({lab: rng.uniform(-1, 1) for lab in labs})
            a, b, c = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 100)
            assert fuse(rr, rt, FusionConfig(a, b)).labels == fuse(rr, rt, FusionConfig(c * a, c * b)).labels

    def test_label_set_mismatch(self):
        with pytest.raises(ValueError, match="label sets differ"):
            fuse(ranking({L1: 1.0}), ranking({L2: 1.0}))

    @pytest.mark.parametrize("alpha, beta", [(-0.1, 0.5), (0.0, 0.0)])
    def test_bad_weights(self, alpha, beta):
        with pytest.raises(ValueError):
            FusionConfig(alpha, beta)


class TestMapAtM:
    labs = [L1, L2, AA, IN]

    @pytest.mark.parametrize("rank, m, expected", [(1, 3, 1.0), (2, 3, 0.5), (4, 3, 0.0), (3, 5, 1 / 3)])
    def test_rule(self, rank, m, expected):
        assert map_at_m(self.labs, self.labs[rank - 1], m) == expected

    def test_truth_absent(self):
        assert map_at_m(self.labs, FN, 5) == 0.0

    def test_mean(self):
        preds = {"a": [L1, L2], "b": [L2, L1], "c": [L2, AA, IN, L1]}
        report = evaluate(preds, {"a": L1, "b": L1, "c": L1}, [3])
        assert report.rows["fused"][3] == 0.5

    def test_all_first(self):
        preds = {str(i): [L1, L2] for i in range(4)}
        report = evaluate(preds, {str(i): L1 for i in range(4)})
        assert report.rows["fused"] == {1: 1.0, 3: 1.0, 5: 1.0}

    def test_randomized_against_oracle_and_monotone(self):
        rng = random.Random(5)
        pool = [parse_label(f"False_Misconception:p{i}") for i in range(8)]
        for _ in range(300):
            ranked = rng.sample(pool, rng.randint(1, 8))
            truth = rng.choice(pool)
            vals = [map_at_m(ranked, truth, m) for m in (1, 3, 5)]
            assert vals == [ap_at_m(ranked, truth, m) for m in (1, 3, 5)]
            assert vals[0] <= vals[1] <= vals[2]


# truth rank per instance in the fixture corpus, read by hand from each stage's ranking
HAND_RANKS = {
    "retrieval": [1, 1, 2, 1, 2, 2, 2, 4, 2, 2],
    "rerank": [1, 1, 1, 1, 2, 1, 2, 4, 1, 2],
    "fused": [1, 1, 1, 1, 2, 1, 2, 4, 1, 1],
}
# mean of 1/j over the ten instances; fused MAP@3 = (7 * 1 + 2 * 0.5 + 0) / 10 = 0.8
HAND_TABLE = {
    "retrieval": {1: 0.3, 3: 0.6, 5: 0.625},
    "rerank": {1: 0.6, 3: 0.75, 5: 0.775},
    "fused": {1: 0.7, 3: 0.8, 5: 0.825},
}


class TestEvaluate:
    def load(self, golden_dir):
        with (golden_dir / "predictions.jsonl").open(encoding="utf-8") as fh:
            preds = read_predictions(fh)
        with (golden_dir.parent / "fixtures" / "corpus_test.jsonl").open(encoding="utf-8") as fh:
            truths = {o["instance_id"]: parse_label(o["label"]) for o in map(json.loads, fh)}
        return preds, truths

    def test_fixture_ranks(self, golden_dir):
        preds, truths = self.load(golden_dir)
        ids = sorted(truths)
        for stage, ranks in HAND_RANKS.items():
            assert [preds[stage][i].index(truths[i]) + 1 for i in ids] == ranks

    def test_fixture_table(self, golden_dir):
        preds, truths = self.load(golden_dir)
        report = evaluate(preds, truths)
        assert report.rows == HAND_TABLE

    def test_hand_table_is_mean_of_reciprocal_ranks(self):
        for stage, ranks in HAND_RANKS.items():
            for m, value in HAND_TABLE[stage].items():
                assert math.fsum(1 / r if r <= m else 0.0 for r in ranks) / 10 == pytest.approx(value, abs=1e-15)

    def test_missing_id_named(self):
        with pytest.raises(KeyError, match="'b'"):
            evaluate({"a": [L1]}, {"a": L1, "b": L1})

    def test_unknown_id_named(self):
        with pytest.raises(KeyError, match="'z'"):
            evaluate({"a": [L1], "z": [L1]}, {"a": L1})

    def test_single_column_text(self):
        report = evaluate({"a": [L1]}, {"a": L1}, [1])
        header = report.to_text().splitlines()[0].split()
        assert header == ["Method", "MAP@1"]

    def test_json_shape(self):
        report = evaluate({"a": [L2, L1]}, {"a": L1}, [1, 3])
        assert report.to_json() == {"count": 1, "m_values": [1, 3], "rows": {"fused": {"MAP@1": 0.0, "MAP@3": 0.5}}}
        assert isinstance(report, EvaluationReport)


def test_reference_targets_are_documentation_only():
    assert REFERENCE_MAP["fused"] == {1: 0.82, 3: 0.92, 5: 0.93}
    assert all(REFERENCE_MAP["fused"][m] > max(REFERENCE_MAP["rerank"][m], REFERENCE_MAP["retrieval"][m]) for m in (1, 3, 5))
