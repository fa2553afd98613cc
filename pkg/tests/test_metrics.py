import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compose_probe.errors import ConsistencyError, ScorerError
from compose_probe.metrics import (
    RetrievalInstance,
    ScoreQuad,
    dump_instances,
    evaluate,
    group,
    i2t,
    load_instances,
    quad_for,
    t2i,
)
from compose_probe.scoring import RandomScorer


def test_i2t_basic_success_and_tie_failure():
    assert i2t(ScoreQuad(0.9, 0.1, 0.2, 0.8)) == 1
    assert i2t(ScoreQuad(0.5, 0.5, 0.2, 0.8)) == 0  # tie on first image


def test_t2i_basic_success_and_tie_failure():
    assert t2i(ScoreQuad(0.9, 0.2, 0.1, 0.8)) == 1
    assert t2i(ScoreQuad(0.9, 0.2, 0.9, 0.8)) == 0  # shared score ties


def test_group_requires_both_directions():
    assert group(ScoreQuad(0.9, 0.1, 0.2, 0.8)) == 1
    # i2t holds (0.9>0.8, 0.3>0.1) but t2i fails (0.9>0.1 ok, 0.3>0.8 no)
    q = ScoreQuad(0.9, 0.8, 0.1, 0.3)
    assert i2t(q) == 1 and t2i(q) == 0 and group(q) == 0


def test_exhaustive_orderings_of_four_distinct_scores():
    values = [0.1, 0.2, 0.3, 0.4]
    i2t_wins = t2i_wins = group_wins = 0
    for perm in itertools.permutations(values):
        quad = ScoreQuad(*perm)
        i2t_wins += i2t(quad)
        t2i_wins += t2i(quad)
        group_wins += group(quad)
    assert i2t_wins == 6
    assert t2i_wins == 6
    assert group_wins == 4  # chance level 4/24 = 1/6


@settings(max_examples=200)
@given(st.tuples(*(st.floats(-100, 100) for _ in range(4))))
def test_group_is_conjunction_of_directions(vals):
    quad = ScoreQuad(*vals)
    assert group(quad) == (i2t(quad) and t2i(quad))


@settings(max_examples=100)
@given(
    vals=st.lists(st.integers(-10**6, 10**6), min_size=4, max_size=4, unique=True),
    a=st.integers(1, 50),
    b=st.integers(-1000, 1000),
)
def test_metrics_invariant_under_strictly_increasing_maps(vals, a, b):
    quad = ScoreQuad(*map(float, vals))
    mapped = ScoreQuad(*(float(a * v + b) for v in vals))
    assert (i2t(quad), t2i(quad), group(quad)) == (i2t(mapped), t2i(mapped), group(mapped))


def test_non_finite_scores_rejected():
    with pytest.raises(ScorerError):
        ScoreQuad(float("nan"), 0.0, 0.0, 0.0)


def make_instances(n, category="swap"):
    return [
        RetrievalInstance(
            instance_id=f"{category}_{i}",
            category=category,
            image_pos=f"{category}_img_{i}_pos",
            image_neg=f"{category}_img_{i}_neg",
            caption_pos=f"caption {i} positive",
            caption_neg=f"caption {i} negative",
        )
        for i in range(n)
    ]


class PerfectScorer:
    name = "perfect"

    def score(self, image_ref, caption, annotation=None):
        pos_pair = ("pos" in image_ref) == ("positive" in caption)
        return 1.0 if pos_pair else 0.0


class InvertedScorer(PerfectScorer):
    name = "inverted"

    def score(self, image_ref, caption, annotation=None):
        return -super().score(image_ref, caption, annotation)


def test_perfect_scorer_reaches_full_marks():
    report = evaluate(make_instances(20), PerfectScorer())
    cat = report.categories[0]
    assert (cat.i2t_pct, cat.t2i_pct, cat.group_pct) == (100.0, 100.0, 100.0)


def test_inverted_scorer_scores_zero():
    report = evaluate(make_instances(20), InvertedScorer())
    cat = report.categories[0]
    assert (cat.i2t_pct, cat.t2i_pct, cat.group_pct) == (0.0, 0.0, 0.0)


def test_random_scorer_converges_to_chance_levels():
    instances = make_instances(20000)
    report = evaluate(instances, RandomScorer(seed=123))
    cat = report.categories[0]
    assert cat.i2t_pct == pytest.approx(25.0, abs=1.5)
    assert cat.t2i_pct == pytest.approx(25.0, abs=1.5)
    assert cat.group_pct == pytest.approx(100.0 / 6.0, abs=1.5)


def test_group_never_exceeds_either_direction():
    instances = make_instances(500, "a") + make_instances(500, "b")
    report = evaluate(instances, RandomScorer(seed=7))
    for cat in report.categories:
        assert cat.group_pct <= min(cat.i2t_pct, cat.t2i_pct)


class FailingScorer:
    name = "failing"

    def score(self, image_ref, caption, annotation=None):
        if image_ref.endswith("3_pos"):
            raise RuntimeError("boom")
        return hash((image_ref, caption)) % 97 / 97.0


def test_scorer_failure_aborts_with_instance_id():
    with pytest.raises(ScorerError, match="swap_3"):
        evaluate(make_instances(10), FailingScorer())


def test_lenient_mode_skips_and_counts():
    report = evaluate(make_instances(10), FailingScorer(), lenient=True)
    assert report.n_skipped == 1
    assert report.n_instances == 9


def test_quad_uses_annotations_per_caption():
    calls = []

    class SpyScorer:
        name = "spy"

        def score(self, image_ref, caption, annotation=None):
            calls.append((image_ref, caption, annotation))
            return 0.5

    inst = make_instances(1)[0]
    quad_for(inst, SpyScorer())
    assert len(calls) == 4
    refs = {(r, c) for r, c, _ in calls}
    assert refs == {
        (inst.image_pos, inst.caption_pos),
        (inst.image_pos, inst.caption_neg),
        (inst.image_neg, inst.caption_pos),
        (inst.image_neg, inst.caption_neg),
    }


def test_instance_invariants_enforced():
    with pytest.raises(ConsistencyError):
        RetrievalInstance("x", "c", "img", "img", "a", "b")
    with pytest.raises(ConsistencyError):
        RetrievalInstance("x", "c", "img1", "img2", "same", "same")


def test_jsonl_round_trip(tmp_path):
    instances = make_instances(5)
    path = tmp_path / "data.jsonl"
    dump_instances(instances, path)
    loaded = load_instances(path)
    assert loaded == instances


def test_report_serialization_includes_random_baseline(tmp_path):
    report = evaluate(make_instances(10), PerfectScorer())
    report.write_json(tmp_path / "report.json")
    report.write_csv(tmp_path / "report.csv")
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["random_baseline"] == {"i2t": 25.0, "t2i": 25.0, "group": 16.7}
    csv_text = (tmp_path / "report.csv").read_text()
    assert csv_text.splitlines()[1].startswith("random,")
    assert "average" in csv_text


def test_macro_average_over_categories():
    instances = make_instances(10, "a") + make_instances(10, "b")

    class CategoryScorer(PerfectScorer):
        def score(self, image_ref, caption, annotation=None):
            if "a_" in image_ref:
                return super().score(image_ref, caption, annotation)
            return 0.0  # all ties in category b

    report = evaluate(instances, CategoryScorer())
    avg = report.average
    assert avg.group_pct == pytest.approx(50.0)
