import random

import pytest
from hypothesis import given, strategies as st

from inpaintforge.relations import (
    Location,
    compute_relation_frequencies,
    corpus_hash,
    filter_relations,
    load_retained_cache,
    relation_phrase,
    retained_relations,
    save_retained_cache,
    spatial_location,
)
from inpaintforge.scene_graph import BBox

from forge_fixtures import make_graph, make_node, rel


def corpus_of(predicates_per_graph):
    """Graphs with one source node carrying the listed predicates."""
    graphs = []
    for index, predicates in enumerate(predicates_per_graph):
        target = make_node("t", "wall", (50, 0, 10, 10))
        source = make_node("s", "man", (0, 0, 10, 10), relations=[rel(p, "t") for p in predicates])
        graphs.append(make_graph(f"g{index}", 100, 100, [source, target]))
    return graphs


class TestFrequencies:
    def test_count_and_divide(self):
        graphs = corpus_of([["left", "left", "left", "on"]])
        table = compute_relation_frequencies(graphs)
        assert table.counts == {"left": 3, "on": 1}
        assert table.total == 4
        assert table.frequency == {"left": 0.75, "on": 0.25}

    def test_singleton(self):
        table = compute_relation_frequencies(corpus_of([["on"]]))
        assert table.frequency == {"on": 1.0}

    def test_across_graphs(self):
        table = compute_relation_frequencies(corpus_of([["on"], ["on"]]))
        assert table.frequency == {"on": 1.0}
        assert table.total == 2

    def test_empty_corpus_is_error(self):
        with pytest.raises(ValueError, match="empty relation corpus"):
            compute_relation_frequencies(corpus_of([[]]))

    @given(st.lists(st.sampled_from(["on", "near", "above", "under"]), min_size=1, max_size=40))
    def test_invariants(self, predicates):
        table = compute_relation_frequencies(corpus_of([predicates]))
        assert sum(table.counts.values()) == table.total
        assert all(0 < f <= 1 for f in table.frequency.values())
        assert abs(sum(table.frequency.values()) - 1.0) < 1e-12


class TestFilter:
    def test_boundary_equality_retained(self):
        # 10000 relations total puts "boundary" at exactly the threshold.
        table = compute_relation_frequencies(corpus_of([["common"] * 9999 + ["boundary"]]))
        assert table.frequency["boundary"] == 1e-4
        assert "boundary" in filter_relations(table, 1e-4)

    def test_rare_removed(self):
        table = compute_relation_frequencies(corpus_of([["common"] * 19999 + ["rare"]]))
        assert table.frequency["rare"] == pytest.approx(5e-5)
        retained = filter_relations(table)
        assert "rare" not in retained and "common" in retained

    def test_zero_threshold_keeps_everything(self):
        table = compute_relation_frequencies(corpus_of([["a", "b", "c"]]))
        assert filter_relations(table, 0.0) == {"a", "b", "c"}


class TestSpatialLocation:
    def test_right_third(self):
        assert spatial_location(BBox(210, 0, 80, 10), 300) is Location.RIGHT

    def test_left_third(self):
        assert spatial_location(BBox(0, 0, 100, 10), 300) is Location.LEFT

    def test_full_width_resolves_center_by_midpoint(self):
        assert spatial_location(BBox(0, 0, 300, 10), 300) is Location.CENTER

    def test_two_way_tie_resolves_by_midpoint(self):
        # Spans [50, 150): overlap 50 with left and 50 with center; the
        # midpoint (100) sits in the center section.
        assert spatial_location(BBox(50, 0, 100, 10), 300) is Location.CENTER

    def test_overlap_beats_midpoint_when_no_tie(self):
        # Spans [90, 210): center overlap 100 beats left 10 and right 10.
        assert spatial_location(BBox(90, 0, 120, 10), 300) is Location.CENTER

    def test_non_divisible_width(self):
        # Width 10: sections are [0, 10/3), [10/3, 20/3), [20/3, 10).
        assert spatial_location(BBox(0, 0, 3, 1), 10) is Location.LEFT
        assert spatial_location(BBox(7, 0, 3, 1), 10) is Location.RIGHT

    @given(
        st.integers(min_value=1, max_value=400),
        st.integers(min_value=0, max_value=399),
        st.integers(min_value=1, max_value=400),
        st.integers(min_value=1, max_value=5),
    )
    def test_scale_consistency(self, image_w, x, w, factor):
        x = min(x, image_w - 1)
        w = min(w, image_w - x)
        base = spatial_location(BBox(x, 0, w, 10), image_w)
        scaled = spatial_location(BBox(x * factor, 0, w * factor, 10), image_w * factor)
        assert base is scaled


class TestPhrase:
    def standard_graph(self):
        man = make_node("m", "man", (0, 0, 10, 10))
        table = make_node("t", "table", (20, 20, 30, 10), attributes=["wooden"])
        cup = make_node(
            "c", "cup", (25, 10, 5, 5),
            relations=[rel("to the left of", "m"), rel("on", "t")],
        )
        return cup, make_graph("g", 300, 100, [man, table, cup])

    def test_join_matches_listing_order(self):
        cup, graph = self.standard_graph()
        retained = {"to the left of", "on"}
        phrase = relation_phrase(cup, graph, retained, random.Random(0))
        assert phrase == "to the left of the man and on the table"

    def test_spatial_fallback(self):
        node = make_node("n", "chair", (210, 0, 80, 10))
        graph = make_graph("g", 300, 100, [node])
        assert relation_phrase(node, graph, set(), random.Random(0)) == "at the right"

    def test_pruned_predicate_falls_back(self):
        cup, graph = self.standard_graph()
        phrase = relation_phrase(cup, graph, set(), random.Random(0))
        assert phrase.startswith("at the ")

    def test_duplicates_removed_first_occurrence_wins(self):
        man = make_node("m", "man", (0, 0, 10, 10))
        cup = make_node(
            "c", "cup", (25, 10, 5, 5),
            relations=[rel("near", "m"), rel("near", "m")],
        )
        graph = make_graph("g", 300, 100, [man, cup])
        assert relation_phrase(cup, graph, {"near"}, random.Random(0)) == "near the man"
        assert len(retained_relations(cup, {"near"})) == 1

    def test_same_predicate_different_targets_kept(self):
        a = make_node("a", "man", (0, 0, 10, 10))
        b = make_node("b", "woman", (40, 0, 10, 10))
        cup = make_node("c", "cup", (25, 10, 5, 5), relations=[rel("near", "a"), rel("near", "b")])
        graph = make_graph("g", 300, 100, [a, b, cup])
        assert relation_phrase(cup, graph, {"near"}, random.Random(0)) == "near the man and near the woman"

    def test_augment_hook_fills_target_attributes(self):
        cup, graph = self.standard_graph()
        phrase = relation_phrase(
            cup, graph, {"on"}, random.Random(0),
            augment=lambda node, rng: node.attributes[0] if node.attributes else None,
        )
        assert phrase == "on the wooden table"

    def test_deterministic_given_seed(self):
        cup, graph = self.standard_graph()
        retained = {"to the left of", "on"}
        texts = {
            relation_phrase(cup, graph, retained, random.Random(7)) for _ in range(5)
        }
        assert len(texts) == 1

    @given(st.integers(min_value=1, max_value=6))
    def test_and_count_matches_relation_count(self, k):
        targets = [make_node(f"t{i}", f"name{i}", (i * 10, 0, 5, 5)) for i in range(k)]
        source = make_node(
            "s", "cup", (0, 20, 5, 5),
            relations=[rel("near", f"t{i}") for i in range(k)],
        )
        graph = make_graph("g", 300, 100, targets + [source])
        phrase = relation_phrase(source, graph, {"near"}, random.Random(0))
        assert phrase.count(" and ") == k - 1


class TestCache:
    def test_roundtrip(self, tmp_path):
        table = compute_relation_frequencies(corpus_of([["on", "near", "on"]]))
        digest = corpus_hash(table)
        retained = filter_relations(table, 0.4)
        path = tmp_path / "retained.json"
        save_retained_cache(path, retained, 0.4, digest)
        loaded, threshold, loaded_digest = load_retained_cache(path)
        assert loaded == retained
        assert threshold == 0.4
        assert loaded_digest == digest

    def test_hash_tracks_counts(self):
        one = compute_relation_frequencies(corpus_of([["on"]]))
        two = compute_relation_frequencies(corpus_of([["on", "on"]]))
        assert corpus_hash(one) != corpus_hash(two)
