import json

import pytest
from hypothesis import given, strategies as st

from inpaintforge.scene_graph import (
    BBox,
    ParseReport,
    graph_to_entry,
    objects_of_name,
    parse_scene_graphs,
    save_scene_graphs,
)

from forge_fixtures import make_graph, make_node


def write_annotations(tmp_path, payload, name="annotations.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), "utf-8")
    return path


SIMPLE = {
    "img1": {
        "width": 100,
        "height": 80,
        "objects": {
            "o1": {
                "name": "man",
                "x": 10, "y": 10, "w": 20, "h": 40,
                "attributes": ["tall"],
                "relations": [{"name": "to the left of", "object": "o2"}],
            },
            "o2": {
                "name": "wall",
                "x": 50, "y": 0, "w": 50, "h": 80,
                "attributes": [],
                "relations": [],
            },
        },
    }
}


class TestParse:
    def test_empty_file(self, tmp_path):
        path = write_annotations(tmp_path, {})
        graphs, report = parse_scene_graphs(path)
        assert graphs == []
        assert report.warnings == 0

    def test_simple_fixture_fields(self, tmp_path):
        path = write_annotations(tmp_path, SIMPLE)
        graphs, report = parse_scene_graphs(path)
        assert len(graphs) == 1
        graph = graphs[0]
        assert graph.image_id == "img1"
        assert graph.width == 100 and graph.height == 80
        assert sorted(graph.objects) == ["o1", "o2"]
        man = graph.objects["o1"]
        assert man.name == "man"
        assert man.attributes == ("tall",)
        assert man.bbox == BBox(10, 10, 20, 40)
        assert len(man.relations) == 1
        assert man.relations[0].predicate == "to the left of"
        assert man.relations[0].target == "o2"
        assert graph.objects["o2"].relations == ()
        assert report.warnings == 0

    def test_dangling_relation_dropped_with_warning(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["objects"]["o1"]["relations"][0]["object"] = "missing"
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert graphs[0].objects["o1"].relations == ()
        assert report.dropped_relations == 1

    def test_unreadable_file_is_fatal(self, tmp_path):
        with pytest.raises(OSError):
            parse_scene_graphs(tmp_path / "nope.json")

    def test_invalid_top_level_json_is_fatal(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", "utf-8")
        with pytest.raises(ValueError):
            parse_scene_graphs(path)

    def test_malformed_record_skipped_and_tallied(self, tmp_path):
        payload = dict(SIMPLE)
        payload["bad"] = {"width": -5, "height": 80, "objects": {}}
        payload["worse"] = "not a record"
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert [graph.image_id for graph in graphs] == ["img1"]
        assert report.skipped_records == 2

    def test_malformed_node_skipped(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["objects"]["o3"] = {"name": "", "x": 1, "y": 1, "w": 5, "h": 5}
        payload["img1"]["objects"]["o4"] = {"name": "cat", "x": 1, "y": 1, "w": 0, "h": 5}
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert sorted(graphs[0].objects) == ["o1", "o2"]
        assert report.invalid_nodes == 2

    def test_overflowing_bbox_clipped(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["objects"]["o3"] = {
            "name": "cat", "x": 90, "y": 70, "w": 30, "h": 30,
            "attributes": [], "relations": [],
        }
        path = write_annotations(tmp_path, payload)
        graphs, _ = parse_scene_graphs(path)
        assert graphs[0].objects["o3"].bbox == BBox(90, 70, 10, 10)

    def test_fully_outside_bbox_invalidates_node(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["objects"]["o3"] = {
            "name": "cat", "x": 200, "y": 0, "w": 10, "h": 10,
            "attributes": [], "relations": [],
        }
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert "o3" not in graphs[0].objects
        assert report.invalid_nodes == 1

    def test_relation_to_dropped_node_also_dropped(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["objects"]["o3"] = {
            "name": "cat", "x": 200, "y": 0, "w": 10, "h": 10,
            "attributes": [], "relations": [],
        }
        payload["img1"]["objects"]["o2"]["relations"] = [{"name": "near", "object": "o3"}]
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert graphs[0].objects["o2"].relations == ()
        assert report.dropped_relations == 1

    def test_unknown_keys_ignored(self, tmp_path):
        payload = json.loads(json.dumps(SIMPLE))
        payload["img1"]["location"] = "indoors"
        payload["img1"]["weather"] = "sunny"
        path = write_annotations(tmp_path, payload)
        graphs, report = parse_scene_graphs(path)
        assert len(graphs) == 1 and report.warnings == 0

    def test_parse_order_preserved(self, tmp_path):
        payload = {}
        for key in ["z", "a", "m"]:
            payload[key] = {"width": 10, "height": 10, "objects": {}}
        path = write_annotations(tmp_path, payload)
        graphs, _ = parse_scene_graphs(path)
        assert [graph.image_id for graph in graphs] == ["z", "a", "m"]


class TestRoundTrip:
    def test_serialize_reparse_identical(self, tmp_path, fixture_annotations):
        graphs, _ = parse_scene_graphs(fixture_annotations)
        out = tmp_path / "normalized.json"
        save_scene_graphs(graphs, out)
        reparsed, report = parse_scene_graphs(out)
        assert report.warnings == 0
        assert len(reparsed) == len(graphs)
        for before, after in zip(graphs, reparsed):
            assert graph_to_entry(before) == graph_to_entry(after)
            assert before.image_id == after.image_id


class TestObjectsOfName:
    def test_singleton(self):
        graph = make_graph("g", 100, 100, [make_node("o1", "man", (0, 0, 10, 10))])
        assert [node.id for node in objects_of_name(graph, "man")] == ["o1"]

    def test_multiple_sorted_by_id(self):
        nodes = [
            make_node("w3", "window", (0, 0, 5, 5)),
            make_node("w1", "window", (10, 0, 5, 5)),
            make_node("w2", "window", (20, 0, 5, 5)),
        ]
        graph = make_graph("g", 100, 100, nodes)
        assert [node.id for node in objects_of_name(graph, "window")] == ["w1", "w2", "w3"]

    def test_absent_name(self):
        graph = make_graph("g", 100, 100, [make_node("o1", "man", (0, 0, 10, 10))])
        assert objects_of_name(graph, "zebra") == []

    @given(
        st.lists(
            st.sampled_from(["man", "cup", "dog", "tree"]),
            min_size=0,
            max_size=12,
        )
    )
    def test_results_partition_nodes(self, names):
        nodes = [make_node(f"o{i}", name, (i, 0, 1, 1)) for i, name in enumerate(names)]
        graph = make_graph("g", 100, 100, nodes)
        total = sum(len(objects_of_name(graph, name)) for name in set(names))
        assert total == len(nodes)
