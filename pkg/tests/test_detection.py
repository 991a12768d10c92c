"""Tests for detection JSONL parsing and dynamic-class selection."""

import json

import pytest

from dynafuse.detection import (
    DetectionParseError,
    DetectionSet,
    DynamicPolicy,
    parse_detections,
    select_dynamic,
)

# A frame as a real detector would emit it: several static tabletop objects
# plus two person detections at different confidences.
KITCHEN_FRAME = {
    "timestamp": 4.2,
    "detections": [
        {"label": "cup", "confidence": 0.77, "bbox": [10, 10, 20, 20]},
        {"label": "bottom", "confidence": 0.66, "bbox": [40, 10, 20, 20]},
        {"label": "bowl", "confidence": 0.47, "bbox": [70, 10, 20, 20]},
        {"label": "bottle", "confidence": 0.76, "bbox": [100, 10, 20, 20]},
        {"label": "person", "confidence": 0.37, "bbox": [130, 10, 20, 20]},
        {"label": "person", "confidence": 0.72, "bbox": [160, 10, 30, 40]},
    ],
}


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_parse_basic(tmp_path):
    p = tmp_path / "det.jsonl"
    write_jsonl(p, [KITCHEN_FRAME])
    sets = parse_detections(p, 640, 480)
    assert len(sets) == 1
    assert sets[0].timestamp == 4.2
    assert len(sets[0].detections) == 6
    assert sets[0].detections[0].label == "cup"
    assert sets[0].detections[5].bbox == (160.0, 10.0, 30.0, 40.0)


def test_select_dynamic_default_policy(tmp_path):
    p = tmp_path / "det.jsonl"
    write_jsonl(p, [KITCHEN_FRAME])
    (ds,) = parse_detections(p, 640, 480)
    boxes = select_dynamic(ds, DynamicPolicy())
    # Both persons regardless of confidence, in input order.
    assert boxes == [(130.0, 10.0, 20.0, 20.0), (160.0, 10.0, 30.0, 40.0)]


def test_select_dynamic_confidence_threshold(tmp_path):
    p = tmp_path / "det.jsonl"
    write_jsonl(p, [KITCHEN_FRAME])
    (ds,) = parse_detections(p, 640, 480)
    boxes = select_dynamic(ds, DynamicPolicy(min_confidence=0.5))
    assert boxes == [(160.0, 10.0, 30.0, 40.0)]  # only the 0.72 person


def test_select_dynamic_labels_case_sensitive():
    ds = DetectionSet(1.0, ())
    p = DynamicPolicy(dynamic_classes=frozenset({"person"}))
    from dynafuse.detection import Detection

    ds = DetectionSet(1.0, (Detection("Person", 0.9, (0, 0, 5, 5)),))
    assert select_dynamic(ds, p) == []


def test_select_dynamic_custom_classes():
    from dynafuse.detection import Detection

    ds = DetectionSet(
        1.0,
        (
            Detection("cat", 0.9, (0.0, 0.0, 5.0, 5.0)),
            Detection("person", 0.9, (5.0, 0.0, 5.0, 5.0)),
        ),
    )
    boxes = select_dynamic(ds, DynamicPolicy(dynamic_classes=frozenset({"cat"})))
    assert boxes == [(0.0, 0.0, 5.0, 5.0)]


def test_bbox_clamped_to_image(tmp_path):
    p = tmp_path / "det.jsonl"
    write_jsonl(
        p,
        [
            {
                "timestamp": 1.0,
                "detections": [
                    {"label": "person", "confidence": 0.9, "bbox": [-10, -5, 30, 20]},
                    {"label": "person", "confidence": 0.9, "bbox": [50, 40, 100, 100]},
                ],
            }
        ],
    )
    (ds,) = parse_detections(p, 64, 48)
    assert ds.detections[0].bbox == (0.0, 0.0, 20.0, 15.0)
    assert ds.detections[1].bbox == (50.0, 40.0, 14.0, 8.0)


def test_bbox_outside_image_dropped(tmp_path):
    p = tmp_path / "det.jsonl"
    write_jsonl(
        p,
        [
            {
                "timestamp": 1.0,
                "detections": [
                    {"label": "person", "confidence": 0.9, "bbox": [100, 100, 10, 10]},
                    {"label": "person", "confidence": 0.9, "bbox": [5, 5, 0, 10]},
                ],
            }
        ],
    )
    (ds,) = parse_detections(p, 64, 48)
    assert ds.detections == ()


def test_blank_lines_skipped(tmp_path):
    p = tmp_path / "det.jsonl"
    p.write_text("\n" + json.dumps(KITCHEN_FRAME) + "\n\n")
    assert len(parse_detections(p, 640, 480)) == 1


def test_unknown_fields_ignored(tmp_path):
    p = tmp_path / "det.jsonl"
    rec = {
        "timestamp": 1.0,
        "frame_id": 17,
        "detections": [
            {"label": "person", "confidence": 0.9, "bbox": [0, 0, 5, 5], "track_id": 3}
        ],
    }
    write_jsonl(p, [rec])
    (ds,) = parse_detections(p, 64, 48)
    assert len(ds.detections) == 1


@pytest.mark.parametrize(
    "record",
    [
        {"timestamp": 1.0},  # missing detections
        {"detections": []},  # missing timestamp
        {
            "timestamp": 1.0,
            "detections": [{"label": "person", "confidence": 1.2, "bbox": [0, 0, 5, 5]}],
        },
        {
            "timestamp": 1.0,
            "detections": [{"label": 7, "confidence": 0.5, "bbox": [0, 0, 5, 5]}],
        },
        {
            "timestamp": 1.0,
            "detections": [{"label": "person", "confidence": 0.5, "bbox": [0, 0, 5]}],
        },
    ],
)
def test_structural_errors(tmp_path, record):
    p = tmp_path / "det.jsonl"
    write_jsonl(p, [record])
    with pytest.raises(DetectionParseError):
        parse_detections(p, 64, 48)


def test_error_names_line_number(tmp_path):
    p = tmp_path / "det.jsonl"
    p.write_text(json.dumps(KITCHEN_FRAME) + "\nnot json\n")
    with pytest.raises(DetectionParseError, match="line 2"):
        parse_detections(p, 640, 480)
