"""
Unit tests for artifact persistence and record validation.
"""

import json

import numpy as np
import pandas as pd
import pytest

from duetdiff.services.artifact_service import ArtifactService
from duetdiff.utils.exceptions import ArtifactIOError, RecordValidationError
from duetdiff.validators import validate_detection, validate_grounding, validate_record


def valid_record(**changes):
    record = {
        "image_id": "a",
        "caption": "a man and a woman posing in park",
        "topic": "couples",
        "scene": "park",
        "persons": [{"bbox": [0, 0, 10, 20]}, {"bbox": [10, 0, 20, 20]}],
    }
    record.update(changes)
    return record


class TestJsonLines:
    """Tests for JSON Lines files."""

    def test_records(self, corpus, tmp_path):
        """Test records written to JSONL read back equal."""
        records = [s.record for s in corpus[:3]]

        path = ArtifactService.write_jsonl(records, tmp_path / "out" / "records.jsonl")

        assert ArtifactService.read_records(path) == records
        assert len(path.read_text().splitlines()) == 3

    def test_blank_lines_skipped(self, tmp_path):
        """Test blank lines are ignored."""
        path = tmp_path / "rows.jsonl"
        path.write_text('{"a": 1}\n\n{"a": 2}\n')

        assert ArtifactService.read_jsonl(path) == [{"a": 1}, {"a": 2}]

    def test_invalid_json_line(self, tmp_path):
        """Test a broken line reports its number."""
        path = tmp_path / "rows.jsonl"
        path.write_text('{"a": 1}\n{"a": \n')

        with pytest.raises(RecordValidationError) as excinfo:
            ArtifactService.read_jsonl(path)

        assert excinfo.value.details["line"] == 2

    def test_invalid_record_line(self, tmp_path):
        """Test a record failing validation reports its line."""
        path = tmp_path / "records.jsonl"
        rows = [valid_record(), valid_record(topic=3)]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))

        with pytest.raises(RecordValidationError) as excinfo:
            ArtifactService.read_records(path)

        assert excinfo.value.details["line"] == 2
        assert excinfo.value.details["field"] == "topic"

    def test_missing_file(self, tmp_path):
        """Test a missing file is an IO error."""
        with pytest.raises(ArtifactIOError):
            ArtifactService.read_jsonl(tmp_path / "absent.jsonl")

    def test_detections_grouped(self, tmp_path):
        """Test detection sets group by image in file order."""
        path = tmp_path / "detections.jsonl"
        rows = [
            {"image_id": "a", "algorithm_id": "d1", "boxes": [[0, 0, 5, 5]]},
            {"image_id": "b", "algorithm_id": "d1", "boxes": []},
            {"image_id": "a", "algorithm_id": "d2", "boxes": [[1, 1, 6, 6], [7, 7, 9, 9]]},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))

        grouped = ArtifactService.read_detections(path)

        assert [s.algorithm_id for s in grouped["a"]] == ["d1", "d2"]
        assert grouped["b"][0].boxes == ()

    def test_repeated_grounding(self, tmp_path):
        """Test a repeated grounding id is rejected."""
        path = tmp_path / "grounding.jsonl"
        row = {"image_id": "a", "boxes": [[0, 0, 5, 5], [6, 0, 9, 5]]}
        path.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")

        with pytest.raises(RecordValidationError):
            ArtifactService.read_grounding(path)


class TestValidators:
    """Tests for schema checks."""

    def test_valid_record(self):
        """Test a minimal record passes unchanged."""
        record = valid_record()

        assert validate_record(record) is record

    @pytest.mark.parametrize(
        "changes",
        [
            {"persons": "none"},
            {"persons": [{"bbox": [5, 5, 1, 1]}]},
            {"persons": [{"bbox": [0, 0, 1]}]},
            {"persons": [{"bbox": [0, 0, 1, 1], "keypoints": [[0, 0, 1]]}]},
            {"persons": [{"bbox": [0, 0, 1, 1], "caption_slot": -1}]},
            {"composition": "wide"},
            {"split": "validation"},
            {"width": -4},
            {"width": True},
        ],
    )
    def test_invalid_record(self, changes):
        """Test malformed fields are rejected."""
        with pytest.raises(RecordValidationError):
            validate_record(valid_record(**changes))

    def test_detection(self):
        """Test detections need string ids and a box list."""
        assert validate_detection({"image_id": "a", "algorithm_id": "d", "boxes": []})
        with pytest.raises(RecordValidationError):
            validate_detection({"image_id": "a", "boxes": []})

    def test_grounding_needs_two_boxes(self):
        """Test grounding entries hold exactly two boxes."""
        with pytest.raises(RecordValidationError):
            validate_grounding({"image_id": "a", "boxes": [[0, 0, 1, 1]]})


class TestImages:
    """Tests for PNG artifacts."""

    def test_png_with_config(self, tmp_path):
        """Test pixels and embedded configuration read back."""
        image = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)

        path = ArtifactService.write_png(image, tmp_path / "img.png", config={"seed": 3, "lambda": 0.5})
        pixels, config = ArtifactService.read_png(path)

        assert np.array_equal(pixels, image)
        assert config == {"lambda": 0.5, "seed": 3}

    def test_png_without_config(self, tmp_path):
        """Test images without configuration read back None."""
        path = ArtifactService.write_png(np.zeros((2, 2, 3), dtype=np.uint8), tmp_path / "img.png")

        assert ArtifactService.read_png(path)[1] is None

    def test_same_bytes(self, tmp_path):
        """Test equal images and configs write equal files."""
        image = np.full((4, 4, 3), 7, dtype=np.uint8)

        a = ArtifactService.write_png(image, tmp_path / "a.png", config={"seed": 1})
        b = ArtifactService.write_png(image, tmp_path / "b.png", config={"seed": 1})

        assert a.read_bytes() == b.read_bytes()

    def test_missing_png(self, tmp_path):
        """Test a missing image is an IO error."""
        with pytest.raises(ArtifactIOError):
            ArtifactService.read_png(tmp_path / "absent.png")

    def test_record_without_path(self, corpus, tmp_path):
        """Test records without an image path cannot be loaded."""
        with pytest.raises(RecordValidationError):
            ArtifactService.record_image(corpus[0].record, tmp_path)


class TestTables:
    """Tests for loss curves and CSV tables."""

    def test_loss_curve(self, tmp_path):
        """Test curves are two columns per line."""
        path = ArtifactService.write_loss_curve([(1, 0.5), (2, 0.25)], tmp_path / "loss.txt")

        assert path.read_text() == "1 5.00000000e-01\n2 2.50000000e-01\n"
        assert ArtifactService.read_loss_curve(path) == [(1, 0.5), (2, 0.25)]

    def test_malformed_loss_curve(self, tmp_path):
        """Test malformed curve lines are rejected."""
        path = tmp_path / "loss.txt"
        path.write_text("1 0.5 extra\n")

        with pytest.raises(RecordValidationError):
            ArtifactService.read_loss_curve(path)

    def test_csv(self, tmp_path):
        """Test tables round-trip through CSV."""
        frame = pd.DataFrame({"lambda": [0.3, 0.5], "n": [2, 2]})

        path = ArtifactService.write_csv(frame, tmp_path / "sweep.csv")

        assert path.read_text().splitlines()[0] == "lambda,n"
        pd.testing.assert_frame_equal(ArtifactService.read_csv(path), frame)

    def test_json(self, tmp_path):
        """Test JSON files are sorted and indented."""
        path = ArtifactService.write_json({"b": 1, "a": [1, 2]}, tmp_path / "c.json")

        assert path.read_text().startswith('{\n  "a"')
        assert ArtifactService.read_json(path) == {"a": [1, 2], "b": 1}
