"""
Artifact service: reading and writing run outputs.

Every writer creates parent directories and produces byte-stable output for
equal inputs; every failure surfaces as ArtifactIOError (I/O) or
RecordValidationError (malformed content).
"""

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from duetdiff.models.annotation import AnnotationRecord, BBox, DetectionSet
from duetdiff.models.mixins import SerializableMixin
from duetdiff.services.sampler_service import SampleTrace
from duetdiff.utils.exceptions import ArtifactIOError, RecordValidationError
from duetdiff.validators import validate_detection, validate_grounding, validate_record

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PNG_CONFIG_KEY = "duetdiff:config"


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Cannot create directory {path.parent}: {e}", path=str(path))
    return path


def _write_text(path: PathLike, text: str) -> Path:
    path = _prepare(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}", path=str(path))
    return path


def _read_text(path: PathLike) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ArtifactIOError(f"File not found: {path}", path=str(path))
    except (OSError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}", path=str(path))


def _as_dict(row: Union[Mapping[str, Any], SerializableMixin]) -> Mapping[str, Any]:
    return row.to_dict() if isinstance(row, SerializableMixin) else row


class ArtifactService:
    """Service for artifact persistence."""

    # -------------------------------------------------------------------------
    # JSON and JSON Lines
    # -------------------------------------------------------------------------

    @staticmethod
    def write_json(data: Any, path: PathLike) -> Path:
        return _write_text(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    @staticmethod
    def read_json(path: PathLike) -> Any:
        try:
            return json.loads(_read_text(path))
        except json.JSONDecodeError as e:
            raise RecordValidationError(f"Invalid JSON in {path}: {e}", path=str(path))

    @staticmethod
    def write_text(text: str, path: PathLike) -> Path:
        return _write_text(path, text)

    @staticmethod
    def write_jsonl(rows: Iterable[Union[Mapping[str, Any], SerializableMixin]], path: PathLike) -> Path:
        """One compact JSON object per line, keys in insertion order."""
        lines = [json.dumps(_as_dict(row), ensure_ascii=False, separators=(",", ":")) for row in rows]
        return _write_text(path, "".join(line + "\n" for line in lines))

    @staticmethod
    def read_jsonl(path: PathLike, validator: Optional[Callable[[Any, int], Any]] = None) -> List[Any]:
        """
        Decode a JSON Lines file, skipping blank lines.

        Args:
            path: Input file
            validator: Called with (value, line number) for every line

        Raises:
            ArtifactIOError: The file is missing or unreadable
            RecordValidationError: A line is not JSON or fails validation
        """
        rows = []
        for number, line in enumerate(_read_text(path).splitlines(), start=1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordValidationError(f"Invalid JSON on line {number} of {path}: {e.msg}", line=number)
            if validator is not None:
                validator(value, number)
            rows.append(value)
        return rows

    @staticmethod
    def read_records(path: PathLike) -> List[AnnotationRecord]:
        rows = ArtifactService.read_jsonl(path, validate_record)
        records = [AnnotationRecord.from_dict(row) for row in rows]
        logger.debug(f"Read {len(records)} records from {path}")
        return records

    @staticmethod
    def read_detections(path: PathLike) -> Dict[str, List[DetectionSet]]:
        """Detection sets grouped by image id, in file order."""
        grouped: Dict[str, List[DetectionSet]] = defaultdict(list)
        for row in ArtifactService.read_jsonl(path, validate_detection):
            grouped[row["image_id"]].append(DetectionSet.from_dict(row))
        return dict(grouped)

    @staticmethod
    def read_grounding(path: PathLike) -> Dict[str, Tuple[BBox, BBox]]:
        """Grounding box pairs by image id; a repeated id raises RecordValidationError."""
        pairs: Dict[str, Tuple[BBox, BBox]] = {}
        for row in ArtifactService.read_jsonl(path, validate_grounding):
            image_id = row["image_id"]
            if image_id in pairs:
                raise RecordValidationError(f"Repeated grounding entry for {image_id}", image_id=image_id)
            pairs[image_id] = (BBox.from_list(row["boxes"][0]), BBox.from_list(row["boxes"][1]))
        return pairs

    # -------------------------------------------------------------------------
    # Tables and curves
    # -------------------------------------------------------------------------

    @staticmethod
    def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
        path = _prepare(path)
        try:
            frame.to_csv(path, index=False, lineterminator="\n", float_format="%.6g")
        except OSError as e:
            raise ArtifactIOError(f"Cannot write {path}: {e}", path=str(path))
        return path

    @staticmethod
    def read_csv(path: PathLike) -> pd.DataFrame:
        path = Path(path)
        if not path.is_file():
            raise ArtifactIOError(f"File not found: {path}", path=str(path))
        return pd.read_csv(path)

    @staticmethod
    def write_loss_curve(losses: Sequence[Tuple[int, float]], path: PathLike) -> Path:
        """Two whitespace-separated columns: step and loss."""
        return _write_text(path, "".join(f"{step} {loss:.8e}\n" for step, loss in losses))

    @staticmethod
    def read_loss_curve(path: PathLike) -> List[Tuple[int, float]]:
        losses = []
        for line in _read_text(path).splitlines():
            parts = line.split()
            if len(parts) != 2:
                raise RecordValidationError(f"Malformed loss curve line in {path}: {line!r}")
            losses.append((int(parts[0]), float(parts[1])))
        return losses

    @staticmethod
    def write_trace(trace: SampleTrace, path: PathLike) -> Path:
        return ArtifactService.write_jsonl(trace.to_records(), path)

    # -------------------------------------------------------------------------
    # Images
    # -------------------------------------------------------------------------

    @staticmethod
    def write_png(image: np.ndarray, path: PathLike, config: Optional[Mapping[str, Any]] = None) -> Path:
        """
        Write an HWC uint8 image, embedding ``config`` as JSON in a tEXt chunk.
        """
        path = _prepare(path)
        info = None
        if config is not None:
            info = PngInfo()
            info.add_text(PNG_CONFIG_KEY, json.dumps(dict(config), sort_keys=True))
        try:
            Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG", pnginfo=info)
        except OSError as e:
            raise ArtifactIOError(f"Cannot write image {path}: {e}", path=str(path))
        return path

    @staticmethod
    def read_png(path: PathLike) -> Tuple[np.ndarray, Optional[Dict[str, Any]]]:
        """
        Returns:
            Tuple of (HWC uint8 RGB array, embedded config or None)
        """
        path = Path(path)
        try:
            with Image.open(path) as img:
                text = getattr(img, "text", {}) or {}
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
        except FileNotFoundError:
            raise ArtifactIOError(f"Image not found: {path}", path=str(path))
        except OSError as e:
            raise ArtifactIOError(f"Unreadable image {path}: {e}", path=str(path))
        config = json.loads(text[PNG_CONFIG_KEY]) if PNG_CONFIG_KEY in text else None
        return arr, config

    @staticmethod
    def record_image(record: AnnotationRecord, root: PathLike) -> np.ndarray:
        """Load a record's image, resolving ``image_path`` against ``root``."""
        if not record.image_path:
            raise RecordValidationError(f"Record {record.image_id} has no image_path", image_id=record.image_id)
        return ArtifactService.read_png(Path(root) / record.image_path)[0]
