"""
Statistics service: corpus panels as pandas DataFrames.
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from duetdiff.models.annotation import AnnotationRecord
from duetdiff.models.prompt import tokenize
from duetdiff.utils.constants import KEYPOINT_NAMES, VERB_LEXICON, VISIBILITY_THRESHOLD
from duetdiff.utils.formatters import format_percentage

logger = logging.getLogger(__name__)

RATIO_BINS = np.linspace(0.0, 1.0, 11)
TOP_ATTIRE = 30


def _frequency(values: Sequence[str], column: str) -> pd.DataFrame:
    counts = pd.Series(list(values), dtype="object").value_counts(sort=False)
    frame = counts.rename_axis(column).reset_index(name="count")
    frame = frame.sort_values(["count", column], ascending=[False, True], kind="mergesort").reset_index(drop=True)
    total = frame["count"].sum()
    frame["share"] = frame["count"] / total if total else 0.0
    return frame


@dataclass
class StatsReport:
    """Named statistics panels."""

    record_count: int
    panels: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.panels[name]

    def share(self, panel: str, key: str) -> float:
        """Share of ``key`` in a frequency panel; 0 when absent."""
        frame = self.panels[panel]
        rows = frame[frame.iloc[:, 0] == key]
        return float(rows["share"].iloc[0]) if len(rows) else 0.0

    def to_text(self) -> str:
        lines = [f"records: {self.record_count}"]
        for name in ("topics", "compositions", "scenes", "genders", "age_groups"):
            frame = self.panels.get(name)
            if frame is None or frame.empty:
                continue
            lines.append(f"[{name}]")
            for key, count, share in frame.itertuples(index=False):
                lines.append(f"  {key}: {count} ({format_percentage(share * 100.0)})")
        return "\n".join(lines) + "\n"


class StatsService:
    """Service for corpus statistics."""

    @staticmethod
    def bbox_ratios(records: Sequence[AnnotationRecord]) -> pd.DataFrame:
        """Per-person box size relative to the image."""
        rows = []
        for record in records:
            for slot, person in enumerate(record.persons):
                if not record.width or not record.height:
                    continue
                w = person.bbox.width / record.width
                h = person.bbox.height / record.height
                rows.append(
                    {
                        "image_id": record.image_id,
                        "person": slot,
                        "width_ratio": w,
                        "height_ratio": h,
                        "area_ratio": w * h,
                    }
                )
        return pd.DataFrame(rows, columns=["image_id", "person", "width_ratio", "height_ratio", "area_ratio"])

    @staticmethod
    def ratio_histograms(ratios: pd.DataFrame) -> pd.DataFrame:
        columns = {}
        for name in ("area_ratio", "width_ratio", "height_ratio"):
            counts, _ = np.histogram(ratios[name].clip(0.0, 1.0), bins=RATIO_BINS)
            columns[name] = counts
        frame = pd.DataFrame(columns)
        frame.insert(0, "bin_low", RATIO_BINS[:-1])
        frame.insert(1, "bin_high", RATIO_BINS[1:])
        return frame

    @staticmethod
    def keypoint_visibility(records: Sequence[AnnotationRecord]) -> pd.DataFrame:
        """Share of persons with each keypoint visible, per topic."""
        rows = []
        for record in records:
            for person in record.persons:
                if person.keypoints is None:
                    continue
                row = {"topic": record.topic}
                row.update({name: person.keypoints.visible(name, VISIBILITY_THRESHOLD) for name in KEYPOINT_NAMES})
                rows.append(row)
        if not rows:
            return pd.DataFrame(columns=["topic", *KEYPOINT_NAMES])
        return pd.DataFrame(rows).groupby("topic", sort=True)[list(KEYPOINT_NAMES)].mean().reset_index()

    @staticmethod
    def verb_frequencies(records: Sequence[AnnotationRecord]) -> pd.DataFrame:
        """Records whose caption uses each lexicon verb."""
        verbs: List[str] = []
        lexicon = set(VERB_LEXICON)
        for record in records:
            verbs.extend(sorted(set(tokenize(record.caption)) & lexicon))
        return _frequency(verbs, "verb")

    @staticmethod
    def attire_pairs(records: Sequence[AnnotationRecord]) -> pd.DataFrame:
        """Adjective-noun attire combinations over all persons."""
        pairs = [
            f"{adjective} {noun}"
            for record in records
            for person in record.persons
            for adjective, noun in product(person.attire_adjectives, person.attire_nouns)
        ]
        return _frequency(pairs, "attire").head(TOP_ATTIRE)

    @staticmethod
    def attire_nouns_by_topic(records: Sequence[AnnotationRecord]) -> pd.DataFrame:
        rows = [
            {"topic": record.topic, "noun": noun}
            for record in records
            for person in record.persons
            for noun in person.attire_nouns
        ]
        if not rows:
            return pd.DataFrame(columns=["topic", "noun", "count"])
        frame = pd.DataFrame(rows).value_counts(["topic", "noun"]).reset_index(name="count")
        frame = frame.sort_values(["topic", "count", "noun"], ascending=[True, False, True], kind="mergesort")
        return frame.groupby("topic", sort=True).head(TOP_ATTIRE).reset_index(drop=True)

    @staticmethod
    def compute_stats(records: Sequence[AnnotationRecord]) -> StatsReport:
        """
        Build every statistics panel.

        Record-level panels (topics, compositions, scenes, verbs) count each
        record once; person-level panels count each person once.
        """
        persons = [p for r in records for p in r.persons]
        ratios = StatsService.bbox_ratios(records)
        report = StatsReport(
            record_count=len(records),
            panels={
                "topics": _frequency([r.topic for r in records], "topic"),
                "compositions": _frequency([r.composition or "unknown" for r in records], "composition"),
                "scenes": _frequency([r.scene for r in records], "scene"),
                "genders": _frequency([p.gender or "unknown" for p in persons], "gender"),
                "age_groups": _frequency([p.age_group or "unknown" for p in persons], "age_group"),
                "keypoint_visibility": StatsService.keypoint_visibility(records),
                "bbox_ratios": ratios,
                "bbox_histograms": StatsService.ratio_histograms(ratios),
                "verbs": StatsService.verb_frequencies(records),
                "attire_pairs": StatsService.attire_pairs(records),
                "attire_nouns_by_topic": StatsService.attire_nouns_by_topic(records),
            },
        )
        logger.info(f"Computed statistics over {len(records)} records")
        return report
