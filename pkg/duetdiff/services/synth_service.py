"""
Synthetic pair-portrait generator.

Renders two face glyphs on a scene with PIL, and writes the ground-truth
annotation record for the render. Canvas geometry is 64x64; record
coordinates are canvas coordinates scaled to a nominal 1024x1024 source.
"""

import colorsys
import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from duetdiff.models.annotation import AnnotationRecord, BBox, DetectionSet, PersonAnnotation, PersonKeypoints
from duetdiff.models.identity import IDENTITY_DIM, SceneSpec, ToyIdentity
from duetdiff.utils.constants import (
    ATTIRE_COLORS,
    CANVAS_SIZE,
    CAPTION_SUBJECT_SLOTS,
    COMPOSITION_TILE_Y,
    COMPOSITIONS,
    DETECTOR_IDS,
    GARMENTS,
    GENDER_WORDS,
    GLYPH_FRAME_COLOR,
    GLYPH_SIZE,
    REFERENCE_SIZE,
    SCENE_COLORS,
    SCENE_TAGS,
    SLOT_TILE_X,
    SOURCE_SCALE,
    TOPIC_GENDERS,
    TOPICS,
    VERB_LEXICON,
    Composition,
)
from duetdiff.utils.exceptions import InputError

logger = logging.getLogger(__name__)

SKIN_TONES = (
    (247, 216, 190),
    (232, 190, 150),
    (198, 150, 110),
    (150, 105, 75),
    (105, 72, 52),
)
EYE_COLOR = (40, 32, 56)
REFERENCE_BACKGROUND = (214, 214, 214)

# Canvas offsets of body keypoints relative to the face tile's top edge
_BODY_ROWS = {
    "shoulder": 19,
    "elbow": 28,
    "wrist": 36,
    "hip": 37,
    "knee": 46,
    "ankle": 54,
}
_BODY_COLUMNS = {"shoulder": 7, "elbow": 9, "wrist": 9, "hip": 4, "knee": 4, "ankle": 4}
_VISIBLE_PARTS = {
    Composition.FULL_BODY: ("shoulder", "elbow", "wrist", "hip", "knee", "ankle"),
    Composition.HALF_BODY: ("shoulder", "elbow", "wrist", "hip"),
    Composition.CLOSE_UP: (),
}
KEYPOINT_CONFIDENCE = 0.95


@dataclass(frozen=True)
class SyntheticSample:
    """A rendered pair image with its record and identities."""

    image: np.ndarray
    record: AnnotationRecord
    identities: Tuple[ToyIdentity, ToyIdentity]


def _eye_offset(identity: ToyIdentity) -> int:
    return 2 if identity.eye_spacing < 0.5 else 3


@lru_cache(maxsize=8192)
def _glyph_bytes(identity: ToyIdentity) -> bytes:
    g = GLYPH_SIZE
    hair = tuple(int(round(c * 255)) for c in colorsys.hsv_to_rgb(identity.hue, 0.55, 0.4 + 0.3 * identity.skin_tone))
    skin = SKIN_TONES[min(int(identity.skin_tone * len(SKIN_TONES)), len(SKIN_TONES) - 1)]
    img = Image.new("RGB", (g, g), hair)
    draw = ImageDraw.Draw(img)

    rx = 4 + int(round(identity.face_aspect))
    ry = 6 - int(round(identity.face_aspect))
    draw.ellipse([8 - rx, 8 - ry, 7 + rx, 8 + ry], fill=skin)

    band = 1 + int(identity.hair_band * 3.999)
    draw.rectangle([1, 1, g - 2, band], fill=hair)

    e = _eye_offset(identity)
    size = 1 if identity.eye_size < 0.5 else 2
    for x in (8 - e - 1, 8 + e):
        draw.rectangle([x, 8 - size + 1, x + size - 1, 8], fill=EYE_COLOR)

    mouth = (150 + int(identity.mouth_curve * 80), 60, 70)
    lift = 1 if identity.mouth_curve > 0.5 else -1
    draw.line([(6, 11), (9, 11)], fill=mouth)
    draw.point([(5, 11 - lift), (10, 11 - lift)], fill=mouth)

    if identity.outline_weight >= 0.5:
        inner = tuple(max(20, c // 2) for c in hair)
        draw.rectangle([1, 1, g - 2, g - 2], outline=inner)
    draw.rectangle([0, 0, g - 1, g - 1], outline=GLYPH_FRAME_COLOR)
    return np.asarray(img, dtype=np.uint8).tobytes()


def _scale_color(color: Sequence[int], factor: float) -> Tuple[int, int, int]:
    return tuple(max(1, min(255, int(round(c * factor)))) for c in color)


class SynthService:
    """Service for synthetic identities, renders and corpora."""

    @staticmethod
    def make_identity(seed: int) -> ToyIdentity:
        """Deterministic identity from a seed."""
        rng = np.random.default_rng(int(seed))
        return ToyIdentity(tuple(float(x) for x in rng.random(IDENTITY_DIM)))

    @staticmethod
    def render_glyph(identity: ToyIdentity) -> np.ndarray:
        """
        Render an identity's face tile.

        The tile is 16x16 RGB with a pure-black one-pixel frame; no other pixel
        of any render is pure black.
        """
        return np.frombuffer(_glyph_bytes(identity), dtype=np.uint8).reshape(GLYPH_SIZE, GLYPH_SIZE, 3).copy()

    @staticmethod
    def compose_reference(tile: np.ndarray, background: Tuple[int, int, int] = REFERENCE_BACKGROUND) -> np.ndarray:
        """Center a face tile on a 32x32 reference canvas."""
        canvas = Image.new("RGB", (REFERENCE_SIZE, REFERENCE_SIZE), background)
        offset = (REFERENCE_SIZE - tile.shape[0]) // 2
        canvas.paste(Image.fromarray(tile), (offset, offset))
        return np.asarray(canvas, dtype=np.uint8).copy()

    @staticmethod
    def render_reference(identity: ToyIdentity, background: Tuple[int, int, int] = REFERENCE_BACKGROUND) -> np.ndarray:
        """Reference image of one identity."""
        return SynthService.compose_reference(SynthService.render_glyph(identity), background)

    @staticmethod
    def person_geometry(anchor: BBox, composition: str, identity: ToyIdentity) -> Tuple[BBox, PersonKeypoints]:
        """
        Person box and keypoints for a face tile anchored at ``anchor``.

        Both are in canvas pixels. Keypoints hidden by the composition have
        confidence 0 and coordinates (0, 0).
        """
        tx, ty = anchor.x0, anchor.y0
        cx, cy = tx + GLYPH_SIZE / 2, ty + GLYPH_SIZE / 2
        e = _eye_offset(identity)
        named: Dict[str, Tuple[float, float, float]] = {
            "nose": (cx, cy + 2, KEYPOINT_CONFIDENCE),
            "left_eye": (cx + e, cy, KEYPOINT_CONFIDENCE),
            "right_eye": (cx - e, cy, KEYPOINT_CONFIDENCE),
            "left_ear": (cx + 4, cy, KEYPOINT_CONFIDENCE),
            "right_ear": (cx - 4, cy, KEYPOINT_CONFIDENCE),
        }
        for part in _VISIBLE_PARTS[composition]:
            dx, dy = _BODY_COLUMNS[part], _BODY_ROWS[part]
            named[f"left_{part}"] = (cx + dx, ty + dy, KEYPOINT_CONFIDENCE)
            named[f"right_{part}"] = (cx - dx, ty + dy, KEYPOINT_CONFIDENCE)
        person = BBox(tx - 5, ty - 2, tx + GLYPH_SIZE + 5, CANVAS_SIZE)
        return person, PersonKeypoints.from_named(named)

    @staticmethod
    def render_pair(
        id1: ToyIdentity,
        id2: ToyIdentity,
        scene: SceneSpec,
        size: int = CANVAS_SIZE,
        image_id: str = "pair",
    ) -> Tuple[np.ndarray, AnnotationRecord]:
        """
        Render two identities into a scene.

        Args:
            id1: Subject 1 (left anchor)
            id2: Subject 2 (right anchor)
            scene: Layout and metadata
            size: Output side; a multiple of 64
            image_id: Identifier stored in the record

        Returns:
            Tuple of (HWC uint8 image, ground-truth AnnotationRecord)

        Raises:
            InputError: Anchors outside the canvas or a size that is not a multiple of 64
        """
        if size < CANVAS_SIZE or size % CANVAS_SIZE != 0:
            raise InputError(f"Render size must be a multiple of {CANVAS_SIZE}, got {size}")
        for anchor in scene.anchors:
            if anchor.x1 > CANVAS_SIZE or anchor.y1 > CANVAS_SIZE or anchor.width != GLYPH_SIZE:
                raise InputError(f"Anchor {anchor.to_list()} does not fit the canvas")

        background = SCENE_COLORS.get(scene.scene, SCENE_COLORS["other"])
        img = Image.new("RGB", (CANVAS_SIZE, CANVAS_SIZE), background)
        draw = ImageDraw.Draw(img)
        draw.rectangle([0, 48, CANVAS_SIZE - 1, CANVAS_SIZE - 1], fill=_scale_color(background, 0.85))

        persons = []
        slots = zip((id1, id2), scene.anchors, scene.colors, scene.genders)
        for slot, (identity, anchor, color, word) in enumerate(slots):
            tx, ty = int(anchor.x0), int(anchor.y0)
            attire = ATTIRE_COLORS[color]
            skin = SKIN_TONES[min(int(identity.skin_tone * len(SKIN_TONES)), len(SKIN_TONES) - 1)]
            draw.rectangle([tx + 1, ty + 16, tx + 14, CANVAS_SIZE - 1], fill=attire)
            draw.rectangle([tx - 3, ty + 18, tx, ty + 36], fill=skin)
            draw.rectangle([tx + 15, ty + 18, tx + 18, ty + 36], fill=skin)
            img.paste(Image.fromarray(SynthService.render_glyph(identity)), (tx, ty))

            person_box, keypoints = SynthService.person_geometry(anchor, scene.composition, identity)
            gender, age_group = GENDER_WORDS[word]
            scaled = PersonKeypoints(
                tuple((x * SOURCE_SCALE, y * SOURCE_SCALE, c) for x, y, c in keypoints.points)
            )
            persons.append(
                PersonAnnotation(
                    bbox=person_box.scaled(SOURCE_SCALE),
                    gender=gender,
                    age_group=age_group,
                    attire_nouns=(scene.garment,),
                    attire_adjectives=(color,),
                    verbs=(scene.verb,),
                    keypoints=scaled,
                    face_bbox=anchor.scaled(SOURCE_SCALE),
                    caption_slot=CAPTION_SUBJECT_SLOTS[slot],
                )
            )

        if size != CANVAS_SIZE:
            img = img.resize((size, size), Image.NEAREST)
        image = np.asarray(img, dtype=np.uint8).copy()
        record = AnnotationRecord(
            image_id=image_id,
            caption=scene.caption,
            topic=scene.topic,
            scene=scene.scene,
            persons=tuple(persons),
            composition=scene.composition,
            width=CANVAS_SIZE * SOURCE_SCALE,
            height=CANVAS_SIZE * SOURCE_SCALE,
            content_hash=hashlib.sha256(image.tobytes()).hexdigest(),
        )
        return image, record

    @staticmethod
    def make_scene(
        index: int,
        rng: np.random.Generator,
        topic: Optional[str] = None,
        composition: Optional[str] = None,
        scene: Optional[str] = None,
    ) -> SceneSpec:
        """
        Scene for the index-th record of a corpus.

        Topics cycle every record, compositions every four records and scene
        tags every record over the seven tags, so small corpora already cover
        all of them. Genders, verb, attire and garment come from ``rng``.
        """
        topic = topic or TOPICS[index % len(TOPICS)]
        composition = composition or COMPOSITIONS[(index // len(TOPICS)) % len(COMPOSITIONS)]
        scene = scene or SCENE_TAGS[index % len(SCENE_TAGS)]
        options = TOPIC_GENDERS[topic]
        genders = options[int(rng.integers(len(options)))]
        color_names = list(ATTIRE_COLORS)
        colors = (color_names[int(rng.integers(len(color_names)))], color_names[int(rng.integers(len(color_names)))])
        ty = COMPOSITION_TILE_Y[composition]
        anchors = tuple(BBox(tx, ty, tx + GLYPH_SIZE, ty + GLYPH_SIZE) for tx in SLOT_TILE_X)
        return SceneSpec(
            scene=scene,
            topic=topic,
            composition=composition,
            anchors=anchors,
            genders=genders,
            verb=VERB_LEXICON[int(rng.integers(len(VERB_LEXICON)))],
            garment=GARMENTS[int(rng.integers(len(GARMENTS)))],
            colors=colors,
        )

    @staticmethod
    def make_dataset(n: int, seed: int) -> List[SyntheticSample]:
        """
        Render a corpus of n pair images.

        Args:
            n: Number of records (>= 1)
            seed: Corpus seed

        Returns:
            List of SyntheticSample in index order
        """
        if n < 1:
            raise InputError(f"A corpus needs at least one record, got {n}")
        rng = np.random.default_rng(int(seed))
        samples = []
        for i in range(n):
            scene = SynthService.make_scene(i, rng)
            seeds = tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=2))
            identities = (SynthService.make_identity(seeds[0]), SynthService.make_identity(seeds[1]))
            image, record = SynthService.render_pair(identities[0], identities[1], scene, image_id=f"s{seed}_{i:05d}")
            record = record.with_changes(identity_seeds=seeds)
            samples.append(SyntheticSample(image=image, record=record, identities=identities))
        logger.info(f"Rendered synthetic corpus: {n} records (seed {seed})")
        return samples

    @staticmethod
    def simulate_detections(
        record: AnnotationRecord,
        rng: np.random.Generator,
        jitter: float = 12.0,
        detectors: Sequence[str] = DETECTOR_IDS,
    ) -> Tuple[Tuple[BBox, BBox], List[DetectionSet]]:
        """
        Noisy grounding boxes and detector outputs for a rendered record.

        Detector box order is shuffled per detector so calibration has to
        align them.
        """

        def jittered(box: BBox, scale: float) -> BBox:
            d = rng.normal(0.0, scale, size=4)
            x0 = max(0.0, box.x0 + d[0])
            y0 = max(0.0, box.y0 + d[1])
            x1 = min(float(record.width), max(x0 + 1.0, box.x1 + d[2]))
            y1 = min(float(record.height), max(y0 + 1.0, box.y1 + d[3]))
            return BBox(round(x0, 2), round(y0, 2), round(x1, 2), round(y1, 2))

        truth = [p.bbox for p in record.persons]
        llava = (jittered(truth[0], 2 * jitter), jittered(truth[1], 2 * jitter))
        sets = []
        for algorithm_id in detectors:
            boxes = [jittered(b, jitter) for b in truth]
            if rng.random() < 0.5:
                boxes.reverse()
            sets.append(DetectionSet(algorithm_id=algorithm_id, boxes=tuple(boxes), image_id=record.image_id))
        return llava, sets
