"""
Evaluation service: face detection by template matching, identity
similarity, face area, lambda sweeps and attention saliency.

Faces are found by normalized cross-correlation (NCC) against a bank of
rendered face tiles at three scales; similarities are NCC scores between a
detected face and a reference tile of the same size.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402
from numpy.lib.stride_tricks import sliding_window_view  # noqa: E402
from PIL import Image  # noqa: E402

from duetdiff.models.annotation import AnnotationRecord, BBox  # noqa: E402
from duetdiff.models.identity import ToyIdentity  # noqa: E402
from duetdiff.models.prompt import ConditioningBundle  # noqa: E402
from duetdiff.models.schedule import NoiseSchedule  # noqa: E402
from duetdiff.models.settings import SamplerConfig  # noqa: E402
from duetdiff.nn.attention import upsample_map  # noqa: E402
from duetdiff.nn.denoiser import DuetDiffModel  # noqa: E402
from duetdiff.services.calibration_service import iou  # noqa: E402
from duetdiff.services.encoder_service import ImageLike, as_array  # noqa: E402
from duetdiff.services.sampler_service import SampleTrace, SamplerService  # noqa: E402
from duetdiff.services.synth_service import SynthService  # noqa: E402
from duetdiff.utils.constants import CANVAS_SIZE, CI_Z, GLYPH_SIZE, MAX_FACES, NCC_THRESHOLD, NMS_IOU  # noqa: E402
from duetdiff.utils.exceptions import ArtifactIOError, InputError  # noqa: E402

logger = logging.getLogger(__name__)

SCALE_FACTORS = (1, 2, 4)
BRANCHES = ("i1", "i2")


def _resize_tile(tile: np.ndarray, side: int) -> np.ndarray:
    if tile.shape[0] == side:
        return tile
    resample = Image.BOX if side < tile.shape[0] else Image.NEAREST
    return np.asarray(Image.fromarray(tile).resize((side, side), resample))


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """
    Normalized cross-correlation of two equal-shape arrays.

    This is the cosine similarity of the mean-centred, flattened arrays, so
    it ignores brightness offsets and contrast scale. 0 when either is flat.
    """
    a = a.astype(np.float64).ravel()
    b = b.astype(np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def _ncc_map(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC of the template at every valid top-left position; (H - s + 1, W - s + 1)."""
    s = template.shape[0]
    windows = sliding_window_view(image.astype(np.float64), (s, s, 3))[:, :, 0]
    windows = windows.reshape(windows.shape[0], windows.shape[1], -1)
    t = template.astype(np.float64).ravel()
    t = t - t.mean()
    t_norm = np.linalg.norm(t)
    if t_norm == 0:
        return np.zeros(windows.shape[:2])
    centered = windows - windows.mean(axis=-1, keepdims=True)
    w_norm = np.linalg.norm(centered, axis=-1)
    scores = centered @ t
    return np.divide(scores, w_norm * t_norm, out=np.zeros_like(scores), where=w_norm > 0)


def _overlaps(a: BBox, b: BBox, threshold: float) -> bool:
    return iou(a, b) > threshold or a.contains(b) or b.contains(a)


@dataclass(frozen=True)
class FaceDetection:
    box: BBox
    score: float
    identity: int


@dataclass(frozen=True)
class SimilarityReport:
    """Identity similarity of a generated image to its two references."""

    s1: float
    s2: float
    margin: float
    flagged: bool
    faces: Tuple[FaceDetection, ...] = ()


@dataclass
class SaliencyReport:
    """
    Attention saliency per reference branch.

    ``maps`` average every visual token; ``first_token_maps`` use only the
    first token. Each map is (S, S), non-negative and sums to 1. ``mass``
    has one row per (view, branch, subject box).
    """

    maps: Dict[str, np.ndarray] = field(default_factory=dict)
    first_token_maps: Dict[str, np.ndarray] = field(default_factory=dict)
    mass: pd.DataFrame = field(default_factory=pd.DataFrame)

    def mass_in(self, branch: str, subject: int, view: str = "all_tokens") -> float:
        mass = self.mass
        rows = mass[(mass["view"] == view) & (mass["branch"] == branch) & (mass["subject"] == subject)]
        return float(rows["mass"].iloc[0])


class GlyphBank:
    """Rendered face tiles of known identities, resized per image scale."""

    def __init__(self, identities: Sequence[ToyIdentity]):
        if not identities:
            raise InputError("A glyph bank needs at least one identity")
        self.identities = tuple(identities)
        self._tiles = [SynthService.render_glyph(identity) for identity in self.identities]

    def __len__(self) -> int:
        return len(self.identities)

    @classmethod
    def default(cls, size: int = 32) -> "GlyphBank":
        """Bank of identities seeded 0 .. size-1."""
        return cls([SynthService.make_identity(seed) for seed in range(size)])

    @staticmethod
    def scales(image_side: int) -> List[int]:
        base = GLYPH_SIZE * image_side / CANVAS_SIZE
        return [int(round(base * f)) for f in SCALE_FACTORS if 2 <= round(base * f) <= image_side]

    def template(self, index: int, side: int) -> np.ndarray:
        return _resize_tile(self._tiles[index], side)


class EvaluationService:
    """Service for desk-scale evaluation proxies."""

    @staticmethod
    def detect_faces(
        image: ImageLike,
        bank: GlyphBank,
        threshold: float = NCC_THRESHOLD,
        max_faces: int = MAX_FACES,
    ) -> List[FaceDetection]:
        """
        Face tiles found in an image.

        Candidates at or above ``threshold`` from every template and scale
        are taken best first; a candidate overlapping a kept one (IoU above
        0.3 or containment) is skipped.

        Returns:
            Up to ``max_faces`` detections sorted left to right
        """
        arr = as_array(image)
        side = min(arr.shape[:2])
        candidates = []
        for s in GlyphBank.scales(side):
            for index in range(len(bank)):
                scores = _ncc_map(arr, bank.template(index, s))
                ys, xs = np.nonzero(scores >= threshold)
                candidates.extend((float(scores[y, x]), int(x), int(y), s, index) for y, x in zip(ys, xs))
        candidates.sort(key=lambda c: (-c[0], c[3], c[2], c[1], c[4]))

        kept: List[FaceDetection] = []
        for score, x, y, s, index in candidates:
            box = BBox(x, y, x + s, y + s)
            if any(_overlaps(box, k.box, NMS_IOU) for k in kept):
                continue
            kept.append(FaceDetection(box=box, score=score, identity=index))
            if len(kept) == max_faces:
                break
        return sorted(kept, key=lambda d: (d.box.x0, d.box.y0))

    @staticmethod
    def face_area_fraction(image: ImageLike, bank: Optional[GlyphBank] = None) -> float:
        """Area of the union of detected faces over the image area; 0 without faces."""
        arr = as_array(image)
        detections = EvaluationService.detect_faces(arr, bank or GlyphBank.default())
        mask = np.zeros(arr.shape[:2], dtype=bool)
        for d in detections:
            mask[int(d.box.y0) : int(d.box.y1), int(d.box.x0) : int(d.box.x1)] = True
        return float(mask.mean())

    @staticmethod
    def face_similarity_proxy(
        image: ImageLike,
        id1: ToyIdentity,
        id2: ToyIdentity,
        bank: Optional[GlyphBank] = None,
    ) -> SimilarityReport:
        """
        Similarity of the generated faces to both references.

        The left face is subject 1's slot and the right face subject 2's; a
        single face takes the slot of the image half it lies in. Scores are
        NCC (centred cosine) against the reference tile at the face's size.

        Returns:
            SimilarityReport; all zeros and flagged when no face is found
        """
        arr = as_array(image)
        faces = EvaluationService.detect_faces(arr, bank or GlyphBank([id1, id2]))
        if not faces:
            return SimilarityReport(s1=0.0, s2=0.0, margin=0.0, flagged=True)

        refs = (SynthService.render_glyph(id1), SynthService.render_glyph(id2))
        if len(faces) == 1:
            slots = [0 if faces[0].box.center[0] < arr.shape[1] / 2 else 1]
        else:
            slots = [0, 1]

        own, cross, scores = [], [], {}
        for face, slot in zip(faces, slots):
            b = face.box
            crop = arr[int(b.y0) : int(b.y1), int(b.x0) : int(b.x1)]
            sims = [ncc(crop, _resize_tile(ref, crop.shape[0])) for ref in refs]
            own.append(sims[slot])
            cross.append(sims[1 - slot])
            scores[slot] = sims[slot]
        margin = float(np.mean(own) - np.mean(cross))
        return SimilarityReport(
            s1=scores.get(0, 0.0), s2=scores.get(1, 0.0), margin=margin, flagged=False, faces=tuple(faces)
        )

    @staticmethod
    def confidence_interval(values: Sequence[float]) -> float:
        """Half-width 1.96 * sd / sqrt(n) of the mean; 0 for fewer than two values."""
        n = len(values)
        if n < 2:
            return 0.0
        return CI_Z * float(np.std(values, ddof=1)) / math.sqrt(n)

    @staticmethod
    def lambda_sweep(
        model: DuetDiffModel,
        bundle: ConditioningBundle,
        schedule: NoiseSchedule,
        config: SamplerConfig,
        lambdas: Sequence[float],
        seeds: Sequence[int],
        identities: Tuple[ToyIdentity, ToyIdentity],
        workers: int = 1,
    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Sample every (lambda, seed) and measure face area and similarity.

        Returns:
            Tuple of (one row per lambda with means and 95% interval half-widths,
            one row per sample)
        """
        if not lambdas:
            raise InputError("A sweep needs at least one lambda value")
        bank = GlyphBank(list(identities))
        configs = [replace(config, lam=float(lam), seed=int(s)) for lam in lambdas for s in seeds]
        results = SamplerService.sample_grid(bundle, model, schedule, configs, workers=workers)

        rows = []
        for cfg, (image, _) in zip(configs, results):
            sim = EvaluationService.face_similarity_proxy(image, identities[0], identities[1], bank)
            rows.append(
                {
                    "lambda": cfg.lam,
                    "seed": cfg.seed,
                    "face_area_fraction": EvaluationService.face_area_fraction(image, bank),
                    "face_sim_1": sim.s1,
                    "face_sim_2": sim.s2,
                    "separation_margin": sim.margin,
                    "flagged": sim.flagged,
                }
            )
        samples = pd.DataFrame(rows)

        summary = []
        for lam, group in samples.groupby("lambda", sort=False):
            summary.append(
                {
                    "lambda": lam,
                    "n": len(group),
                    "face_area_mean": group["face_area_fraction"].mean(),
                    "face_area_ci": EvaluationService.confidence_interval(group["face_area_fraction"].tolist()),
                    "face_sim_1_mean": group["face_sim_1"].mean(),
                    "face_sim_2_mean": group["face_sim_2"].mean(),
                    "margin_mean": group["separation_margin"].mean(),
                    "margin_ci": EvaluationService.confidence_interval(group["separation_margin"].tolist()),
                    "flagged": int(group["flagged"].sum()),
                }
            )
        logger.info(f"Lambda sweep over {len(lambdas)} values x {len(seeds)} seeds")
        return pd.DataFrame(summary), samples

    @staticmethod
    def subject_boxes(record: AnnotationRecord) -> Tuple[BBox, BBox]:
        """Person boxes in caption-slot order, as fractions of the image."""
        if record.person_count != 2 or not record.width or not record.height:
            raise InputError(f"Record {record.image_id} has no usable subject boxes")
        persons = sorted(record.persons, key=lambda p: (p.caption_slot is None, p.caption_slot))
        w, h = record.width, record.height
        return tuple(
            BBox(p.bbox.x0 / w, p.bbox.y0 / h, p.bbox.x1 / w, p.bbox.y1 / h) for p in persons
        )

    @staticmethod
    def _branch_map(trace: SampleTrace, branch: str, size: int, first_token: bool) -> np.ndarray:
        total = None
        sites = sorted(site for site, b in trace.attention if b == branch)
        for site in sites:
            probs = trace.attention[(site, branch)][0].to(torch.float64)
            if first_token:
                probs = probs[:, :1]
            column = probs / probs.sum(dim=0, keepdim=True).clamp_min(1e-300)
            spatial = column.mean(dim=-1).reshape(1, *trace.grids[site])
            up = upsample_map(spatial, size)[0, 0]
            total = up if total is None else total + up
        out = (total / len(sites)).clamp_min(0.0)
        return (out / out.sum()).numpy()

    @staticmethod
    def box_mass(saliency: np.ndarray, box: BBox) -> float:
        """Sum of the map over cells whose centers lie in the box (fractional coordinates)."""
        h, w = saliency.shape
        xs = (np.arange(w) + 0.5) / w
        ys = (np.arange(h) + 0.5) / h
        inside = ((ys >= box.y0) & (ys <= box.y1))[:, None] & ((xs >= box.x0) & (xs <= box.x1))[None, :]
        return float(saliency[inside].sum())

    @staticmethod
    def saliency_report(trace: Optional[SampleTrace], boxes: Sequence[BBox], size: int) -> SaliencyReport:
        """
        Attention heatmaps of both reference branches and their mass inside each subject box.

        Args:
            trace: Sampling trace holding averaged image-branch attention
            boxes: Subject 1 and subject 2 boxes as fractions of the image
            size: Output map side

        Raises:
            InputError: The trace holds no attention
        """
        if trace is None or not trace.attention:
            raise InputError("The sampling trace holds no attention weights")
        report = SaliencyReport()
        rows = []
        for branch in BRANCHES:
            report.maps[branch] = EvaluationService._branch_map(trace, branch, size, first_token=False)
            report.first_token_maps[branch] = EvaluationService._branch_map(trace, branch, size, first_token=True)
            for view, maps in (("all_tokens", report.maps), ("first_token", report.first_token_maps)):
                for subject, box in enumerate(boxes, start=1):
                    rows.append(
                        {
                            "view": view,
                            "branch": branch,
                            "subject": subject,
                            "mass": EvaluationService.box_mass(maps[branch], box),
                        }
                    )
        report.mass = pd.DataFrame(rows)
        return report

    @staticmethod
    def save_heatmaps(report: SaliencyReport, boxes: Sequence[BBox], path: Union[str, Path]) -> Path:
        """Plot both views of both branches with the subject boxes outlined."""
        path = Path(path)
        fig, axes = plt.subplots(2, 2, figsize=(6, 6))
        for row, (view, maps) in enumerate((("all tokens", report.maps), ("first token", report.first_token_maps))):
            for col, branch in enumerate(BRANCHES):
                ax = axes[row][col]
                m = maps[branch]
                ax.imshow(m, cmap="viridis", vmin=0.0, vmax=float(m.max()) or 1.0)
                for box, color in zip(boxes, ("white", "red")):
                    h, w = m.shape
                    ax.add_patch(
                        plt.Rectangle(
                            (box.x0 * w - 0.5, box.y0 * h - 0.5),
                            box.width * w,
                            box.height * h,
                            fill=False,
                            edgecolor=color,
                        )
                    )
                ax.set_title(f"{branch} ({view})")
                ax.axis("off")
        fig.tight_layout()
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, dpi=100, metadata={"Software": None})
        except OSError as e:
            raise ArtifactIOError(f"Cannot write heatmap {path}: {e}", path=str(path))
        finally:
            plt.close(fig)
        return path
