"""
Unit tests for evaluation proxies and attention saliency.
"""

import numpy as np
import pytest

from duetdiff.models.annotation import BBox
from duetdiff.models.settings import SamplerConfig
from duetdiff.services.evaluation_service import EvaluationService, GlyphBank, ncc
from duetdiff.services.sampler_service import SamplerService
from duetdiff.services.synth_service import SynthService
from duetdiff.utils.exceptions import InputError


@pytest.fixture
def render(identities, scene):
    image, record = SynthService.render_pair(identities[0], identities[1], scene)
    return image, record


@pytest.fixture
def trace(bundle, model, schedule):
    _, trace = SamplerService.sample(bundle, model, schedule, SamplerConfig(steps=4, guidance=2.0, seed=3))
    return trace


class TestNCC:
    """Tests for normalized cross-correlation."""

    def test_identical(self):
        """Test an array correlates perfectly with itself."""
        a = np.arange(12, dtype=np.float64).reshape(2, 2, 3)

        assert ncc(a, a) == pytest.approx(1.0)
        assert ncc(a, -a) == pytest.approx(-1.0)

    def test_flat(self):
        """Test a flat input scores zero."""
        assert ncc(np.ones((4, 4, 3)), np.arange(48).reshape(4, 4, 3)) == 0.0

    def test_centred_cosine(self):
        """Test the score is the cosine of the mean-centred arrays."""
        rng = np.random.default_rng(0)
        a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
        ca, cb = (a - a.mean()).ravel(), (b - b.mean()).ravel()

        assert ncc(a, b) == pytest.approx(ca @ cb / (np.linalg.norm(ca) * np.linalg.norm(cb)))

    def test_brightness_and_contrast_ignored(self):
        """Test positive affine changes of one input leave the score unchanged."""
        rng = np.random.default_rng(1)
        a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))

        assert ncc(3.0 * a + 40.0, b) == pytest.approx(ncc(a, b))


class TestFaceDetection:
    """Tests for template-matching face detection."""

    def test_scales(self):
        """Test template sides follow the image side."""
        assert GlyphBank.scales(64) == [16, 32, 64]
        assert GlyphBank.scales(8) == [2, 4, 8]

    def test_finds_both_faces(self, render, identities, scene):
        """Test the two rendered faces are found left to right at their anchors."""
        image, _ = render

        faces = EvaluationService.detect_faces(image, GlyphBank(list(identities)))

        assert [f.box for f in faces] == list(scene.anchors)
        assert [f.identity for f in faces] == [0, 1]
        assert all(f.score == pytest.approx(1.0) for f in faces)

    def test_face_area(self, render, identities):
        """Test two 16-pixel faces cover an eighth of a 64-pixel image."""
        image, _ = render

        assert EvaluationService.face_area_fraction(image, GlyphBank(list(identities))) == pytest.approx(0.125)

    def test_blank_image(self, identities):
        """Test a flat image holds no faces."""
        blank = np.full((64, 64, 3), 128, dtype=np.uint8)

        assert EvaluationService.detect_faces(blank, GlyphBank(list(identities))) == []
        assert EvaluationService.face_area_fraction(blank, GlyphBank(list(identities))) == 0.0

    def test_empty_bank(self):
        """Test a bank needs identities."""
        with pytest.raises(InputError):
            GlyphBank([])


class TestSimilarity:
    """Tests for the identity similarity proxy."""

    def test_ground_truth_render(self, render, identities):
        """Test a ground-truth render matches its own references."""
        image, _ = render

        report = EvaluationService.face_similarity_proxy(image, identities[0], identities[1])

        assert report.s1 == pytest.approx(1.0)
        assert report.s2 == pytest.approx(1.0)
        assert report.margin > 0
        assert not report.flagged

    def test_swapped_references(self, render, identities):
        """Test swapping references turns the margin negative."""
        image, _ = render

        report = EvaluationService.face_similarity_proxy(image, identities[1], identities[0])

        assert report.margin < 0

    def test_no_face_flagged(self, identities):
        """Test images without faces are flagged with zero scores."""
        blank = np.full((64, 64, 3), 200, dtype=np.uint8)

        report = EvaluationService.face_similarity_proxy(blank, identities[0], identities[1])

        assert report.flagged
        assert (report.s1, report.s2, report.margin) == (0.0, 0.0, 0.0)


class TestConfidenceInterval:
    """Tests for the 95% interval half-width."""

    def test_two_values(self):
        """Test [0, 2] has sd sqrt(2) and half-width 1.96."""
        assert EvaluationService.confidence_interval([0.0, 2.0]) == pytest.approx(1.96)

    @pytest.mark.parametrize("values", [[], [0.4]])
    def test_too_few(self, values):
        """Test fewer than two values give zero width."""
        assert EvaluationService.confidence_interval(values) == 0.0


class TestSaliency:
    """Tests for attention heatmaps and box mass."""

    def test_box_mass(self):
        """Test a uniform map puts a box's area share inside it."""
        uniform = np.full((8, 8), 1 / 64)

        assert EvaluationService.box_mass(uniform, BBox(0.0, 0.0, 0.5, 0.5)) == pytest.approx(0.25)
        assert EvaluationService.box_mass(uniform, BBox(0.0, 0.0, 1.0, 1.0)) == pytest.approx(1.0)

    def test_subject_boxes(self, render):
        """Test subject boxes are fractional and in slot order."""
        _, record = render

        first, second = EvaluationService.subject_boxes(record)

        assert first.x1 <= 1.0 and second.x1 <= 1.0
        assert first.center[0] < second.center[0]

    def test_subject_boxes_need_pairs(self, render):
        """Test single-person records have no subject boxes."""
        _, record = render

        with pytest.raises(InputError):
            EvaluationService.subject_boxes(record.with_changes(persons=record.persons[:1]))

    def test_maps_are_distributions(self, trace, render):
        """Test every heatmap is non-negative and sums to one."""
        boxes = EvaluationService.subject_boxes(render[1])

        report = EvaluationService.saliency_report(trace, boxes, 16)

        for maps in (report.maps, report.first_token_maps):
            assert set(maps) == {"i1", "i2"}
            for m in maps.values():
                assert m.shape == (16, 16)
                assert m.min() >= 0.0
                assert m.sum() == pytest.approx(1.0)

    def test_mass_rows(self, trace, render):
        """Test one mass row per view, branch and subject."""
        boxes = EvaluationService.subject_boxes(render[1])

        report = EvaluationService.saliency_report(trace, boxes, 16)

        assert len(report.mass) == 8
        assert 0.0 <= report.mass_in("i1", 1) <= 1.0

    def test_requires_attention(self, render):
        """Test a missing trace is rejected."""
        with pytest.raises(InputError):
            EvaluationService.saliency_report(None, EvaluationService.subject_boxes(render[1]), 16)

    def test_heatmap_file(self, trace, render, tmp_path):
        """Test the heatmap figure is written."""
        boxes = EvaluationService.subject_boxes(render[1])
        report = EvaluationService.saliency_report(trace, boxes, 16)

        path = EvaluationService.save_heatmaps(report, boxes, tmp_path / "plots" / "saliency.png")

        assert path.is_file()


class TestLambdaSweep:
    """Tests for lambda sweeps."""

    def test_rows(self, model, bundle, schedule, identities):
        """Test one summary row per lambda and one sample row per run."""
        config = SamplerConfig(steps=3, guidance=2.0)

        summary, samples = EvaluationService.lambda_sweep(
            model, bundle, schedule, config, [0.0, 1.0], [1, 2], identities
        )

        assert summary["lambda"].tolist() == [0.0, 1.0]
        assert summary["n"].tolist() == [2, 2]
        assert len(samples) == 4
        assert samples["face_area_fraction"].between(0.0, 1.0).all()

    def test_needs_lambdas(self, model, bundle, schedule, identities):
        """Test an empty sweep is rejected."""
        with pytest.raises(InputError):
            EvaluationService.lambda_sweep(model, bundle, schedule, SamplerConfig(steps=3), [], [1], identities)
