"""
Unit tests for the frozen encoders.
"""

import numpy as np
import pytest
import torch
from PIL import Image

from duetdiff.models.prompt import PromptSpec
from duetdiff.services.encoder_service import EncoderService, as_array, cosine
from duetdiff.services.synth_service import SynthService
from duetdiff.utils.constants import COMPOSITION_TILE_Y, SLOT_TILE_X, Composition
from duetdiff.utils.exceptions import ExtractionError, InputError


class TestTextEncoders:
    """Tests for the small and large text encoders."""

    def test_shapes(self, prompt):
        """Test one row per token at the requested width."""
        assert EncoderService.encode_text_small(prompt, 8).shape == (len(prompt), 8)
        assert EncoderService.encode_text_large(prompt, 16).shape == (len(prompt), 16)

    def test_deterministic(self, prompt):
        """Test repeated encoding is identical."""
        assert torch.equal(EncoderService.encode_text_large(prompt), EncoderService.encode_text_large(prompt))

    def test_rows_depend_on_token_only(self):
        """Test equal words embed equally wherever they appear."""
        rows = EncoderService.encode_text_small(PromptSpec.from_caption("a man and a woman"))

        assert torch.equal(rows[0], rows[3])
        assert not torch.equal(rows[1], rows[4])

    def test_encoders_differ(self, prompt):
        """Test the small and large encoders are distinct maps."""
        small = EncoderService.encode_text_small(prompt, 16)
        large = EncoderService.encode_text_large(prompt, 16)

        assert not torch.equal(small, large)


class TestPatchEncoder:
    """Tests for dense patch features."""

    def test_patch_grid(self, references):
        """Test a 32x32 reference gives 16 patches of 8x8."""
        assert EncoderService.encode_image_patches(references[0], 8, 12).shape == (16, 12)

    def test_indivisible_image(self):
        """Test sides must divide into patches."""
        with pytest.raises(InputError):
            EncoderService.encode_image_patches(np.zeros((30, 32, 3), dtype=np.uint8), 8)

    def test_pil_input(self, references):
        """Test PIL images encode like their arrays."""
        arr = references[0]

        assert torch.equal(
            EncoderService.encode_image_patches(Image.fromarray(arr)), EncoderService.encode_image_patches(arr)
        )

    def test_grayscale_rejected(self):
        """Test non-RGB arrays are rejected."""
        with pytest.raises(InputError):
            as_array(np.zeros((8, 8), dtype=np.uint8))

    def test_same_identity_patches_match_across_scenes(self):
        """Test face-region patch rows of one identity in two different scenes have cosine above 0.9."""
        identity, other = SynthService.make_identity(3), SynthService.make_identity(4)
        renders = []
        for index, (composition, tag) in enumerate([(Composition.FULL_BODY, "park"), (Composition.CLOSE_UP, "beach")]):
            scene = SynthService.make_scene(index, np.random.default_rng(index), composition=composition, scene=tag)
            image, _ = SynthService.render_pair(identity, other, scene)
            rows = EncoderService.encode_image_patches(image, 8)
            top, left = COMPOSITION_TILE_Y[composition] // 8, SLOT_TILE_X[0] // 8
            cells = [(top + dy) * 8 + left + dx for dy in (0, 1) for dx in (0, 1)]
            renders.append(rows[cells])

        for a, b in zip(*renders):
            assert cosine(a, b) > 0.9


class TestFaceEncoder:
    """Tests for glyph location and face vectors."""

    def test_locate_reference_glyph(self, references):
        """Test the glyph is found centered on the reference."""
        assert EncoderService.locate_glyph(references[0]) == (8, 8, 16)

    def test_crop_matches_render(self, identities, references):
        """Test the cropped tile is the rendered glyph."""
        assert np.array_equal(EncoderService.crop_glyph(references[0]), SynthService.render_glyph(identities[0]))

    def test_identity_and_image_agree(self, identities, references):
        """Test encoding an identity equals encoding its reference image."""
        assert torch.equal(EncoderService.encode_face(identities[0]), EncoderService.encode_face(references[0]))

    def test_unit_norm(self, identities):
        """Test face vectors have unit length."""
        v = EncoderService.encode_face(identities[1], 16)

        assert float(torch.linalg.norm(v)) == pytest.approx(1.0, abs=1e-6)

    def test_distinct_identities(self, identities):
        """Test different identities give different vectors."""
        a, b = (EncoderService.encode_face(identity) for identity in identities)

        assert cosine(a, b) < 0.999

    def test_random_pairs_well_separated(self):
        """Test a thousand random identity pairs stay below cosine 0.9 and match themselves exactly."""
        sims = []
        for k in range(1000):
            a, b = SynthService.make_identity(10_000 + 2 * k), SynthService.make_identity(10_001 + 2 * k)
            va = EncoderService.encode_face(a)
            assert cosine(va, EncoderService.encode_face(a)) == pytest.approx(1.0, abs=1e-6)
            sims.append(cosine(va, EncoderService.encode_face(b)))

        assert max(sims) < 0.9

    def test_distant_identities_separate(self):
        """Test identities more than 0.5 apart in parameter space mostly stay below cosine 0.5."""
        sims, seed = [], 20_000
        while len(sims) < 100:
            a, b = SynthService.make_identity(seed), SynthService.make_identity(seed + 1)
            seed += 2
            if a.distance(b) > 0.5:
                sims.append(cosine(EncoderService.encode_face(a), EncoderService.encode_face(b)))

        assert sum(s < 0.5 for s in sims) >= 97
        assert abs(float(np.mean(sims))) < 0.1

    def test_background_does_not_matter(self, identities):
        """Test the reference background does not change the face vector."""
        plain = SynthService.render_reference(identities[0])
        tinted = SynthService.render_reference(identities[0], background=(90, 140, 200))

        assert torch.equal(EncoderService.encode_face(plain), EncoderService.encode_face(tinted))

    def test_no_glyph(self):
        """Test an image without a glyph frame cannot be encoded."""
        with pytest.raises(ExtractionError):
            EncoderService.encode_face(np.full((32, 32, 3), 200, dtype=np.uint8))

    def test_two_glyphs(self, corpus):
        """Test a pair image holds more than one glyph."""
        with pytest.raises(ExtractionError):
            EncoderService.locate_glyph(corpus[0].image)


class TestEncodeInputs:
    """Tests for the combined encoder pass."""

    def test_widths_follow_config(self, prompt, references, tiny_config):
        """Test every output uses the configured width."""
        encoded = EncoderService.encode_inputs(prompt, references[0], references[1], tiny_config)

        assert encoded.small.shape == (len(prompt), tiny_config.d_small)
        assert encoded.text.shape == (len(prompt), tiny_config.d_text)
        assert encoded.patches1.shape == (16, tiny_config.d_patch)
        assert encoded.id2.shape == (tiny_config.d_id,)
        assert (encoded.m1, encoded.m2) == (prompt.m1, prompt.m2)

    def test_swapped(self, prompt, references, tiny_config):
        """Test swapping exchanges both reference features."""
        encoded = EncoderService.encode_inputs(prompt, references[0], references[1], tiny_config)
        swapped = encoded.swapped()

        assert torch.equal(swapped.patches1, encoded.patches2)
        assert torch.equal(swapped.id2, encoded.id1)
