import json

import numpy as np
import pytest

from conftest import random_scene
from refsal.backend import (
    BackendRequest,
    Blob,
    SyntheticBackend,
    SyntheticScene,
    synthetic_forward,
)
from refsal.errors import ConfigError, InputError, ShapeError, UnknownImageError


def gaussian(center, sigma, latent):
    h, w = latent
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    return np.exp(-((xs - center[0]) ** 2 + (ys - center[1]) ** 2) / (2 * sigma**2))


def single_blob_scene(salience=0.9, sigma=1.8, tags=("cat",)):
    return SyntheticScene(
        image_size=(48, 32),
        latent=(8, 10),
        blobs=(Blob(center=(5.0, 3.5), sigma=sigma, salience=salience, tags=frozenset(tags)),),
    )


def request(tokens, mask, mode="feature", image_ref="img"):
    return BackendRequest(
        tokens=tuple(tokens), attention_mask=mask, mask_mode=mode, image_ref=image_ref
    )


def ones_mask(scene):
    return np.ones(scene.latent, dtype=np.uint8)


class TestSyntheticForward:
    def test_matching_token_gets_normalized_gaussian(self):
        scene = single_blob_scene()
        resp = synthetic_forward(scene, request(["cat"], ones_mask(scene)))
        expected = gaussian((5.0, 3.5), 1.8, scene.latent)
        expected /= expected.sum()
        np.testing.assert_allclose(resp.attention[0], expected, atol=1e-12)

    def test_all_zero_mask_kills_attention_and_itm(self):
        scene = single_blob_scene()
        resp = synthetic_forward(
            scene, request(["cat"], np.zeros(scene.latent, dtype=np.uint8))
        )
        assert resp.attention.sum() == 0
        assert resp.gradients_raw.sum() == 0
        assert resp.itm == 0.0

    def test_deterministic_bit_identical(self):
        scene = single_blob_scene()
        req = request(["the", "cat"], ones_mask(scene))
        a = synthetic_forward(scene, req)
        b = synthetic_forward(scene, req)
        assert np.array_equal(a.attention, b.attention)
        assert np.array_equal(a.gradients_raw, b.gradients_raw)
        assert a.itm == b.itm

    def test_full_mask_single_blob_itm_is_one(self):
        scene = single_blob_scene()
        resp = synthetic_forward(scene, request(["cat"], ones_mask(scene)))
        assert resp.itm == 1.0

    def test_three_sigma_drop_starves_itm(self):
        scene = single_blob_scene(sigma=1.2)
        h, w = scene.latent
        ys, xs = np.mgrid[0:h, 0:w]
        mask = (((xs - 5.0) ** 2 + (ys - 3.5) ** 2) > (3 * 1.2) ** 2).astype(np.uint8)
        resp = synthetic_forward(scene, request(["cat"], mask))
        assert resp.itm < 0.05

    def test_feature_mode_masked_cells_exactly_zero(self, rng):
        scene = random_scene(rng)
        mask = (rng.random(scene.latent) > 0.4).astype(np.uint8)
        tokens = ["the", "dog", "cat", "nonsense"]
        resp = synthetic_forward(scene, request(tokens, mask))
        masked = mask == 0
        assert (resp.attention[:, masked] == 0).all()
        assert (resp.gradients_raw[:, masked] == 0).all()

    def test_image_mode_blob_removed_when_center_masked(self):
        scene = single_blob_scene()
        mask = ones_mask(scene)
        mask[3, 5] = 0  # blob center cell, latent (y=3.5 -> row 3? round -> 4)
        mask[4, 5] = 0
        resp = synthetic_forward(scene, request(["cat"], mask, mode="image"))
        assert resp.attention[0].sum() == 0
        # unmatched tokens keep a full-grid floor in image mode
        resp2 = synthetic_forward(scene, request(["xyz"], mask, mode="image"))
        assert resp2.attention[0][mask == 0].sum() > 0

    def test_unmatched_token_uniform_floor(self):
        scene = single_blob_scene()
        resp = synthetic_forward(scene, request(["xyzzy"], ones_mask(scene)))
        cells = np.prod(scene.latent)
        np.testing.assert_allclose(resp.attention[0], np.full(scene.latent, 1.0 / cells))

    def test_gradients_signed_by_salience(self):
        weak = single_blob_scene(salience=0.3)
        resp = synthetic_forward(weak, request(["cat"], ones_mask(weak)))
        assert (resp.gradients_raw[0] <= 0).all() and (resp.gradients_raw[0] < 0).any()
        strong = single_blob_scene(salience=0.9)
        resp = synthetic_forward(strong, request(["cat"], ones_mask(strong)))
        assert (resp.gradients_raw[0] >= 0).all() and (resp.gradients_raw[0] > 0).any()

    def test_rows_sum_to_one_or_zero(self, rng):
        scene = random_scene(rng)
        mask = (rng.random(scene.latent) > 0.3).astype(np.uint8)
        resp = synthetic_forward(scene, request(["dog", "cat", "zz"], mask))
        sums = resp.attention.reshape(3, -1).sum(axis=1)
        for s in sums:
            assert s == pytest.approx(0.0, abs=1e-12) or s == pytest.approx(1.0, rel=1e-9)

    def test_mask_shape_mismatch(self):
        scene = single_blob_scene()
        with pytest.raises(ShapeError):
            synthetic_forward(scene, request(["cat"], np.ones((3, 3), dtype=np.uint8)))


class TestScaleConsistency:
    def test_attention_invariant_under_salience_scaling(self, rng):
        scene = random_scene(rng)
        factor = 0.37
        scaled = SyntheticScene(
            image_size=scene.image_size,
            latent=scene.latent,
            blobs=tuple(
                Blob(b.center, b.sigma, b.salience * factor, b.tags, b.bias)
                for b in scene.blobs
            ),
        )
        mask = ones_mask(scene)
        tokens = ["dog", "cat", "ball"]
        a = synthetic_forward(scene, request(tokens, mask))
        b = synthetic_forward(scaled, request(tokens, mask))
        np.testing.assert_allclose(a.attention, b.attention, atol=1e-12)
        assert a.itm == pytest.approx(b.itm, abs=1e-12)
        weighted_a = a.itm * a.attention[0]
        weighted_b = b.itm * b.attention[0]
        if weighted_a.max() > 0:
            assert np.argmax(weighted_a) == np.argmax(weighted_b)


class TestMonotoneEvidence:
    def test_itm_never_grows_when_single_target_mask_shrinks(self, rng):
        # No clutter blobs: the score reduces to visible/total evidence,
        # which can only shrink as the zero-set grows.
        scene = single_blob_scene()
        mask = ones_mask(scene)
        order = rng.permutation(mask.size)
        last = synthetic_forward(scene, request(["cat"], mask)).itm
        for cell in order[:40]:
            mask.flat[cell] = 0
            itm = synthetic_forward(scene, request(["cat"], mask.copy())).itm
            assert itm <= last + 1e-12
            last = itm


class TestDistractorBias:
    def test_bias_flips_argmax_after_masking(self):
        scene = SyntheticScene(
            image_size=(64, 32),
            latent=(8, 16),
            blobs=(
                Blob(center=(3.0, 4.0), sigma=1.5, salience=0.8,
                     tags=frozenset({"dog", "left"}), bias=1.5),
                Blob(center=(12.0, 4.0), sigma=1.5, salience=0.8,
                     tags=frozenset({"dog", "right"})),
            ),
        )
        mask = ones_mask(scene)
        resp = synthetic_forward(scene, request(["dog"], mask))
        y, x = np.unravel_index(np.argmax(resp.attention[0]), scene.latent)
        assert x == 3  # biased left blob wins while nothing is masked
        mask[:, :8] = 0
        resp = synthetic_forward(scene, request(["dog"], mask))
        y, x = np.unravel_index(np.argmax(resp.attention[0]), scene.latent)
        assert x == 12


class TestSyntheticBackend:
    def test_unknown_image_ref(self):
        backend = SyntheticBackend({"a": single_blob_scene()})
        with pytest.raises(UnknownImageError):
            backend.latent_grid("missing")

    def test_scene_file_round_trip(self, tmp_path, rng):
        scene = random_scene(rng)
        path = tmp_path / "scenes.json"
        path.write_text(
            json.dumps({"scenes": {"s1": scene.to_dict()}}), encoding="utf-8"
        )
        backend = SyntheticBackend.from_file(path)
        assert backend.latent_grid("s1") == scene.latent
        req = request(["dog"], ones_mask(scene), image_ref="s1")
        np.testing.assert_array_equal(
            backend.forward(req).attention, synthetic_forward(scene, req).attention
        )

    def test_bare_scene_file_gets_default_name(self, tmp_path):
        scene = single_blob_scene()
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(scene.to_dict()), encoding="utf-8")
        backend = SyntheticBackend.from_file(path)
        assert backend.latent_grid("default") == scene.latent


class TestValidation:
    def test_blob_salience_range(self):
        with pytest.raises(ConfigError):
            Blob(center=(0, 0), sigma=1.0, salience=0.0, tags=frozenset({"x"}))
        with pytest.raises(ConfigError):
            Blob(center=(0, 0), sigma=1.0, salience=1.5, tags=frozenset({"x"}))

    def test_blob_tags_required(self):
        with pytest.raises(InputError):
            Blob(center=(0, 0), sigma=1.0, salience=0.5, tags=frozenset())

    def test_scene_needs_blobs(self):
        with pytest.raises(InputError):
            SyntheticScene(image_size=(8, 8), latent=(4, 4), blobs=())

    def test_request_validation(self):
        with pytest.raises(InputError):
            BackendRequest(tokens=(), attention_mask=np.ones((2, 2)), mask_mode="feature", image_ref="x")
        with pytest.raises(ConfigError):
            BackendRequest(tokens=("a",), attention_mask=np.ones((2, 2)), mask_mode="bogus", image_ref="x")
