import numpy as np
import pytest

torch = pytest.importorskip("torch")

from conftest import unpack_tensor
from refsal_bridge.model import ModelError, TorchModelSession
from refsal_bridge.toy import ToyVlp

LATENT = (6, 8)
TOKENS = ["<cls>", "there", "is", "a", "red", "ball"]


@pytest.fixture(scope="module")
def session():
    return TorchModelSession(ToyVlp(seed=3, latent=LATENT), layer_index=8)


def ones():
    return np.ones(LATENT, dtype=np.uint8)


class TestTorchSession:
    def test_shapes_match_token_count(self, session):
        attention, gradients, itm, latent, image_size = session.forward(
            "img1", TOKENS, ones(), "feature"
        )
        assert attention.shape == (len(TOKENS),) + LATENT
        assert gradients.shape == attention.shape
        assert latent == LATENT
        assert 0.0 <= itm <= 1.0
        assert image_size == (48, 32)

    def test_deterministic_itm(self, session):
        a = session.forward("img1", TOKENS, ones(), "feature")
        b = session.forward("img1", TOKENS, ones(), "feature")
        assert abs(a[2] - b[2]) <= 1e-6
        np.testing.assert_array_equal(a[0], b[0])

    def test_feature_mask_gives_exact_zeros(self, session):
        mask = ones()
        mask[:, :4] = 0
        attention, gradients, _, _, _ = session.forward("img1", TOKENS, mask, "feature")
        assert (attention[:, :, :4] == 0).all()
        assert (gradients[:, :, :4] == 0).all()
        assert attention[:, :, 4:].sum() > 0

    def test_gradients_are_signed(self, session):
        _, gradients, _, _, _ = session.forward("img1", TOKENS, ones(), "feature")
        assert (gradients > 0).any() and (gradients < 0).any()

    def test_attention_rows_are_normalized(self, session):
        attention, _, _, _, _ = session.forward("img1", TOKENS, ones(), "feature")
        sums = attention.reshape(len(TOKENS), -1).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-4)

    def test_different_images_differ(self, session):
        a = session.forward("img1", TOKENS, ones(), "feature")
        b = session.forward("img2", TOKENS, ones(), "feature")
        assert not np.array_equal(a[0], b[0])

    def test_image_mode_changes_output_without_zeroing_cells(self, session):
        mask = ones()
        mask[:3, :3] = 0
        full = session.forward("img1", TOKENS, ones(), "image")
        masked = session.forward("img1", TOKENS, mask, "image")
        assert not np.array_equal(full[0], masked[0])

    def test_layer_index_validated(self):
        with pytest.raises(ModelError):
            TorchModelSession(ToyVlp(seed=0), layer_index=99)

    def test_bad_mask_shape(self, session):
        from refsal_bridge.protocol import ProtocolError

        with pytest.raises(ProtocolError):
            session.forward("img1", TOKENS, np.ones((2, 2), dtype=np.uint8), "feature")


class TestModelOverTheWire:
    def test_forward_over_wire(self, wire_pair):
        session = TorchModelSession(ToyVlp(seed=3, latent=LATENT), layer_index=8)
        client = wire_pair(session)
        reply = client.hello()
        assert reply["latent"] == list(LATENT)
        assert "model" in reply["capabilities"]
        frame = client.forward("img1", TOKENS, ones())
        assert frame["type"] == "result"
        direct = session.forward("img1", TOKENS, ones(), "feature")
        np.testing.assert_array_equal(unpack_tensor(frame["attention"]), direct[0])
        assert frame["itm"] == pytest.approx(direct[2], abs=1e-6)
