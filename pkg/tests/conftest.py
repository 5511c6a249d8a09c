import numpy as np
import pytest

from refsal.backend import BackendResponse, Blob, SyntheticScene


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


SCENE_VOCAB = {
    "nouns": ("dog", "cat", "car", "ball"),
    "adjectives": ("red", "blue", "left", "right", "big", "small"),
}


def random_scene(rng, max_blobs=3, latent=None) -> SyntheticScene:
    h = int(rng.integers(6, 13))
    w = int(rng.integers(6, 13))
    if latent is not None:
        h, w = latent
    n_blobs = int(rng.integers(1, max_blobs + 1))
    blobs = []
    for _ in range(n_blobs):
        tags = {str(rng.choice(SCENE_VOCAB["nouns"]))}
        if rng.random() < 0.5:
            tags.add(str(rng.choice(SCENE_VOCAB["adjectives"])))
        blobs.append(
            Blob(
                center=(float(rng.uniform(0, w - 1)), float(rng.uniform(0, h - 1))),
                sigma=float(rng.uniform(0.8, 3.0)),
                salience=float(rng.uniform(0.05, 1.0)),
                tags=frozenset(tags),
                bias=float(rng.choice([1.0, 1.0, 1.5])),
            )
        )
    return SyntheticScene(
        image_size=(int(rng.integers(16, 65)), int(rng.integers(16, 65))),
        latent=(h, w),
        blobs=tuple(blobs),
    )


def random_expression(rng) -> str:
    words = []
    if rng.random() < 0.5:
        words.append("the")
    if rng.random() < 0.6:
        words.append(str(rng.choice(SCENE_VOCAB["adjectives"])))
    words.append(str(rng.choice(SCENE_VOCAB["nouns"])))
    if rng.random() < 0.3:
        words.extend(["next", "to", "the", str(rng.choice(SCENE_VOCAB["nouns"]))])
    return " ".join(words)


class ConstantBackend:
    """Returns the same response regardless of the request; for stop-rule tests."""

    def __init__(self, attention, gradients, itm, image_size=(32, 24)):
        self._response = BackendResponse(
            attention=np.asarray(attention, dtype=np.float64),
            gradients_raw=np.asarray(gradients, dtype=np.float64),
            itm=itm,
            latent=attention.shape[1:],
            image_size=image_size,
        )
        self.calls = 0

    def latent_grid(self, image_ref):
        return self._response.latent

    def forward(self, request):
        self.calls += 1
        return self._response
