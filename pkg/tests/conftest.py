import hashlib

import numpy as np
import pytest

from compose_probe.embeddings import EmbeddingMatrix
from compose_probe.raster import ImageRaster
from compose_probe.remote import EncoderDescriptor


def seeded_unit_vector(seed_bytes: bytes, dim: int) -> np.ndarray:
    """Deterministic unit vector derived from content bytes."""
    seed = int.from_bytes(hashlib.sha256(seed_bytes).digest()[:8], "little")
    v = np.random.default_rng(seed).normal(size=dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


class FakeEncoder:
    """Offline stand-in for a remote encoder.

    Default behavior hashes content into unit vectors; tests can override
    ``text_fn``/``image_fn`` to construct exact similarity structures.
    """

    def __init__(self, dim=16, input_side=32, text_fn=None, image_fn=None):
        self.dim = dim
        self.input_side = input_side
        self.text_fn = text_fn or (lambda t: seeded_unit_vector(t.encode(), self.dim))
        self.image_fn = image_fn or (lambda img: seeded_unit_vector(img.pixels, self.dim))
        self.text_calls = 0
        self.image_calls = 0

    def descriptor(self):
        return EncoderDescriptor(
            model_name="fake", embedding_dim=self.dim, layer="last",
            input_side=self.input_side,
        )

    def encode_text_batch(self, texts, mode="global"):
        self.text_calls += len(texts)
        return [EmbeddingMatrix.from_array(self.text_fn(t)[None, :]) for t in texts]

    def encode_image_batch(self, images, mode="global"):
        self.image_calls += len(images)
        return [EmbeddingMatrix.from_array(self.image_fn(img)[None, :]) for img in images]


@pytest.fixture
def fake_encoder():
    return FakeEncoder()


def random_raster(width, height, seed=0):
    arr = np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return ImageRaster.from_array(arr)


def flat_raster(width, height, rgb=(128, 128, 128)):
    arr = np.tile(np.array(rgb, dtype=np.uint8), (height, width, 1))
    return ImageRaster.from_array(arr)
