"""Depth-image autoencoder whose 128-wide bottleneck is the flow's condition vector."""

from __future__ import annotations

import numpy as np

from .autodiff import Adam, Affine, GradTape, NumericalError, Sequential, SiLU, mse
from .scene import IMAGE_SIZE, Z_MAX

LATENT_DIM = 128


def normalize_depth(img, z_max: float = Z_MAX) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if np.any(img < 0) or np.any(img > z_max) or not np.all(np.isfinite(img)):
        raise ValueError(f"depth values must lie in [0, {z_max}]")
    return img / z_max


def denormalize_depth(img, z_max: float = Z_MAX) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) * z_max


class DepthAutoencoder:
    """Fully-affine encoder/decoder: pixels -> 512 -> 256 -> 128 -> 256 -> 512 -> pixels."""

    def __init__(self, image_size: int = IMAGE_SIZE, hidden=(512, 256), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.hidden = tuple(hidden)
        n = image_size * image_size
        sizes = [n, *self.hidden, LATENT_DIM]
        self.encoder = Sequential(_mlp(sizes, rng, "enc"))
        self.decoder = Sequential(_mlp(sizes[::-1], rng, "dec"))

    @property
    def n_pixels(self) -> int:
        return self.image_size * self.image_size

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def _flatten(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 2 and x.shape == (self.image_size, self.image_size):
            x = x[None]
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.n_pixels:
            raise ValueError(f"expected {self.image_size}x{self.image_size} images, got {x.shape[1]} pixels")
        return x

    def encode(self, images) -> np.ndarray:
        """Condition vectors for raw depth images (meters); (n, 128), or (128,) for one image."""
        single = np.ndim(images) == 2
        z = self.encoder(normalize_depth(self._flatten(images)))
        return z[0] if single else z

    def reconstruct(self, images) -> np.ndarray:
        x = normalize_depth(self._flatten(images))
        return self.decoder(self.encoder(x))

    def reconstruction_mse(self, images) -> float:
        x = normalize_depth(self._flatten(images))
        return mse(self.decoder(self.encoder(x)), x)[0]

    def state_arrays(self):
        return self.encoder.state_arrays() + self.decoder.state_arrays()

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.get_flat(), self.decoder.get_flat()])

    def set_flat(self, flat):
        k = self.encoder.n_values()
        if len(flat) != k + self.decoder.n_values():
            raise ValueError("parameter blob does not match the autoencoder architecture")
        self.encoder.set_flat(flat[:k])
        self.decoder.set_flat(flat[k:])

    def architecture(self) -> dict:
        return {"kind": "depth_autoencoder", "image_size": self.image_size,
                "hidden": list(self.hidden), "latent": LATENT_DIM, "activation": "silu"}


def _mlp(sizes, rng, prefix):
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Affine(a, b, rng, name=f"{prefix}{i}"))
        if i < len(sizes) - 2:
            layers.append(SiLU())
    return layers


def train_autoencoder(net: DepthAutoencoder, corpus, epochs: int, seed: int = 0, lr: float = 1e-3,
                      batch_size: int = 32) -> list[float]:
    """Minibatch Adam on reconstruction MSE (normalized units); returns the per-epoch training loss."""
    x_all = normalize_depth(net._flatten(corpus))
    n = len(x_all)
    if n == 0:
        raise ValueError("empty image corpus")
    rng = np.random.default_rng(seed)
    opt = Adam(net.params(), lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            xb = x_all[order[start:start + batch_size]]
            tape = GradTape()
            net.encoder.zero_grad()
            net.decoder.zero_grad()
            recon = net.decoder.forward(net.encoder.forward(xb, tape=tape), tape=tape)
            loss, grad = mse(recon, xb)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite reconstruction loss at epoch {epoch}")
            tape.backward(grad)
            opt.step()
            total += loss * len(xb)
        history.append(total / n)
    return history
