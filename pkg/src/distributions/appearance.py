from typing import Optional

import numpy as np

from autograd.ops import interpolation_matrix
from models.scene import SceneConfig

# RGB in [0, 1] per class: background, road, building, circle, pole, rare
SOURCE_PALETTE = np.array([
    [0.55, 0.70, 0.90],
    [0.35, 0.35, 0.38],
    [0.60, 0.40, 0.30],
    [0.80, 0.15, 0.15],
    [0.85, 0.80, 0.20],
    [0.20, 0.70, 0.30],
])
PIXEL_NOISE = 0.02


def gray_axis_rotation(degrees: float) -> np.ndarray:
    """3x3 rotation about the (1, 1, 1) axis of RGB space; grays are fixed points."""
    theta = np.deg2rad(degrees)
    k = np.ones(3) / np.sqrt(3.0)
    cross = np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])
    return np.cos(theta) * np.eye(3) + np.sin(theta) * cross + (1.0 - np.cos(theta)) * np.outer(k, k)


class AppearanceModel:
    """
    Renders label maps to RGB and applies the target-domain shift.

    Both domains share `render`; only `shift` differs. A shift parameter of
    zero skips its stage entirely.
    """

    def __init__(self, cfg: SceneConfig, palette: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.palette = SOURCE_PALETTE if palette is None else np.asarray(palette, dtype=np.float64)
        if self.palette.shape != (cfg.num_classes, 3):
            raise ValueError(f"palette must be {cfg.num_classes} x 3, got {self.palette.shape}")
        self.rotation = gray_axis_rotation(cfg.palette_rotation)
        self._rows, self._cols = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)

    # ----------------------------
    # Shared rendering
    # ----------------------------
    def render(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """3 x H x W image: per-image colour jitter on the palette plus pixel noise."""
        colours = self.palette + rng.normal(0.0, self.cfg.jitter, size=self.palette.shape)
        image = colours[labels].transpose(2, 0, 1)
        image = image + rng.normal(0.0, PIXEL_NOISE, size=image.shape)
        return np.clip(image, 0.0, 1.0)

    # ----------------------------
    # Target shift
    # ----------------------------
    def rotate_palette(self, image: np.ndarray) -> np.ndarray:
        return np.einsum("ij,jhw->ihw", self.rotation, image)

    def apply_gamma(self, image: np.ndarray) -> np.ndarray:
        return np.clip(image, 0.0, 1.0) ** (1.0 + self.cfg.gamma)

    def add_texture(self, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Oriented sinusoidal stripes with random phase."""
        angle = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        coordinate = self._cols * np.cos(angle) + self._rows * np.sin(angle)
        wave = np.sin(2.0 * np.pi * self.cfg.texture_frequency * coordinate + phase)
        return image + self.cfg.texture_amplitude * wave[None]

    def add_correlated_noise(self, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Coarse Gaussian grid upsampled bilinearly to image size."""
        cells = min(self.cfg.noise_scale, self.cfg.height, self.cfg.width)
        grid = rng.normal(0.0, self.cfg.noise_amplitude, size=(3, cells, cells))
        rows = interpolation_matrix(cells, self.cfg.height)
        cols = interpolation_matrix(cells, self.cfg.width)
        return image + np.matmul(np.matmul(rows, grid), cols.T)

    def shift(self, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Hue rotation, gamma, texture, correlated noise, clip."""
        cfg = self.cfg
        if not cfg.shift_enabled:
            return image
        if cfg.palette_rotation:
            image = self.rotate_palette(image)
        if cfg.gamma:
            image = self.apply_gamma(image)
        if cfg.texture_frequency and cfg.texture_amplitude:
            image = self.add_texture(image, rng)
        if cfg.noise_amplitude:
            image = self.add_correlated_noise(image, rng)
        return np.clip(image, 0.0, 1.0)
