import numpy as np

from models.scene import FREQUENCY_TARGETS, SceneConfig

BACKGROUND, ROAD, BUILDING, CIRCLE, POLE, RARE = range(6)


class GeometryDistributions:
    """
    Samples the label layout of one street-like scene.

    Painting order is background, building skyline, road band, poles,
    circle objects, rare blob; later shapes overwrite earlier ones. Sizes
    are given for 64x64 and scale with the shorter image side.

    `frequency_targets` steer the shape sizes: each class is grown or shrunk
    by its target relative to FREQUENCY_TARGETS (lengths for the road band,
    skyline and poles, radii by the square root). Occlusion makes the match
    approximate away from the reference targets.
    """

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        self.height = cfg.height
        self.width = cfg.width
        self.scale = min(cfg.height, cfg.width) / 64.0

        # per-class area relative to the reference targets the sizes below were fitted to
        ratio = np.asarray(cfg.frequency_targets, dtype=np.float64) / np.asarray(FREQUENCY_TARGETS)
        radius_cap = min(cfg.height, cfg.width) / 4.0

        self.road_fraction = tuple(min(0.9, f * ratio[ROAD]) for f in (0.22, 0.34))
        self.segment_width = (max(2, round(8 * self.scale)), max(3, round(16 * self.scale)))
        self.building_probability = 0.75
        self.building_height = tuple(min(1.0, f * ratio[BUILDING]) for f in (0.3, 0.8))
        self.pole_count = 3
        self.pole_width = 2
        self.pole_height = tuple(int(min(self.height, max(1, round(h * ratio[POLE]))))
                                 for h in (self.height // 4, self.height // 2))
        self.circle_count = (1, 3)
        self.circle_radius = tuple(min(radius_cap, r * self.scale * np.sqrt(ratio[CIRCLE])) for r in (3.0, 6.0))
        self.rare_radius = min(radius_cap, 4.0 * self.scale * np.sqrt(ratio[RARE]))

        self._rows, self._cols = np.mgrid[0:self.height, 0:self.width]

    # ----------------------------
    # Road band
    # ----------------------------
    def sample_horizon(self, rng: np.random.Generator) -> int:
        """First road row; everything below it is road."""
        fraction = rng.uniform(*self.road_fraction)
        return self.height - int(round(fraction * self.height))

    # ----------------------------
    # Skyline
    # ----------------------------
    def sample_buildings(self, rng: np.random.Generator, horizon: int):
        """(x0, x1, top) blocks standing on the horizon, left to right."""
        blocks = []
        x = 0
        while x < self.width:
            w = int(rng.integers(self.segment_width[0], self.segment_width[1] + 1))
            built = rng.random() < self.building_probability
            h = int(round(rng.uniform(*self.building_height) * horizon))
            if built and h > 0:
                blocks.append((x, min(x + w, self.width), horizon - h))
            x += w
        return blocks

    # ----------------------------
    # Objects
    # ----------------------------
    def sample_poles(self, rng: np.random.Generator, horizon: int):
        """(x, top) of 0-3 thin poles standing on the horizon."""
        count = int(rng.integers(0, self.pole_count + 1))
        poles = []
        for _ in range(count):
            x = int(rng.integers(0, self.width - self.pole_width + 1))
            h = int(rng.integers(self.pole_height[0], self.pole_height[1] + 1))
            poles.append((x, max(0, horizon - h)))
        return poles

    def sample_circles(self, rng: np.random.Generator, horizon: int):
        """(cy, cx, r) of 1-3 round objects centered on the road."""
        count = int(rng.integers(self.circle_count[0], self.circle_count[1] + 1))
        circles = []
        for _ in range(count):
            r = rng.uniform(*self.circle_radius)
            cx = rng.uniform(r, self.width - r)
            cy = rng.uniform(horizon, max(horizon, self.height - r))
            circles.append((cy, cx, r))
        return circles

    def sample_rare(self, rng: np.random.Generator, horizon: int):
        """A small blob above the road, drawn with `rare_probability`."""
        present = rng.random() < self.cfg.rare_probability
        r = self.rare_radius
        cx = rng.uniform(r, self.width - r)
        cy = rng.uniform(r, max(r, horizon - r))
        return (cy, cx, r) if present else None

    # ----------------------------
    # Label map
    # ----------------------------
    def _disk(self, cy: float, cx: float, r: float) -> np.ndarray:
        return (self._rows - cy) ** 2 + (self._cols - cx) ** 2 <= r * r

    def sample_labels(self, rng: np.random.Generator) -> np.ndarray:
        """H x W int64 label map."""
        labels = np.full((self.height, self.width), BACKGROUND, dtype=np.int64)

        horizon = self.sample_horizon(rng)
        for x0, x1, top in self.sample_buildings(rng, horizon):
            labels[top:horizon, x0:x1] = BUILDING
        labels[horizon:, :] = ROAD

        for x, top in self.sample_poles(rng, horizon):
            labels[top:horizon, x:x + self.pole_width] = POLE
        for cy, cx, r in self.sample_circles(rng, horizon):
            labels[self._disk(cy, cx, r)] = CIRCLE

        # position is drawn even when the blob is absent
        rare = self.sample_rare(rng, horizon)
        if rare is not None:
            labels[self._disk(*rare)] = RARE
        return labels
