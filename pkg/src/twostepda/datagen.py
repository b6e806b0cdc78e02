"""Procedural source/target domains with a controllable shift and difficulty spread.

Segmentation scenes are a textured background (class 0) with a few textured
shapes; each class has a fixed colour and stripe texture.  The target role
applies a global hue rotation, brightness offset and blur (``domain_shift``)
and then a per-image difficulty ``d ~ U[0, intra_variance]`` that sets both
the additive noise sigma and the fraction of occluded pixels.  ``d`` is kept
as hidden metadata for tests; training code never sees it.

The classification track uses two interleaved moons; the target is the source
rotated by ``domain_shift`` degrees with per-sample noise up to
``intra_variance``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, LabelAccessError
from .tensorio import read_tensor, write_tensor

SOURCE, TARGET = "source", "target"
TRAIN, EVAL = "train", "eval"


@dataclass
class DomainConfig:
    role: str = SOURCE
    split: str = TRAIN
    count: int = 400
    height: int = 32
    width: int = 32
    num_classes: int = 5
    shapes_per_scene: tuple[int, int] = (2, 4)
    # per-class RGB colour; None -> evenly spaced hues
    palette: list[list[float]] | None = None
    domain_shift: float = 0.0
    intra_variance: float = 0.0
    rare_classes: list[int] = field(default_factory=lambda: [4])
    rare_weight: float = 0.2
    seed: int = 0
    # segmentation-shift knobs: hue degrees, brightness offset and blur mix per unit shift
    hue_degrees: float = 45.0
    brightness: float = 0.1
    blur: float = 0.5
    # extra hue rotation in degrees per unit of per-image difficulty
    difficulty_hue: float = 0.0

    def __post_init__(self):
        self.shapes_per_scene = tuple(self.shapes_per_scene)
        if self.role not in (SOURCE, TARGET):
            raise ConfigError(f"role must be source or target, got {self.role!r}")
        if self.split not in (TRAIN, EVAL):
            raise ConfigError(f"split must be train or eval, got {self.split!r}")
        if self.height < 8 or self.width < 8:
            raise ConfigError("images must be at least 8x8")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.domain_shift < 0 or self.intra_variance < 0:
            raise ConfigError("domain_shift and intra_variance must be non-negative")
        if any(not 0 <= c < self.num_classes for c in self.rare_classes):
            raise ConfigError("rare classes must lie in [0, C)")
        if self.count < 1:
            raise ConfigError("count must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shapes_per_scene"] = list(self.shapes_per_scene)
        return d


class Dataset:
    """Images plus labels that only the right consumer may read.

    Source labels are training supervision.  Target labels exist only for the
    evaluation split and are reachable solely through :meth:`evaluation_labels`.
    """

    def __init__(self, ids, images: np.ndarray, labels: np.ndarray | None, role: str,
                 split: str, difficulty: np.ndarray | None = None, config: dict | None = None):
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise InputError("dataset ids must be unique")
        if len(ids) != len(images):
            raise InputError("one id per image")
        self.ids = ids
        self.images = images
        self._labels = labels
        self.role = role
        self.split = split
        self._difficulty = difficulty
        self.config = config or {}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    def supervision(self) -> np.ndarray:
        """Labels usable for training: source domain only."""
        if self.role != SOURCE:
            raise LabelAccessError("target-domain labels are not available to training stages")
        if self._labels is None:
            raise LabelAccessError("dataset carries no labels")
        return self._labels

    def evaluation_labels(self) -> np.ndarray:
        if self._labels is None:
            raise LabelAccessError(f"{self.role}/{self.split} dataset carries no labels")
        return self._labels

    def hidden_difficulty(self) -> np.ndarray:
        """Per-image difficulty drawn by the generator (test-oracle metadata)."""
        if self._difficulty is None:
            return np.zeros(len(self), dtype=np.float32)
        return self._difficulty

    def index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.ids)}

    def save(self, directory) -> None:
        d = Path(directory)
        (d / "images").mkdir(parents=True, exist_ok=True)
        for i, key in enumerate(self.ids):
            write_tensor(d / "images" / f"{key}.tnsr", self.images[i])
        if self._labels is not None:
            (d / "labels").mkdir(exist_ok=True)
            for i, key in enumerate(self.ids):
                write_tensor(d / "labels" / f"{key}.tnsr", self._labels[i].astype(np.int32))
        manifest = {"ids": self.ids, "role": self.role, "split": self.split,
                    "config": self.config, "seed": self.config.get("seed"),
                    "difficulty": None if self._difficulty is None
                    else [float(v) for v in self._difficulty]}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Dataset":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        ids = manifest["ids"]
        images = np.stack([read_tensor(d / "images" / f"{k}.tnsr", "float32") for k in ids])
        labels = None
        if (d / "labels").is_dir():
            labels = np.stack([read_tensor(d / "labels" / f"{k}.tnsr", "int32") for k in ids])
        diff = manifest.get("difficulty")
        return cls(ids, images, labels, manifest["role"], manifest["split"],
                   None if diff is None else np.asarray(diff, dtype=np.float32),
                   manifest.get("config"))


# --------------------------------------------------------------------------
# segmentation scenes


def default_palette(num_classes: int) -> np.ndarray:
    """Evenly spaced hues at alternating brightness, background dark grey."""
    cols = [[0.3, 0.3, 0.3]]
    for k in range(1, num_classes):
        h = (k - 1) / (num_classes - 1)
        v = 0.85 if k % 2 else 0.65
        cols.append(list(_hsv_to_rgb(h, 0.75, v)))
    return np.asarray(cols, dtype=np.float64)


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _hue_rotation(degrees: float) -> np.ndarray:
    """Rotation of RGB space about the grey axis."""
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    k = 1.0 / 3.0
    r = math.sqrt(k)
    return np.array([
        [c + (1 - c) * k, k * (1 - c) - r * s, k * (1 - c) + r * s],
        [k * (1 - c) + r * s, c + k * (1 - c), k * (1 - c) - r * s],
        [k * (1 - c) - r * s, k * (1 - c) + r * s, c + k * (1 - c)],
    ])


def _texture(k: int, num_classes: int, h: int, w: int, phase: float) -> np.ndarray:
    """Class-specific stripes: orientation and frequency depend on the class."""
    theta = math.pi * k / num_classes
    freq = 0.12 + 0.08 * (k % 3)
    yy, xx = np.mgrid[0:h, 0:w]
    return np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)


def _box_blur(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = img.shape[1:]
    return sum(p[:, i:i + h, j:j + w] for i in range(3) for j in range(3)) / 9.0


def _scene_layout(rng: np.random.Generator, cfg: DomainConfig) -> tuple[np.ndarray, list[int]]:
    h, w, c = cfg.height, cfg.width, cfg.num_classes
    weights = np.array([cfg.rare_weight if k in cfg.rare_classes else 1.0 for k in range(1, c)])
    weights = weights / weights.sum()
    lo, hi = cfg.shapes_per_scene
    yy, xx = np.mgrid[0:h, 0:w]
    while True:
        label = np.zeros((h, w), dtype=np.int32)
        classes = [int(k) for k in rng.choice(np.arange(1, c), size=rng.integers(lo, hi + 1), p=weights)]
        for k in classes:
            sh = rng.integers(max(3, h // 5), max(4, h // 2))
            sw = rng.integers(max(3, w // 5), max(4, w // 2))
            y0 = rng.integers(0, h - sh + 1)
            x0 = rng.integers(0, w - sw + 1)
            if rng.random() < 0.5:
                mask = (yy >= y0) & (yy < y0 + sh) & (xx >= x0) & (xx < x0 + sw)
            else:
                cy, cx = y0 + sh / 2 - 0.5, x0 + sw / 2 - 0.5
                mask = ((yy - cy) / (sh / 2)) ** 2 + ((xx - cx) / (sw / 2)) ** 2 <= 1.0
            label[mask] = k
        present = set(np.unique(label).tolist())
        if all(k in present for k in classes):
            return label, classes


def render_scene(rng: np.random.Generator, cfg: DomainConfig, palette: np.ndarray,
                 target: bool) -> tuple[np.ndarray, np.ndarray, float]:
    """One ``3 x H x W`` image, its ``H x W`` label map and its difficulty."""
    h, w, c = cfg.height, cfg.width, cfg.num_classes
    label, _ = _scene_layout(rng, cfg)
    img = np.zeros((3, h, w))
    for k in range(c):
        mask = label == k
        if not mask.any():
            continue
        tex = _texture(k, c, h, w, rng.uniform(0, 2 * math.pi))
        shade = palette[k][:, None, None] * (1.0 + 0.25 * tex[None])
        img[:, mask] = shade[:, mask]
    img += rng.normal(0.0, 0.02, size=img.shape)
    difficulty = 0.0
    if target:
        if cfg.intra_variance > 0:
            difficulty = float(rng.uniform(0.0, cfg.intra_variance))
        shift = cfg.domain_shift
        hue = cfg.hue_degrees * shift + cfg.difficulty_hue * difficulty
        if hue:
            img = np.einsum("ij,jhw->ihw", _hue_rotation(hue), img)
        if shift > 0:
            img = img + cfg.brightness * shift
            mix = min(1.0, cfg.blur * shift)
            img = (1 - mix) * img + mix * _box_blur(img)
        if difficulty > 0:
            img = img + rng.normal(0.0, difficulty, size=img.shape)
            occluded = rng.random((h, w)) < difficulty
            img[:, occluded] = rng.uniform(0.0, 1.0, size=(3, int(occluded.sum())))
    return img.astype(np.float32), label, difficulty


def gen_segmentation_domain(cfg: DomainConfig) -> Dataset:
    palette = np.asarray(cfg.palette, dtype=np.float64) if cfg.palette else default_palette(cfg.num_classes)
    if palette.shape != (cfg.num_classes, 3):
        raise ConfigError(f"palette must be {cfg.num_classes} x 3")
    images, labels, diffs = [], [], []
    for i in range(cfg.count):
        rng = np.random.default_rng([cfg.seed, i])
        img, lab, d = render_scene(rng, cfg, palette, cfg.role == TARGET)
        images.append(img)
        labels.append(lab)
        diffs.append(d)
    ids = [f"{cfg.role}_{cfg.split}_{i:05d}" for i in range(cfg.count)]
    keep = cfg.role == SOURCE or cfg.split == EVAL
    return Dataset(ids, np.stack(images), np.stack(labels) if keep else None, cfg.role,
                   cfg.split, np.asarray(diffs, dtype=np.float32), cfg.to_dict())


# --------------------------------------------------------------------------
# classification samples


def _moons(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    t = rng.uniform(0, math.pi, size=n)
    x = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    pts = np.stack([x - 0.5, y - 0.25], axis=1)
    return pts, labels.astype(np.int32)


def gen_classification_domain(cfg: DomainConfig) -> Dataset:
    """Two moons; the target is rotated by ``domain_shift`` degrees."""
    rng = np.random.default_rng([cfg.seed, 7])
    pts, labels = _moons(rng, cfg.count)
    pts = pts + rng.normal(0.0, 0.1, size=pts.shape)
    diffs = np.zeros(cfg.count)
    if cfg.role == TARGET:
        a = math.radians(cfg.domain_shift)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        pts = pts @ rot.T
        if cfg.intra_variance > 0:
            diffs = rng.uniform(0.0, cfg.intra_variance, size=cfg.count)
            pts = pts + rng.normal(size=pts.shape) * diffs[:, None]
    ids = [f"{cfg.role}_{cfg.split}_{i:05d}" for i in range(cfg.count)]
    keep = cfg.role == SOURCE or cfg.split == EVAL
    return Dataset(ids, pts.astype(np.float32), labels if keep else None, cfg.role, cfg.split,
                   diffs.astype(np.float32), cfg.to_dict())
