"""Desk-scale generators (segmenters / classifiers) and entropy discriminators."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import ConfigError, DimensionError
from .losses import entropy_map

SEGMENTATION = "segmentation"
CLASSIFICATION = "classification"


@dataclass
class GeneratorConfig:
    num_classes: int = 5
    input_channels: int = 3
    widths: list[int] = field(default_factory=lambda: [16, 32, 32])
    mode: str = SEGMENTATION
    # stride-2 first conv + nearest upsample before the classifier conv
    encoder_decoder: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not self.widths:
            raise ConfigError("generator widths must be non-empty")
        if self.mode not in (SEGMENTATION, CLASSIFICATION):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscriminatorConfig:
    widths: list[int] = field(default_factory=lambda: [16, 32])
    mode: str = SEGMENTATION
    num_classes: int = 5
    slope: float = 0.2

    def __post_init__(self):
        if not self.widths:
            raise ConfigError("discriminator widths must be non-empty")
        if self.mode not in (SEGMENTATION, CLASSIFICATION):
            raise ConfigError(f"unknown mode {self.mode!r}")

    @property
    def input_channels(self) -> int:
        # entropy map, or per-sample entropy concatenated with the logits
        return 1 if self.mode == SEGMENTATION else 1 + self.num_classes

    def to_dict(self) -> dict:
        return asdict(self)


def _conv_layer(params: ParameterSet, rng, name: str, cin: int, cout: int) -> None:
    params.add(f"{name}.weight", ad.kaiming_uniform(rng, (cout, cin, 3, 3), cin * 9))
    params.add(f"{name}.bias", np.zeros(cout, dtype=np.float32))


def _dense_layer(params: ParameterSet, rng, name: str, fin: int, fout: int) -> None:
    params.add(f"{name}.weight", ad.kaiming_uniform(rng, (fin, fout), fin))
    params.add(f"{name}.bias", np.zeros(fout, dtype=np.float32))


def _build(widths: list[int], cin: int, cout: int, conv: bool, seed: int) -> ParameterSet:
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    chans = [cin, *widths, cout]
    layer = _conv_layer if conv else _dense_layer
    for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
        layer(params, rng, f"layer{i}", a, b)
    return params


def init_generator(cfg: GeneratorConfig, seed: int) -> ParameterSet:
    return _build(cfg.widths, cfg.input_channels, cfg.num_classes,
                  cfg.mode == SEGMENTATION, seed)


def init_discriminator(cfg: DiscriminatorConfig, seed: int) -> ParameterSet:
    return _build(cfg.widths, cfg.input_channels, 1, cfg.mode == SEGMENTATION, seed)


def parameter_count(cfg: GeneratorConfig | DiscriminatorConfig) -> int:
    """Closed-form count: sum of (k*c_in*c_out + c_out) over layers."""
    if isinstance(cfg, GeneratorConfig):
        chans, conv = [cfg.input_channels, *cfg.widths, cfg.num_classes], cfg.mode == SEGMENTATION
    else:
        chans, conv = [cfg.input_channels, *cfg.widths, 1], cfg.mode == SEGMENTATION
    k = 9 if conv else 1
    return sum(k * a * b + b for a, b in zip(chans[:-1], chans[1:]))


def _n_layers(params: ParameterSet) -> int:
    return len(params) // 2


def generator_logits(cfg: GeneratorConfig, params: ParameterSet, x) -> Tensor:
    x = ad.as_tensor(x)
    n = _n_layers(params)
    if cfg.mode == CLASSIFICATION:
        if x.ndim != 2 or x.shape[1] != cfg.input_channels:
            raise DimensionError(f"classifier expects N x {cfg.input_channels} input, got {x.shape}")
        h = x
        for i in range(n):
            h = ad.dense(h, params[f"layer{i}.weight"], params[f"layer{i}.bias"])
            if i < n - 1:
                h = ad.relu(h)
        return h
    if x.ndim not in (3, 4) or x.shape[-3] != cfg.input_channels:
        raise DimensionError(f"generator expects {cfg.input_channels} x H x W input, got {x.shape}")
    if cfg.encoder_decoder and (x.shape[-1] % 2 or x.shape[-2] % 2):
        raise DimensionError("encoder-decoder generator needs even H and W")
    h = x
    for i in range(n):
        if cfg.encoder_decoder and i == n - 1:
            h = ad.upsample2x(h)
        stride = 2 if cfg.encoder_decoder and i == 0 else 1
        h = ad.conv2d(h, params[f"layer{i}.weight"], params[f"layer{i}.bias"], stride=stride)
        if i < n - 1:
            h = ad.relu(h)
    return h


def probabilities(logits: Tensor) -> Tensor:
    # class axis: 1 for batches (N x C [x H x W]), 0 for a single C x H x W map
    axis = 0 if logits.ndim == 3 else 1 if logits.ndim in (2, 4) else 0
    return ad.softmax(logits, axis=axis)


def forward_generator(cfg: GeneratorConfig, params: ParameterSet, x) -> Tensor:
    """Soft segmentation map (or class posterior in classification mode)."""
    return probabilities(generator_logits(cfg, params, x))


def discriminator_input(cfg: DiscriminatorConfig, probs: Tensor, logits: Tensor | None = None) -> Tensor:
    """What the discriminator sees: entropy map, or entropy plus logits per sample."""
    ent = entropy_map(probs)
    if cfg.mode == SEGMENTATION:
        if ent.ndim == 2:
            return ad.reshape(ent, (1, 1) + ent.shape)
        return ad.reshape(ent, (ent.shape[0], 1) + ent.shape[1:])
    if logits is None:
        raise DimensionError("classification discriminator needs the logits")
    return ad.concat([ad.reshape(ent, (ent.shape[0], 1)), logits], axis=1)


def forward_discriminator(cfg: DiscriminatorConfig, params: ParameterSet, inp) -> Tensor:
    """Sigmoid outputs: ``N x H x W`` per pixel, or ``N`` per sample.

    A bare ``H x W`` entropy map is accepted and gives an ``H x W`` output.
    """
    inp = ad.as_tensor(inp)
    n = _n_layers(params)
    squeeze = False
    if cfg.mode == SEGMENTATION:
        if inp.ndim == 2:
            inp, squeeze = ad.reshape(inp, (1, 1) + inp.shape), True
        elif inp.ndim == 3:
            inp = ad.reshape(inp, (inp.shape[0], 1) + inp.shape[1:])
        if inp.ndim != 4 or inp.shape[1] != 1:
            raise DimensionError(f"discriminator expects an entropy map, got {inp.shape}")
        h = inp
        for i in range(n):
            h = ad.conv2d(h, params[f"layer{i}.weight"], params[f"layer{i}.bias"])
            if i < n - 1:
                h = ad.leaky_relu(h, cfg.slope)
        out = ad.sigmoid(h)
        shape = out.shape[2:] if squeeze else (out.shape[0],) + out.shape[2:]
        return ad.reshape(out, shape)
    if inp.ndim != 2 or inp.shape[1] != cfg.input_channels:
        raise DimensionError(f"discriminator expects N x {cfg.input_channels} features, got {inp.shape}")
    h = inp
    for i in range(n):
        h = ad.dense(h, params[f"layer{i}.weight"], params[f"layer{i}.bias"])
        if i < n - 1:
            h = ad.leaky_relu(h, cfg.slope)
    out = ad.sigmoid(h)
    return ad.reshape(out, (out.shape[0],))
