"""Encoder/decoder pair: multi-level feature taps, skip-concat decoding.

The encoder runs five conv blocks and exposes the pre-downsample activations
of the configured tap levels as the deep representation. The decoder walks
back up from the deepest tap, concatenating (possibly manipulated) tap
features at matching resolutions, and ends with a 1x1 conv clamped to [0,1].

Training happens in phases: a joint autoencoder warm-up that then freezes the
encoder, an optional decoder pre-training pass on shifted features, and the
main pixel+feature consistency phase.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .optim import Adam
from .tensor import (Parameter, ShapeError, Tensor, add, backward, clamp01,
                     concat_channels, conv2d, downsample2x, mse, no_grad, relu,
                     scale, upsample2x)

VALID_TAPS = (3, 4, 5)


@dataclass(frozen=True)
class CodecConfig:
    input_channels: int = 3
    base_channels: int = 16
    levels: int = 5
    tap_levels: tuple = (3, 4, 5)
    image_size: int = 64

    def __post_init__(self):
        taps = tuple(self.tap_levels)
        object.__setattr__(self, "tap_levels", taps)
        if not taps or list(taps) != sorted(set(taps)) or not set(taps) <= set(VALID_TAPS):
            raise ValueError(f"tap_levels must be a sorted non-empty subset of {VALID_TAPS}")
        s = self.image_size
        if s < 32 or (s & (s - 1)) != 0:
            raise ValueError(f"image_size must be a power of two >= 32, got {s}")

    def channels(self, level: int) -> int:
        return self.base_channels * (1 << (level - 1))

    def level_resolution(self, level: int) -> int:
        return self.image_size >> (level - 1)

    def tap_shapes(self) -> dict:
        return {l: (self.channels(l), self.level_resolution(l), self.level_resolution(l))
                for l in self.tap_levels}

    def flat_length(self) -> int:
        return sum(int(np.prod(s)) for s in self.tap_shapes().values())

    def to_dict(self) -> dict:
        return {"input_channels": self.input_channels, "base_channels": self.base_channels,
                "levels": self.levels, "tap_levels": list(self.tap_levels),
                "image_size": self.image_size}

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(input_channels=d["input_channels"], base_channels=d["base_channels"],
                   levels=d["levels"], tap_levels=tuple(d["tap_levels"]),
                   image_size=d["image_size"])


class FeaturePyramid:
    """One tensor per tap level, keyed by level, ascending."""

    __slots__ = ("levels",)

    def __init__(self, levels: dict):
        self.levels = {l: levels[l] for l in sorted(levels)}

    def __iter__(self):
        return iter(self.levels.items())

    def __getitem__(self, level: int) -> Tensor:
        return self.levels[level]

    def tap_levels(self) -> tuple:
        return tuple(self.levels)

    def shapes(self) -> dict:
        return {l: t.shape for l, t in self.levels.items()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.levels.values()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, shapes: dict) -> "FeaturePyramid":
        out, ofs = {}, 0
        for l in sorted(shapes):
            n = int(np.prod(shapes[l]))
            out[l] = Tensor(vec[ofs:ofs + n].reshape(shapes[l]))
            ofs += n
        if ofs != vec.size:
            raise ShapeError(f"flat vector length {vec.size} does not match shapes (need {ofs})")
        return cls(out)

    def map_data(self, fn) -> "FeaturePyramid":
        return FeaturePyramid({l: Tensor(fn(t.data)) for l, t in self.levels.items()})


def _he_uniform(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _conv_pair(rng, c_in, c_out):
    return (Parameter(_he_uniform(rng, (c_out, c_in, 3, 3))),
            Parameter(np.zeros(c_out, dtype=np.float32)))


class CodecModel:
    """Encoder parameters (freezable) plus decoder parameters."""

    def __init__(self, config: CodecConfig, enc_blocks, dec_stages, dec_final,
                 encoder_frozen: bool = False):
        self.config = config
        self.enc_blocks = enc_blocks      # [(w1,b1,w2,b2)] per encoder block, level 1..5
        self.dec_stages = dec_stages      # [(level, w1,b1,w2,b2)] deepest-1 .. 1
        self.dec_final = dec_final        # (w, b) of the 1x1 output conv
        self.encoder_frozen = encoder_frozen

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(cls, config: CodecConfig, seed: int = 0) -> "CodecModel":
        rng = np.random.default_rng(seed)
        enc = []
        c_prev = config.input_channels
        for level in range(1, config.levels + 1):
            c = config.channels(level)
            w1, b1 = _conv_pair(rng, c_prev, c)
            w2, b2 = _conv_pair(rng, c, c)
            enc.append((w1, b1, w2, b2))
            c_prev = c
        dec_stages, dec_final = cls._init_decoder(config, rng)
        return cls(config, enc, dec_stages, dec_final)

    @staticmethod
    def _init_decoder(config: CodecConfig, rng):
        deepest = max(config.tap_levels)
        stages = []
        for level in range(deepest - 1, 0, -1):
            c_in = config.channels(level + 1)
            if level in config.tap_levels:
                c_in += config.channels(level)
            c_out = config.channels(level)
            w1, b1 = _conv_pair(rng, c_in, c_out)
            w2, b2 = _conv_pair(rng, c_out, c_out)
            stages.append((level, w1, b1, w2, b2))
        wf = Parameter(_he_uniform(rng, (config.input_channels, config.channels(1), 1, 1)))
        bf = Parameter(np.zeros(config.input_channels, dtype=np.float32))
        return stages, (wf, bf)

    def reinit_decoder(self, seed: int):
        rng = np.random.default_rng(seed)
        self.dec_stages, self.dec_final = self._init_decoder(self.config, rng)

    # -- parameter access ----------------------------------------------------

    def named_parameters(self) -> dict:
        out = {}
        for i, (w1, b1, w2, b2) in enumerate(self.enc_blocks, start=1):
            out.update({f"enc/b{i}/w1": w1, f"enc/b{i}/b1": b1,
                        f"enc/b{i}/w2": w2, f"enc/b{i}/b2": b2})
        for (level, w1, b1, w2, b2) in self.dec_stages:
            out.update({f"dec/s{level}/w1": w1, f"dec/s{level}/b1": b1,
                        f"dec/s{level}/w2": w2, f"dec/s{level}/b2": b2})
        out["dec/final/w"], out["dec/final/b"] = self.dec_final
        return out

    def encoder_parameters(self) -> list:
        return [p for name, p in self.named_parameters().items() if name.startswith("enc/")]

    def decoder_parameters(self) -> list:
        return [p for name, p in self.named_parameters().items() if name.startswith("dec/")]

    def freeze_encoder(self):
        for p in self.encoder_parameters():
            p.trainable = False
        self.encoder_frozen = True

    def encoder_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(n for n in self.named_parameters() if n.startswith("enc/")):
            h.update(name.encode())
            h.update(self.named_parameters()[name].data.astype("<f4").tobytes())
        return h.hexdigest()

    def fingerprint(self) -> str:
        """Hash binding artifacts to this exact frozen encoder and config."""
        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        h.update(self.encoder_checksum().encode())
        return h.hexdigest()

    # -- forward -------------------------------------------------------------

    def _encode_graph(self, x: Tensor) -> dict:
        """Forward through all blocks; returns {level: pre-downsample tensor}."""
        taps = {}
        h = x
        for level, (w1, b1, w2, b2) in enumerate(self.enc_blocks, start=1):
            h = relu(conv2d(h, w1, b1, pad=1))
            h = relu(conv2d(h, w2, b2, pad=1))
            if level in self.config.tap_levels:
                taps[level] = h
            h = downsample2x(h)
        return taps

    def _decode_graph(self, taps: dict) -> Tensor:
        deepest = max(self.config.tap_levels)
        h = taps[deepest]
        for (level, w1, b1, w2, b2) in self.dec_stages:
            h = upsample2x(h)
            if level in self.config.tap_levels:
                h = concat_channels(h, taps[level])
            h = relu(conv2d(h, w1, b1, pad=1))
            h = relu(conv2d(h, w2, b2, pad=1))
        wf, bf = self.dec_final
        return clamp01(conv2d(h, wf, bf, pad=0))

    def _check_image(self, image: Tensor):
        s = self.config.image_size
        expect = (self.config.input_channels, s, s)
        if image.shape != expect:
            raise ShapeError(f"image must be {expect}, got {image.shape}")

    def encode(self, image) -> FeaturePyramid:
        """Deep features psi(image) for a single (3,S,S) image in [0,1]."""
        image = image if isinstance(image, Tensor) else Tensor(image)
        self._check_image(image)
        with no_grad():
            taps = self._encode_graph(image)
        return FeaturePyramid({l: t.detach() for l, t in taps.items()})

    def decode(self, pyramid: FeaturePyramid) -> Tensor:
        """Image from a (possibly manipulated) pyramid; output in [0,1]."""
        expect = self.config.tap_shapes()
        got = pyramid.shapes()
        if got != expect:
            raise ShapeError(f"pyramid shapes {got} do not match config {expect}")
        with no_grad():
            return self._decode_graph({l: t for l, t in pyramid}).detach()

    def reconstruct(self, image) -> Tensor:
        return self.decode(self.encode(image))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def decoder_loss(model: CodecModel, batch_images, omega: float = 1.0) -> Tensor:
    """Pixel reconstruction plus omega-weighted feature consistency (summed)."""
    x = batch_images if isinstance(batch_images, Tensor) else Tensor(batch_images)
    with no_grad():
        target_taps = model._encode_graph(x)
    consts = {l: t.detach() for l, t in target_taps.items()}
    z = model._decode_graph(consts)
    pixel = mse(z, x)
    retaps = model._encode_graph(z)
    feat = None
    for l in consts:
        term = mse(retaps[l], consts[l])
        feat = term if feat is None else add(feat, term)
    return add(pixel, scale(feat, omega))


def _stack_levels(pyramids) -> dict:
    levels = pyramids[0].tap_levels()
    return {l: np.stack([p[l].data for p in pyramids]) for l in levels}


# ---------------------------------------------------------------------------
# training phases
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 10
    omega: float = 1.0
    seed: int = 0
    lam_samples: tuple = (0.0, 0.5, 1.0)
    log: object = None  # callable(str) for progress lines

    def lr_at(self, epoch: int) -> float:
        return self.lr * (self.lr_decay ** (epoch // self.lr_decay_every))


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n - batch_size + 1, batch_size):
        yield order[i:i + batch_size]


def train_encoder(config: CodecConfig, images: np.ndarray, train_cfg: TrainConfig) -> tuple:
    """Joint autoencoder warm-up; freezes the encoder and re-inits the decoder.

    Returns (model, per-step pixel-loss history). The encoder stays frozen
    even when zero epochs are requested.
    """
    n = len(images)
    if n < train_cfg.batch_size:
        raise ValueError(f"dataset ({n}) smaller than batch size ({train_cfg.batch_size})")
    model = CodecModel.initialize(config, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed + 1)
    opt = Adam(model.encoder_parameters() + model.decoder_parameters(), lr=train_cfg.lr)
    history = []
    for epoch in range(train_cfg.epochs):
        opt.set_lr(train_cfg.lr_at(epoch))
        for idx in _batches(n, train_cfg.batch_size, rng):
            x = Tensor(images[idx])
            taps = model._encode_graph(x)
            z = model._decode_graph(taps)
            loss = scale(mse(z, x), 1.0 / len(idx))
            opt.zero_grad()
            backward(loss)
            opt.step()
            history.append(loss.item())
        if train_cfg.log:
            train_cfg.log(f"encoder epoch {epoch + 1}/{train_cfg.epochs} "
                          f"loss {history[-1]:.4f}")
    model.freeze_encoder()
    model.reinit_decoder(train_cfg.seed + 2)
    return model, history


def pretrain_decoder(model: CodecModel, features, pseudo_shifts, train_cfg: TrainConfig) -> list:
    """Decoder warm-up on lambda-shifted features (feature consistency only).

    features/pseudo_shifts are per-sample FeaturePyramids for the same
    samples, in the same order. Skipped with a warning when no shifts are
    available — this phase helps but is not mandatory.
    """
    if not pseudo_shifts:
        warnings.warn("no pseudo shifts provided; skipping decoder pre-training")
        return []
    if not model.encoder_frozen:
        raise ValueError("encoder must be frozen before decoder training")
    if len(features) != len(pseudo_shifts):
        raise ValueError("features and pseudo_shifts must align")
    n = len(features)
    if n < train_cfg.batch_size:
        raise ValueError(f"dataset ({n}) smaller than batch size ({train_cfg.batch_size})")
    feats = _stack_levels(features)
    shifts = _stack_levels(pseudo_shifts)
    rng = np.random.default_rng(train_cfg.seed + 3)
    opt = Adam(model.decoder_parameters(), lr=train_cfg.lr)
    lam_samples = tuple(train_cfg.lam_samples)
    history = []
    for epoch in range(train_cfg.epochs):
        opt.set_lr(train_cfg.lr_at(epoch))
        for idx in _batches(n, train_cfg.batch_size, rng):
            lam = lam_samples[rng.integers(len(lam_samples))]
            shifted = {l: Tensor(feats[l][idx] + np.float32(lam) * shifts[l][idx])
                       for l in feats}
            z = model._decode_graph(shifted)
            retaps = model._encode_graph(z)
            loss = None
            for l in shifted:
                term = mse(retaps[l], shifted[l])
                loss = term if loss is None else add(loss, term)
            loss = scale(loss, 1.0 / len(idx))
            opt.zero_grad()
            backward(loss)
            opt.step()
            history.append(loss.item())
        if train_cfg.log:
            train_cfg.log(f"decoder pretrain epoch {epoch + 1}/{train_cfg.epochs} "
                          f"loss {history[-1]:.4f}")
    return history


def train_decoder(model: CodecModel, images: np.ndarray, train_cfg: TrainConfig) -> list:
    """Main decoder phase: pixel + feature consistency on reconstructions."""
    if not model.encoder_frozen:
        raise ValueError("encoder must be frozen before decoder training")
    n = len(images)
    if n < train_cfg.batch_size:
        raise ValueError(f"dataset ({n}) smaller than batch size ({train_cfg.batch_size})")
    rng = np.random.default_rng(train_cfg.seed + 4)
    opt = Adam(model.decoder_parameters(), lr=train_cfg.lr)
    history = []
    for epoch in range(train_cfg.epochs):
        opt.set_lr(train_cfg.lr_at(epoch))
        for idx in _batches(n, train_cfg.batch_size, rng):
            loss = scale(decoder_loss(model, images[idx], omega=train_cfg.omega),
                         1.0 / len(idx))
            opt.zero_grad()
            backward(loss)
            opt.step()
            history.append(loss.item())
        if train_cfg.log:
            train_cfg.log(f"decoder epoch {epoch + 1}/{train_cfg.epochs} "
                          f"loss {history[-1]:.4f}")
    return history
