"""Encoder/decoder networks and the three model assemblies.

Both tokenizers share one architecture family: a strided 1D conv encoder
that maps (B, width, T) to (B, d_z, T/4), where two stride-2 stages realize
the 4-frames-per-token compression, and a mirrored decoder with nearest
upsampling. The baseline poser is the same encoder/decoder pair run without
quantization, trained on reconstruction alone.
"""

from __future__ import annotations

import numpy as np

from . import gradnet as gn
from .errors import ConfigInvalid
from .gradnet import Conv1d, Tensor
from .motion import MOTION_WIDTH, SL_CONTACT
from .vqcodec import Codebook

LEAKY_SLOPE = 0.2
COMPRESSION = 4  # input frames per latent step, fixed by the two stride-2 stages

# fixed binomial tail filter on decoder outputs: decoded channels are 60 fps
# body motion, so a band limit is a physical prior, and it keeps the jitter
# metric measuring noise propagation instead of upsampling texture
SMOOTH_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class ConvEncoder:
    """width -> hidden (k4 s2) -> hidden (k4 s2) -> hidden (k3 s1) -> d_z (k1)."""

    def __init__(self, in_width: int, hidden: int, d_z: int, *, rng, dtype=np.float32):
        self.c1 = Conv1d(in_width, hidden, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.c2 = Conv1d(hidden, hidden, 4, stride=2, padding=1, rng=rng, dtype=dtype)
        self.c3 = Conv1d(hidden, hidden, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.proj = Conv1d(hidden, d_z, 1, rng=rng, dtype=dtype)

    def __call__(self, x) -> Tensor:
        h = gn.leaky_relu(self.c1(x), LEAKY_SLOPE)
        h = gn.leaky_relu(self.c2(h), LEAKY_SLOPE)
        h = gn.leaky_relu(self.c3(h), LEAKY_SLOPE)
        return self.proj(h)

    def params(self, prefix: str) -> dict:
        out = {}
        for name, layer in (("c1", self.c1), ("c2", self.c2), ("c3", self.c3),
                            ("proj", self.proj)):
            out.update(layer.params(f"{prefix}.{name}"))
        return out


class ConvDecoder:
    """d_z (k1) -> hidden (k3) -> up2 -> hidden (k5) -> up2 -> hidden (k5) -> width (k5).

    The two post-upsample kernels span 5 steps so they can fully erase the
    period-4 staircase the nearest upsampling leaves behind; narrower kernels
    produce visible high-frequency texture in the decoded channels.
    """

    def __init__(self, d_z: int, hidden: int, out_width: int, *, rng, dtype=np.float32):
        self.proj = Conv1d(d_z, hidden, 1, rng=rng, dtype=dtype)
        self.c1 = Conv1d(hidden, hidden, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.c2 = Conv1d(hidden, hidden, 5, stride=1, padding=2, rng=rng, dtype=dtype)
        self.c3 = Conv1d(hidden, hidden, 5, stride=1, padding=2, rng=rng, dtype=dtype)
        self.head = Conv1d(hidden, out_width, 5, stride=1, padding=2, rng=rng, dtype=dtype)

    def __call__(self, z) -> Tensor:
        h = gn.leaky_relu(self.proj(z), LEAKY_SLOPE)
        h = gn.leaky_relu(self.c1(h), LEAKY_SLOPE)
        h = gn.leaky_relu(self.c2(gn.upsample_nearest(h, 2)), LEAKY_SLOPE)
        h = gn.leaky_relu(self.c3(gn.upsample_nearest(h, 2)), LEAKY_SLOPE)
        return gn.depthwise_smooth(self.head(h), SMOOTH_KERNEL)

    def params(self, prefix: str) -> dict:
        out = {}
        for name, layer in (("proj", self.proj), ("c1", self.c1), ("c2", self.c2),
                            ("c3", self.c3), ("head", self.head)):
            out.update(layer.params(f"{prefix}.{name}"))
        return out


def _sigmoid_contacts(raw: Tensor) -> Tensor:
    """Apply a sigmoid to the 4 contact channels of a (B, 271, T) output."""
    body = raw[:, :SL_CONTACT.start, :]
    logits = raw[:, SL_CONTACT, :]
    return gn.concat([body, gn.sigmoid(logits)], axis=1)


def flatten_latents(z: Tensor) -> Tensor:
    """(B, d_z, S) -> (B*S, d_z), batch-major then time."""
    B, d, S = z.value.shape
    return gn.reshape(gn.transpose(z, (0, 2, 1)), (B * S, d))


def unflatten_latents(flat, batch: int, d_z: int):
    """(B*S, d_z) -> (B, d_z, S); accepts Tensor or ndarray."""
    if isinstance(flat, Tensor):
        S = flat.value.shape[0] // batch
        return gn.transpose(gn.reshape(flat, (batch, S, d_z)), (0, 2, 1))
    S = flat.shape[0] // batch
    return np.transpose(flat.reshape(batch, S, d_z), (0, 2, 1))


class MotionVQVAE:
    """Motion autoencoder with a discrete bottleneck."""

    def __init__(self, K: int, d_z: int, hidden: int, *, rng, gamma: float = 0.99,
                 dtype=np.float32):
        self.encoder = ConvEncoder(MOTION_WIDTH, hidden, d_z, rng=rng, dtype=dtype)
        self.decoder = ConvDecoder(d_z, hidden, MOTION_WIDTH, rng=rng, dtype=dtype)
        # placeholder table until k-means seeding from the first batch
        init = rng.normal(0.0, 0.1, size=(K, d_z)).astype(dtype)
        self.codebook = Codebook(init, gamma=gamma)
        self.K, self.d_z, self.hidden = K, d_z, hidden

    def encode(self, x) -> Tensor:
        return self.encoder(x)

    def decode(self, codes) -> Tensor:
        return _sigmoid_contacts(self.decoder(codes))

    def params(self) -> dict:
        out = self.encoder.params("enc")
        out.update(self.decoder.params("dec"))
        return out

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params().values():
            p.requires_grad = flag


class ImuTokenizer:
    """IMU encoder with its own codebook; decodes through a motion decoder."""

    def __init__(self, imu_width: int, K: int, d_z: int, hidden: int, *, rng,
                 gamma: float = 0.99, dtype=np.float32):
        self.encoder = ConvEncoder(imu_width, hidden, d_z, rng=rng, dtype=dtype)
        init = rng.normal(0.0, 0.1, size=(K, d_z)).astype(dtype)
        self.codebook = Codebook(init, gamma=gamma)
        self.K, self.d_z, self.hidden = K, d_z, hidden

    def encode(self, x) -> Tensor:
        return self.encoder(x)

    def params(self) -> dict:
        return self.encoder.params("enc")


class BaselinePoser:
    """Continuous per-frame regression from IMU frames to motion frames.

    Layer widths and kernel sizes mirror the tokenized path (encoder plus
    decoder, including the fixed smoothing tail) so the capacity is matched,
    but every stride is 1 and there is no latent bottleneck or quantization:
    each output frame is a continuous function of its input neighborhood,
    the way classic inertial posers regress pose from raw signals.
    """

    def __init__(self, imu_width: int, d_z: int, hidden: int, *, rng, dtype=np.float32):
        self.e1 = Conv1d(imu_width, hidden, 4, stride=1, padding=2, rng=rng, dtype=dtype)
        self.e2 = Conv1d(hidden, hidden, 4, stride=1, padding=1, rng=rng, dtype=dtype)
        self.e3 = Conv1d(hidden, hidden, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.eproj = Conv1d(hidden, d_z, 1, rng=rng, dtype=dtype)
        self.dproj = Conv1d(d_z, hidden, 1, rng=rng, dtype=dtype)
        self.d1 = Conv1d(hidden, hidden, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.d2 = Conv1d(hidden, hidden, 5, stride=1, padding=2, rng=rng, dtype=dtype)
        self.d3 = Conv1d(hidden, hidden, 5, stride=1, padding=2, rng=rng, dtype=dtype)
        self.head = Conv1d(hidden, MOTION_WIDTH, 5, stride=1, padding=2, rng=rng,
                           dtype=dtype)
        self.d_z, self.hidden = d_z, hidden

    def __call__(self, x) -> Tensor:
        h = gn.leaky_relu(self.e1(x), LEAKY_SLOPE)   # k4 p2: length T+1
        h = gn.leaky_relu(self.e2(h), LEAKY_SLOPE)   # k4 p1: back to T
        h = gn.leaky_relu(self.e3(h), LEAKY_SLOPE)
        z = self.eproj(h)
        h = gn.leaky_relu(self.dproj(z), LEAKY_SLOPE)
        h = gn.leaky_relu(self.d1(h), LEAKY_SLOPE)
        h = gn.leaky_relu(self.d2(h), LEAKY_SLOPE)
        h = gn.leaky_relu(self.d3(h), LEAKY_SLOPE)
        out = gn.depthwise_smooth(self.head(h), SMOOTH_KERNEL)
        return _sigmoid_contacts(out)

    def params(self) -> dict:
        out = {}
        for name, layer in (("e1", self.e1), ("e2", self.e2), ("e3", self.e3),
                            ("eproj", self.eproj), ("dproj", self.dproj),
                            ("d1", self.d1), ("d2", self.d2), ("d3", self.d3),
                            ("head", self.head)):
            out.update(layer.params(f"enc.{name}" if name.startswith("e") else f"dec.{name}"))
        return out


def model_arrays(model, prefix: str = "") -> dict:
    """Named parameter + codebook arrays for checkpointing."""
    out = {}
    for name, p in model.params().items():
        out[f"{prefix}{name}"] = p.value
    cb = getattr(model, "codebook", None)
    if cb is not None:
        out[f"{prefix}cb.entries"] = cb.entries
        out[f"{prefix}cb.sigma"] = cb.ema_sigma
        out[f"{prefix}cb.delta"] = cb.ema_delta
        out[f"{prefix}cb.dead"] = cb.dead_steps
    return out


def load_model_arrays(model, arrays: dict, prefix: str = "") -> None:
    """Restore parameters and codebook state in place."""
    for name, p in model.params().items():
        key = f"{prefix}{name}"
        if key not in arrays:
            raise ConfigInvalid(f"checkpoint missing parameter {key}")
        if arrays[key].shape != p.value.shape:
            raise ConfigInvalid(f"parameter {key} has shape {arrays[key].shape}, "
                                f"expected {p.value.shape}")
        p.value = arrays[key].copy()
    cb = getattr(model, "codebook", None)
    if cb is not None:
        cb.entries = arrays[f"{prefix}cb.entries"].copy()
        cb.ema_sigma = arrays[f"{prefix}cb.sigma"].copy()
        cb.ema_delta = arrays[f"{prefix}cb.delta"].copy()
        cb.dead_steps = arrays[f"{prefix}cb.dead"].copy()
