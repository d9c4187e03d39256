"""Discrete codebooks and the tokenizer training objectives.

Covers nearest-neighbor quantization with straight-through gradients,
exponential-moving-average codebook re-estimation, soft batch token
frequencies (Gumbel-Softmax over negative squared distances, sorted
descending), the Zipf rank-frequency target, Jensen-Shannon divergence,
and the composite losses of the motion autoencoder and the IMU tokenizer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import gradnet as gn
from .errors import ConfigInvalid, InvalidArgument, LengthMismatch, ShapeMismatch
from .gradnet import Tensor

GUMBEL_TEMPERATURE = 0.5
JS_FLOOR = 1e-12

# dead codebook entries: usage mass below this fraction of the uniform share
# for this many consecutive updates get reinitialized
DEAD_FRACTION = 1e-3
DEAD_PATIENCE = 50
REINIT_MASS = 1.0


@dataclass(frozen=True)
class ZipfParams:
    """Rank-frequency law parameters; alpha=0 degenerates to uniform."""

    alpha: float = 1.0
    beta: float = 2.7
    K: int = 64

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= -1 or self.K < 2:
            raise InvalidArgument("zipf params out of range")


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0
    commit: float = 0.02
    contact: float = 0.01
    slide: float = 0.01
    code: float = 1.0
    dist: float = 1.0
    zipf: float = 0.2

    def __post_init__(self):
        if any(v < 0 for v in self.__dict__.values()):
            raise InvalidArgument("loss weights must be non-negative")


class Codebook:
    """K x d_z latent code table with EMA accumulators and usage counters.

    Entries move only through ema_update / refresh_dead; they carry no
    gradient. Untouched entries keep their stored value bit-for-bit (their
    accumulator ratio is scale-invariant under the decay).
    """

    def __init__(self, entries: np.ndarray, gamma: float = 0.99, init_mass: float = 1e-3):
        entries = np.asarray(entries)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise ConfigInvalid("codebook needs a (K>=2, d_z) entry table")
        if not 0.0 < gamma < 1.0:
            raise ConfigInvalid(f"gamma must be in (0,1), got {gamma}")
        self.entries = entries.copy()
        self.gamma = float(gamma)
        self.ema_sigma = entries * entries.dtype.type(init_mass)
        self.ema_delta = np.full(entries.shape[0], init_mass, dtype=entries.dtype)
        self.dead_steps = np.zeros(entries.shape[0], dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_kmeans(cls, latents: np.ndarray, K: int, *, rng: np.random.Generator,
                    gamma: float = 0.99, iters: int = 10) -> "Codebook":
        """Seed the table with k-means (Lloyd) over an encoded batch.

        Batches smaller than K (tiny corpora) seed the surplus entries with
        jittered resamples; the surplus stays unused until the dead-entry
        refresh recycles it.
        """
        latents = np.asarray(latents)
        S = latents.shape[0]
        if S == 0:
            raise ConfigInvalid("k-means init needs a non-empty latent batch")
        if S >= K:
            centers = latents[rng.permutation(S)[:K]].copy()
        else:
            centers = latents[rng.integers(0, S, size=K)].copy()
            spread = latents.std(axis=0, keepdims=True) + 1e-3
            centers += (0.01 * spread * rng.standard_normal(centers.shape)
                        ).astype(centers.dtype)
        for _ in range(iters):
            idx, _ = quantize(latents, centers)
            for k in range(K):
                members = latents[idx == k]
                if len(members):
                    centers[k] = members.mean(axis=0)
        return cls(centers, gamma=gamma)

    def ema_update(self, latents: np.ndarray, indices: np.ndarray) -> None:
        """Fold one batch of assigned latents into the moving averages.

        sigma_k <- g*sigma_k + (1-g)*sum(assigned z); delta_k likewise with
        counts; entry_k <- sigma_k/delta_k, recomputed only for entries that
        received tokens this batch.
        """
        latents = np.asarray(latents, dtype=self.entries.dtype)
        indices = np.asarray(indices)
        if indices.max(initial=-1) >= self.size or indices.min(initial=0) < 0:
            raise ShapeMismatch("token index out of codebook range")
        g = self.entries.dtype.type(self.gamma)
        sums = np.zeros_like(self.ema_sigma)
        np.add.at(sums, indices, latents)
        counts = np.bincount(indices, minlength=self.size).astype(self.entries.dtype)
        self.ema_sigma = g * self.ema_sigma + (1 - g) * sums
        self.ema_delta = g * self.ema_delta + (1 - g) * counts
        touched = counts > 0
        self.entries[touched] = self.ema_sigma[touched] / self.ema_delta[touched, None]

    def refresh_dead(self, latents: np.ndarray, rng: np.random.Generator) -> int:
        """Reinitialize entries that stayed under-used for DEAD_PATIENCE updates."""
        share = self.ema_delta.sum() / self.size
        dead = self.ema_delta < DEAD_FRACTION * share
        self.dead_steps[dead] += 1
        self.dead_steps[~dead] = 0
        stale = np.flatnonzero(self.dead_steps >= DEAD_PATIENCE)
        for k in stale:
            z = np.asarray(latents, dtype=self.entries.dtype)[rng.integers(len(latents))]
            self.entries[k] = z
            self.ema_sigma[k] = z * self.entries.dtype.type(REINIT_MASS)
            self.ema_delta[k] = REINIT_MASS
            self.dead_steps[k] = 0
        return len(stale)

    def digest(self) -> bytes:
        """Content digest of the entry table (32 bytes)."""
        h = hashlib.sha256()
        h.update(str(self.entries.dtype).encode())
        h.update(np.asarray(self.entries.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.entries).tobytes())
        return h.digest()


def _entry_table(cb) -> np.ndarray:
    return cb.entries if isinstance(cb, Codebook) else np.asarray(cb)


def quantize(latents, cb) -> tuple:
    """Nearest codebook entry per latent row under squared Euclidean distance.

    Distances are evaluated as elementwise (z-c)^2 sums (not the expanded
    inner-product form), so exact ties resolve identically to a per-pair
    scan: the lowest index wins.

    Returns (indices (S,), codes (S, d_z)).
    """
    Z = latents.value if isinstance(latents, Tensor) else np.asarray(latents)
    C = _entry_table(cb)
    if Z.ndim != 2 or Z.shape[1] != C.shape[1]:
        raise ShapeMismatch(f"latents {Z.shape} incompatible with codebook {C.shape}")
    S = Z.shape[0]
    indices = np.empty(S, dtype=np.int64)
    block = 2048
    for lo in range(0, S, block):
        hi = min(lo + block, S)
        d = np.sum((Z[lo:hi, None, :] - C[None, :, :]) ** 2, axis=2)
        indices[lo:hi] = np.argmin(d, axis=1)
    return indices, C[indices]


def straight_through(latents: Tensor, codes: np.ndarray) -> Tensor:
    """Forward the quantized codes; route the gradient to the latents unchanged."""
    codes = np.asarray(codes)
    if codes.shape != latents.value.shape:
        raise ShapeMismatch("codes must match latent shape")
    if not isinstance(latents, Tensor) or not latents.requires_grad:
        return Tensor(codes)

    def bw(g):
        if latents.grad is None:
            latents.grad = np.zeros_like(latents.value)
        latents.grad += g

    return Tensor(codes, requires_grad=True, _parents=(latents,), _backward=bw)


def batch_token_frequency(latents, cb, temperature: float = GUMBEL_TEMPERATURE,
                          rng: np.random.Generator | None = None) -> Tensor:
    """Soft usage distribution of the codebook over a batch of latents.

    Per latent, logits are negative squared distances to every entry; Gumbel
    noise is added when an rng is supplied (rng=None is the deterministic
    zero-noise hook); a softmax at ``temperature`` yields per-latent soft
    assignments which are averaged and sorted descending. The sort applies
    the forward-value permutation, kept constant for the backward pass.
    """
    if temperature <= 0:
        raise InvalidArgument("temperature must be positive")
    Z = latents if isinstance(latents, Tensor) else Tensor(np.asarray(latents))
    C = cb.entries if isinstance(cb, Codebook) else cb
    C = C if isinstance(C, Tensor) else Tensor(np.asarray(C))
    if Z.value.shape[1] != C.value.shape[1]:
        raise ShapeMismatch("latent and codebook dims differ")

    z2 = gn.tsum(gn.mul(Z, Z), axis=1, keepdims=True)           # (S, 1)
    c2 = gn.tsum(gn.mul(C, C), axis=1)                          # (K,)
    cross = gn.matmul(Z, gn.transpose(C, (1, 0)))               # (S, K)
    logits = gn.sub(gn.mul(cross, 2.0), gn.add(z2, c2))         # -(squared distance)
    if rng is not None:
        u = np.clip(rng.random(logits.value.shape), 1e-12, 1.0 - 1e-12)
        logits = gn.add(logits, -np.log(-np.log(u)).astype(logits.value.dtype))
    soft = gn.softmax(gn.mul(logits, 1.0 / temperature), axis=1)
    freq = gn.tmean(soft, axis=0)                               # (K,)
    perm = np.argsort(-freq.value, kind="stable")
    return freq[perm]


def hard_token_frequency(latents, cb) -> np.ndarray:
    """Sorted (descending) hard-assignment histogram; the temperature->0 limit."""
    idx, _ = quantize(latents, cb)
    K = _entry_table(cb).shape[0]
    hist = np.bincount(idx, minlength=K).astype(np.float64) / len(idx)
    return np.sort(hist)[::-1]


def zipf_target(zp: ZipfParams) -> np.ndarray:
    """Normalized rank-frequency target: weight 1/(k+beta)^alpha for rank k."""
    k = np.arange(1, zp.K + 1, dtype=np.float64)
    w = 1.0 / np.power(k + zp.beta, zp.alpha)
    return w / w.sum()


def js_divergence(p, q) -> Tensor:
    """Jensen-Shannon divergence (nats) between two length-K distributions.

    Zero bins are floored at 1e-12 and both inputs renormalized before the
    divergence, keeping the result finite and within [0, ln 2].
    """
    P = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    Q = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
    if P.value.shape != Q.value.shape:
        raise LengthMismatch(f"distributions differ in length: {P.value.shape} vs {Q.value.shape}")
    Pf = gn.maximum_const(P, JS_FLOOR)
    Qf = gn.maximum_const(Q, JS_FLOOR)
    Pn = gn.div(Pf, gn.tsum(Pf))
    Qn = gn.div(Qf, gn.tsum(Qf))
    M = gn.mul(gn.add(Pn, Qn), 0.5)
    log_m = gn.log(M)
    kl_p = gn.tsum(gn.mul(Pn, gn.sub(gn.log(Pn), log_m)))
    kl_q = gn.tsum(gn.mul(Qn, gn.sub(gn.log(Qn), log_m)))
    return gn.mul(gn.add(kl_p, kl_q), 0.5)


def codebook_perplexity(indices: np.ndarray, K: int) -> float:
    """exp(entropy) of the hard assignment histogram; in [1, K]."""
    hist = np.bincount(np.asarray(indices), minlength=K).astype(np.float64)
    hist /= hist.sum()
    nz = hist[hist > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def motion_vq_losses(M, M_hat, Z, B, p, p_hat, j_v_hat, w: LossWeights):
    """Motion autoencoder objective.

    Args:
        M, M_hat: (batch, 271, T') target and reconstruction.
        Z: (N, d_z) encoder latents; B: (N, d_z) quantized codes (constant).
        p, p_hat: (batch, 4, T') contact labels and predicted probabilities.
        j_v_hat: (batch, 4, 3, T') reconstructed velocities of the foot
            joints, one per contact channel.

    Returns (total, components) where total = recon + commit + contact +
    slide, each pre-multiplied by its weight; components hold the raw values.
    """
    M_hat = gn.as_tensor(M_hat)
    M = gn.as_tensor(M)
    if M_hat.value.shape != M.value.shape:
        raise ShapeMismatch("reconstruction shape differs from target")
    n_lat = Z.value.shape[0] if isinstance(Z, Tensor) else np.asarray(Z).shape[0]

    recon = gn.mse(M_hat, M)

    dz = gn.sub(gn.as_tensor(Z), gn.stop_gradient(gn.as_tensor(B)))
    commit = gn.mul(gn.tsum(gn.mul(dz, dz)), 1.0 / n_lat)

    bce = gn.binary_cross_entropy(gn.as_tensor(p_hat), gn.as_tensor(p))
    n_bt = bce.value.shape[0] * bce.value.shape[2]
    contact = gn.mul(gn.tsum(bce), 1.0 / n_bt)

    v2 = gn.tsum(gn.mul(gn.as_tensor(j_v_hat), gn.as_tensor(j_v_hat)), axis=2)
    slide = gn.mul(gn.tsum(gn.mul(gn.as_tensor(p_hat), v2)), 1.0 / n_bt)

    total = gn.add(gn.add(gn.mul(recon, w.recon), gn.mul(commit, w.commit)),
                   gn.add(gn.mul(contact, w.contact), gn.mul(slide, w.slide)))
    components = {"recon": recon, "commit": commit, "contact": contact, "slide": slide}
    return total, components


def imu_tokenizer_losses(B_imu, B_motion, F_imu, F_motion, F_zipf, w: LossWeights):
    """IMU tokenizer objective: code matching plus distribution matching.

    B_motion, F_motion, F_zipf are treated as constants (the motion tokenizer
    is frozen); B_imu should carry a straight-through gradient to the IMU
    encoder and F_imu a Gumbel-Softmax gradient.
    """
    B_imu = gn.as_tensor(B_imu)
    B_motion_c = gn.stop_gradient(gn.as_tensor(B_motion))
    if B_imu.value.shape != B_motion_c.value.shape:
        raise ShapeMismatch("token code arrays differ in shape")
    n_lat = B_imu.value.shape[0]

    dz = gn.sub(B_imu, B_motion_c)
    code = gn.mul(gn.tsum(gn.mul(dz, dz)), 1.0 / n_lat)

    F_motion_c = gn.stop_gradient(gn.as_tensor(F_motion))
    dist_match = js_divergence(F_imu, F_motion_c)
    dist_zipf = js_divergence(F_motion_c, gn.stop_gradient(gn.as_tensor(F_zipf)))
    dist = gn.add(dist_match, gn.mul(dist_zipf, w.zipf))

    total = gn.add(gn.mul(code, w.code), gn.mul(dist, w.dist))
    components = {"code": code, "dist": dist, "dist_match": dist_match, "dist_zipf": dist_zipf}
    return total, components
