"""BiGAN networks, losses and the four-phase training loop.

Every batch runs four phases in order:

1. discriminator step on ``(X, E(X))`` vs ``(G(z), z)``
2. generator step (fresh ``z``) through the frozen discriminator
3. encoder step through the frozen discriminator
4. joint encoder+generator step pulling ``G(E(X))`` towards ``X``

Phase 4 uses either cosine similarity or Euclidean distance, or is skipped.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError
from .features import N_FEATURES, NormalizationStats
from .nn_core import (Activation, AdamState, Network, adam_step, as_matrix, bce_grads,
                      bce_terms)

CHECKPOINT_FORMAT = "bigantax-checkpoint"
CHECKPOINT_VERSION = 1


class Alignment(str, enum.Enum):
    NONE = "none"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


@dataclass
class TrainConfig:
    data_dim: int = N_FEATURES
    latent_dim: int = 4
    epochs: int = 300
    batch_size: int = 64
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    lr_e: float = 2e-4
    lr_align: float = 5e-4
    alignment: Alignment = Alignment.COSINE
    seed: int = 0
    encoder_hidden: tuple[int, ...] = (32, 16)
    generator_hidden: tuple[int, ...] = (16, 32)
    discriminator_hidden: tuple[int, ...] = (32, 16)
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.alignment = Alignment(self.alignment)
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.generator_hidden = tuple(int(h) for h in self.generator_hidden)
        self.discriminator_hidden = tuple(int(h) for h in self.discriminator_hidden)

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.latent_dim < 1 or self.data_dim < 1:
            raise ConfigError("latent_dim and data_dim must be >= 1")
        for name in ("lr_d", "lr_g", "lr_e", "lr_align"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError("leaky_slope must lie in (0, 1)")
        if any(h < 1 for h in self.encoder_hidden + self.generator_hidden
               + self.discriminator_hidden):
            raise ConfigError("hidden widths must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alignment"] = self.alignment.value
        for k in ("encoder_hidden", "generator_hidden", "discriminator_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad train config: {e}") from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class EpochMetrics:
    epoch: int
    d_loss: float
    g_loss: float
    e_loss: float
    mean_cosine: float
    mean_euclidean: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BiGanModel:
    encoder: Network
    generator: Network
    discriminator: Network
    opt_e: AdamState
    opt_g: AdamState
    opt_d: AdamState
    opt_align: AdamState
    config: TrainConfig
    stats: NormalizationStats | None = None
    epochs_done: int = 0
    rng_state: dict | None = field(default=None, repr=False)

    @classmethod
    def create(cls, config: TrainConfig, rng: np.random.Generator | None = None) -> "BiGanModel":
        config.validate()
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        x, z, s = config.data_dim, config.latent_dim, config.leaky_slope
        lrelu = Activation.LEAKY_RELU
        enc = Network.build([x, *config.encoder_hidden, z], lrelu, Activation.IDENTITY, rng, s,
                            name="encoder")
        gen = Network.build([z, *config.generator_hidden, x], lrelu, Activation.IDENTITY, rng, s,
                            name="generator")
        dis = Network.build([x + z, *config.discriminator_hidden, 1], lrelu, Activation.SIGMOID,
                            rng, s, name="discriminator")
        return cls(
            enc, gen, dis,
            AdamState.for_params(enc.parameters(), lr=config.lr_e),
            AdamState.for_params(gen.parameters(), lr=config.lr_g),
            AdamState.for_params(dis.parameters(), lr=config.lr_d),
            AdamState.for_params(enc.parameters() + gen.parameters(), lr=config.lr_align),
            config,
        )

    @property
    def data_dim(self) -> int:
        return self.encoder.n_in

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    def encode(self, x) -> np.ndarray:
        return self.encoder.forward(as_matrix(x, self.data_dim))

    def generate(self, z) -> np.ndarray:
        return self.generator.forward(as_matrix(z, self.latent_dim))

    def discriminate(self, x, z) -> np.ndarray:
        return self.discriminator.forward(np.hstack([x, z]))[:, 0]

    def reconstruct(self, x) -> np.ndarray:
        return self.generate(self.encode(x))

    # checkpoint container -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
            "epochs_done": self.epochs_done,
            "networks": {
                "encoder": self.encoder.to_dict(),
                "generator": self.generator.to_dict(),
                "discriminator": self.discriminator.to_dict(),
            },
            "optimizers": {
                "encoder": self.opt_e.to_dict(),
                "generator": self.opt_g.to_dict(),
                "discriminator": self.opt_d.to_dict(),
                "alignment": self.opt_align.to_dict(),
            },
            "normalization": None if self.stats is None else self.stats.to_dict(),
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BiGanModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise DataError("not a bigantax checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {d.get('version')}")
        config = TrainConfig.from_dict(d["config"])
        if config.digest() != d.get("config_sha256"):
            raise DataError("checkpoint config hash does not match its config")
        nets, opts = d["networks"], d["optimizers"]
        model = cls(
            Network.from_dict(nets["encoder"]),
            Network.from_dict(nets["generator"]),
            Network.from_dict(nets["discriminator"]),
            AdamState.from_dict(opts["encoder"]),
            AdamState.from_dict(opts["generator"]),
            AdamState.from_dict(opts["discriminator"]),
            AdamState.from_dict(opts["alignment"]),
            config,
            None if d.get("normalization") is None
            else NormalizationStats.from_dict(d["normalization"]),
            d.get("epochs_done", 0),
            d.get("rng_state"),
        )
        if model.discriminator.n_in != model.data_dim + model.latent_dim:
            raise ShapeError("discriminator input does not match encoder dims")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BiGanModel":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read checkpoint {path}: {e}") from None
        return cls.from_dict(d)


def sample_latent(n: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or latent_dim < 1:
        raise ConfigError("n and latent_dim must be >= 1")
    return rng.standard_normal((n, latent_dim))


# --- losses ----------------------------------------------------------------

def discriminator_loss(de, dg) -> float:
    log_de, _ = bce_terms(de)
    _, log_1m_dg = bce_terms(dg)
    return float(np.mean(-log_de) + np.mean(-log_1m_dg))


def generator_loss(dg) -> float:
    log_dg, _ = bce_terms(dg)
    return float(np.mean(-log_dg))


def encoder_loss(de) -> float:
    _, log_1m_de = bce_terms(de)
    return float(np.mean(-log_1m_de))


def row_cosine(x, r) -> np.ndarray:
    """Row-wise cosine similarity; rows where either side is zero score 0."""
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {r.shape}")
    nx = np.linalg.norm(x, axis=1)
    nr = np.linalg.norm(r, axis=1)
    denom = nx * nr
    ok = denom > 0
    out = np.zeros(x.shape[0])
    out[ok] = np.einsum("ij,ij->i", x[ok], r[ok]) / denom[ok]
    return np.clip(out, -1.0, 1.0)


def row_distance(x, r) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {r.shape}")
    return np.linalg.norm(x - r, axis=1)


def alignment_objective(x, recon, variant: Alignment | str) -> float | None:
    """Mean cosine (to maximise) or mean distance (to minimise); ``None`` when disabled."""
    variant = Alignment(variant)
    if variant is Alignment.NONE:
        return None
    if variant is Alignment.COSINE:
        return float(row_cosine(x, recon).mean())
    return float(row_distance(x, recon).mean())


def alignment_loss_grad(x: np.ndarray, recon: np.ndarray, variant: Alignment
                        ) -> tuple[float, np.ndarray]:
    """Loss to minimise and its gradient w.r.t. ``recon``.

    Cosine: loss = -mean cos(x_i, r_i).  Euclidean: loss = mean ||x_i - r_i||.
    Zero rows (cosine) and exact matches (Euclidean) contribute zero gradient.
    """
    n = x.shape[0]
    if variant is Alignment.COSINE:
        nx = np.linalg.norm(x, axis=1, keepdims=True)
        nr = np.linalg.norm(recon, axis=1, keepdims=True)
        ok = ((nx > 0) & (nr > 0))[:, 0]
        cos = np.zeros(n)
        grad = np.zeros_like(recon)
        if ok.any():
            xo, ro, nxo, nro = x[ok], recon[ok], nx[ok], nr[ok]
            c = np.einsum("ij,ij->i", xo, ro)[:, None] / (nxo * nro)
            cos[ok] = c[:, 0]
            grad[ok] = xo / (nxo * nro) - c * ro / (nro * nro)
        return -float(cos.mean()), -grad / n
    diff = recon - x
    dist = np.linalg.norm(diff, axis=1, keepdims=True)
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where(dist > 0, diff / safe, 0.0)
    return float(dist.mean()), grad / n


# --- training phases -------------------------------------------------------

def discriminator_backward(model: BiGanModel, x: np.ndarray, z: np.ndarray) -> float:
    """Discriminator loss on real ``(x, E(x))`` vs fake ``(G(z), z)``; fills D's gradients."""
    n = x.shape[0]
    gz = model.generator.forward(z)
    ex = model.encoder.forward(x)
    pairs = np.vstack([np.hstack([x, ex]), np.hstack([gz, z])])
    p = model.discriminator.forward(pairs)[:, 0]
    de, dg = p[:n], p[n:]
    loss = discriminator_loss(de, dg)
    d_log_de, _ = bce_grads(de)
    _, d_log_1m_dg = bce_grads(dg)
    grad_p = np.concatenate([-d_log_de / n, -d_log_1m_dg / z.shape[0]])
    model.discriminator.backward(grad_p[:, None])
    return loss


def generator_backward(model: BiGanModel, z: np.ndarray) -> float:
    """Generator loss -mean log D(G(z), z); fills G's gradients (D's are discarded)."""
    n = z.shape[0]
    gz = model.generator.forward(z)
    dg = model.discriminator.forward(np.hstack([gz, z]))[:, 0]
    loss = generator_loss(dg)
    d_log_dg, _ = bce_grads(dg)
    grad_in = model.discriminator.backward((-d_log_dg / n)[:, None])
    model.discriminator.zero_grad()
    model.generator.backward(grad_in[:, :model.data_dim])
    return loss


def encoder_backward(model: BiGanModel, x: np.ndarray) -> float:
    """Encoder loss -mean log(1 - D(x, E(x))); fills E's gradients (D's are discarded)."""
    n = x.shape[0]
    ex = model.encoder.forward(x)
    de = model.discriminator.forward(np.hstack([x, ex]))[:, 0]
    loss = encoder_loss(de)
    _, d_log_1m_de = bce_grads(de)
    grad_in = model.discriminator.backward((-d_log_1m_de / n)[:, None])
    model.discriminator.zero_grad()
    model.encoder.backward(grad_in[:, model.data_dim:])
    return loss


def alignment_backward(model: BiGanModel, x: np.ndarray, variant: Alignment) -> float:
    """Alignment loss on ``G(E(x))``; fills E's and G's gradients."""
    ex = model.encoder.forward(x)
    recon = model.generator.forward(ex)
    loss, grad_r = alignment_loss_grad(x, recon, Alignment(variant))
    grad_ex = model.generator.backward(grad_r)
    model.encoder.backward(grad_ex)
    return loss


def discriminator_phase(model: BiGanModel, x: np.ndarray, rng: np.random.Generator) -> float:
    """Update D to maximise log D(x, E(x)) + log(1 - D(G(z), z))."""
    z = sample_latent(x.shape[0], model.latent_dim, rng)
    loss = discriminator_backward(model, x, z)
    adam_step(model.discriminator.parameters(), model.discriminator.gradients(), model.opt_d)
    return loss


def generator_phase(model: BiGanModel, n: int, rng: np.random.Generator) -> float:
    """Update G to maximise log D(G(z), z) with a fresh z."""
    loss = generator_backward(model, sample_latent(n, model.latent_dim, rng))
    adam_step(model.generator.parameters(), model.generator.gradients(), model.opt_g)
    return loss


def encoder_phase(model: BiGanModel, x: np.ndarray) -> float:
    """Update E to maximise log(1 - D(x, E(x)))."""
    loss = encoder_backward(model, x)
    adam_step(model.encoder.parameters(), model.encoder.gradients(), model.opt_e)
    return loss


def alignment_phase(model: BiGanModel, x: np.ndarray, variant: Alignment | str,
                    lr: float | None = None) -> float | None:
    """Jointly update E and G on the alignment objective.

    Returns the objective measured before the step (mean cosine or mean
    distance), or ``None`` when alignment is disabled.
    """
    variant = Alignment(variant)
    if variant is Alignment.NONE:
        return None
    loss = alignment_backward(model, x, variant)
    adam_step(model.encoder.parameters() + model.generator.parameters(),
              model.encoder.gradients() + model.generator.gradients(), model.opt_align,
              lr=model.config.lr_align if lr is None else lr)
    return -loss if variant is Alignment.COSINE else loss


def reconstruction_metrics(model: BiGanModel, x: np.ndarray) -> tuple[float, float]:
    recon = model.reconstruct(x)
    return float(row_cosine(x, recon).mean()), float(row_distance(x, recon).mean())


PhaseHook = Callable[[int, int, str, BiGanModel], None]
PHASES = ("discriminator", "generator", "encoder", "alignment")


def _check_finite(value: float | None, epoch: int, batch: int, phase: str) -> None:
    if value is not None and not math.isfinite(value):
        raise NumericError(f"non-finite {phase} loss at epoch {epoch}, batch {batch}")


def train(data, config: TrainConfig, model: BiGanModel | None = None,
          phase_hook: PhaseHook | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None
          ) -> tuple[BiGanModel, list[EpochMetrics]]:
    """Train a BiGAN on the rows of ``data`` for ``config.epochs`` epochs.

    Passing ``model`` continues training from it (its RNG state is restored
    when the checkpoint recorded one).  ``phase_hook`` is called after every
    phase with ``(epoch, batch, phase, model)``; the alignment hook fires even
    when alignment is disabled so observers see a uniform sequence.
    """
    config.validate()
    x_all = np.asarray(data, dtype=np.float64)
    if x_all.ndim != 2 or x_all.shape[0] == 0:
        raise DataError("training data is empty")
    x_all = as_matrix(x_all)
    if x_all.shape[1] != config.data_dim:
        raise ShapeError(f"data has {x_all.shape[1]} columns, config expects {config.data_dim}")
    n = x_all.shape[0]
    if n < config.batch_size:
        raise DataError(f"dataset has {n} rows, fewer than batch_size {config.batch_size}")

    rng = np.random.default_rng(config.seed)
    if model is None:
        model = BiGanModel.create(config, rng)
    else:
        if model.data_dim != x_all.shape[1]:
            raise ShapeError(f"model expects {model.data_dim} features, data has {x_all.shape[1]}")
        if model.rng_state is not None:
            rng.bit_generator.state = model.rng_state

    history: list[EpochMetrics] = []
    start = model.epochs_done
    for epoch in range(start + 1, start + config.epochs + 1):
        order = rng.permutation(n)
        d_losses, g_losses, e_losses = [], [], []
        for b, lo in enumerate(range(0, n, config.batch_size)):
            x = x_all[order[lo:lo + config.batch_size]]
            d = discriminator_phase(model, x, rng)
            _check_finite(d, epoch, b, "discriminator")
            if phase_hook:
                phase_hook(epoch, b, "discriminator", model)
            g = generator_phase(model, x.shape[0], rng)
            _check_finite(g, epoch, b, "generator")
            if phase_hook:
                phase_hook(epoch, b, "generator", model)
            e = encoder_phase(model, x)
            _check_finite(e, epoch, b, "encoder")
            if phase_hook:
                phase_hook(epoch, b, "encoder", model)
            a = alignment_phase(model, x, config.alignment)
            _check_finite(a, epoch, b, "alignment")
            if phase_hook:
                phase_hook(epoch, b, "alignment", model)
            d_losses.append(d)
            g_losses.append(g)
            e_losses.append(e)
        cos, dist = reconstruction_metrics(model, x_all)
        if not (math.isfinite(cos) and math.isfinite(dist)):
            raise NumericError(f"non-finite reconstruction metrics at epoch {epoch}")
        m = EpochMetrics(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)),
                         float(np.mean(e_losses)), cos, dist)
        history.append(m)
        if on_epoch:
            on_epoch(m)
        model.epochs_done = epoch
    model.rng_state = rng.bit_generator.state
    return model, history
