"""State autoencoders: a VAE with configurable KL weight, and a plain
deterministic autoencoder used for comparison runs.

Both map 46-feature states through 40- and 35-unit ReLU hidden layers to a
30-dimensional bottleneck and back out through the mirrored decoder with a
linear output. The VAE's KL weight defaults to 0 (reconstruction-only
training); sampling still goes through the reparameterized z = mu + sigma * eps
path so the weight can be raised without code changes.

Simulation pipelines encode states deterministically via encode_mean; the
stochastic encode is for training and diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .data import N_FEATURES
from .nn import (
    Adam,
    Dense,
    History,
    Module,
    Tensor,
    TrainSchedule,
    exp,
    fit,
    gaussian_kl,
    mse,
)

ENC_HIDDEN = (40, 35)
LATENT_DIM = 30


def _as_batch(s: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(s, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{what} must have {dim} entries, got shape {np.shape(s)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")
    return arr, single


class VaeModel(Module):
    model_kind = "vae"

    def __init__(self, beta: float = 0.0, rng: np.random.Generator | None = None):
        if beta < 0:
            raise ValueError(f"kl weight must be >= 0, got {beta}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.beta = float(beta)
        h1, h2 = ENC_HIDDEN
        self.enc1 = Dense(N_FEATURES, h1, activation="relu", rng=rng)
        self.enc2 = Dense(h1, h2, activation="relu", rng=rng)
        self.mu_head = Dense(h2, LATENT_DIM, activation="linear", rng=rng)
        self.log_sigma_head = Dense(h2, LATENT_DIM, activation="linear", rng=rng)
        self.dec1 = Dense(LATENT_DIM, h2, activation="relu", rng=rng)
        self.dec2 = Dense(h2, h1, activation="relu", rng=rng)
        self.dec_out = Dense(h1, N_FEATURES, activation="linear", rng=rng)

    # graph paths (training)

    def encode_graph(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.enc2(self.enc1(x))
        return self.mu_head(h), self.log_sigma_head(h)

    def decode_graph(self, z: Tensor) -> Tensor:
        return self.dec_out(self.dec2(self.dec1(z)))

    # numpy paths (inference)

    def encode_params(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """mu and sigma for one state or a batch."""
        x, single = _as_batch(s, N_FEATURES, "state")
        h = self.enc2.forward_np(self.enc1.forward_np(x))
        mu = self.mu_head.forward_np(h)
        sigma = np.exp(self.log_sigma_head.forward_np(h))
        if single:
            return mu[0], sigma[0]
        return mu, sigma

    def encode(self, s: np.ndarray, rng: np.random.Generator
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Reparameterized sample: z = mu + sigma * eps, eps ~ N(0, I)."""
        mu, sigma = self.encode_params(s)
        eps = rng.normal(size=mu.shape)
        return mu + sigma * eps, mu, sigma

    def encode_mean(self, s: np.ndarray) -> np.ndarray:
        return self.encode_params(s)[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        z, single = _as_batch(z, LATENT_DIM, "latent")
        out = self.dec_out.forward_np(self.dec2.forward_np(self.dec1.forward_np(z)))
        return out[0] if single else out

    def reconstruct(self, s: np.ndarray) -> np.ndarray:
        return self.decode(self.encode_mean(s))

    def save(self, path, **extra_hyperparams) -> None:
        hyper = {"beta": self.beta, "latent_dim": LATENT_DIM, **extra_hyperparams}
        checkpoint.save_checkpoint(path, self.model_kind, hyper, self.state_arrays())

    @classmethod
    def load(cls, path) -> "VaeModel":
        _, hyper, arrays = checkpoint.load_checkpoint(path, expect_kind=cls.model_kind)
        model = cls(beta=float(hyper.get("beta", 0.0)))
        model.load_state_arrays(arrays)
        return model


class AeModel(Module):
    """Deterministic autoencoder with the same layer shapes, no sigma head."""

    model_kind = "ae"

    def __init__(self, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        h1, h2 = ENC_HIDDEN
        self.enc1 = Dense(N_FEATURES, h1, activation="relu", rng=rng)
        self.enc2 = Dense(h1, h2, activation="relu", rng=rng)
        self.bottleneck = Dense(h2, LATENT_DIM, activation="linear", rng=rng)
        self.dec1 = Dense(LATENT_DIM, h2, activation="relu", rng=rng)
        self.dec2 = Dense(h2, h1, activation="relu", rng=rng)
        self.dec_out = Dense(h1, N_FEATURES, activation="linear", rng=rng)

    def encode_graph(self, x: Tensor) -> Tensor:
        return self.bottleneck(self.enc2(self.enc1(x)))

    def decode_graph(self, z: Tensor) -> Tensor:
        return self.dec_out(self.dec2(self.dec1(z)))

    def encode_mean(self, s: np.ndarray) -> np.ndarray:
        x, single = _as_batch(s, N_FEATURES, "state")
        z = self.bottleneck.forward_np(self.enc2.forward_np(self.enc1.forward_np(x)))
        return z[0] if single else z

    # the deterministic bottleneck ignores the rng; signature kept uniform
    def encode(self, s: np.ndarray, rng=None):
        mu = self.encode_mean(s)
        return mu, mu, np.zeros_like(mu)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z, single = _as_batch(z, LATENT_DIM, "latent")
        out = self.dec_out.forward_np(self.dec2.forward_np(self.dec1.forward_np(z)))
        return out[0] if single else out

    def reconstruct(self, s: np.ndarray) -> np.ndarray:
        return self.decode(self.encode_mean(s))

    def save(self, path, **extra_hyperparams) -> None:
        hyper = {"latent_dim": LATENT_DIM, **extra_hyperparams}
        checkpoint.save_checkpoint(path, self.model_kind, hyper, self.state_arrays())

    @classmethod
    def load(cls, path) -> "AeModel":
        _, _, arrays = checkpoint.load_checkpoint(path, expect_kind=cls.model_kind)
        model = cls()
        model.load_state_arrays(arrays)
        return model


def load_encoder(path):
    """Load either autoencoder kind from a checkpoint, keyed by model_kind."""
    kind, _, _ = checkpoint.load_checkpoint(path)
    if kind == VaeModel.model_kind:
        return VaeModel.load(path)
    if kind == AeModel.model_kind:
        return AeModel.load(path)
    raise ValueError(f"checkpoint holds a {kind!r} model, expected an autoencoder")


# ---- losses -----------------------------------------------------------------


def vae_loss_graph(model: VaeModel, batch: np.ndarray, eps: np.ndarray
                   ) -> tuple[Tensor, Tensor, Tensor]:
    """total, recon_mse, kl as graph nodes; total = recon + beta * kl."""
    x = Tensor(np.asarray(batch, dtype=np.float64))
    mu, log_sigma = model.encode_graph(x)
    z = mu + exp(log_sigma) * eps
    recon = mse(model.decode_graph(z), batch)
    kl = gaussian_kl(mu, log_sigma)
    return recon + kl * model.beta, recon, kl


def vae_loss(model: VaeModel, batch: np.ndarray, rng: np.random.Generator
             ) -> tuple[float, float, float]:
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    eps = rng.normal(size=(batch.shape[0], LATENT_DIM))
    total, recon, kl = vae_loss_graph(model, batch, eps)
    return total.item(), recon.item(), kl.item()


def ae_loss_graph(model: AeModel, batch: np.ndarray) -> Tensor:
    x = Tensor(np.asarray(batch, dtype=np.float64))
    return mse(model.decode_graph(model.encode_graph(x)), batch)


# ---- training ---------------------------------------------------------------


@dataclass(frozen=True)
class VaeTrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta: float = 0.0
    seed: int = 0
    patience: int | None = None   # None: never stop before `epochs`

    def schedule(self) -> TrainSchedule:
        patience = self.patience if self.patience is not None else self.epochs
        return TrainSchedule(max_epochs=self.epochs, patience=patience,
                             batch_size=self.batch_size, seed=self.seed)


def _check_states(states: np.ndarray, what: str) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != N_FEATURES or states.shape[0] < 1:
        raise ValueError(f"{what} must be a non-empty (rows, {N_FEATURES}) array")
    return states


def train_vae(train_states: np.ndarray, val_states: np.ndarray,
              config: VaeTrainConfig | None = None) -> tuple[VaeModel, History]:
    """Train on state rows; validation loss uses eps = 0 so the early-stopping
    metric is deterministic."""
    config = config or VaeTrainConfig()
    train_states = _check_states(train_states, "train_states")
    val_states = _check_states(val_states, "val_states")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])
    model = VaeModel(beta=config.beta,
                     rng=np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1]))
    optimizer = Adam(model.parameters(), lr=config.learning_rate)

    def batch_loss(idx):
        eps = rng.normal(size=(len(idx), LATENT_DIM))
        total, _, _ = vae_loss_graph(model, train_states[idx], eps)
        return total

    def val_loss():
        eps = np.zeros((val_states.shape[0], LATENT_DIM))
        total, _, _ = vae_loss_graph(model, val_states, eps)
        return total.item()

    history = fit(model, optimizer, config.schedule(), train_states.shape[0],
                  batch_loss, val_loss)
    return model, history


def train_ae(train_states: np.ndarray, val_states: np.ndarray,
             config: VaeTrainConfig | None = None) -> tuple[AeModel, History]:
    config = config or VaeTrainConfig()
    train_states = _check_states(train_states, "train_states")
    val_states = _check_states(val_states, "val_states")
    model = AeModel(rng=np.random.default_rng(config.seed))
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    history = fit(model, optimizer, config.schedule(), train_states.shape[0],
                  lambda idx: ae_loss_graph(model, train_states[idx]),
                  lambda: ae_loss_graph(model, val_states).item())
    return model, history
