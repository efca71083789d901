"""Binary-output variational autoencoder over atom-selection vectors.

A Gaussian encoder maps a (soft) binary vector r (optionally concatenated
with a condition vector) to (mu, log_var); the decoder maps a latent z
(optionally concatenated with the condition) to two heads m = exp(.) and
p = sigmoid(.), defining per-coordinate Bernoulli success probabilities
1 - p**m. All forward/backward passes are plain numpy with hand-written
gradients so the ELBO gradient can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import InputError, ShapeError

PROB_FLOOR = 1e-12  # clamp for prob_one before taking logs
LOG_SAT = 30.0  # saturation bound for log-variance and log-multiplicity heads

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    # derivative expressed in terms of the activation output h
}


@dataclass
class DenseLayer:
    """Affine layer y = x @ W.T + b with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray


@dataclass
class VaeModel:
    """Encoder + two-headed decoder; cond_dim = 0 means unconditional."""

    input_dim: int
    latent_dim: int
    cond_dim: int
    hidden_dims: Tuple[int, ...]
    activation: str
    encoder: List[DenseLayer]
    decoder_m: List[DenseLayer]
    decoder_p: List[DenseLayer]
    seed: int = 0

    @property
    def conditional(self) -> bool:
        return self.cond_dim > 0

    def parameters(self) -> List[np.ndarray]:
        out = []
        for stack in (self.encoder, self.decoder_m, self.decoder_p):
            for layer in stack:
                out.append(layer.W)
                out.append(layer.b)
        return out


@dataclass
class LatentSample:
    mu: np.ndarray
    log_var: np.ndarray
    z: np.ndarray
    eps: np.ndarray


@dataclass
class BernoulliParams:
    """Decoder output: each coordinate is 1 with probability 1 - p**m."""

    m: np.ndarray
    p: np.ndarray
    prob_one: np.ndarray


def default_hidden(input_dim: int) -> Tuple[int, int]:
    width = max(64, 2 * input_dim)
    return (width, width)


def init_model(
    input_dim: int,
    latent_dim: int,
    cond_dim: int = 0,
    hidden_dims: Optional[Tuple[int, ...]] = None,
    activation: str = "tanh",
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> VaeModel:
    """Random model with Xavier-scaled weights."""
    if activation not in _ACTIVATIONS:
        raise ShapeError(f"unsupported activation {activation!r}")
    if hidden_dims is None:
        hidden_dims = default_hidden(input_dim)
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if rng is None:
        rng = np.random.default_rng(seed)

    def stack(in_dim: int, out_dim: int) -> List[DenseLayer]:
        dims = [in_dim, *hidden_dims, out_dim]
        layers = []
        for a, b in zip(dims, dims[1:]):
            scale = np.sqrt(1.0 / a)
            layers.append(
                DenseLayer(W=rng.normal(0.0, scale, size=(b, a)), b=np.zeros(b))
            )
        return layers

    return VaeModel(
        input_dim=input_dim,
        latent_dim=latent_dim,
        cond_dim=cond_dim,
        hidden_dims=hidden_dims,
        activation=activation,
        encoder=stack(input_dim + cond_dim, 2 * latent_dim),
        decoder_m=stack(latent_dim + cond_dim, input_dim),
        decoder_p=stack(latent_dim + cond_dim, input_dim),
        seed=seed,
    )


# --- MLP forward/backward -----------------------------------------------------


def _mlp_forward(layers: List[DenseLayer], x: np.ndarray, activation: str):
    """Hidden layers use the nonlinearity; the last layer is linear."""
    act, _ = _ACTIVATIONS[activation]
    caches = []
    h = x
    for i, layer in enumerate(layers):
        pre = h @ layer.W.T + layer.b
        out = act(pre) if i < len(layers) - 1 else pre
        caches.append((h, out))
        h = out
    return h, caches


def _mlp_backward(layers, caches, grad_out, activation):
    """Returns (grad wrt input, [(gW, gb) per layer])."""
    _, dact = _ACTIVATIONS[activation]
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        x_in, out = caches[i]
        if i < len(layers) - 1:
            g = g * dact(None, out)
        grads[i] = (g.T @ x_in, g.sum(axis=0))
        g = g @ layers[i].W
    return g, grads


# --- core operations ---------------------------------------------------------


def _as_batch(v: np.ndarray, dim: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ShapeError(f"{name} must have {dim} coordinates, got shape {v.shape}")
    return v


def _with_cond(v: np.ndarray, cond, model: VaeModel) -> np.ndarray:
    if model.cond_dim == 0:
        if cond is not None:
            raise ShapeError("model is unconditional but a condition was supplied")
        return v
    if cond is None:
        raise ShapeError("conditional model requires a condition vector")
    cond = _as_batch(cond, model.cond_dim, "condition")
    if cond.shape[0] == 1 and v.shape[0] > 1:
        cond = np.broadcast_to(cond, (v.shape[0], model.cond_dim))
    if cond.shape[0] != v.shape[0]:
        raise ShapeError("condition batch size does not match input batch size")
    return np.concatenate([v, cond], axis=1)


def encode(r: np.ndarray, cond, model: VaeModel) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian posterior parameters (mu, log_var) for input r."""
    squeeze = np.asarray(r).ndim == 1
    x = _with_cond(_as_batch(r, model.input_dim, "r"), cond, model)
    out, _ = _mlp_forward(model.encoder, x, model.activation)
    K = model.latent_dim
    mu, log_var = out[:, :K], out[:, K:]
    if squeeze:
        return mu[0], log_var[0]
    return mu, log_var


def reparameterize(
    mu: np.ndarray, log_var: np.ndarray, rng: np.random.Generator
) -> LatentSample:
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise ShapeError("mu and log_var must have equal shapes")
    eps = rng.standard_normal(mu.shape)
    z = mu + np.exp(0.5 * log_var) * eps
    return LatentSample(mu=mu, log_var=log_var, z=z, eps=eps)


def decode(z: np.ndarray, cond, model: VaeModel) -> BernoulliParams:
    """Bernoulli parameters (m, p, prob_one) for latent z."""
    squeeze = np.asarray(z).ndim == 1
    x = _with_cond(_as_batch(z, model.latent_dim, "z"), cond, model)
    a_m, _ = _mlp_forward(model.decoder_m, x, model.activation)
    a_p, _ = _mlp_forward(model.decoder_p, x, model.activation)
    m = np.exp(np.clip(a_m, -LOG_SAT, LOG_SAT))
    p = 1.0 / (1.0 + np.exp(-a_p))
    prob_one = 1.0 - np.exp(m * np.log(p))
    if squeeze:
        return BernoulliParams(m=m[0], p=p[0], prob_one=prob_one[0])
    return BernoulliParams(m=m, p=p, prob_one=prob_one)


def bernoulli_loglik(r: np.ndarray, params: BernoulliParams) -> float:
    """sum_j r_j log(prob_one_j) + (1 - r_j) log(1 - prob_one_j), clamped."""
    r = np.asarray(r, dtype=np.float64)
    q = np.asarray(params.prob_one, dtype=np.float64)
    if r.shape != q.shape:
        raise ShapeError("r and prob_one must have equal shapes")
    q = np.clip(q, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(np.sum(r * np.log(q) + (1.0 - r) * np.log(1.0 - q)))


def kl_gauss(mu: np.ndarray, log_var: np.ndarray) -> float:
    """KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise ShapeError("mu and log_var must have equal shapes")
    return float(0.5 * np.sum(mu * mu + np.exp(log_var) - log_var - 1.0))


@dataclass
class ElboGradients:
    """Parameter gradients (matching model.parameters() order) plus d loss / d r."""

    loss: float
    param_grads: List[np.ndarray]
    grad_r: np.ndarray
    recon_nll: float = 0.0
    kl: float = 0.0


def elbo_forward_backward(
    batch_r: np.ndarray,
    cond_batch,
    model: VaeModel,
    eps: np.ndarray,
) -> ElboGradients:
    """ELBO loss and exact gradients with caller-supplied reparameterization noise.

    batch_r has items in COLUMNS (input_dim x B) to match representation-matrix
    layout; eps is (B, K). The loss is the batch mean of
    -log p(r|z) + KL(q(z|r) || N(0, I)) with one z sample per item.
    """
    batch_r = np.asarray(batch_r, dtype=np.float64)
    if batch_r.ndim != 2 or batch_r.shape[0] != model.input_dim:
        raise ShapeError(
            f"batch must be ({model.input_dim} x B), got {batch_r.shape}"
        )
    B = batch_r.shape[1]
    if B == 0:
        raise InputError("empty batch")
    r = batch_r.T  # (B, n)
    K = model.latent_dim
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (B, K):
        raise ShapeError(f"eps must be ({B}, {K}), got {eps.shape}")

    x_enc = _with_cond(r, cond_batch, model)
    enc_out, enc_caches = _mlp_forward(model.encoder, x_enc, model.activation)
    mu, log_var = enc_out[:, :K], enc_out[:, K:]
    # Saturate the exponentiated heads so a bad step cannot overflow exp();
    # gradients are evaluated at the saturated value (pass-through), which
    # keeps a restoring force on runaway pre-activations.
    log_var = np.clip(log_var, -LOG_SAT, LOG_SAT)
    std = np.exp(0.5 * log_var)
    z = mu + std * eps

    x_dec = _with_cond(z, cond_batch, model)
    a_m, m_caches = _mlp_forward(model.decoder_m, x_dec, model.activation)
    a_p, p_caches = _mlp_forward(model.decoder_p, x_dec, model.activation)
    a_m = np.clip(a_m, -LOG_SAT, LOG_SAT)
    m = np.exp(a_m)
    p = 1.0 / (1.0 + np.exp(-a_p))
    log_p = np.log(p)
    u = np.exp(m * log_p)  # = 1 - prob_one = p**m
    q = 1.0 - u
    q_c = np.clip(q, PROB_FLOOR, 1.0 - PROB_FLOOR)
    inside = (q > PROB_FLOOR) & (q < 1.0 - PROB_FLOOR)

    loglik = np.sum(r * np.log(q_c) + (1.0 - r) * np.log(1.0 - q_c), axis=1)
    kl = 0.5 * np.sum(mu * mu + np.exp(log_var) - log_var - 1.0, axis=1)
    loss = float(np.mean(-loglik + kl))

    # backward, d loss / d (.) with the 1/B batch-mean factor folded in
    scale = 1.0 / B
    dq = -(r / q_c - (1.0 - r) / (1.0 - q_c)) * scale
    dq[~inside] = 0.0  # clamp region has zero gradient
    du = -dq
    d_logu = du * u  # logu = m * log_p
    dm = d_logu * log_p
    dlog_p = d_logu * m
    da_m = dm * m
    da_p = dlog_p * (1.0 - p)  # d log p / d a_p = 1 - p for sigmoid

    dxdec_m, grads_m = _mlp_backward(model.decoder_m, m_caches, da_m, model.activation)
    dxdec_p, grads_p = _mlp_backward(model.decoder_p, p_caches, da_p, model.activation)
    dz = (dxdec_m + dxdec_p)[:, :K]

    dmu = dz + mu * scale
    dlog_var = dz * eps * 0.5 * std + 0.5 * (np.exp(log_var) - 1.0) * scale
    denc_out = np.concatenate([dmu, dlog_var], axis=1)
    dxenc, grads_e = _mlp_backward(model.encoder, enc_caches, denc_out, model.activation)

    # r appears both as encoder input and as the Bernoulli target
    dr_target = -(np.log(q_c) - np.log(1.0 - q_c)) * scale
    grad_r = (dxenc[:, : model.input_dim] + dr_target).T

    param_grads = []
    for grads in (grads_e, grads_m, grads_p):
        for gW, gb in grads:
            param_grads.append(gW)
            param_grads.append(gb)
    return ElboGradients(
        loss=loss,
        param_grads=param_grads,
        grad_r=grad_r,
        recon_nll=float(np.mean(-loglik)),
        kl=float(np.mean(kl)),
    )


def elbo_loss(
    batch_r: np.ndarray,
    cond_batch,
    model: VaeModel,
    rng: np.random.Generator,
) -> float:
    """Batch-mean negative ELBO with a single z sample per item."""
    batch_r = np.asarray(batch_r, dtype=np.float64)
    if batch_r.ndim != 2:
        raise ShapeError("batch must be 2-D (input_dim x B)")
    eps = rng.standard_normal((batch_r.shape[1], model.latent_dim))
    return elbo_forward_backward(batch_r, cond_batch, model, eps).loss


def sample_r(
    model: VaeModel,
    cond,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw `count` binary vectors: z ~ N(0, I), then Bernoulli(prob_one).

    Returns an (input_dim x count) matrix, one sample per column.
    """
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    z = rng.standard_normal((count, model.latent_dim))
    params = decode(z, cond, model)
    draws = rng.random(params.prob_one.shape)
    return (draws < params.prob_one).astype(np.float64).T


# --- persistence --------------------------------------------------------------


def save_model(path, model: VaeModel) -> None:
    """JSON header + little-endian float64 payload of all matrices in order."""
    header = {
        "input_dim": model.input_dim,
        "latent_dim": model.latent_dim,
        "cond_dim": model.cond_dim,
        "hidden_dims": list(model.hidden_dims),
        "activation": model.activation,
        "seed": model.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for arr in model.parameters():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def load_model(path) -> VaeModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    model = init_model(
        input_dim=int(header["input_dim"]),
        latent_dim=int(header["latent_dim"]),
        cond_dim=int(header["cond_dim"]),
        hidden_dims=tuple(header["hidden_dims"]),
        activation=header["activation"],
        seed=int(header["seed"]),
    )
    offset = 0
    for arr in model.parameters():
        n = arr.size * 8
        chunk = payload[offset : offset + n]
        if len(chunk) != n:
            raise InputError(f"{path}: truncated model payload")
        arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
        offset += n
    if offset != len(payload):
        raise InputError(f"{path}: trailing bytes in model payload")
    return model
