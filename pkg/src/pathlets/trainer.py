"""Joint training loop: projected gradient descent on the VAE + dictionary
objective, convergence detection, then probabilistic rounding to binary.

Step 1 relaxes the binary constraints to [0, 1] and descends the total loss
(reconstruction + description-length penalties + negative ELBO) with a
constant learning rate, clipping R and D after every update. Step 2 rounds
both matrices probabilistically, refits each trajectory's representation
against the rounded dictionary, and optionally fine-tunes the VAE on the
final binary representations so generation matches what was learned.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bvae
from .dictlearn import (
    BINARY,
    MdlLossBreakdown,
    PathletDictionary,
    RepresentationMatrix,
    clip_unit_interval,
    mdl_gradients,
    mdl_loss,
    round_binary,
)
from .errors import ConfigError, InputError, TrainingError
from .io import derive_rng, format_kv_config, read_dictionary, read_kv_config, write_dictionary
from .spatial import SpatialDomain, load_domain


@dataclass
class TrainingConfig:
    learning_rate: float = 0.02
    vae_learning_rate: float = 0.005
    convergence_tol: float = 1e-6
    rounding_scale: float = 1.0
    lambda1: float = 6.0
    lambda2: float = 0.6
    latent_dim: int = 16
    max_iters: int = 3000
    batch_size: int = 64
    seed: int = 0
    dict_size_cap: Optional[int] = None  # None -> min(N, 4 * |E|)
    vae_warmup_iters: int = 50
    vae_finetune_iters: int = 6000
    vae_hidden: Optional[int] = None  # None -> max(64, 2n)
    sparse_code_iters: int = 500

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.vae_learning_rate <= 0:
            raise ConfigError("vae_learning_rate must be > 0")
        if self.convergence_tol <= 0:
            raise ConfigError("convergence_tol must be > 0")
        if self.rounding_scale < 1.0:
            raise ConfigError("rounding_scale must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = "" if v is None else repr(v) if isinstance(v, float) else str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "TrainingConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv or kv[f.name] == "":
                continue
            raw = kv[f.name]
            if f.type in ("float",):
                kwargs[f.name] = float(raw)
            elif f.type in ("int",):
                kwargs[f.name] = int(raw)
            else:  # Optional[int]
                kwargs[f.name] = int(raw)
        unknown = set(kv) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class LogRow:
    iteration: int
    recon: float
    dict_term: float
    sparsity_term: float
    elbo: float
    total: float


@dataclass
class TrainedModel:
    dictionary: PathletDictionary
    vae: bvae.VaeModel
    domain: Optional[SpatialDomain]
    training_log: List[LogRow]
    final_R: RepresentationMatrix
    config: TrainingConfig


@dataclass
class TrainingState:
    """Mutable Step-1 state; all matrices stay in the fractional phase."""

    X: np.ndarray
    D: np.ndarray
    R: np.ndarray
    model: bvae.VaeModel
    config: TrainingConfig
    conditions: Optional[np.ndarray]
    iteration: int = 0
    last_loss: Optional[float] = None


def _init_matrices(X: np.ndarray, config: TrainingConfig, rng: np.random.Generator):
    """R0 = I and D0 = X, or a capped variant: D0 = sampled distinct columns of
    X, each trajectory assigned to its own column when sampled, otherwise to
    the nearest sampled column by Hamming distance."""
    num_units, N = X.shape
    cap = config.dict_size_cap
    if cap is None:
        cap = min(N, 4 * num_units)
    cap = int(cap)
    if cap >= N:
        return X.copy(), np.eye(N)
    chosen = np.sort(rng.choice(N, size=cap, replace=False))
    D = X[:, chosen].copy()
    R = np.zeros((cap, N), dtype=np.float64)
    col_of = {int(c): j for j, c in enumerate(chosen)}
    for i in range(N):
        if i in col_of:
            R[col_of[i], i] = 1.0
        else:
            dists = np.abs(D - X[:, i : i + 1]).sum(axis=0)
            R[int(np.argmin(dists)), i] = 1.0
    return D, R


VAE_GRAD_CLIP = 100.0  # global-norm bound on the ELBO gradients


def _clip_elbo_grads(grads) -> None:
    """Scale the ELBO gradient set (params + grad_r) to a bounded global norm.

    A single steep minibatch (near-saturated Bernoulli heads) can otherwise
    blow up the encoder weights in one step.
    """
    sq = sum(float(np.sum(g * g)) for g in grads.param_grads)
    sq += float(np.sum(grads.grad_r * grads.grad_r))
    norm = np.sqrt(sq)
    if norm > VAE_GRAD_CLIP:
        factor = VAE_GRAD_CLIP / norm
        for g in grads.param_grads:
            g *= factor
        grads.grad_r *= factor


def loss_step(
    state: TrainingState,
    batch: np.ndarray,
    eps: Optional[np.ndarray] = None,
) -> MdlLossBreakdown:
    """One joint gradient step on (R, D, VAE params) over a VAE minibatch.

    `batch` holds trajectory column indices for the ELBO term; the dictionary
    term is always full-batch. Supplying `eps` fixes the reparameterization
    noise (used by the descent tests). Returns the loss breakdown evaluated
    at the pre-step parameters; the state is updated in place and clipped.
    """
    cfg = state.config
    batch = np.asarray(batch, dtype=np.int64)
    dict_loss = mdl_loss(state.X, state.D, state.R, cfg.lambda1, cfg.lambda2)
    gradD, gradR = mdl_gradients(state.X, state.D, state.R, cfg.lambda1, cfg.lambda2)

    batch_r = state.R[:, batch]
    cond_batch = None
    if state.conditions is not None:
        cond_batch = state.conditions[:, batch].T
    if eps is None:
        rng = derive_rng(cfg.seed, f"trainer:eps:{state.iteration}")
        eps = rng.standard_normal((batch.shape[0], state.model.latent_dim))
    grads = bvae.elbo_forward_backward(batch_r, cond_batch, state.model, eps)
    _clip_elbo_grads(grads)

    total = dict_loss.total + grads.loss
    breakdown = MdlLossBreakdown(
        recon=dict_loss.recon,
        dict_term=dict_loss.dict_term,
        sparsity_term=dict_loss.sparsity_term,
        total=total,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
    )
    if not np.isfinite(total) or abs(total) > 1e15:
        raise TrainingError("loss diverged")

    lr = cfg.learning_rate
    if state.iteration >= cfg.vae_warmup_iters:
        gradR[:, batch] += grads.grad_r
    state.D = clip_unit_interval(state.D - lr * gradD)
    state.R = clip_unit_interval(state.R - lr * gradR)
    for param, grad in zip(state.model.parameters(), grads.param_grads):
        param -= cfg.vae_learning_rate * grad
    state.iteration += 1
    return breakdown


def _finetune_vae(model, R_bin, conditions, config, rng) -> None:
    """Extra VAE-only gradient steps on the final binary representations."""
    N = R_bin.shape[1]
    for _ in range(config.vae_finetune_iters):
        batch = rng.integers(0, N, size=min(config.batch_size, N))
        cond_batch = conditions[:, batch].T if conditions is not None else None
        eps = rng.standard_normal((batch.shape[0], model.latent_dim))
        grads = bvae.elbo_forward_backward(R_bin[:, batch], cond_batch, model, eps)
        _clip_elbo_grads(grads)
        for param, grad in zip(model.parameters(), grads.param_grads):
            param -= config.vae_learning_rate * grad


def train(
    X: np.ndarray,
    config: TrainingConfig,
    rng: Optional[np.random.Generator] = None,
    domain: Optional[SpatialDomain] = None,
    conditions: Optional[np.ndarray] = None,
) -> TrainedModel:
    """Run the full two-step procedure on the binary trajectory matrix X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.size == 0:
        raise InputError("X must be a nonempty |E| x N matrix")
    if not np.all((X == 0.0) | (X == 1.0)):
        raise InputError("X must be binary")
    if conditions is not None:
        conditions = np.asarray(conditions, dtype=np.float64)
        if conditions.ndim != 2 or conditions.shape[1] != X.shape[1]:
            raise InputError("conditions must be (cond_dim x N)")

    seed = config.seed
    init_rng = rng if rng is not None else derive_rng(seed, "trainer:init")
    D, R = _init_matrices(X, config, init_rng)
    n = D.shape[1]
    hidden = None
    if config.vae_hidden is not None:
        hidden = (config.vae_hidden, config.vae_hidden)
    model = bvae.init_model(
        input_dim=n,
        latent_dim=config.latent_dim,
        cond_dim=0 if conditions is None else conditions.shape[0],
        hidden_dims=hidden,
        seed=seed,
        rng=derive_rng(seed, "trainer:vae-init"),
    )

    state = TrainingState(
        X=X, D=D, R=R, model=model, config=config, conditions=conditions
    )
    batch_rng = derive_rng(seed, "trainer:batches")
    N = X.shape[1]
    log: List[LogRow] = []
    prev_total = None
    try:
        for k in range(config.max_iters):
            batch = batch_rng.integers(0, N, size=min(config.batch_size, N))
            breakdown = loss_step(state, batch)
            elbo_part = breakdown.total - (
                breakdown.recon
                + config.lambda1 * breakdown.dict_term
                + config.lambda2 * breakdown.sparsity_term
            )
            log.append(
                LogRow(
                    iteration=k,
                    recon=breakdown.recon,
                    dict_term=breakdown.dict_term,
                    sparsity_term=breakdown.sparsity_term,
                    elbo=elbo_part,
                    total=breakdown.total,
                )
            )
            if prev_total is not None and abs(breakdown.total - prev_total) < config.convergence_tol:
                break
            prev_total = breakdown.total
    except TrainingError as exc:
        exc.log = log
        raise

    # Step 2: probabilistic rounding. Atoms whose rounded usage row is empty
    # (or whose rounded column is empty) are dropped before the refit; the
    # rounded R itself is superseded by sparse coding against the binary D.
    round_rng = derive_rng(seed, "trainer:round")
    D_bin = round_binary(state.D, config.rounding_scale, round_rng)
    R_bin = round_binary(state.R, config.rounding_scale, round_rng)
    keep = (R_bin.max(axis=1) > 0) & (D_bin.max(axis=0) > 0)
    if not keep.any():
        keep = np.ones(D_bin.shape[1], dtype=bool)
    D_bin = D_bin[:, keep]

    dictionary = PathletDictionary(D_bin, phase=BINARY)
    final_R = refit_representations(
        X, dictionary, config.lambda2, config.sparse_code_iters, derive_rng(seed, "trainer:refit")
    )
    dictionary, final_R = prune_atoms(
        X, dictionary, final_R, config.lambda1, config.lambda2,
        config.sparse_code_iters, derive_rng(seed, "trainer:prune"),
    )

    # The generator must model the final binary representations, so the VAE
    # shipped with the model is trained from scratch at the pruned size.
    n_final = dictionary.matrix.shape[1]
    final_vae = bvae.init_model(
        input_dim=n_final,
        latent_dim=config.latent_dim,
        cond_dim=0 if conditions is None else conditions.shape[0],
        hidden_dims=hidden,
        seed=seed,
        rng=derive_rng(seed, "trainer:vae-final"),
    )
    if config.vae_finetune_iters > 0:
        _finetune_vae(
            final_vae,
            final_R.matrix,
            conditions,
            config,
            derive_rng(seed, "trainer:finetune"),
        )

    return TrainedModel(
        dictionary=dictionary,
        vae=final_vae,
        domain=domain,
        training_log=log,
        final_R=final_R,
        config=config,
    )


def prune_atoms(
    X: np.ndarray,
    dictionary: PathletDictionary,
    R: RepresentationMatrix,
    lambda1: float,
    lambda2: float,
    sparse_code_iters: int,
    rng: np.random.Generator,
):
    """Greedy description-length refinement of a binary (D, R) pair.

    Per-trajectory sparse coding does not see the per-atom cost lambda1, so
    the refit happily keeps near-duplicate atoms alive. This pass walks the
    atoms from least to most used and drops any atom whose users can be
    re-encoded with the remaining atoms at a total objective gain: the
    reconstruction and L1 increase over its users must stay below the lambda1
    saved by retiring the atom. Repeats until no atom can be dropped, then
    compacts D and R to the surviving columns. Deterministic given the rng
    seed state (atom order is by usage, ties by index).
    """
    from .denoise import sparse_code  # local import to avoid a module cycle

    Dm = dictionary.matrix
    Rm = R.matrix.copy()
    N = X.shape[1]
    active = Rm.max(axis=1) > 0

    def col_obj(i, Dsub, r):
        d = X[:, i] - Dsub @ r
        return float(d @ d + lambda2 * r.sum())

    changed = True
    while changed:
        changed = False
        usage = (Rm > 0).sum(axis=1)
        for j in np.argsort(usage, kind="stable"):
            if not active[j]:
                continue
            users = np.flatnonzero(Rm[j] > 0)
            if users.size == 0:
                active[j] = False
                changed = True
                continue
            sub = np.flatnonzero(active & (np.arange(active.size) != j))
            if sub.size == 0:
                continue
            Dsub = PathletDictionary(Dm[:, sub], phase=BINARY)
            delta = -lambda1
            recoded = {}
            for i in users:
                old = col_obj(i, Dm, Rm[:, i])
                r_new = sparse_code(
                    X[:, i], Dsub, lambda2, max_iters=sparse_code_iters, rng=rng
                ).r
                delta += col_obj(i, Dsub.matrix, r_new) - old
                recoded[int(i)] = r_new
            if delta < 0:
                for i, r_new in recoded.items():
                    Rm[:, i] = 0.0
                    Rm[sub, i] = r_new
                active[j] = False
                changed = True

    if not active.any():
        active = np.ones(Dm.shape[1], dtype=bool)
    D_out = PathletDictionary(Dm[:, active], phase=BINARY)
    R_out = RepresentationMatrix(Rm[active], phase=BINARY)
    return D_out, R_out


def refit_representations(
    X: np.ndarray,
    dictionary: PathletDictionary,
    lam: float,
    max_iters: int,
    rng: np.random.Generator,
) -> RepresentationMatrix:
    """Sparse-code every trajectory column against a binary dictionary."""
    from .denoise import sparse_code  # local import to avoid a module cycle

    cols = []
    for i in range(X.shape[1]):
        cols.append(sparse_code(X[:, i], dictionary, lam, max_iters=max_iters, rng=rng).r)
    return RepresentationMatrix(np.stack(cols, axis=1), phase=BINARY)


# --- checkpoint persistence -----------------------------------------------------


def save_checkpoint(ckpt_dir, model: TrainedModel) -> None:
    """Layout: dict.json, vae.model, repr.json, log.csv, config.txt, domain.txt."""
    ckpt = Path(ckpt_dir)
    ckpt.mkdir(parents=True, exist_ok=True)
    write_dictionary(ckpt / "dict.json", model.dictionary.matrix)
    bvae.save_model(ckpt / "vae.model", model.vae)

    R = model.final_R.matrix
    atoms_used = [sorted(int(j) for j in np.flatnonzero(R[:, i])) for i in range(R.shape[1])]
    with open(ckpt / "repr.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"num_atoms": int(R.shape[0]), "columns": atoms_used},
            fh,
            separators=(",", ":"),
            sort_keys=True,
        )
        fh.write("\n")

    with open(ckpt / "log.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "recon", "dict_term", "sparsity_term", "elbo", "total"])
        for row in model.training_log:
            writer.writerow(
                [row.iteration, repr(row.recon), repr(row.dict_term),
                 repr(row.sparsity_term), repr(row.elbo), repr(row.total)]
            )

    with open(ckpt / "config.txt", "w", encoding="utf-8") as fh:
        fh.write(format_kv_config(model.config.to_kv()))

    if model.domain is not None:
        ext = "txt" if model.domain.kind == "grid" else "csv"
        with open(ckpt / f"domain.{ext}", "w", encoding="utf-8") as fh:
            fh.write(model.domain.spec_text())


def load_checkpoint(ckpt_dir) -> TrainedModel:
    ckpt = Path(ckpt_dir)
    if not (ckpt / "dict.json").exists():
        raise InputError(f"{ckpt}: not a checkpoint directory (missing dict.json)")
    D = read_dictionary(ckpt / "dict.json")
    vae_model = bvae.load_model(ckpt / "vae.model")
    config = TrainingConfig.from_kv(read_kv_config(ckpt / "config.txt"))

    with open(ckpt / "repr.json", "r", encoding="utf-8") as fh:
        rep = json.load(fh)
    R = np.zeros((int(rep["num_atoms"]), len(rep["columns"])), dtype=np.float64)
    for i, col in enumerate(rep["columns"]):
        for j in col:
            R[int(j), i] = 1.0

    log = []
    with open(ckpt / "log.csv", "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            log.append(
                LogRow(
                    iteration=int(row["iteration"]),
                    recon=float(row["recon"]),
                    dict_term=float(row["dict_term"]),
                    sparsity_term=float(row["sparsity_term"]),
                    elbo=float(row["elbo"]),
                    total=float(row["total"]),
                )
            )

    domain = None
    for name in ("domain.txt", "domain.csv"):
        if (ckpt / name).exists():
            with open(ckpt / name, "r", encoding="utf-8") as fh:
                domain = load_domain(fh.read())
            break

    return TrainedModel(
        dictionary=PathletDictionary(D, phase=BINARY),
        vae=vae_model,
        domain=domain,
        training_log=log,
        final_R=RepresentationMatrix(R, phase=BINARY),
        config=config,
    )
