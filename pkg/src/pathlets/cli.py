"""Command-line pipeline: train / generate / eval / denoise / synth.

All subcommands are deterministic under a fixed --seed; per-component RNG
streams are derived by stable hashing of (seed, component name). Exit codes:
0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate, generator, io as pio, trainer
from .denoise import sparse_code
from .dictlearn import effective_atoms
from .errors import (
    ConfigError,
    DenoiseError,
    DomainError,
    InputError,
    PathletsError,
    ShapeError,
    SynthError,
    TrainingError,
)
from .spatial import Trajectory, load_domain, make_grid_domain, vectorize

VALIDATION_ERRORS = (ConfigError, DomainError, InputError, ShapeError)


def _load_domain_arg(args):
    if getattr(args, "grid", None):
        try:
            rows, cols = (int(v) for v in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigError(f"--grid expects RxC, got {args.grid!r}")
        return make_grid_domain(rows, cols)
    if getattr(args, "graph", None):
        with open(args.graph, "r", encoding="utf-8") as fh:
            return load_domain(fh.read())
    raise ConfigError("a domain is required: pass --grid RxC or --graph edges.csv")


def _parse_time(text: str) -> float:
    """HH:MM or plain seconds-of-day."""
    if ":" in text:
        hh, mm = text.split(":", 1)
        return int(hh) * 3600.0 + int(mm) * 60.0
    return float(text)


def _build_config(args) -> trainer.TrainingConfig:
    kv = {}
    if getattr(args, "config", None):
        kv.update(pio.read_kv_config(args.config))
    overrides = {
        "learning_rate": args.lr,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "latent_dim": args.latent,
        "max_iters": args.max_iters,
        "seed": args.seed,
        "rounding_scale": args.theta,
    }
    for key, value in overrides.items():
        if value is not None:
            kv[key] = str(value)
    return trainer.TrainingConfig.from_kv(kv)


def cmd_train(args) -> int:
    dom = _load_domain_arg(args)
    corpus = pio.read_corpus(args.corpus)
    for t in corpus:
        for u in t.units:
            dom.validate_unit(u)
    X = evaluate.corpus_matrix(corpus, dom)
    config = _build_config(args)
    conditions = None
    if args.conditional:
        conditions = generator.training_conditions(corpus, dom)
    model = trainer.train(X, config, domain=dom, conditions=conditions)
    trainer.save_checkpoint(args.out, model)
    count, _ = effective_atoms(model.final_R)
    print(f"checkpoint written to {args.out} (effective atoms: {count})")
    return 0


def cmd_generate(args) -> int:
    model = trainer.load_checkpoint(args.ckpt)
    if model.domain is None:
        raise InputError(f"{args.ckpt}: checkpoint has no domain file")
    if args.count < 1:
        raise InputError(f"--count must be >= 1, got {args.count}")
    prefix = None
    depart = None
    if args.prefix is not None or args.time is not None:
        if not model.vae.conditional:
            raise ConfigError("checkpoint holds an unconditional model; --prefix/--time unavailable")
        if args.prefix is None or args.time is None:
            raise ConfigError("conditional generation needs both --prefix and --time")
        prefix = Trajectory(units=tuple(int(u) for u in args.prefix.split(",")))
        depart = _parse_time(args.time)
    req = generator.GenerationRequest(
        count=args.count,
        threshold=args.threshold,
        repair=not args.no_repair,
        seed=args.seed,
        prefix=prefix,
        depart_time=depart,
    )
    out = generator.generate(model, req)
    pio.write_corpus(args.out, out)

    model_hash = hashlib.sha256(Path(args.ckpt, "dict.json").read_bytes()).hexdigest()
    sidecar = {
        "model_hash": model_hash,
        "seed": args.seed,
        "count": args.count,
        "threshold": args.threshold,
        "repair": not args.no_repair,
        "conditional": prefix is not None,
    }
    with open(str(args.out) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(out)} trajectories to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dom = _load_domain_arg(args)
    real = pio.read_corpus(args.real)
    gen = pio.read_corpus(args.gen)
    for corpus, name in ((real, args.real), (gen, args.gen)):
        for t in corpus:
            try:
                for u in t.units:
                    dom.validate_unit(u)
            except DomainError:
                raise DomainError(f"{name}: trajectory units outside the domain")
    if args.noise is not None:
        rng = pio.derive_rng(args.seed, "eval:noise")
        real = evaluate.inject_noise(real, args.noise, rng)
        if not real:
            raise InputError("noise injection removed every trajectory")
    P = evaluate.visitation_distribution(real, dom)
    Q = evaluate.visitation_distribution(gen, dom)
    report = {
        "jsd": evaluate.jsd(P.probs, Q.probs),
        "n_real": len(real),
        "n_gen": len(gen),
        "support_real": P.support_count,
        "support_gen": Q.support_count,
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_denoise(args) -> int:
    model = trainer.load_checkpoint(args.ckpt)
    if model.domain is None:
        raise InputError(f"{args.ckpt}: checkpoint has no domain file")
    dom = model.domain
    corpus = pio.read_corpus(args.infile)
    for t in corpus:
        for u in t.units:
            try:
                dom.validate_unit(u)
            except DomainError:
                raise DomainError("input corpus does not match the checkpoint's domain")
    lam = model.config.lambda2 if args.lam is None else args.lam
    rng = pio.derive_rng(args.seed, "denoise")
    cleaned = []
    rows = []
    for t in corpus:
        x = vectorize(t, dom)
        result = sparse_code(x, model.dictionary, lam, rng=rng)
        x_hat = generator.reconstruct(result.r, model.dictionary, 0.5)
        if not x_hat.any():
            raise DenoiseError("a trajectory is unexplainable by the dictionary")
        repaired = generator.repair_connectivity(x_hat, dom, timestamp=t.timestamp)
        cleaned.append(repaired)
        residual = x - model.dictionary.matrix @ result.r
        rows.append(
            (
                int(x.sum()),
                len(repaired.unit_set()),
                float(residual @ residual),
                int(result.r.sum()),
            )
        )
    pio.write_corpus(args.out, cleaned)
    report_path = str(args.out) + ".report.csv"
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bits_in", "bits_out", "recon_error", "atoms_used"])
        writer.writerows(rows)
    print(f"wrote {len(cleaned)} cleaned trajectories to {args.out} (+ {report_path})")
    return 0


def cmd_synth(args) -> int:
    dom = _load_domain_arg(args)
    rng = pio.derive_rng(args.seed, "synth")
    atom_lo, atom_hi = (int(v) for v in args.atom_len.split("-"))
    k_lo, k_hi = (int(v) for v in args.atoms_per_traj.split("-"))
    planted = evaluate.synth_corpus(
        dom,
        n_atoms=args.atoms,
        atom_len_range=(atom_lo, atom_hi),
        atoms_per_traj_range=(k_lo, k_hi),
        n_traj=args.traj,
        rng=rng,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pio.write_corpus(out / "corpus.jsonl", planted.corpus)
    pio.write_dictionary(out / "truth_dict.json", planted.true_dictionary.matrix)
    print(f"wrote {len(planted.corpus)} trajectories and the planted dictionary to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathlets",
        description="Learn sparse pathlet dictionaries and generate trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_domain_args(p):
        p.add_argument("--grid", help="grid domain, RxC (e.g. 10x10)")
        p.add_argument("--graph", help="CSV edge list: edge_id,tail_vertex,head_vertex")

    p_train = sub.add_parser("train", help="learn dictionary + VAE from a corpus")
    p_train.add_argument("--corpus", required=True)
    add_domain_args(p_train)
    p_train.add_argument("--out", required=True, help="checkpoint directory")
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--latent", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--lambda1", type=float, default=None)
    p_train.add_argument("--lambda2", type=float, default=None)
    p_train.add_argument("--max-iters", type=int, default=None)
    p_train.add_argument("--theta", type=float, default=None, help="rounding scale")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--conditional", action="store_true",
                         help="train a CVAE conditioned on trajectory prefix + hour")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample trajectories from a checkpoint")
    p_gen.add_argument("--ckpt", required=True)
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--threshold", type=float, default=0.5)
    p_gen.add_argument("--no-repair", action="store_true")
    p_gen.add_argument("--prefix", help="comma-separated unit ids (conditional models)")
    p_gen.add_argument("--time", help="departure time HH:MM or seconds-of-day")
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("eval", help="JSD between two corpora")
    p_eval.add_argument("--real", required=True)
    p_eval.add_argument("--gen", required=True)
    add_domain_args(p_eval)
    p_eval.add_argument("--noise", type=float, default=None,
                        help="erasure rate applied to the real corpus first")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="write the JSON report here as well")
    p_eval.set_defaults(func=cmd_eval)

    p_den = sub.add_parser("denoise", help="sparse-recover a noisy corpus")
    p_den.add_argument("--ckpt", required=True)
    p_den.add_argument("--in", dest="infile", required=True)
    p_den.add_argument("--out", required=True)
    p_den.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="sparse-coding penalty (default: training lambda2)")
    p_den.add_argument("--seed", type=int, default=0)
    p_den.set_defaults(func=cmd_denoise)

    p_synth = sub.add_parser("synth", help="planted-dictionary synthetic corpus")
    add_domain_args(p_synth)
    p_synth.add_argument("--atoms", type=int, required=True)
    p_synth.add_argument("--traj", type=int, required=True)
    p_synth.add_argument("--atom-len", default="4-8")
    p_synth.add_argument("--atoms-per-traj", default="1-3")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, DenoiseError, SynthError, PathletsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
