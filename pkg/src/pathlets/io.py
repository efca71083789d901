"""File formats and seeded RNG derivation.

Formats:
  - trajectory corpus: JSON lines, one {"units": [...], "t": float|null} per line
  - sparse binary dictionary: JSON {"num_units": .., "atoms": [[unit ids], ..]}
  - fractional matrix checkpoint: one-line JSON header {"rows","cols"} + "\\n"
    followed by row-major little-endian float64 payload
  - flat key=value config text
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from .errors import ConfigError, InputError
from .spatial import Trajectory

PathLike = Union[str, Path]


def derive_rng(seed: int, component: str) -> np.random.Generator:
    """Per-component RNG stream from a single user-visible seed.

    The stream is keyed by a stable hash of the component name so adding
    components never perturbs existing streams.
    """
    key = zlib.crc32(component.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))


# --- trajectory corpus -----------------------------------------------------


def read_corpus(path: PathLike) -> List[Trajectory]:
    trajectories = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}")
            if "units" not in obj:
                raise InputError(f"{path}:{lineno}: missing 'units'")
            t = obj.get("t")
            trajectories.append(
                Trajectory(units=obj["units"], timestamp=None if t is None else float(t))
            )
    if not trajectories:
        raise InputError(f"{path}: corpus is empty")
    return trajectories


def write_corpus(path: PathLike, corpus: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in corpus:
            fh.write(
                json.dumps({"units": list(t.units), "t": t.timestamp}, separators=(",", ":"))
            )
            fh.write("\n")


# --- sparse binary dictionary ----------------------------------------------


def write_dictionary(path: PathLike, D: np.ndarray) -> None:
    """Sparse column encoding of a binary |E| x n matrix; atoms keep zeros."""
    num_units, n = D.shape
    atoms = [sorted(int(i) for i in np.flatnonzero(D[:, j])) for j in range(n)]
    payload = {"num_units": int(num_units), "atoms": atoms}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def read_dictionary(path: PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    num_units = int(payload["num_units"])
    atoms = payload["atoms"]
    D = np.zeros((num_units, len(atoms)), dtype=np.float64)
    for j, units in enumerate(atoms):
        for i in units:
            if not 0 <= int(i) < num_units:
                raise InputError(f"{path}: atom {j} references unit {i} out of range")
            D[int(i), j] = 1.0
    return D


# --- dense float64 matrix checkpoints ---------------------------------------


def write_matrix(path: PathLike, M: np.ndarray) -> None:
    M = np.ascontiguousarray(M, dtype=np.float64)
    header = json.dumps({"rows": int(M.shape[0]), "cols": int(M.shape[1])}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        fh.write(M.astype("<f8").tobytes(order="C"))


def read_matrix(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        rows, cols = int(header["rows"]), int(header["cols"])
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise InputError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


# --- flat key=value config ---------------------------------------------------


def parse_kv_config(text: str) -> dict:
    """Parse `key=value` lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv_config(values: dict) -> str:
    return "".join(f"{k}={values[k]}\n" for k in sorted(values))


def read_kv_config(path: PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_config(fh.read())
