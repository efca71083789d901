"""Evaluation metrics, noise injection, and the planted-dictionary oracle.

The planted corpus is the ground truth used by the acceptance suite: atoms
are self-avoiding random walks over the domain, trajectories are unions of a
few bridgeable atoms repaired into connected paths, and the generating
(D, R) pair is retained for recovery checks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dictlearn import BINARY, PathletDictionary, RepresentationMatrix
from .errors import InputError, ShapeError, SynthError
from .generator import repair_connectivity
from .spatial import SpatialDomain, Trajectory, vectorize


@dataclass
class VisitationDistribution:
    """Normalized per-unit visit frequencies over a corpus."""

    probs: np.ndarray
    support_count: int


@dataclass
class PlantedCorpus:
    corpus: List[Trajectory]
    true_dictionary: PathletDictionary
    true_R: RepresentationMatrix
    gen_params: dict


def visitation_distribution(corpus: Sequence[Trajectory], dom: SpatialDomain) -> VisitationDistribution:
    """probs[i] = trajectories visiting unit i / total unit-visits."""
    if not corpus:
        raise InputError("empty corpus")
    counts = np.zeros(dom.num_units, dtype=np.float64)
    for t in corpus:
        for u in t.unit_set():
            counts[dom.validate_unit(u)] += 1.0
    total = counts.sum()
    if total == 0:
        raise InputError("corpus covers no units")
    probs = counts / total
    return VisitationDistribution(probs=probs, support_count=int(np.count_nonzero(probs)))


def jsd(P: np.ndarray, Q: np.ndarray) -> float:
    """Base-2 Jensen-Shannon divergence; symmetric and bounded in [0, 1]."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ShapeError(f"distribution shapes differ: {P.shape} vs {Q.shape}")
    M = 0.5 * (P + Q)

    def kl(A, B):
        mask = A > 0
        return float(np.sum(A[mask] * np.log2(A[mask] / B[mask])))

    return 0.5 * kl(P, M) + 0.5 * kl(Q, M)


def inject_noise(
    corpus: Sequence[Trajectory], drop_rate: float, rng: np.random.Generator
) -> List[Trajectory]:
    """Erase each visited unit independently with probability drop_rate.

    Noise only removes units (erasure, never corruption); trajectories that
    lose all units are dropped from the result.
    """
    if not 0.0 <= drop_rate <= 1.0:
        raise InputError(f"drop rate must be in [0, 1], got {drop_rate}")
    out = []
    for t in corpus:
        # erasure decided per distinct unit so the bit-vector view matches
        distinct = sorted(t.unit_set())
        keep_mask = rng.random(len(distinct)) >= drop_rate
        keep = {u for u, k in zip(distinct, keep_mask) if k}
        units = tuple(u for u in t.units if u in keep)
        if units:
            out.append(Trajectory(units=units, timestamp=t.timestamp))
    return out


def _random_walk_atom(
    dom: SpatialDomain, length: int, rng: np.random.Generator, retries: int = 100
) -> Optional[Tuple[int, ...]]:
    for _ in range(retries):
        start = int(rng.integers(dom.num_units))
        walk = [start]
        used = {start}
        while len(walk) < length:
            options = [v for v in dom.adjacency[walk[-1]] if v not in used]
            if not options:
                break
            nxt = options[int(rng.integers(len(options)))]
            walk.append(nxt)
            used.add(nxt)
        if len(walk) == length:
            return tuple(walk)
    return None


def _bridge_distance(src_units: set, dst_units: set, dom: SpatialDomain, limit: int) -> int:
    """Min intermediate units between the two sets (directed BFS); limit+1 if over."""
    if src_units & dst_units:
        return 0
    frontier = deque((u, 0) for u in sorted(src_units))
    seen = set(src_units)
    while frontier:
        u, depth = frontier.popleft()
        for v in dom.adjacency[u]:
            if v in seen:
                continue
            seen.add(v)
            if v in dst_units:
                return depth
            if depth + 1 <= limit:
                frontier.append((v, depth + 1))
    return limit + 1


def synth_corpus(
    dom: SpatialDomain,
    n_atoms: int,
    atom_len_range: Tuple[int, int],
    atoms_per_traj_range: Tuple[int, int],
    n_traj: int,
    rng: np.random.Generator,
    gap_limit: int = 3,
    retries: int = 100,
) -> PlantedCorpus:
    """Planted corpus with known dictionary and representation.

    Every trajectory is the repaired union of k atoms chosen so consecutive
    atoms are bridgeable within `gap_limit` steps; the bridge adds at most
    gap_limit extra units per atom pair beyond the planted union.
    """
    lo, hi = atom_len_range
    if lo < 1 or hi < lo:
        raise SynthError(f"bad atom length range {atom_len_range}")
    klo, khi = atoms_per_traj_range
    if klo < 1 or khi < klo or khi > n_atoms:
        raise SynthError(f"bad atoms-per-trajectory range {atoms_per_traj_range}")

    atoms: List[Tuple[int, ...]] = []
    for _ in range(n_atoms):
        length = int(rng.integers(lo, hi + 1))
        atom = _random_walk_atom(dom, length, rng, retries)
        if atom is None:
            raise SynthError(f"could not place a length-{length} atom after {retries} tries")
        atoms.append(atom)

    atom_sets = [set(a) for a in atoms]
    D = np.zeros((dom.num_units, n_atoms), dtype=np.float64)
    for j, atom in enumerate(atoms):
        for u in atom:
            D[u, j] = 1.0

    R = np.zeros((n_atoms, n_traj), dtype=np.float64)
    corpus: List[Trajectory] = []
    for i in range(n_traj):
        for _ in range(retries):
            k = int(rng.integers(klo, khi + 1))
            chosen = [int(rng.integers(n_atoms))]
            ok = True
            for _ in range(k - 1):
                covered = set().union(*(atom_sets[j] for j in chosen))
                near = [
                    j
                    for j in range(n_atoms)
                    if j not in chosen
                    and _bridge_distance(covered, atom_sets[j], dom, gap_limit) <= gap_limit
                ]
                if not near:
                    ok = False
                    break
                chosen.append(near[int(rng.integers(len(near)))])
            if not ok:
                continue
            x = np.zeros(dom.num_units)
            for j in chosen:
                x[list(atom_sets[j])] = 1.0
            traj = repair_connectivity(x, dom, gap_limit=gap_limit)
            planted = set().union(*(atom_sets[j] for j in chosen))
            if not planted <= traj.unit_set():
                continue  # repair dropped a fragment; retry with other atoms
            R[chosen, i] = 1.0
            corpus.append(traj)
            break
        else:
            raise SynthError(f"failed to build trajectory {i} after {retries} tries")

    planted = PlantedCorpus(
        corpus=corpus,
        true_dictionary=PathletDictionary(D, phase=BINARY),
        true_R=RepresentationMatrix(R, phase=BINARY),
        gen_params={
            "n_atoms": n_atoms,
            "atom_len_range": tuple(atom_len_range),
            "atoms_per_traj_range": tuple(atoms_per_traj_range),
            "n_traj": n_traj,
            "gap_limit": gap_limit,
        },
    )
    _check_planted(planted, dom, gap_limit)
    return planted


def _check_planted(planted: PlantedCorpus, dom: SpatialDomain, gap_limit: int) -> None:
    """Reconstruction self-check: union of chosen atoms + bounded bridge slack."""
    D = planted.true_dictionary.matrix
    R = planted.true_R.matrix
    for i, traj in enumerate(planted.corpus):
        union = (D @ R[:, i] >= 1.0).astype(np.float64)
        bits = vectorize(traj, dom)
        if not np.all(bits >= union):
            raise SynthError(f"trajectory {i} misses planted atom units")
        k = int(R[:, i].sum())
        extra = float(np.sum(bits - union))
        if extra > gap_limit * max(0, k - 1):
            raise SynthError(f"trajectory {i} has {extra} bridge units, over budget")


def corpus_matrix(corpus: Sequence[Trajectory], dom: SpatialDomain) -> np.ndarray:
    """Stack trajectory bit vectors as columns: |E| x N."""
    if not corpus:
        raise InputError("empty corpus")
    return np.stack([vectorize(t, dom) for t in corpus], axis=1)
