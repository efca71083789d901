"""Trajectory sampling: latent draw -> atom selection -> union -> repair.

Connectivity repair turns a generated bit vector into an ordered trajectory:
weakly-connected components of the active set are traversed depth-first
(backtracking along traversed units where needed to keep every consecutive
pair adjacent) and stitched together with shortest adjacency bridges of at
most `gap_limit` intermediate units; components too far away are dropped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import bvae
from .dictlearn import BINARY, PathletDictionary
from .errors import ConfigError, DomainError, InputError, ShapeError
from .io import derive_rng
from .spatial import SpatialDomain, Trajectory, vectorize_units

DEFAULT_GAP_LIMIT = 3
TIME_BUCKETS = 24  # hour-of-day buckets for conditional generation


@dataclass
class GenerationRequest:
    count: int
    threshold: float = 0.5
    repair: bool = True
    seed: int = 0
    prefix: Optional[Trajectory] = None
    depart_time: Optional[float] = None  # seconds of day
    gap_limit: int = DEFAULT_GAP_LIMIT

    def __post_init__(self):
        if self.count < 1:
            raise InputError(f"count must be >= 1, got {self.count}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")


def reconstruct(r: np.ndarray, D: PathletDictionary, threshold: float = 0.5) -> np.ndarray:
    """x_hat = D r, thresholded to bits.

    For a binary dictionary the entries of D r are atom-overlap counts, so any
    threshold <= 1 yields the union of the selected atoms.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] != D.num_atoms:
        raise ShapeError(f"r must have length {D.num_atoms}, got shape {r.shape}")
    counts = D.matrix @ r
    cut = 1.0 if (D.phase == BINARY and threshold <= 1.0) else threshold
    return (counts >= cut).astype(np.float64)


def _components(active: set, dom: SpatialDomain) -> List[set]:
    """Weakly-connected components of the induced adjacency on `active`."""
    undirected = {u: set() for u in active}
    for u in active:
        for v in dom.adjacency[u]:
            if v in undirected:
                undirected[u].add(v)
                undirected[v].add(u)
    seen = set()
    comps = []
    for u in sorted(active):
        if u in seen:
            continue
        comp = set()
        stack = [u]
        seen.add(u)
        while stack:
            w = stack.pop()
            comp.add(w)
            for v in undirected[w]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def _pick_start(comp: set, dom: SpatialDomain) -> int:
    """Start at an in-degree-0 unit, else a degree-1 endpoint, else min id."""
    indeg = {u: 0 for u in comp}
    for u in comp:
        for v in dom.adjacency[u]:
            if v in indeg:
                indeg[v] += 1
    zeros = [u for u in comp if indeg[u] == 0]
    if zeros:
        return min(zeros)
    ones = [u for u in comp if indeg[u] == 1]
    if ones:
        return min(ones)
    return min(comp)


def _traverse(comp: set, start: int, dom: SpatialDomain) -> Tuple[List[int], set]:
    """Depth-first walk of `comp` from `start`, smallest neighbor id first.

    Backtracking re-lists units only when the domain provides the reverse
    step; on directed domains sub-branches without return edges are left
    uncovered and reported back for bridging or dropping.
    """
    walk = [start]
    visited = {start}

    def descend(u: int) -> None:
        u_pos = len(walk) - 1  # walk[-1] == u on entry
        for v in sorted(dom.adjacency[u]):
            if v not in comp or v in visited:
                continue
            if walk[-1] != u:
                if v in dom.adjacency[walk[-1]]:
                    pass  # direct shortcut, backtrack elided
                else:
                    # retrace the walk back to u when reverse steps exist
                    rev = list(reversed(walk[u_pos:]))[1:]
                    if rev and all(b in dom.adjacency[a] for a, b in zip([walk[-1]] + rev, rev)):
                        walk.extend(rev)
                    else:
                        continue  # unreachable without reverse edges
            visited.add(v)
            walk.append(v)
            descend(v)

    descend(start)
    return walk, comp - visited


def _bfs_path(src: int, targets: set, dom: SpatialDomain, limit: int):
    """Shortest directed path from src to any unit in `targets`.

    Returns (intermediates, reached) with at most `limit` intermediates, or
    None when unreachable within the budget. Deterministic: neighbors are
    expanded in ascending unit-id order.
    """
    if src in targets:
        return [], src
    parent = {src: None}
    frontier = deque([(src, 0)])
    while frontier:
        u, depth = frontier.popleft()
        if depth > limit:
            continue
        for v in dom.adjacency[u]:
            if v in parent:
                continue
            parent[v] = u
            if v in targets:
                path = []
                w = u
                while w != src:
                    path.append(w)
                    w = parent[w]
                return list(reversed(path)), v
            if depth + 1 <= limit:
                frontier.append((v, depth + 1))
    return None


def repair_connectivity(
    x: np.ndarray,
    dom: SpatialDomain,
    gap_limit: int = DEFAULT_GAP_LIMIT,
    timestamp: Optional[float] = None,
) -> Trajectory:
    """Order the active units of x into an adjacency-respecting trajectory.

    The largest component (ties: smallest unit id) anchors the walk; the
    remaining components are bridged in by shortest adjacency paths of at most
    `gap_limit` intermediate units, nearest first, or dropped when out of
    reach. The result is deterministic in x and the domain.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dom.num_units,):
        raise ShapeError(f"x must have length {dom.num_units}, got shape {x.shape}")
    active = {int(i) for i in np.flatnonzero(x)}
    if not active:
        raise InputError("cannot repair an all-zero path vector")

    comps = _components(active, dom)
    comps.sort(key=lambda c: (-len(c), min(c)))
    first = comps[0]
    walk, leftover = _traverse(first, _pick_start(first, dom), dom)
    pending: List[set] = [c for c in comps[1:]]
    if leftover:
        pending.extend(_components(leftover, dom))

    while pending:
        remaining_units = set().union(*pending)
        found = _bfs_path(walk[-1], remaining_units, dom, gap_limit)
        if found is None:
            break  # nothing reachable; drop all remaining components
        bridge, entry = found
        comp = next(c for c in pending if entry in c)
        pending.remove(comp)
        walk.extend(bridge)
        sub_walk, sub_left = _traverse(comp, entry, dom)
        walk.extend(sub_walk)
        if sub_left:
            pending.extend(_components(sub_left, dom))

    return Trajectory(units=tuple(walk), timestamp=timestamp)


# --- condition vectors --------------------------------------------------------


def time_bucket(depart_seconds: float, buckets: int = TIME_BUCKETS) -> int:
    b = int((float(depart_seconds) % 86400.0) / 86400.0 * buckets)
    return min(b, buckets - 1)


def condition_vector(
    prefix_units,
    depart_seconds: float,
    dom: SpatialDomain,
    buckets: int = TIME_BUCKETS,
) -> np.ndarray:
    """concat(binary prefix vector, one-hot time bucket); length |E| + buckets."""
    vec = np.zeros(dom.num_units + buckets, dtype=np.float64)
    vec[: dom.num_units] = vectorize_units(prefix_units, dom)
    vec[dom.num_units + time_bucket(depart_seconds, buckets)] = 1.0
    return vec


def training_conditions(
    corpus, dom: SpatialDomain, buckets: int = TIME_BUCKETS
) -> np.ndarray:
    """Condition matrix ((|E| + buckets) x N): first trajectory half + hour bucket."""
    cols = []
    for t in corpus:
        half = t.units[: max(1, (len(t.units) + 1) // 2)]
        ts = 0.0 if t.timestamp is None else t.timestamp
        cols.append(condition_vector(half, ts, dom, buckets))
    return np.stack(cols, axis=1)


# --- end-to-end sampling --------------------------------------------------------


def _sample_one(model, D, dom, req: GenerationRequest, cond, force_bits, index: int):
    rng = derive_rng(req.seed, f"generate:{index}")
    r = bvae.sample_r(model.vae if hasattr(model, "vae") else model, cond, 1, rng)[:, 0]
    x = reconstruct(r, D, req.threshold)
    if force_bits is not None:
        x = np.maximum(x, force_bits)
    if not req.repair:
        idx = np.flatnonzero(x)
        if idx.size == 0:
            return None
        return Trajectory(units=tuple(int(i) for i in idx), timestamp=req.depart_time)
    if not x.any():
        return None
    return repair_connectivity(x, dom, req.gap_limit, timestamp=req.depart_time)


def generate(model, req: GenerationRequest, max_attempts_per_sample: int = 20):
    """Sample req.count trajectories from a trained model.

    All-zero draws are resampled (fresh stream per attempt); per-sample RNG
    streams are derived from (seed, sample index) so results do not depend on
    scheduling.
    """
    vae_model = model.vae
    D = model.dictionary
    dom = model.domain
    if D.num_units != dom.num_units:
        raise ConfigError("dictionary and domain disagree on the number of units")
    cond = None
    force = None
    if req.prefix is not None or req.depart_time is not None:
        if not vae_model.conditional:
            raise ConfigError("conditioning requested but the model is unconditional")
        if req.prefix is None or req.depart_time is None:
            raise ConfigError("conditional generation needs both prefix and depart time")
        for u in req.prefix.units:
            dom.validate_unit(u)
        cond = condition_vector(req.prefix.units, req.depart_time, dom)
        if cond.shape[0] != vae_model.cond_dim:
            raise ShapeError(
                f"condition has {cond.shape[0]} dims, model expects {vae_model.cond_dim}"
            )
        force = vectorize_units(req.prefix.units, dom)
    elif vae_model.conditional:
        raise ConfigError("model is conditional; provide prefix and depart time")

    out = []
    for i in range(req.count):
        traj = None
        for attempt in range(max_attempts_per_sample):
            traj = _sample_one(model, D, dom, req, cond, force, i * 1000003 + attempt)
            if traj is not None:
                break
        if traj is None:
            raise InputError(
                "model generated only empty paths; dictionary may be degenerate"
            )
        out.append(traj)
    return out


def generate_conditional(model, prefix: Trajectory, depart_time: float, count: int, seed: int = 0):
    """Conditional sampling; prefix units are forced into every output."""
    for u in prefix.units:
        if not 0 <= u < model.domain.num_units:
            raise DomainError(f"prefix unit {u} invalid in domain")
    req = GenerationRequest(
        count=count, seed=seed, prefix=prefix, depart_time=float(depart_time)
    )
    return generate(model, req)
