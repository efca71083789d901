import itertools

import numpy as np
import pytest

from pathlets.denoise import code_objective, denoise, sparse_code
from pathlets.dictlearn import BINARY, PathletDictionary
from pathlets.errors import DenoiseError
from pathlets.evaluate import synth_corpus
from pathlets.spatial import make_grid_domain, vectorize
from pathlets.trainer import TrainedModel, TrainingConfig


def separated_dictionary(rng, num_units=20, n_atoms=5, min_hamming=4):
    """Random binary atoms pairwise >= min_hamming apart."""
    while True:
        D = (rng.random((num_units, n_atoms)) < 0.3).astype(float)
        ok = all(
            np.abs(D[:, a] - D[:, b]).sum() >= min_hamming
            for a in range(n_atoms)
            for b in range(a + 1, n_atoms)
        ) and all(D[:, a].sum() >= 2 for a in range(n_atoms))
        if ok:
            return D


def brute_force_min(x, D, lam):
    n = D.shape[1]
    best = None
    best_r = None
    for bits in itertools.product((0.0, 1.0), repeat=n):
        r = np.array(bits)
        obj = code_objective(x, D, r, lam)
        if best is None or obj < best:
            best, best_r = obj, r
    return best, best_r


def test_sparse_code_recovers_single_atom():
    rng = np.random.default_rng(0)
    D = separated_dictionary(rng)
    dic = PathletDictionary(D, phase=BINARY)
    for j in range(D.shape[1]):
        result = sparse_code(D[:, j], dic, lam=0.1, rng=np.random.default_rng(1))
        expected = np.zeros(D.shape[1])
        expected[j] = 1.0
        assert np.array_equal(result.r, expected)


def test_sparse_code_zero_input():
    dic = PathletDictionary(np.eye(4), phase=BINARY)
    result = sparse_code(np.zeros(4), dic, lam=0.5, rng=np.random.default_rng(0))
    assert result.r.sum() == 0.0


def test_sparse_code_exact_solvable():
    # lam = 0, D invertible, x in the binary column span
    D = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    dic = PathletDictionary(D, phase=BINARY)
    x = D @ np.array([1.0, 0.0, 1.0])
    result = sparse_code(x, dic, lam=0.0, max_iters=5000, rng=np.random.default_rng(0))
    residual = x - D @ result.r
    assert residual @ residual == pytest.approx(0.0, abs=1e-6)


def test_sparse_code_near_bruteforce_optimum():
    rng = np.random.default_rng(7)
    hits = 0
    trials = 50
    for t in range(trials):
        D = separated_dictionary(rng, num_units=24, n_atoms=8)
        dic = PathletDictionary(D, phase=BINARY)
        true_r = np.zeros(8)
        true_r[rng.choice(8, size=2, replace=False)] = 1.0
        x = np.minimum(D @ true_r, 1.0)
        lam = 0.1
        result = sparse_code(x, dic, lam, max_iters=2000, rng=np.random.default_rng(t))
        best, _ = brute_force_min(x, D, lam)
        if result.objective <= best * 1.05 + 1e-9:
            hits += 1
    assert hits >= 45  # 90 percent of instances


def test_sparse_code_monotone_lambda_sparsity():
    rng = np.random.default_rng(10)
    monotone = 0
    trials = 40
    for t in range(trials):
        D = separated_dictionary(rng, num_units=24, n_atoms=8)
        dic = PathletDictionary(D, phase=BINARY)
        true_r = (rng.random(8) < 0.4).astype(float)
        x = np.minimum(D @ true_r, 1.0)
        low = sparse_code(x, dic, 0.05, max_iters=1500, rng=np.random.default_rng(t))
        high = sparse_code(x, dic, 1.0, max_iters=1500, rng=np.random.default_rng(t))
        if high.r.sum() <= low.r.sum():
            monotone += 1
    assert monotone >= int(0.95 * trials)


def planted_model(dom, planted):
    config = TrainingConfig(lambda2=0.1)
    from pathlets import bvae

    vae = bvae.init_model(planted.true_dictionary.num_atoms, 2, hidden_dims=(4, 4))
    return TrainedModel(
        dictionary=planted.true_dictionary,
        vae=vae,
        domain=dom,
        training_log=[],
        final_R=planted.true_R,
        config=config,
    )


def test_denoise_fixed_point_on_clean_atom():
    dom = make_grid_domain(8, 8)
    planted = synth_corpus(dom, 6, (4, 6), (1, 1), 10, np.random.default_rng(3))
    model = planted_model(dom, planted)
    D = planted.true_dictionary.matrix
    for j in range(D.shape[1]):
        out = denoise(D[:, j].copy(), model, lam=0.1, rng=np.random.default_rng(j))
        assert out.unit_set() == {int(i) for i in np.flatnonzero(D[:, j])}


def test_denoise_recovers_dropped_bits():
    dom = make_grid_domain(10, 10)
    planted = synth_corpus(dom, 12, (4, 8), (1, 2), 60, np.random.default_rng(5))
    model = planted_model(dom, planted)
    rng = np.random.default_rng(6)
    rates = []
    for traj in planted.corpus:
        x = vectorize(traj, dom)
        ones = np.flatnonzero(x)
        dropped = ones[rng.random(ones.size) < 0.2]
        if dropped.size == 0:
            continue
        x_noisy = x.copy()
        x_noisy[dropped] = 0.0
        if not x_noisy.any():
            continue
        try:
            out = denoise(x_noisy, model, lam=0.1, rng=np.random.default_rng(1))
        except DenoiseError:
            rates.append(0.0)  # heavily eroded observation, nothing recoverable
            continue
        recovered = sum(1 for u in dropped if int(u) in out.unit_set())
        rates.append(recovered / dropped.size)
    assert np.mean(rates) >= 0.6


def test_denoise_rejects_unexplainable_input():
    dom = make_grid_domain(6, 6)
    planted = synth_corpus(dom, 4, (4, 5), (1, 1), 5, np.random.default_rng(8))
    model = planted_model(dom, planted)
    covered = set(np.flatnonzero(planted.true_dictionary.matrix.sum(axis=1)))
    uncovered = [u for u in range(36) if u not in covered]
    if len(uncovered) >= 2:
        x = np.zeros(36)
        x[uncovered[:2]] = 1.0
        with pytest.raises(DenoiseError):
            denoise(x, model, lam=5.0, rng=np.random.default_rng(0))
