"""Acceptance gate: one test per release criterion, at the stated tolerances.

The heavy fixtures (planted corpus, default-config trained model) are shared
module-wide; the full file is expected to take on the order of 15-20 minutes
single-threaded, dominated by the noise-robustness trials.
"""

import time

import numpy as np
import pytest

from pathlets.bvae import elbo_forward_backward, init_model
from pathlets.dictlearn import (
    BINARY,
    PathletDictionary,
    RepresentationMatrix,
    clip_unit_interval,
    effective_atoms,
    mdl_gradients,
    mdl_loss,
    round_binary,
)
from pathlets.denoise import code_objective, sparse_code
from pathlets.errors import DenoiseError, ShapeError
from pathlets.evaluate import (
    corpus_matrix,
    inject_noise,
    jsd,
    synth_corpus,
    visitation_distribution,
)
from pathlets.generator import (
    GenerationRequest,
    generate,
    generate_conditional,
    repair_connectivity,
    training_conditions,
)
from pathlets.io import derive_rng
from pathlets.spatial import Trajectory, make_graph_domain, make_grid_domain, vectorize_units
from pathlets.trainer import TrainingConfig, train
from pathlets.denoise import denoise


# --- shared fixtures -------------------------------------------------------------

N_PLANTED_ATOMS = 20
N_TRAJ = 500


@pytest.fixture(scope="module")
def grid_domain():
    return make_grid_domain(10, 10)


@pytest.fixture(scope="module")
def planted(grid_domain):
    return synth_corpus(
        grid_domain, N_PLANTED_ATOMS, (4, 8), (1, 3), N_TRAJ, derive_rng(1, "synth")
    )


@pytest.fixture(scope="module")
def planted_model(planted, grid_domain):
    """Default-config model of the clean planted corpus, with its train time."""
    X = corpus_matrix(planted.corpus, grid_domain)
    start = time.monotonic()
    model = train(X, TrainingConfig(seed=0), domain=grid_domain)
    return model, time.monotonic() - start


# --- criterion 1: planted-dictionary recovery ------------------------------------


def test_planted_dictionary_recovery(planted, planted_model, grid_domain):
    model, train_seconds = planted_model
    X = corpus_matrix(planted.corpus, grid_domain)

    eff, _ = effective_atoms(model.final_R)
    assert eff <= 2 * N_PLANTED_ATOMS, f"effective atoms {eff} > {2 * N_PLANTED_ATOMS}"

    residual = X - model.dictionary.matrix @ model.final_R.matrix
    mean_bit_error = np.abs(residual).sum() / X.shape[1]
    assert mean_bit_error <= 2.0, f"mean bit error {mean_bit_error:.3f} > 2"

    gen = generate(model, GenerationRequest(count=1000, seed=7))
    dv_real = visitation_distribution(planted.corpus, grid_domain)
    dv_gen = visitation_distribution(gen, grid_domain)
    divergence = jsd(dv_real.probs, dv_gen.probs)
    assert divergence <= 0.05, f"generated JSD {divergence:.4f} > 0.05"

    assert train_seconds <= 600.0, f"training took {train_seconds:.0f}s > 600s"


# --- criterion 2: noise-robustness ordering --------------------------------------


def test_noise_robustness_ordering(planted, grid_domain):
    clean = planted.corpus
    dv_clean = visitation_distribution(clean, grid_domain)
    wins = 0
    for trial in range(5):
        noisy = inject_noise(clean, 0.2, derive_rng(trial, "noise"))
        jsd_noisy = jsd(dv_clean.probs, visitation_distribution(noisy, grid_domain).probs)
        X = corpus_matrix(noisy, grid_domain)
        model = train(X, TrainingConfig(seed=trial), domain=grid_domain)
        gen = generate(model, GenerationRequest(count=1000, seed=trial + 100))
        jsd_gen = jsd(dv_clean.probs, visitation_distribution(gen, grid_domain).probs)
        if jsd_gen < jsd_noisy:
            wins += 1
    assert wins >= 4, f"generated beat the noisy corpus in only {wins}/5 trials"


# --- criterion 3: data-efficiency trend ------------------------------------------


def test_data_efficiency_trend(planted, grid_domain):
    clean = planted.corpus
    dv_clean = visitation_distribution(clean, grid_domain)
    perm = derive_rng(0, "subset").permutation(len(clean))
    scores = {}
    for frac in (0.05, 0.8):
        subset = [clean[i] for i in perm[: int(frac * len(clean))]]
        model = train(corpus_matrix(subset, grid_domain), TrainingConfig(seed=0),
                      domain=grid_domain)
        gen = generate(model, GenerationRequest(count=2000, seed=11))
        scores[frac] = jsd(dv_clean.probs, visitation_distribution(gen, grid_domain).probs)
    degradation = scores[0.05] - scores[0.8]
    assert degradation <= 0.05, (
        f"JSD degraded by {degradation:.4f} (5%: {scores[0.05]:.4f}, "
        f"80%: {scores[0.8]:.4f})"
    )


# --- criterion 4: gradient correctness -------------------------------------------


def _smoothed_mdl_loss(X, D, R, lambda1, lambda2, tau=1e-3):
    """Row-max replaced by tau * logsumexp(row / tau); matches max as tau -> 0."""
    resid = X - D @ R
    shifted = R / tau
    row_max = shifted.max(axis=1, keepdims=True)
    smooth_max = tau * (np.log(np.exp(shifted - row_max).sum(axis=1)) + row_max[:, 0])
    return float((resid * resid).sum() + lambda1 * smooth_max.sum() + lambda2 * R.sum())


def test_gradient_correctness():
    start = time.monotonic()
    rng = derive_rng(0, "acceptance:grad")
    h = 1e-6
    checked = 0

    # MDL loss: 60 instances; entries kept > 0 and row maxima well separated so
    # the subgradient of the piecewise terms is locally a plain gradient.
    for _ in range(60):
        E, n, N = rng.integers(3, 7), rng.integers(2, 5), rng.integers(2, 6)
        X = (rng.random((E, N)) < 0.5).astype(float)
        D = rng.uniform(0.1, 0.9, (E, n))
        R = rng.uniform(0.05, 0.85, (n, N))
        # separate each row maximum so the softmax surrogate is one-hot there
        R[np.arange(n), R.argmax(axis=1)] += 0.1
        l1, l2 = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2))
        gradD, gradR = mdl_gradients(X, D, R, l1, l2)
        for M, grad in ((D, gradD), (R, gradR)):
            idx = np.unravel_index(rng.integers(0, M.size), M.shape)
            orig = M[idx]
            M[idx] = orig + h
            up = _smoothed_mdl_loss(X, D, R, l1, l2)
            M[idx] = orig - h
            down = _smoothed_mdl_loss(X, D, R, l1, l2)
            M[idx] = orig
            fd = (up - down) / (2 * h)
            assert abs(grad[idx] - fd) <= 1e-4 * max(1.0, abs(fd))
        checked += 1

    # ELBO: 60 instances with shared reparameterization noise.
    for _ in range(60):
        n, K, B = int(rng.integers(3, 7)), int(rng.integers(2, 4)), int(rng.integers(1, 4))
        model = init_model(n, K, hidden_dims=(5,), rng=rng)
        batch = rng.uniform(0.05, 0.95, (n, B))
        eps = rng.standard_normal((B, K))
        grads = elbo_forward_backward(batch, None, model, eps)

        params = model.parameters()
        pi = int(rng.integers(0, len(params)))
        p = params[pi]
        g = grads.param_grads[pi]
        idx = np.unravel_index(rng.integers(0, p.size), p.shape)
        orig = p[idx]
        p[idx] = orig + h
        up = elbo_forward_backward(batch, None, model, eps).loss
        p[idx] = orig - h
        down = elbo_forward_backward(batch, None, model, eps).loss
        p[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(g[idx] - fd) <= 1e-4 * max(1.0, abs(fd))

        idx = np.unravel_index(rng.integers(0, batch.size), batch.shape)
        orig = batch[idx]
        batch[idx] = orig + h
        up = elbo_forward_backward(batch, None, model, eps).loss
        batch[idx] = orig - h
        down = elbo_forward_backward(batch, None, model, eps).loss
        batch[idx] = orig
        fd = (up - down) / (2 * h)
        assert abs(grads.grad_r[idx] - fd) <= 1e-4 * max(1.0, abs(fd))
        checked += 1

    assert checked >= 100
    assert time.monotonic() - start <= 60.0


# --- criterion 5: description-length accounting ----------------------------------


def test_mdl_accounting_matches_bit_count():
    rng = derive_rng(0, "acceptance:bits")
    for _ in range(100):
        E = int(rng.integers(2, 12))
        n = int(rng.integers(1, 8))
        N = int(rng.integers(1, 10))
        R = (rng.random((n, N)) < 0.4).astype(float)
        X = np.zeros((E, N))
        D = np.zeros((E, n))
        breakdown = mdl_loss(X, D, R, lambda1=1.0, lambda2=1.0)
        total_bits = E * breakdown.dict_term + breakdown.sparsity_term

        # independent count: |E| bits per atom used anywhere, 1 bit per use
        atom_bits = 0
        use_bits = 0
        for j in range(n):
            used = False
            for i in range(N):
                if R[j, i] == 1.0:
                    used = True
                    use_bits += 1
            if used:
                atom_bits += E
        assert total_bits == atom_bits + use_bits


# --- criterion 6: probabilistic rounding law -------------------------------------


def test_rounding_law_marginals():
    draws = 100_000
    values = np.linspace(0.02, 0.98, 20)
    rng = derive_rng(5, "acceptance:round")
    for theta in (1.0, 1.5, 2.0):
        M = np.tile(values[:, None], (1, draws))
        rounded = round_binary(M, theta, rng)
        assert set(np.unique(rounded)) <= {0.0, 1.0}
        freq = rounded.mean(axis=1)
        p = np.minimum(1.0, theta * values)
        sigma = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-12)


# --- criterion 7: sparse coding vs exhaustive search -----------------------------


def test_sparse_code_matches_exhaustive_minimum():
    rng = derive_rng(0, "acceptance:sc")
    lam = 0.3
    hits = 0
    for trial in range(50):
        E = int(rng.integers(8, 16))
        n = int(rng.integers(4, 11))
        D = (rng.random((E, n)) < 0.35).astype(float)
        chosen = rng.choice(n, size=int(rng.integers(1, 4)), replace=False)
        x = np.clip(D[:, chosen].sum(axis=1), 0, 1)
        flip = rng.random(E) < 0.05
        x = np.abs(x - flip.astype(float))

        best = np.inf
        for mask in range(1 << n):
            r = np.array([(mask >> j) & 1 for j in range(n)], dtype=float)
            best = min(best, code_objective(x, D, r, lam))
        dictionary = PathletDictionary(D, phase=BINARY)
        got = sparse_code(x, dictionary, lam, rng=derive_rng(trial, "sc-rng"))
        if got.objective <= 1.05 * best + 1e-9:
            hits += 1
    assert hits >= 45, f"sparse_code within 5% of optimum on only {hits}/50"


# --- criterion 8: denoising recovery ----------------------------------------------


def test_denoising_recovers_erased_bits(planted, planted_model, grid_domain):
    model, _ = planted_model
    rng = derive_rng(5, "acceptance:noise")
    recoveries = []
    for traj in planted.corpus:
        if len(recoveries) == 200:
            break
        kept = [u for u in traj.units if rng.random() >= 0.2]
        dropped = set(traj.units) - set(kept)
        if not dropped or not kept:
            continue
        x = vectorize_units(kept, grid_domain)
        try:
            cleaned = denoise(x, model, rng=derive_rng(len(recoveries), "acceptance:dn"))
            got = set(cleaned.units)
        except DenoiseError:
            got = set()
        recoveries.append(len(dropped & got) / len(dropped))
    assert len(recoveries) == 200
    mean_recovery = float(np.mean(recoveries))
    assert mean_recovery >= 0.60, f"recovered {mean_recovery:.2%} of erased bits"


# --- criterion 9: conditional fidelity --------------------------------------------


def test_conditional_branch_fidelity():
    dom = make_grid_domain(6, 6)
    prefix = (0, 1, 2)
    branch_a = (3, 4, 5)
    branch_b = (8, 14, 20)
    rng = derive_rng(9, "acceptance:branch")
    corpus = []
    for i in range(400):
        morning = i % 2 == 0
        p_a = 0.9 if morning else 0.1
        units = prefix + (branch_a if rng.random() < p_a else branch_b)
        corpus.append(Trajectory(units=units, timestamp=0.0 if morning else 12 * 3600.0))

    X = corpus_matrix(corpus, dom)
    cond = training_conditions(corpus, dom)
    model = train(X, TrainingConfig(seed=0), domain=dom, conditions=cond)

    samples = generate_conditional(
        model, Trajectory(units=prefix, timestamp=0.0), 0.0, 500, seed=3
    )
    a_set, b_set = set(branch_a), set(branch_b)
    picked_a = sum(
        1 for t in samples if len(t.unit_set() & a_set) > len(t.unit_set() & b_set)
    )
    freq = picked_a / 500
    assert 0.80 <= freq <= 1.0, f"bucket-0 branch frequency {freq:.3f} outside [0.80, 1]"


# --- criterion 10: structural invariants ------------------------------------------


def test_structural_invariants(planted_model, grid_domain):
    model, _ = planted_model
    rng = derive_rng(0, "acceptance:inv")

    # every generated (repaired) trajectory is consecutively adjacent
    gen = generate(model, GenerationRequest(count=200, seed=13))
    for t in gen:
        assert len(t.units) >= 1
        assert t.is_connected(grid_domain)

    # repair yields adjacency on arbitrary blobs, on grids and directed graphs
    directed = make_graph_domain([(0, 0, 1), (1, 1, 2), (2, 2, 3), (3, 3, 4), (4, 4, 0)])
    for dom in (grid_domain, directed):
        for _ in range(50):
            x = (rng.random(dom.num_units) < 0.25).astype(float)
            if not x.any():
                continue
            repaired = repair_connectivity(x, dom)
            assert repaired.is_connected(dom)

    # projection clamps into [0, 1]
    M = rng.normal(0, 3, (30, 30))
    clipped = clip_unit_interval(M)
    assert clipped.min() >= 0.0 and clipped.max() <= 1.0
    inside = (M >= 0) & (M <= 1)
    assert np.array_equal(clipped[inside], M[inside])

    # phase discipline: fractional entries are rejected in the binary phase
    with pytest.raises(ShapeError):
        PathletDictionary(np.full((3, 2), 0.5), phase=BINARY)
    with pytest.raises(ShapeError):
        RepresentationMatrix(np.full((2, 3), 0.5), phase=BINARY)
    assert model.dictionary.phase == BINARY
    assert set(np.unique(model.dictionary.matrix)) <= {0.0, 1.0}
    assert set(np.unique(model.final_R.matrix)) <= {0.0, 1.0}

    # JSD is a bounded, symmetric divergence that vanishes on equal inputs
    for _ in range(20):
        P = rng.random(12)
        P /= P.sum()
        Q = rng.random(12)
        Q /= Q.sum()
        d = jsd(P, Q)
        assert 0.0 <= d <= 1.0
        assert abs(d - jsd(Q, P)) < 1e-12
        assert jsd(P, P) == 0.0

    # same request, same samples; the rng streams are derived, not shared
    again = generate(model, GenerationRequest(count=200, seed=13))
    assert [t.units for t in again] == [t.units for t in gen]
