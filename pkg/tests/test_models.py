import math

import numpy as np
import pytest

from osoa.models import (
    CheckpointChecksumError,
    CheckpointError,
    ContextModelParams,
    ToyVaeParams,
    checkpoint_bytes,
    coding_tables,
    elbo_bits,
    exact_marginal,
    grad_elbo,
    grad_nll,
    load_checkpoint,
    log_softmax,
    marginal_pmf,
    mean_elbo_bits,
    nll_bits,
    param_checksum,
    params_from_checkpoint,
    parameter_count,
    pmf_for_context,
    save_checkpoint,
)
from osoa.prob import Pmf, entropy_bits

from conftest import TOY_PROBS, finite_difference, relative_error


def random_context(rng, a=None, order=None, scale=1.0):
    a = a or int(rng.integers(2, 8))
    order = int(rng.integers(0, 2)) if order is None else order
    return ContextModelParams(scale * rng.standard_normal((1 if order == 0 else a, a)), order)


def random_vae(rng, a=None, z=None, scale=1.0):
    a = a or int(rng.integers(2, 7))
    z = z or int(rng.integers(1, 5))
    return ToyVaeParams(scale * rng.standard_normal(z), scale * rng.standard_normal((z, a)),
                        scale * rng.standard_normal((a, z)))


# -- context model -------------------------------------------------------------

def test_zero_logits_are_uniform():
    p = pmf_for_context(ContextModelParams.zeros(4))
    assert p.probs == (0.25,) * 4


def test_log_prob_logits_recover_probs():
    for c in (0.5, 1.0, 7.0):
        params = ContextModelParams(np.log(np.array(TOY_PROBS) * c)[None, :])
        assert np.allclose(pmf_for_context(params).probs, TOY_PROBS, atol=1e-12, rtol=0)


def test_softmax_shift_invariance(rng):
    for _ in range(100):
        params = random_context(rng, scale=5.0)
        shifted = ContextModelParams(params.logits + rng.normal(size=(params.logits.shape[0], 1)) * 100,
                                     params.context_order)
        for ctx in (range(params.alphabet_size) if params.context_order else [None]):
            a, b = pmf_for_context(params, ctx).probs, pmf_for_context(shifted, ctx).probs
            assert math.fsum(a) == pytest.approx(1.0, abs=1e-12)
            assert np.allclose(a, b, atol=1e-12, rtol=0)


def test_context_argument_checked():
    with pytest.raises(ValueError):
        pmf_for_context(ContextModelParams.zeros(3, 1))
    with pytest.raises(ValueError):
        pmf_for_context(ContextModelParams.zeros(3, 0), 1)


def test_nll_uniform():
    assert nll_bits(ContextModelParams.zeros(4), [0, 1, 2, 3, 3, 1]) == pytest.approx(2.0, abs=1e-15)
    assert nll_bits(ContextModelParams.zeros(4, 1), [2, 2, 0]) == pytest.approx(2.0, abs=1e-15)


def test_nll_at_empirical_distribution_is_entropy(rng):
    batch = rng.integers(0, 6, size=500)
    freq = np.bincount(batch, minlength=6) / len(batch)
    params = ContextModelParams(np.log(freq)[None, :])
    assert nll_bits(params, batch) == pytest.approx(entropy_bits(Pmf(tuple(freq))), abs=1e-12)


def test_nll_decreases_with_logit_gap():
    values = [nll_bits(ContextModelParams(np.array([[gap, 0.0, 0.0]])), [0] * 10) for gap in (1, 5, 20)]
    assert values[0] > values[1] > values[2] and values[2] < 1e-7


def test_nll_rejects_bad_batches():
    with pytest.raises(ValueError):
        nll_bits(ContextModelParams.zeros(3), [])
    with pytest.raises(ValueError):
        nll_bits(ContextModelParams.zeros(3), [3])


def test_grad_nll_stationary_point():
    batch = [0, 0, 1, 2, 2, 2, 2, 3]
    freq = np.bincount(batch, minlength=4) / len(batch)
    g = grad_nll(ContextModelParams(np.log(freq)[None, :]), batch)
    assert np.abs(g.logits).max() < 1e-12


def test_grad_nll_single_symbol_closed_form(rng):
    params = random_context(rng, a=5, order=0)
    p = np.array(pmf_for_context(params).probs)
    expected = (p - np.eye(5)[3]) / math.log(2)
    assert np.allclose(grad_nll(params, [3]).logits[0], expected, atol=1e-15)


def test_grad_nll_unvisited_rows_are_zero():
    params = ContextModelParams(np.arange(16.0).reshape(4, 4) / 7, 1)
    g = grad_nll(params, [1, 1, 1])  # contexts 0 and 1 only
    assert np.all(g.logits[2:] == 0.0)


def test_grad_nll_finite_differences(rng):
    for _ in range(20):
        params = random_context(rng)
        batch = rng.integers(0, params.alphabet_size, size=int(rng.integers(1, 40)))
        numeric = finite_difference(lambda p: nll_bits(p, batch), params)
        assert relative_error(grad_nll(params, batch).tensors(), numeric) < 1e-6


# -- toy VAE -------------------------------------------------------------------

def test_exact_marginal_examples(rng):
    assert exact_marginal(ToyVaeParams.zeros(4, 3), 2) == pytest.approx(0.25, abs=1e-15)
    big = 50.0  # p(x=0|z) = (1, 0) up to e^-50
    params = ToyVaeParams(np.zeros(2), np.array([[big, 0.0], [0.0, big]]), np.zeros((2, 2)))
    assert exact_marginal(params, 0) == pytest.approx(0.5, abs=1e-12)
    for _ in range(50):
        params = random_vae(rng)
        total = math.fsum(exact_marginal(params, x) for x in range(params.alphabet_size))
        assert total == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(marginal_pmf(params), [exact_marginal(params, x)
                                                  for x in range(params.alphabet_size)], atol=1e-15)


def exact_posterior_logits(params: ToyVaeParams) -> np.ndarray:
    # log p(z) + log p(x|z), as an [A, Z] table; softmax over z gives p(z|x)
    return log_softmax(params.prior_logits)[None, :] + log_softmax(params.likelihood_logits).T


def test_elbo_is_tight_at_exact_posterior(rng):
    for _ in range(50):
        params = random_vae(rng)
        tight = ToyVaeParams(params.prior_logits, params.likelihood_logits, exact_posterior_logits(params))
        for x in range(params.alphabet_size):
            assert elbo_bits(tight, x) == pytest.approx(-math.log2(exact_marginal(tight, x)), abs=1e-12)


def test_elbo_with_single_latent(rng):
    params = random_vae(rng, z=1)
    lik = np.exp(params.likelihood_logits[0]) / np.exp(params.likelihood_logits[0]).sum()
    for x in range(params.alphabet_size):
        assert elbo_bits(params, x) == pytest.approx(-math.log2(lik[x]), abs=1e-12)


def test_elbo_upper_bounds_code_length(rng):
    for _ in range(200):
        params = random_vae(rng, scale=3.0)
        for x in range(params.alphabet_size):
            assert elbo_bits(params, x) >= -math.log2(exact_marginal(params, x)) - 1e-12


def test_grad_elbo_stationary_at_joint_optimum():
    # tables built from integer joint counts N[z, x]; the batch holds the x-marginal counts
    counts = np.array([[3, 1, 2, 6], [1, 4, 2, 1], [2, 2, 5, 1]], dtype=np.float64)
    total = counts.sum()
    params = ToyVaeParams(np.log(counts.sum(axis=1) / total),
                          np.log(counts / counts.sum(axis=1, keepdims=True)),
                          np.log((counts / counts.sum(axis=0, keepdims=True)).T))
    batch = np.repeat(np.arange(4), counts.sum(axis=0).astype(int))
    g = grad_elbo(params, batch)
    norm = math.sqrt(sum(float((t ** 2).sum()) for t in g.tensors()))
    assert norm < 1e-8
    numeric = finite_difference(lambda p: mean_elbo_bits(p, batch), params)
    assert max(np.abs(n).max() for n in numeric) < 1e-8


def test_grad_elbo_unvisited_posterior_rows_zero(rng):
    params = random_vae(rng, a=5, z=3)
    g = grad_elbo(params, [2] * 7)
    mask = np.ones(5, dtype=bool)
    mask[2] = False
    assert np.all(g.posterior_logits[mask] == 0.0)


def test_grad_elbo_finite_differences(rng):
    for _ in range(20):
        params = random_vae(rng)
        batch = rng.integers(0, params.alphabet_size, size=int(rng.integers(1, 30)))
        numeric = finite_difference(lambda p: mean_elbo_bits(p, batch), params)
        assert relative_error(grad_elbo(params, batch).tensors(), numeric) < 1e-6


# -- coding tables -------------------------------------------------------------

def test_uniform_coding_table():
    tables = coding_tables(ContextModelParams.zeros(4), 4)
    assert [q.counts for q in tables.all_tables()] == [(4, 4, 4, 4)]


def test_vae_table_counts(rng):
    params = random_vae(rng, a=6, z=2)
    tables = coding_tables(params, 12)
    assert len(tables.likelihood) == 2 and len(tables.posterior) == 6
    assert len(tables.all_tables()) == 1 + 2 + 6
    assert len(tables.prior) == 2


def test_tables_are_deterministic(rng):
    for params in (random_context(rng, order=1), random_vae(rng)):
        copy = params.with_tensors([t.copy() for t in params.tensors()])
        assert coding_tables(params, 16).serialize() == coding_tables(copy, 16).serialize()


def test_theoretical_bits_matches_tables(rng):
    params = random_context(rng, a=5, order=1)
    tables = coding_tables(params, 16)
    batch = [0, 3, 3, 1, 4]
    expected = -math.log2(tables.symbol_table(None).probability(0))
    for prev, s in zip(batch, batch[1:]):
        expected -= math.log2(tables.symbol_table(prev).probability(s))
    assert tables.theoretical_bits(batch) == pytest.approx(expected, abs=1e-9)


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip(rng, tmp_path):
    for params in (random_context(rng, order=0), random_context(rng, order=1), random_vae(rng)):
        raw = checkpoint_bytes(params)
        back = params_from_checkpoint(raw)
        assert type(back) is type(params)
        assert checkpoint_bytes(back) == raw
        assert param_checksum(back) == param_checksum(params)
        assert len(raw) == 13 + 8 * parameter_count(params) + 4
        save_checkpoint(params, tmp_path / "m.osm")
        assert checkpoint_bytes(load_checkpoint(tmp_path / "m.osm")) == raw


def test_checkpoint_corruption(rng):
    raw = bytearray(checkpoint_bytes(random_context(rng, order=1)))
    raw[20] ^= 1
    with pytest.raises(CheckpointChecksumError):
        params_from_checkpoint(bytes(raw))
    with pytest.raises(CheckpointError):
        params_from_checkpoint(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CheckpointError):
        params_from_checkpoint(bytes(raw[:10]))


def test_param_checksum_sensitivity(rng):
    params = random_context(rng, a=4, order=0)
    nudged = params.logits.copy()
    nudged[0, 0] = np.nextafter(nudged[0, 0], np.inf)
    assert param_checksum(params) != param_checksum(ContextModelParams(nudged))
