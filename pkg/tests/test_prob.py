import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from osoa.prob import (
    Pmf,
    PmfError,
    QuantizedPmf,
    cross_entropy_bits,
    entropy_bits,
    inverse_cumulative,
    kl_bits,
    quantize_pmf,
    quantize_rows,
    quantize_to_total,
)

from conftest import TOY_PROBS, random_pmf


def mp_entropy(probs) -> float:
    mpmath.mp.dps = 50
    return float(-mpmath.fsum(mpmath.mpf(p) * mpmath.log(mpmath.mpf(p), 2) for p in probs if p > 0))


def test_pmf_validation():
    with pytest.raises(PmfError):
        Pmf((0.5, 0.6))
    with pytest.raises(PmfError):
        Pmf((1.5, -0.5))
    with pytest.raises(PmfError):
        Pmf(())
    with pytest.raises(PmfError):
        Pmf((float("nan"), 1.0))
    assert Pmf.uniform(4).probs == (0.25,) * 4


def test_toy_table_at_total_100():
    q = quantize_to_total(TOY_PROBS, 100)
    assert q.counts == (32, 8, 16, 2, 42)
    assert q.cumulative == (0, 32, 40, 56, 58)
    assert q.total == 100 and q.precision_bits is None


def test_uniform_quantization():
    assert quantize_pmf(Pmf.uniform(4), 4).counts == (4, 4, 4, 4)
    assert quantize_pmf(Pmf.uniform(256), 16).counts == (256,) * 256


def test_thirds_go_to_lowest_index_on_ties():
    # 16/3 = 5.33 each, the leftover unit goes to the first symbol
    assert quantize_pmf([1 / 3, 1 / 3, 1 / 3], 4).counts == (6, 5, 5)


def test_zero_probability_gets_one_count():
    q = quantize_pmf([0.0, 1.0], 4)
    assert q.counts == (1, 15)
    q = quantize_pmf([0.0, 0.0, 0.0, 1.0], 2)
    assert q.counts == (1, 1, 1, 1)


def test_alphabet_too_large_for_precision():
    with pytest.raises(PmfError):
        quantize_pmf(Pmf.uniform(5), 2)
    with pytest.raises(PmfError):
        quantize_pmf(Pmf.uniform(2), 17)


def test_inverse_cumulative_examples(toy_table):
    assert inverse_cumulative(toy_table, 38) == 1
    assert inverse_cumulative(toy_table, 0) == 0
    assert inverse_cumulative(toy_table, 99) == 4
    with pytest.raises(PmfError):
        inverse_cumulative(toy_table, 100)


def test_inverse_cumulative_exhaustive(rng):
    for _ in range(50):
        n = int(rng.integers(2, 20))
        q = quantize_pmf(random_pmf(rng, n, 0.2), int(rng.integers(5, 11)))
        for y in range(q.total):
            s = inverse_cumulative(q, y)
            assert q.cumulative[s] <= y < q.cumulative[s] + q.counts[s]


def test_entropy_against_high_precision_oracle():
    h = entropy_bits(Pmf(TOY_PROBS))
    assert h == pytest.approx(mp_entropy(TOY_PROBS), abs=1e-12)
    assert h == pytest.approx(1.879083, abs=1e-6)
    assert entropy_bits(Pmf.uniform(8)) == pytest.approx(3.0, abs=1e-15)
    assert entropy_bits(Pmf((1.0, 0.0))) == 0.0


def test_cross_entropy_against_uniform():
    assert cross_entropy_bits(Pmf(TOY_PROBS), Pmf.uniform(5)) == pytest.approx(math.log2(5), abs=1e-12)
    with pytest.raises(PmfError):
        cross_entropy_bits(Pmf((0.5, 0.5)), Pmf((1.0, 0.0)))


def test_kl_nonnegative_and_zero_on_identity(rng):
    for _ in range(500):
        n = int(rng.integers(2, 12))
        p, q = Pmf(tuple(random_pmf(rng, n, 0.2))), Pmf(tuple(random_pmf(rng, n)))
        assert kl_bits(p, q) >= -1e-12
        assert abs(kl_bits(p, p)) <= 1e-12


def test_quantization_property_10k(rng):
    for _ in range(10_000):
        n = int(rng.integers(2, 64))
        bits = int(rng.integers(max(2, math.ceil(math.log2(n))), 17))
        q = quantize_pmf(random_pmf(rng, n, 0.1), bits)
        assert sum(q.counts) == 1 << bits
        assert min(q.counts) >= 1


def test_quantization_error_below_one_unit(rng):
    # without clamping, largest remainder keeps every count within one unit of its target
    checked = 0
    while checked < 1000:
        p = random_pmf(rng, int(rng.integers(2, 30)))
        if p.min() * 65536 < 1.0:
            continue
        err = np.abs(np.array(quantize_pmf(p, 16).counts) - p * 65536)
        assert err.max() < 1.0
        checked += 1


def test_quantization_is_idempotent(rng):
    for _ in range(200):
        q = quantize_pmf(random_pmf(rng, int(rng.integers(2, 40)), 0.1), 12)
        assert quantize_pmf(q.to_pmf(), 12) == q


def test_rows_match_single_pmf(rng):
    probs = np.stack([random_pmf(rng, 17, 0.1) for _ in range(40)])
    rows = quantize_rows(probs, 10)
    for r, p in zip(rows, probs):
        assert tuple(r.tolist()) == quantize_pmf(p, 10).counts


def test_serialization_round_trip(rng):
    for _ in range(100):
        q = quantize_pmf(random_pmf(rng, int(rng.integers(2, 50))), int(rng.integers(6, 17)))
        raw = q.to_bytes()
        assert len(raw) == 1 + 2 * len(q)
        assert QuantizedPmf.from_bytes(raw) == q
    with pytest.raises(PmfError):
        QuantizedPmf.from_bytes(b"\x04\x01")
    with pytest.raises(PmfError):
        quantize_to_total(TOY_PROBS, 100).to_bytes()


def test_quantized_probabilities_are_exact_fractions(toy_table):
    assert [Fraction(c, toy_table.total) for c in toy_table.counts] == [Fraction(p).limit_denominator(100)
                                                                       for p in TOY_PROBS]
