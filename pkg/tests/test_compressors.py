"""Operator semantics, bound constants, bit costs, and empirical certification."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgtsim.compressors import (
    BitCostModel,
    CompressorError,
    bit_cost,
    compress,
    derived_relative_cap,
    make_compressor,
    spec_from_config,
    verify_assumption,
)


def test_norm_sign_formula():
    spec = make_compressor("norm_sign", d=3)
    out = compress(spec, np.array([1.0, -2.0, 0.5]))
    # max magnitude 2, halved; sign(0.5) = +1
    assert np.array_equal(out, [1.0, -1.0, 1.0])
    assert np.array_equal(compress(spec, np.zeros(3)), np.zeros(3))
    # sign(0) is +1
    assert np.array_equal(compress(spec, np.array([0.0, -1.0, 0.0])),
                          [0.5, -0.5, 0.5])


def test_uniform_quantize_formula():
    spec = make_compressor("uniform_quantize", d=2, delta=2.0)
    out = compress(spec, np.array([0.9, -1.1]))
    # 2 * floor((0.45, -0.55) + 0.5) = (0, -2); floor is toward -inf
    assert np.array_equal(out, [0.0, -2.0])


def test_one_bit_formula():
    spec = make_compressor("one_bit", d=3)
    out = compress(spec, np.array([0.3, -0.2, 0.0]))
    assert np.array_equal(out, [0.5, -0.5, 0.5])


def test_identity_constants():
    spec = make_compressor("identity", d=7)
    x = np.linspace(-1, 1, 7)
    assert np.array_equal(compress(spec, x), x)
    assert spec.r == 1.0 and spec.psi == 1.0 and spec.cap_c == 0.0


def test_relative_cap_identity():
    for r, psi in [(1.0, 0.5), (25.0, 1 / 2500), (2.0, 0.25)]:
        spec = make_compressor("norm_sign", d=4, r=r, psi=psi)
        assert spec.cap_c == pytest.approx(2 * r * r * (1 - psi) + 2 * (1 - r) ** 2)
    # d=50 norm-sign default: r=25, psi=1/2500
    spec = make_compressor("norm_sign", d=50)
    assert spec.r == 25.0 and spec.psi == pytest.approx(4e-4)
    assert spec.cap_c == pytest.approx(2 * 625 * (1 - 4e-4) + 2 * 24**2)


def test_norm_sign_invariants():
    spec = make_compressor("norm_sign", d=8)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.standard_normal(8)
        out = compress(spec, x)
        a = np.max(np.abs(x))
        assert np.allclose(np.abs(out), a / 2)
        assert np.array_equal(np.sign(out), np.where(x >= 0, 1.0, -1.0))


def test_uniform_quantize_worst_case_bound():
    spec = make_compressor("uniform_quantize", d=10, delta=2.0)
    rng = np.random.default_rng(1)
    for _ in range(500):
        x = rng.uniform(-50, 50, size=10)
        assert np.max(np.abs(compress(spec, x) - x)) <= 1.0 + 1e-12


def test_one_bit_unit_ball_bound():
    spec = make_compressor("one_bit", d=6)
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        x = rng.uniform(-1, 1, size=6)
        worst = max(worst, np.max(np.abs(compress(spec, x) - x)))
    assert worst <= 0.5 + 1e-12


def test_sparsify_top_keeps_largest():
    spec = make_compressor("random_sparsify", d=5, keep_k=2)
    out = compress(spec, np.array([3.0, -1.0, 0.5, -4.0, 2.0]))
    assert np.array_equal(out, [3.0, 0.0, 0.0, -4.0, 0.0])
    # rescaled variant multiplies kept entries by d/k and carries r = d/k
    spec2 = make_compressor("random_sparsify", d=5, keep_k=2, rescale=True)
    out2 = compress(spec2, np.array([3.0, -1.0, 0.5, -4.0, 2.0]))
    assert np.array_equal(out2, [7.5, 0.0, 0.0, -10.0, 0.0])
    assert spec2.r == 2.5 and spec2.psi == pytest.approx(0.4)


def test_deterministic_kinds_are_pure():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(12)
    for kind, kw in [("norm_sign", {}), ("uniform_quantize", {"delta": 0.7}),
                     ("one_bit", {}), ("identity", {}),
                     ("random_sparsify", {"keep_k": 4})]:
        spec = make_compressor(kind, d=12, **kw)
        assert np.array_equal(compress(spec, x), compress(spec, x))


def test_random_quantize_unbiased_and_on_grid():
    spec = make_compressor("random_quantize", d=4, levels=9)
    rng = np.random.default_rng(4)
    x = np.array([0.3, -0.7, 1.0, 0.0])
    acc = np.zeros(4)
    reps = 4000
    for _ in range(reps):
        out = compress(spec, x, rng)
        h = 2.0 / 8
        lv = (out + 1.0) / h
        assert np.allclose(lv, np.round(lv), atol=1e-9)
        acc += out
    assert np.allclose(acc / reps, x, atol=0.02)


def test_bit_costs():
    model = BitCostModel()
    assert bit_cost(make_compressor("norm_sign", d=50), model, 50) == 164
    assert bit_cost(make_compressor("uniform_quantize", d=50, delta=2.0), model, 50) == 200
    assert bit_cost(make_compressor("one_bit", d=50), model, 50) == 50
    assert bit_cost(make_compressor("identity", d=50), model, 50) == 3200
    with pytest.raises(CompressorError):
        BitCostModel(bits_scalar=0)


def test_verify_norm_sign_defaults():
    # r = d/2, psi = 1/d^2 certifies across dimensions
    for d in (2, 10, 50):
        spec = make_compressor("norm_sign", d=d)
        rng = np.random.default_rng(10 + d)
        rep = verify_assumption(spec, trials=1000, d=d, rng=rng)
        assert rep.passed, rep.worst_case()
        assert rep.max_observed_ratio <= (1 - spec.psi) * (1 + 1e-9)


def test_verify_uniform_quantizer():
    spec = make_compressor("uniform_quantize", d=20, delta=2.0)
    assert spec.cap_c == 1.0
    rep = verify_assumption(spec, trials=1000, d=20, rng=np.random.default_rng(5))
    assert rep.passed


def test_verify_one_bit():
    spec = make_compressor("one_bit", d=20)
    rep = verify_assumption(spec, trials=1000, d=20, rng=np.random.default_rng(6))
    assert rep.passed
    assert rep.max_observed_ratio <= 0.5 + 1e-12


def test_verify_sparsify_modes():
    spec = make_compressor("random_sparsify", d=20, keep_k=5)
    rep = verify_assumption(spec, trials=1000, d=20, rng=np.random.default_rng(7))
    assert rep.passed
    rnd = make_compressor("random_sparsify", d=20, keep_k=5, sparsify_mode="random")
    rep2 = verify_assumption(rnd, trials=1000, d=20,
                             rng=np.random.default_rng(8), inner=1000)
    assert rep2.passed


def test_verify_flags_wrong_constants():
    # claiming psi far above what norm-sign delivers must fail
    spec = make_compressor("norm_sign", d=10, r=5.0, psi=0.9)
    rep = verify_assumption(spec, trials=500, d=10, rng=np.random.default_rng(9))
    assert not rep.passed
    assert rep.violations


def test_config_parsing():
    spec = spec_from_config({"kind": "uniform_quantize", "delta": 2.0}, d=50)
    assert spec.cap_c == 1.0
    spec = spec_from_config({"kind": "norm_sign", "r": 10.0, "psi": 0.01}, d=50)
    assert spec.r == 10.0
    with pytest.raises(CompressorError):
        spec_from_config({"delta": 2.0}, d=10)
    with pytest.raises(CompressorError):
        spec_from_config({"kind": "norm_sign", "window": 3}, d=10)


def test_invalid_specs_rejected():
    with pytest.raises(CompressorError):
        make_compressor("random_sparsify", d=5, keep_k=9)
    with pytest.raises(CompressorError):
        make_compressor("random_quantize", d=50, levels=5)
    with pytest.raises(CompressorError):
        make_compressor("wavelet", d=5)
    with pytest.raises(CompressorError):
        compress(make_compressor("identity", d=2), np.array([1.0, np.nan]))


@settings(max_examples=60, deadline=None)
@given(
    d=st.integers(min_value=1, max_value=40),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_norm_sign_relative_bound_pointwise(d, seed):
    # deterministic per-draw version of the relative bound
    spec = make_compressor("norm_sign", d=d)
    x = np.random.default_rng(seed).standard_normal(d)
    if not np.any(x):
        return
    err = compress(spec, x) / spec.r - x
    assert err @ err <= (1 - spec.psi) * (x @ x) * (1 + 1e-12)


def test_derived_cap_helper():
    assert derived_relative_cap(1.0, 1.0) == 0.0
    assert derived_relative_cap(1.0, 0.75) == pytest.approx(0.5)
