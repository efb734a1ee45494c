import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nirom.errors import DomainError
from nirom.sampling import (ParameterSignal, ParameterSpace, constant_signal, eval_signal,
                            halton, latin_hypercube, polynomial_signal, sample_dps, sample_sps)

UNIT = ParameterSpace(((0.0, 1.0), (0.0, 1.0)), ("a", "b"), ("load", "load"))
BOX = ParameterSpace(((293.15, 323.15), (0.05, 0.15)), ("T0", "load"), ("initial", "load"))


def radical_inverse_oracle(i, base):
    # digit expansion written out independently of the library version
    digits = []
    while i:
        digits.append(i % base)
        i //= base
    return sum(d / base ** (p + 1) for p, d in enumerate(digits))


def test_halton_first_points():
    pts = halton(3, 2)
    expected = np.array([[1 / 2, 1 / 3], [1 / 4, 2 / 3], [3 / 4, 1 / 9]])
    assert np.allclose(pts, expected, rtol=0, atol=1e-15)


def test_halton_matches_oracle():
    pts = halton(50, 3)
    for i in range(50):
        for d, base in enumerate((2, 3, 5)):
            assert pts[i, d] == pytest.approx(radical_inverse_oracle(i + 1, base), abs=1e-15)


@pytest.mark.parametrize("method", ["halton", "lhs"])
def test_single_point_strictly_inside(method):
    (sig,) = sample_sps(UNIT, 1, method, seed=3)
    p = np.array(sig.base_point)
    assert np.all((p > 0) & (p < 1))


def test_lhs_one_sample_per_stratum():
    pts = latin_hypercube(10, 1, seed=7)[:, 0] * 10.0
    assert sorted(np.floor(pts).astype(int)) == list(range(10))


def test_lhs_deterministic_and_seeded():
    a = latin_hypercube(20, 2, 5)
    assert np.array_equal(a, latin_hypercube(20, 2, 5))
    assert not np.array_equal(a, latin_hypercube(20, 2, 6))


def test_halton_ignores_seed():
    a = [s.base_point for s in sample_sps(BOX, 5, "halton", 0)]
    b = [s.base_point for s in sample_sps(BOX, 5, "halton", 99)]
    assert a == b


def test_sps_signals_are_constant():
    for sig in sample_sps(BOX, 8):
        assert sig.kind == "constant"
        assert np.array_equal(sig.value(0.0), sig.value(123.0))
        assert BOX.contains(sig.value(0.0))


def test_dps_starts_at_floor_for_loads_only():
    for sig in sample_dps(BOX, 6, omega=math.pi / 500):
        v0 = sig.value(0.0)
        assert v0[1] == BOX.lower[1]
        assert v0[0] == sig.base_point[0]


def test_dps_shares_sps_draw():
    sps = sample_sps(BOX, 12, "lhs", 4)
    dps = sample_dps(BOX, 12, "lhs", 4, omega=0.3)
    assert [s.base_point for s in sps] == [d.base_point for d in dps]


def test_rectified_sine_peak_and_hand_value():
    sig = ParameterSignal("rectified_sine", (50.0, 20.0), omega=0.1, floor=(0.0, 0.0))
    assert np.allclose(sig.value(math.pi / 2 / 0.1), [50.0, 20.0], rtol=1e-15)
    v = sig.value(5.0)
    assert v[0] == pytest.approx(23.971276930210153, rel=1e-14)
    assert v[1] == pytest.approx(9.588510772084061, rel=1e-14)


def test_cosine_phase_starts_at_the_sample():
    sig = ParameterSignal("rectified_sine", (50.0, 20.0), omega=0.1, floor=(0.0, 0.0),
                          phase="cosine")
    assert np.array_equal(sig.value(0.0), [50.0, 20.0])
    assert sig.value(5.0)[0] == pytest.approx(50 * abs(math.cos(0.5)), rel=1e-14)
    dps = sample_dps(BOX, 4, omega=math.pi / 500, phase="cosine")
    assert [d.value(0.0)[1] for d in dps] == [d.base_point[1] for d in dps]
    assert all(d.value(250.0)[1] == pytest.approx(BOX.lower[1], abs=1e-15) for d in dps)


def test_phase_in_dict_only_when_not_default():
    sine = sample_dps(BOX, 1, omega=0.1)[0]
    cosine = sample_dps(BOX, 1, omega=0.1, phase="cosine")[0]
    assert "phase" not in sine.to_dict()
    assert ParameterSignal.from_dict(cosine.to_dict()) == cosine
    assert sine.digest() != cosine.digest()
    with pytest.raises(DomainError):
        sample_dps(BOX, 1, omega=0.1, phase="tan")


def test_rectified_sine_zero_at_half_period_and_periodic():
    sig = ParameterSignal("rectified_sine", (5.0, 3.0), omega=0.2, floor=(1.0, 2.0))
    assert np.allclose(sig.value(math.pi / 0.2), [1.0, 2.0], atol=1e-14)
    for t in (0.3, 2.0, 11.7):
        assert np.allclose(sig.value(t), sig.value(t + math.pi / 0.2), atol=1e-13)


def test_constant_signal_everywhere():
    sig = constant_signal([1.5, 2.5])
    for t in (0.0, 1.0, 1e6):
        assert np.array_equal(eval_signal(sig, t), [1.5, 2.5])


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        eval_signal(constant_signal([1.0]), -1e-9)


def test_polynomial_signal():
    sig = polynomial_signal([[293.15], [0.15, -0.0002]])
    assert np.allclose(sig.value(250.0), [293.15, 0.1], rtol=1e-15)


def test_signal_dict_round_trip():
    for sig in sample_dps(BOX, 3, "lhs", 2, omega=0.5) + [polynomial_signal([[1.0], [2.0, 3.0]])]:
        back = ParameterSignal.from_dict(sig.to_dict())
        assert back == sig
        assert back.digest() == sig.digest()


def test_bad_inputs():
    with pytest.raises(DomainError):
        sample_sps(BOX, 0)
    with pytest.raises(DomainError):
        sample_dps(BOX, 3, omega=0.0)
    with pytest.raises(DomainError):
        sample_sps(BOX, 3, method="sparse_grid")
    with pytest.raises(ValueError):
        ParameterSpace(((1.0, 1.0),), ("a",), ("load",))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), method=st.sampled_from(["halton", "lhs"]),
       seed=st.integers(0, 2 ** 31), omega=st.floats(1e-3, 10.0))
def test_values_stay_in_box(n, method, seed, omega):
    for sig in sample_dps(BOX, n, method, seed, omega):
        for t in np.linspace(0, 20.0, 41):
            assert BOX.contains(sig.value(t), tol=1e-12)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 1000))
def test_sampling_deterministic(n, seed):
    a = sample_dps(BOX, n, "lhs", seed, 0.1)
    b = sample_dps(BOX, n, "lhs", seed, 0.1)
    assert a == b
