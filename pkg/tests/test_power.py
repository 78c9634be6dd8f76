import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from irsnoma import power

CFG = power.PowerModelConfig()


def test_reference_breakdown():
    b = power.total_power(2.0, 4, 49, 5, CFG)
    assert CFG.ap_electronics == pytest.approx(6.4655, abs=1e-12)
    assert CFG.receiver_electronics == pytest.approx(2.5994, abs=1e-12)
    assert b.p_ap == pytest.approx(2.0 + 4 * 6.4655, abs=1e-12)
    assert b.p_irs == pytest.approx(4.9, abs=1e-12)
    assert b.p_rec == pytest.approx(5 * 2.5994, abs=1e-12)
    assert b.p_total == pytest.approx(45.759, abs=1e-9)


def test_single_device_accounting():
    b = power.total_power(2.0, 4, 49, 5, power.PowerModelConfig(per_device=False))
    assert b.p_total == pytest.approx(2.0 + 6.4655 + 4.9 + 2.5994, abs=1e-12)


def test_power_validation():
    with pytest.raises(ValueError):
        power.total_power(2.0, -1, 0, 1)
    with pytest.raises(ValueError):
        power.PowerModelConfig(p_tia=-1.0)


def test_see():
    assert power.see(1e8, 50.0) == 2e6
    with pytest.raises(ZeroDivisionError):
        power.see(1.0, 0.0)


def test_jain_values():
    assert power.jain([1.0, 2.0, 3.0]) == pytest.approx(36 / 42, rel=1e-15)
    assert power.jain([5.0] * 4) == pytest.approx(1.0, abs=1e-12)
    assert power.jain([7.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25, abs=1e-12)
    assert power.jain([0.0, 0.0]) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1e9), min_size=1, max_size=8).filter(lambda r: sum(r) > 0),
       st.floats(1e-3, 1e3))
def test_jain_bounds_and_scale(rates, c):
    j = power.jain(rates)
    assert 1 / len(rates) - 1e-12 <= j <= 1 + 1e-12
    assert oracles.rel_err(j, oracles.jain(rates)) <= 1e-12
    assert abs(power.jain(np.asarray(rates) * c) - j) <= 1e-12


def test_objective():
    assert power.objective(0.5, 4e6) == 2e6
