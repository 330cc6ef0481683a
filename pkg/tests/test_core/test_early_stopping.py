"""
Tests for patience-based early stopping.
"""

import math

import pytest

from hcft.utils.early_stopping import EarlyStopping


def test_min_mode_counts_bad_steps():
    """Test stopping after more than patience non-improving steps."""
    stopper = EarlyStopping(patience=2, mode="min")
    assert stopper.update(1.0)
    assert not stopper.update(1.0)
    assert not stopper.update(2.0)
    assert not stopper.should_stop
    assert not stopper.update(1.5)
    assert stopper.should_stop
    assert stopper.best == 1.0
    assert stopper.best_step == 0


def test_improvement_resets_counter():
    """Test a new best resets the bad step count."""
    stopper = EarlyStopping(patience=1, mode="max")
    stopper.update(0.5)
    stopper.update(0.4)
    assert stopper.update(0.6)
    assert stopper.bad_steps == 0
    assert stopper.best_step == 2


def test_none_and_nan_never_improve():
    """Test undefined values count as non-improving."""
    stopper = EarlyStopping(patience=0, mode="max")
    assert not stopper.update(None)
    assert stopper.should_stop
    stopper = EarlyStopping(patience=3, mode="min")
    assert not stopper.update(math.nan)
    assert stopper.best is None
    assert stopper.update(3.0)


def test_zero_patience_stops_on_first_plateau():
    """Test patience 0 stops at the first non-improving step."""
    stopper = EarlyStopping(patience=0)
    stopper.update(1.0)
    assert not stopper.should_stop
    stopper.update(1.0)
    assert stopper.should_stop


def test_invalid_mode():
    """Test an unknown mode is rejected."""
    with pytest.raises(ValueError):
        EarlyStopping(patience=1, mode="avg")
