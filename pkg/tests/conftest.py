from datetime import date

import numpy as np
import pytest

from treecast import SignalPanel, business_days


def make_panel(signals, target, start=date(2000, 1, 3), names=None, target_name="ret"):
    """Panel over consecutive weekdays from arrays or a {name: column} dict."""
    if isinstance(signals, dict):
        names = tuple(signals.keys())
        signals = np.column_stack(list(signals.values()))
    else:
        signals = np.atleast_2d(np.asarray(signals, dtype=float))
        if signals.shape[0] == 1 and len(target) != 1:
            signals = signals.T
        if names is None:
            names = tuple(f"s{j}" for j in range(signals.shape[1]))
    target = np.asarray(target, dtype=float)
    return SignalPanel(
        dates=business_days(start, len(target)),
        names=tuple(names),
        signals=signals,
        target=target,
        target_name=target_name,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
