import numpy as np
import pytest

from convsep.signal import SignalMetadata, TimeSeries


@pytest.fixture
def make_ts():
    """TimeSeries factory with default metadata."""

    def _make(data, sample_interval_s=1e-3, labels=None):
        data = np.asarray(data, dtype=np.float64)
        if labels is None:
            labels = tuple(f"ch{p + 1}" for p in range(data.shape[0]))
        return TimeSeries(data, SignalMetadata(sample_interval_s, labels))

    return _make
