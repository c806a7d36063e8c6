import numpy as np
import pytest

from squeezejet import ACT_FORMAT, PARAM_FORMAT, ConvParams, FmapTensor, LayerParams


def random_params(rng, p: LayerParams, wfmt=PARAM_FORMAT, bfmt=PARAM_FORMAT):
    w = rng.integers(wfmt.raw_min, wfmt.raw_max + 1, size=p.weight_shape)
    b = rng.integers(bfmt.raw_min, bfmt.raw_max + 1, size=p.out_channels)
    return ConvParams(w, b, wfmt, bfmt)


def random_fmap(rng, shape, fmt=ACT_FORMAT, spread=4000):
    lo, hi = max(fmt.raw_min, -spread), min(fmt.raw_max, spread)
    return FmapTensor(rng.integers(lo, hi + 1, size=shape), fmt)


def random_stream_layer(rng, relu=None):
    """A random layer legal for conv_stream, drawn from the acceptance ranges."""
    k = int(rng.choice([1, 3]))
    return LayerParams(
        height=int(rng.integers(4, 17)),
        width=int(rng.integers(4, 17)),
        in_channels=int(rng.choice([16, 32, 48])),
        out_channels=int(rng.choice([4, 8, 16])),
        kernel=k,
        stride=1,
        pad=int(rng.integers(0, 2)),
        relu=bool(rng.integers(0, 2)) if relu is None else relu,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20180523)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
