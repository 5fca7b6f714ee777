import numpy as np
import pytest

from forecastbench.ingest import adf_test, load_csv
from forecastbench.simulate import BUNDLED, KINDS, bundled_path, generate


@pytest.mark.parametrize("kind", KINDS)
def test_seeded(kind):
    a, b = generate(kind, n=120, seed=3), generate(kind, n=120, seed=3)
    assert np.array_equal(a.values, b.values)
    assert len(a) == 120
    assert np.all(np.is_busday(a.timestamps))


@pytest.mark.parametrize("kind", sorted(BUNDLED))
def test_bundled_reproducible(kind):
    _, seed = BUNDLED[kind]
    assert np.array_equal(load_csv(bundled_path(kind)).values, generate(kind, seed=seed).values)


def test_index_shape():
    s = load_csv(bundled_path("index"))
    assert len(s) == 2500
    assert str(s.timestamps[0]) == "2011-01-03"
    assert np.all(s.values > 0)
    assert adf_test(s).verdict == "non-stationary"


def test_sine_level():
    v = generate("sine", n=40).values
    assert v.min() == pytest.approx(9.0) and v.max() == pytest.approx(11.0)
    assert np.allclose(v[:20], v[20:])


def test_unknown_kind():
    with pytest.raises(ValueError):
        generate("chaos")
