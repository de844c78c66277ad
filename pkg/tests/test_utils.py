import numpy as np
import pytest

from app.core.utils import (
    WORKERS_ENV,
    beta_ppf,
    config_hash,
    count_local_maxima,
    derive_seed,
    normal_cdf,
    parallel_map,
    worker_count,
)


def _square(v):
    return v * v


class TestWorkers:
    def test_environment(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert worker_count() == 3

    def test_bad_value_falls_back_to_one(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "many")
        assert worker_count() == 1

    def test_order_is_kept(self):
        assert parallel_map(_square, range(6), workers=2) == [0, 1, 4, 9, 16, 25]


def test_seeds_are_stable_and_distinct():
    assert derive_seed(0, "figure8", 1) == derive_seed(0, "figure8", 1)
    assert derive_seed(0, "figure8", 1) != derive_seed(0, "figure8", 2)


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": (2, 3)}) == config_hash({"b": [2, 3], "a": 1})


def test_special_functions():
    assert normal_cdf(0.0) == pytest.approx(0.5)
    q = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(beta_ppf(q, 1.0, 1.0), q, atol=1e-12)


def test_local_maxima():
    assert count_local_maxima([0, 1, 0, 2, 2, 1, 3]) == 2
    assert count_local_maxima([1, 2, 3]) == 0
