import numpy as np
import pytest
from scipy.integrate import trapezoid

from app.core.config import QuadratureSpec
from app.core.datasets import generate, ground_truth
from app.core.plotting import density_panel, manifold_panel, posterior_panel, scatter_panel


@pytest.fixture
def figure8():
    return generate("figure8", 200, seed=0)


def test_scatter_is_byte_identical(tmp_path, figure8):
    _, data = figure8
    first = scatter_panel(data.x, data.x[::-1], str(tmp_path / "a.svg"))
    second = scatter_panel(data.x, data.x[::-1], str(tmp_path / "b.svg"))
    with open(first, "rb") as fa, open(second, "rb") as fb:
        assert fa.read() == fb.read()


def test_posterior_curves_are_normalized(tmp_path, figure8):
    gt, data = figure8
    curves = posterior_panel(gt, data.x[:3], str(tmp_path / "post.svg"))
    assert len(curves) == 3
    for grid, density in curves:
        assert trapezoid(density, grid) == pytest.approx(1.0, abs=0.01)


def test_density_grid(tmp_path):
    xx, yy, density = density_panel(ground_truth("circle"), str(tmp_path / "density.svg"), points=21,
                                    quad=QuadratureSpec(points=401))
    assert xx.shape == yy.shape == density.shape == (21, 21)
    assert (density >= 0).all()
    assert (tmp_path / "density.svg").exists()


def test_manifold_of_model_and_ground_truth(tmp_path, small_model):
    z, values = manifold_panel(small_model, str(tmp_path / "learned.svg"), z_grid=np.linspace(-1, 1, 11))
    assert values.shape == (11, 2)
    z, values = manifold_panel(ground_truth("stepfn"), str(tmp_path / "true.svg"))
    assert values.shape == (601, 1)
