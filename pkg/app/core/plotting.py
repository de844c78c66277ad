"""
SVG panels for true vs. learned models. Output is byte-identical for
identical inputs (fixed hash salt, no date metadata).
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from loguru import logger  # noqa: E402

from . import autodiff as ad  # noqa: E402
from .config import QuadratureSpec  # noqa: E402
from .datasets import GroundTruthModel, as_ground_truth, gt_log_density, gt_posterior  # noqa: E402
from .utils import ensure_parent, to_numpy  # noqa: E402

SVG_STYLE = {"svg.hashsalt": "vaelab", "svg.fonttype": "path", "figure.figsize": (4.5, 4.5)}


def _save(fig, path):
    ensure_parent(path)
    with plt.rc_context(SVG_STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"💾 figure written to {path}")
    return path


def _figure():
    with plt.rc_context(SVG_STYLE):
        return plt.subplots()


def scatter_panel(true_x, learned_x, path, title="samples"):
    """True and learned samples over the first two data coordinates."""
    true_x, learned_x = to_numpy(true_x), to_numpy(learned_x)
    fig, ax = _figure()
    ax.scatter(true_x[:, 0], true_x[:, 1], s=2, alpha=0.5, color="tab:blue", label="true", rasterized=False)
    ax.scatter(learned_x[:, 0], learned_x[:, 1], s=2, alpha=0.5, color="tab:red", label="learned")
    ax.set_title(title)
    ax.legend(loc="upper right", markerscale=4)
    return _save(fig, path)


def density_panel(source, path, extent=(-3.0, 3.0, -3.0, 3.0), points=81, quad=None):
    """
    Heatmap of p(x) from quadrature
    Returns:
        (x grid, y grid, density) as plotted
    """
    gt = as_ground_truth(source)
    quad = quad or QuadratureSpec(points=1001)
    xs = np.linspace(extent[0], extent[1], points)
    ys = np.linspace(extent[2], extent[3], points)
    xx, yy = np.meshgrid(xs, ys)
    density = np.exp(gt_log_density(gt, np.column_stack([xx.ravel(), yy.ravel()]), quad)).reshape(xx.shape)
    fig, ax = _figure()
    ax.imshow(density, origin="lower", extent=extent, cmap="viridis", aspect="auto")
    ax.set_title(f"p(x): {gt.name}")
    _save(fig, path)
    return xx, yy, density


def posterior_panel(source, xs, path, z_grid=None):
    """
    Line plot of p(z | x) at each requested x
    Returns:
        list of (z grid, density) per x
    """
    z_grid = QuadratureSpec().grid() if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    curves = []
    fig, ax = _figure()
    for x in np.atleast_2d(np.asarray(xs, dtype=np.float64)):
        density = gt_posterior(source, x, z_grid)
        curves.append((z_grid, density))
        ax.plot(z_grid, density, linewidth=1.0, label=f"x = ({', '.join(f'{v:.2f}' for v in x)})")
    ax.set_xlabel("z")
    ax.legend(loc="upper right", fontsize="small")
    _save(fig, path)
    return curves


@torch.no_grad()
def manifold_panel(source, path, z_grid=None):
    """
    f(z) over a latent grid, coloured by z
    Returns:
        (z grid, mean map values)
    """
    z = np.linspace(-3.0, 3.0, 601) if z_grid is None else np.asarray(z_grid, dtype=np.float64)
    if isinstance(source, GroundTruthModel):
        values = source.mean(z.reshape(-1, 1))
    else:
        values = source.decoder(ad.as_value(z.reshape(-1, 1))).numpy()
    fig, ax = _figure()
    if values.shape[1] >= 2:
        ax.scatter(values[:, 0], values[:, 1], c=z, cmap="coolwarm", s=3)
    else:
        ax.scatter(z, values[:, 0], c=z, cmap="coolwarm", s=3)
    ax.set_title("f(z)")
    _save(fig, path)
    return z, values
