import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import torch
from dotenv import load_dotenv
from loguru import logger
from scipy import special

GENERATOR_NAMES = (
    "figure8",
    "circle",
    "absval",
    "clusters",
    "spiral_dots",
    "stepfn",
    "quad1",
    "quad2",
    "quad3",
    "linear_cholesky",
    "ss_discrete",
    "ss_continuous",
    "gaussian",
)

TABLE_NAMES = (
    "table1",
    "table2",
    "table3",
    "table4",
    "sigma-spiral",
    "aabi1",
    "collapse",
    "adversarial",
)

SPLIT_NAMES = ("train", "validation", "test")

WORKERS_ENV = "VAELAB_WORKERS"


def configure_logging(verbose=False, quiet=False):
    """
    Install a single stderr sink for loguru
    Parameters:
        verbose: log at DEBUG level
        quiet: only warnings and errors
    """
    level = "DEBUG" if verbose else "WARNING" if quiet else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> | {message}")
    return level


def worker_count():
    load_dotenv()
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"⚠️ ignoring non-integer {WORKERS_ENV}={raw!r}")
        return 1


def parallel_map(fn, items, workers=None):
    """
    Map ``fn`` over ``items`` keeping input order in the result
    Parameters:
        fn: picklable callable
        items: sequence of arguments, one call each
        workers: process count, defaults to the environment setting
    Returns:
        list of results in the order of ``items``
    """
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def derive_seed(*parts):
    """Stable integer seed from a tuple of ints and strings."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).hexdigest()
    return int(digest[:12], 16)


def config_hash(payload):
    text = json.dumps(payload, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def normal_cdf(z):
    """Φ(z) = erfc(-z/√2)/2 on numpy arrays."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def normal_log_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * z**2 - 0.5 * math.log(2.0 * math.pi)


def beta_ppf(q, a, b):
    """Inverse CDF of Beta(a, b)."""
    return special.betaincinv(a, b, np.asarray(q, dtype=np.float64))


def ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def to_numpy(value):
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().numpy()
    return np.asarray(value, dtype=np.float64)


def count_local_maxima(values):
    """Number of + to - sign changes of the discrete derivative."""
    diff = np.diff(np.asarray(values, dtype=np.float64))
    signs = np.sign(diff)
    signs = signs[signs != 0]
    return int(np.sum((signs[:-1] > 0) & (signs[1:] < 0)))
