import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from odmtcnet import network
from odmtcnet.dca import constraint_residuals
from odmtcnet.dataset import MultiViewDataset, lbp_view

ORL_CANDIDATES = [os.environ.get("ODMTCNET_ORL"), "/root/data/orl",
                  str(Path(__file__).parent / "data" / "orl")]

ACCEPTANCE_LINES: list[str] = []

# Filled for every model fitted and every image hashed anywhere in the session.
SUITE_RECORD = {"fits": 0, "layers": 0, "max_residual": 0.0, "rank_violations": [],
                "hash_calls": 0, "hash_pixels": 0, "hash_violations": []}


def _record_fit(fit):
    def wrapper(*args, **kwargs):
        model = fit(*args, **kwargs)
        SUITE_RECORD["fits"] += 1
        for i, layer in enumerate(model.layers):
            SUITE_RECORD["layers"] += 1
            res = float(constraint_residuals(layer.bank, layer.auto1, layer.auto2).max())
            SUITE_RECORD["max_residual"] = max(SUITE_RECORD["max_residual"], res)
            if layer.effective_rank > layer.n_classes:
                SUITE_RECORD["rank_violations"].append((i, layer.effective_rank, layer.n_classes))
        return model
    return wrapper


def _record_hash(hash_pool):
    def wrapper(final_maps):
        out = hash_pool(final_maps)
        top = 2 ** np.asarray(final_maps).shape[1] - 1
        SUITE_RECORD["hash_calls"] += 1
        SUITE_RECORD["hash_pixels"] += out.size
        if out.size and (out.min() < 0 or out.max() > top):
            SUITE_RECORD["hash_violations"].append((int(out.min()), int(out.max()), top))
        return out
    return wrapper


def pytest_configure(config):
    network.fit = _record_fit(network.fit)
    network.hash_pool = _record_hash(network.hash_pool)


def pytest_collection_modifyitems(config, items):
    # suite-wide acceptance checks summarise everything else, so they go last
    items.sort(key=lambda item: item.get_closest_marker("suite_wide") is not None)


def orl_root():
    for cand in ORL_CANDIDATES:
        if cand and Path(cand).is_dir() and len(list(Path(cand).iterdir())) >= 40:
            return Path(cand)
    return None


def synthetic_dataset(n_classes=3, per_class=6, shape=(10, 10), seed=0, noise=0.15):
    """Class prototypes plus pixel noise; view 2 is the LBP map of view 1."""
    rng = np.random.default_rng(seed)
    protos = rng.random((n_classes,) + shape)
    images, labels = [], []
    for c in range(n_classes):
        for _ in range(per_class):
            images.append(np.clip(protos[c] + noise * rng.standard_normal(shape), 0, 1))
            labels.append(c)
    v1 = np.stack(images)
    return MultiViewDataset(v1, lbp_view(v1), np.array(labels), n_classes, "lbp")


def write_tree(root, n_classes=3, per_class=6, shape=(12, 10), seed=0):
    """A class-per-directory PNG tree of noisy prototypes."""
    rng = np.random.default_rng(seed)
    for c in range(n_classes):
        proto = rng.random(shape)
        d = root / f"c{c}"
        d.mkdir(parents=True)
        for i in range(per_class):
            img = np.clip(proto + 0.1 * rng.standard_normal(shape), 0, 1)
            Image.fromarray((img * 255).astype(np.uint8)).save(d / f"{i:02d}.png")
    return root


@pytest.fixture
def small_dataset():
    return synthetic_dataset()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
