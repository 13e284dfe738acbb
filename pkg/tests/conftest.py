"""Shared fixtures: desk-scale trained artifacts for the acceptance suite.

The desk runs are deterministic given their configs, so they are cached
under .artifacts/ at the repo root; delete that directory (or set
POPGIBBS_FRESH=1) to force full retraining.  A cold run takes roughly
45-60 minutes of training time in total.
"""

import json
import os

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ARTIFACTS = os.environ.get("POPGIBBS_ARTIFACTS",
                           os.path.join(ROOT, ".artifacts"))


def _fresh() -> bool:
    return os.environ.get("POPGIBBS_FRESH", "0") == "1"


def _cached(tag: str, cfg: dict) -> bool:
    marker = os.path.join(ARTIFACTS, tag, "fixture.json")
    if _fresh() or not os.path.exists(marker):
        return False
    with open(marker, encoding="utf-8") as f:
        return json.load(f) == cfg


def _mark(tag: str, cfg: dict) -> None:
    with open(os.path.join(ARTIFACTS, tag, "fixture.json"), "w",
              encoding="utf-8") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


@pytest.fixture(scope="session")
def gmm_desk():
    """Desk GMM run (main-text prior values): corpora, training, checkpoint.

    Used by the KL-trend, ordering and fixed-budget acceptance criteria.
    """
    from popgibbs import harness

    tag = "gmm_desk"
    out = os.path.join(ARTIFACTS, tag)
    spec = {"train": {"instances": 2000, "n": 60, "seed": 0},
            "test": {"instances": 500, "n": 100, "seed": 1},
            "alpha0": 2.0, "beta0": 2.0,
            "cfg": dict(harness.desk_profile("gmm"), seed=0)}
    paths = {"train_corpus": os.path.join(out, "train_corpus"),
             "test_corpus": os.path.join(out, "test_corpus"),
             "ckpt": os.path.join(out, "train", "ckpt"),
             "train_csv": os.path.join(out, "train", "train.csv"),
             "alpha0": 2.0, "beta0": 2.0}
    if not _cached(tag, spec):
        os.makedirs(out, exist_ok=True)
        harness.generate("gmm", 2000, 60, 3, 0, paths["train_corpus"],
                         alpha0=2.0, beta0=2.0)
        harness.generate("gmm", 500, 100, 3, 1, paths["test_corpus"],
                         alpha0=2.0, beta0=2.0)
        cfg = harness.make_config(dict(
            harness.desk_profile("gmm"), corpus=paths["train_corpus"],
            test_corpus=paths["test_corpus"], seed=0, alpha0=2.0, beta0=2.0,
            out_dir=os.path.join(out, "train")))
        harness.run_training(cfg, log=lambda *_: None)
        _mark(tag, spec)
    return paths


@pytest.fixture(scope="session")
def dmm_desk():
    """Desk ring-mixture run: corpora plus jointly trained model/proposals."""
    from popgibbs import harness

    tag = "dmm_desk"
    out = os.path.join(ARTIFACTS, tag)
    spec = {"train": {"instances": 1500, "n": 60, "seed": 0},
            "test": {"instances": 300, "n": 120, "seed": 1},
            "cfg": dict(harness.desk_profile("dmm"), seed=0, steps=5000)}
    paths = {"train_corpus": os.path.join(out, "train_corpus"),
             "test_corpus": os.path.join(out, "test_corpus"),
             "ckpt": os.path.join(out, "train", "ckpt"),
             "train_csv": os.path.join(out, "train", "train.csv")}
    if not _cached(tag, spec):
        os.makedirs(out, exist_ok=True)
        harness.generate("dmm", 1500, 60, 4, 0, paths["train_corpus"])
        harness.generate("dmm", 300, 120, 4, 1, paths["test_corpus"])
        cfg = harness.make_config(dict(
            harness.desk_profile("dmm"), corpus=paths["train_corpus"],
            test_corpus=paths["test_corpus"], seed=0, steps=5000,
            out_dir=os.path.join(out, "train")))
        harness.run_training(cfg, log=lambda *_: None)
        _mark(tag, spec)
    return paths
