import json

import numpy as np
import pytest

from alice.feature_store import ConfusablePair, SynthParams, generate_synthetic


def small_params() -> SynthParams:
    return SynthParams(
        classes=6,
        coarse_groups=3,
        n_train=8,
        n_test=8,
        n_pool=8,
        confusable_pairs=(
            ConfusablePair(0, 1, "bill"),
            ConfusablePair(2, 3, "wing"),
            ConfusablePair(4, 5, "tail"),
        ),
    )


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory):
    """Small synthetic dataset (C=6, 3 planted pairs) for loop tests."""
    out = tmp_path_factory.mktemp("small-ds")
    manifest = generate_synthetic(small_params(), seed=11, out_dir=out)
    return manifest


@pytest.fixture(scope="session")
def default_ds(tmp_path_factory):
    """The default synthetic dataset (C=10, 5 planted pairs)."""
    out = tmp_path_factory.mktemp("default-ds")
    return generate_synthetic(SynthParams(), seed=7, out_dir=out)


def oracle_script(manifest) -> dict[frozenset, str]:
    """Pair-name -> oracle explanation text from the generated script."""
    script = {}
    for line in (manifest.root / "oracle_explanations.jsonl").read_text().splitlines():
        rec = json.loads(line)
        script[frozenset(rec["pair"])] = rec["text"]
    return script


def mc_kl_diagonal(p, q, n_samples: int, seed: int) -> float:
    """Monte-Carlo KL(p || q) for diagonal Gaussian profiles.

    Independent of the closed form: draws from p and averages the
    log-density ratio.
    """
    rng = np.random.default_rng(seed)
    vp = np.maximum(p.covariance, p.epsilon)
    vq = np.maximum(q.covariance, q.epsilon)
    x = p.mean + rng.standard_normal((n_samples, p.mean.size)) * np.sqrt(vp)
    log_p = -0.5 * np.sum((x - p.mean) ** 2 / vp + np.log(2 * np.pi * vp), axis=1)
    log_q = -0.5 * np.sum((x - q.mean) ** 2 / vq + np.log(2 * np.pi * vq), axis=1)
    return float(np.mean(log_p - log_q))
