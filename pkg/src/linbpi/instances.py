"""Small fixed instances used by the test suite, the campaign configs and the docs."""
from __future__ import annotations

import numpy as np

from .model import ContextDistribution, FeatureMap, Instance

_S = 1.0 / np.sqrt(2.0)


def reference_instance(noise_std: float = 1.0) -> Instance:
    """d=2, two contexts, two actions.

    Context 0 plays the canonical basis, context 1 a 45 degree rotation of it, so both
    contexts are informative about every direction. Gaps are 0.5 and 1/sqrt(2).
    """
    phi = np.array([[[1.0, 0.0], [0.0, 1.0]], [[_S, _S], [_S, -_S]]])
    return Instance(FeatureMap(phi), ContextDistribution([0.6, 0.4]), [1.0, 0.5], noise_std)


def two_arm_instance(gap: float = 0.5, noise_std: float = 1.0) -> Instance:
    """One context, arms e1 and e2, theta = (1, 1 - gap)."""
    return Instance(FeatureMap(np.eye(2)[None]), ContextDistribution([1.0]), [1.0, 1.0 - gap], noise_std)


def three_arm_instance(noise_std: float = 1.0) -> Instance:
    """One context, three arms in the plane with distinct gaps."""
    phi = np.array([[[1.0, 0.0], [0.0, 1.0], [_S, _S]]])
    return Instance(FeatureMap(phi), ContextDistribution([1.0]), [1.0, 0.3], noise_std)


def passive_example(gap: float = 0.5, noise_std: float = 1.0) -> Instance:
    """d=3, three contexts, two actions, theta = (1, 1, 1).

    When only the first action is ever played, the sampled features span e1 and e2 only,
    so the third coordinate of theta cannot be learned.
    """
    g = 1.0 - gap
    phi = np.array([
        [[1.0, 0.0, 0.0], [0.0, g, 0.0]],
        [[0.0, 1.0, 0.0], [g, 0.0, 0.0]],
        [[1.0, 0.0, 0.0], [0.0, 0.0, g]],
    ])
    return Instance(FeatureMap(phi), ContextDistribution.uniform(3), [1.0, 1.0, 1.0], noise_std)
