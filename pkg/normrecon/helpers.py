import hashlib
import logging
import sys

import numpy as np

from normrecon.constants import LOG_LEVEL

logger = logging.getLogger(__name__)

SeedLike = int | np.random.SeedSequence | None


def configure_logging(level: str | None = None):
    """Redirect all logging to stderr so stdout stays free for JSON and stdio transports."""
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """A fresh SeedSequence; spawning from it never advances the caller's sequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def spawn_generators(seed: SeedLike, *streams: str) -> dict[str, np.random.Generator]:
    """
    Derive one independent generator per named stream from a single seed.

    Streams are keyed by name so that adding a stream never shifts the draws of
    another one; e.g. the frozen weights of a stack come out identical whether
    or not a sparsity mask stream is also requested.

    Args:
        seed: Root seed or SeedSequence.
        streams: Stream names.

    Returns:
        Mapping of stream name to a numpy Generator.
    """
    root = seed_sequence(seed)
    generators = {}
    for name in streams:
        key = [int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")]
        child = np.random.SeedSequence(
            entropy=root.entropy, spawn_key=(*root.spawn_key, *key)
        )
        generators[name] = np.random.default_rng(child)
    return generators


def spawn_seeds(seed: SeedLike, count: int) -> list[np.random.SeedSequence]:
    """Per-trial child seeds; trial i always receives the same child."""
    return seed_sequence(seed).spawn(count)


def sample_unit_ball(
    rng: np.random.Generator, samples: int, dim: int, radius: float = 1.0
) -> np.ndarray:
    """
    Draw points uniformly from the ball of the given radius.

    Directions come from a normalized Gaussian and radii from radius * U^(1/dim).

    Returns:
        Array of shape (samples, dim).
    """
    directions = rng.standard_normal((samples, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = radius * rng.random((samples, 1)) ** (1.0 / dim)
    return directions / norms * radii


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote a single input vector to a one-row batch; report whether it was promoted."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False
