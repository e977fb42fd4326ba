"""Seeded Monte Carlo volume estimation with worker substreams.

Results are bit-identical for a fixed (seed, workers) pair: each worker
draws from its own substream derived from the seed and the worker index,
and partial counts are combined in worker order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MCConfig", "MCResult", "mc_volume", "box_volume"]

_BATCH = 1 << 19


@dataclass(frozen=True)
class MCConfig:
    """Sampling plan for Monte Carlo volume estimates."""

    seed: int = 20260810
    samples: int = 1_000_000
    workers: int = 1

    def __post_init__(self):
        if self.samples < 10_000:
            raise ValueError("need at least 1e4 samples")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def with_samples(self, samples):
        return MCConfig(seed=self.seed, samples=int(samples), workers=self.workers)


@dataclass
class MCResult:
    estimate: float
    stderr: float
    hits: int
    samples: int
    box_volume: float
    zero_hits: bool = field(default=False)

    @property
    def rel_stderr(self):
        return self.stderr / self.estimate if self.estimate else np.inf


def box_volume(box):
    box = np.asarray(box, dtype=float)
    widths = box[:, 1] - box[:, 0]
    if np.any(widths <= 0):
        raise ValueError("box must have positive volume")
    return float(np.prod(widths))


def _worker_counts(total, workers):
    base, extra = divmod(total, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def mc_volume(membership, box, config, key=0):
    """Estimate the volume of ``{x in box : membership(x)}``.

    Parameters
    ----------
    membership : callable
        Vectorized predicate mapping an (M, d) array of points to a boolean
        array of length M.
    box : array_like, shape (d, 2)
        Axis-aligned sampling box.
    config : MCConfig
    key : int
        Extra stream key so several estimates under one config stay
        independent.

    Returns
    -------
    MCResult with ``estimate = vol(box) * hits / samples`` and the binomial
    standard error ``vol(box) * sqrt(p (1 - p) / samples)``.
    """
    box = np.asarray(box, dtype=float)
    vol = box_volume(box)
    lo, width = box[:, 0], box[:, 1] - box[:, 0]
    hits = 0
    for w, count in enumerate(_worker_counts(config.samples, config.workers)):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(int(config.seed), int(key), w)))
        done = 0
        while done < count:
            m = min(_BATCH, count - done)
            pts = lo + width * rng.random((m, box.shape[0]))
            inside = np.asarray(membership(pts), dtype=bool)
            hits += int(inside.sum())
            done += m
    n = config.samples
    p = hits / n
    stderr = vol * float(np.sqrt(p * (1.0 - p) / n))
    return MCResult(estimate=vol * p, stderr=stderr, hits=hits, samples=n,
                    box_volume=vol, zero_hits=(hits == 0))
