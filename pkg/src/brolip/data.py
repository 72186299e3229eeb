"""Deterministic synthetic classification sets.

Image benchmarks are out of scope at desk scale; these two families cover
the regimes the toy trainer needs: `blobs` is linearly separable with
controllable class distance, `two_rings` (concentric annuli in the first
two coordinates) is not.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def toy_dataset(kind: str, n: int, d: int, seed: int, *, classes: int = 2,
                delta: float = 6.0, sigma: float = 1.0,
                radii: tuple[float, float] = (1.0, 2.0),
                ring_sigma: float = 0.1, ambient_sigma: float = 0.05,
                anchor_dim: int | None = None):
    """Return (inputs (n, d), labels (n,)) drawn deterministically from seed.

    `two_rings` places one constant coordinate (default at index d // 2)
    alongside the annuli: the networks here carry no bias terms, so a
    radial threshold is only learnable against such a fixed reference
    scale. Pass anchor_dim=-1 to disable it.
    """
    if n < 0 or d <= 0:
        raise ContractError("need n >= 0 and d > 0")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        if classes < 2 or classes > d:
            raise ContractError("blobs needs 2 <= classes <= d")
        basis = np.linalg.qr(rng.standard_normal((d, classes)))[0].T
        labels = np.arange(n) % classes
        rng.shuffle(labels)
        x = delta * basis[labels] + sigma * rng.standard_normal((n, d))
        return x, labels.astype(np.int64)
    if kind == "two_rings":
        if d < 2:
            raise ContractError("two_rings needs d >= 2")
        labels = np.arange(n) % 2
        rng.shuffle(labels)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = np.asarray(radii)[labels] + ring_sigma * rng.standard_normal(n)
        x = ambient_sigma * rng.standard_normal((n, d))
        x[:, 0] += r * np.cos(theta)
        x[:, 1] += r * np.sin(theta)
        if anchor_dim is None:
            anchor_dim = d // 2 if d > 2 else -1
        if anchor_dim >= 0:
            if anchor_dim < 2:
                raise ContractError("anchor cannot overwrite the ring coordinates")
            x[:, anchor_dim] = 1.0
        return x, labels.astype(np.int64)
    raise ContractError(f"unknown dataset kind {kind!r}")
