"""Synthetic two-domain interaction generator.

Every user gets one latent taste vector on the unit sphere; every item in
each domain gets its own latent vector on the same sphere.  A user
interacts with the ``round(density * n_items)`` items nearest to their
taste vector, per domain.  Overlapping users keep the same taste vector in
both domains, which is what gives a cross-domain mapping something real to
learn; the remaining users are split between the two domains.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionSet
from .errors import ConfigError, InfeasibleDensity


def _unit_rows(rng, n, k):
    x = rng.standard_normal((n, k))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic(n_users, n_source_items, n_target_items, k_true,
                       overlap_fraction, density, seed):
    """Build (source, target) interaction sets from a shared geometry."""
    if min(n_users, n_source_items, n_target_items, k_true) < 1:
        raise ConfigError("all counts must be positive")
    if not 0.0 < overlap_fraction <= 1.0:
        raise ConfigError(
            f"overlap_fraction must be in (0, 1], got {overlap_fraction}")
    if not 0.0 < density < 1.0:
        raise ConfigError(f"density must be in (0, 1), got {density}")
    c_source = int(np.floor(density * n_source_items + 0.5))
    c_target = int(np.floor(density * n_target_items + 0.5))
    if c_source < 1 or c_target < 1:
        raise InfeasibleDensity(
            f"density {density} yields zero interactions per user")

    rng = np.random.default_rng(seed)
    taste = _unit_rows(rng, n_users, k_true)
    source_items = _unit_rows(rng, n_source_items, k_true)
    target_items = _unit_rows(rng, n_target_items, k_true)

    n_overlap = int(np.floor(overlap_fraction * n_users + 0.5))
    perm = rng.permutation(n_users)
    overlap = perm[:n_overlap]
    rest = perm[n_overlap:]
    half = rest.shape[0] // 2
    source_only = rest[:half]
    target_only = rest[half:]

    user_ids = [f"u{k:05d}" for k in range(n_users)]
    source_ids = [f"s{k:05d}" for k in range(n_source_items)]
    target_ids = [f"t{k:05d}" for k in range(n_target_items)]

    def build(users, item_vecs, item_ids, c):
        pairs = []
        for u in np.sort(users):
            sims = item_vecs @ taste[u]
            top = np.argpartition(-sims, c - 1)[:c]
            for j in np.sort(top):
                pairs.append((user_ids[u], item_ids[j]))
        return pairs

    src_users = np.concatenate([overlap, source_only])
    tgt_users = np.concatenate([overlap, target_only])
    source = InteractionSet(build(src_users, source_items, source_ids,
                                  c_source), items=source_ids)
    target = InteractionSet(build(tgt_users, target_items, target_ids,
                                  c_target), items=target_ids)
    return source, target
