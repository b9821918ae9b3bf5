"""Cluster Autoscaler baseline: homogeneous node pools scaled one node at a time.

Demand is an aggregate resource vector that must fit inside the summed
capacity of the pool nodes; there is no pod-level placement.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .catalog import CatalogError, InstanceCatalog, ResourceSchema, composition_matrix
from .model import Allocation

log = logging.getLogger(__name__)

DEFAULT_MIN_NODES = 0
DEFAULT_MAX_NODES = 100
EXPANDERS = ("least_waste", "random", "priority")


class CaError(ValueError):
    """Invalid pool or cluster data."""


@dataclass(frozen=True)
class NodePool:
    instance: int  # catalog index
    min_nodes: int = DEFAULT_MIN_NODES
    max_nodes: int = DEFAULT_MAX_NODES
    current_nodes: int = 0

    def __post_init__(self):
        if not (0 <= self.min_nodes <= self.current_nodes <= self.max_nodes):
            raise CaError(f"pool bounds violate min <= current <= max: "
                          f"{self.min_nodes}, {self.current_nodes}, {self.max_nodes}")


@dataclass(frozen=True)
class ClusterState:
    pools: tuple
    pending_demand: np.ndarray
    schema: ResourceSchema

    def __post_init__(self):
        d = np.array(self.pending_demand, dtype=float).reshape(-1)
        if d.shape != (self.schema.m,):
            raise CaError(f"demand must have length {self.schema.m}")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise CaError("pending demand must be finite and nonnegative")
        object.__setattr__(self, "pending_demand", d)
        object.__setattr__(self, "pools", tuple(self.pools))


@dataclass
class CaResult:
    final_pools: list
    allocation: Allocation
    satisfied: bool
    scale_events: list = field(default_factory=list)  # (pool index, +1 | -1)

    def as_dict(self, catalog: InstanceCatalog) -> dict:
        return {
            "pools": pools_to_list(catalog, self.final_pools),
            "allocation": self.allocation.counts.tolist(),
            "satisfied": self.satisfied,
            "scale_events": [list(ev) for ev in self.scale_events],
        }


def _check(catalog: InstanceCatalog, state: ClusterState) -> None:
    if state.schema.names != catalog.schema.names:
        raise CaError("cluster schema does not match the catalog")
    for pool in state.pools:
        if not 0 <= pool.instance < catalog.n:
            raise CaError(f"pool instance index {pool.instance} outside catalog of {catalog.n}")


def _allocation(catalog: InstanceCatalog, counts: Sequence[int], pools) -> Allocation:
    x = np.zeros(catalog.n)
    for pool, k in zip(pools, counts):
        x[pool.instance] += k
    return Allocation(x, integral=True)


def _least_waste(cols: np.ndarray, deficit: np.ndarray, candidates: np.ndarray) -> int:
    short = np.maximum(0.0, deficit)
    waste = np.maximum(0.0, cols - short[:, None]).sum(axis=0)
    total = cols.sum(axis=0)
    score = np.where(total > 0, waste / np.where(total > 0, total, 1.0), np.inf)
    score = np.where(candidates, score, np.inf)
    return int(np.argmin(score))


def simulate_scale_up(catalog: InstanceCatalog, state: ClusterState, expander: str = "least_waste",
                      seed: int = 42, priority: Optional[Sequence[int]] = None) -> CaResult:
    """Add nodes until the pools cover the pending demand or run out of headroom.

    Only pools whose type supplies some still-short resource are candidates.
    ``priority`` lists pool indices, most preferred first; unlisted pools
    follow in index order.
    """
    _check(catalog, state)
    if expander not in EXPANDERS:
        raise CaError(f"unknown expander {expander!r}; choose from {', '.join(EXPANDERS)}")
    pools = list(state.pools)
    counts = [p.current_nodes for p in pools]
    d = state.pending_demand
    K = composition_matrix(catalog)
    cols = K[:, [p.instance for p in pools]] if pools else np.zeros((catalog.m, 0))
    rng = np.random.default_rng(seed)
    order = list(priority or [])
    order += [k for k in range(len(pools)) if k not in order]
    events = []
    provided = cols @ np.asarray(counts, dtype=float)
    while True:
        deficit = d - provided
        if np.all(deficit <= 0):
            satisfied = True
            break
        helps = (cols[deficit > 0] > 0).any(axis=0)
        room = np.array([c < p.max_nodes for c, p in zip(counts, pools)], dtype=bool)
        candidates = helps & room
        if not np.any(candidates):
            satisfied = False
            break
        if expander == "least_waste":
            k = _least_waste(cols, deficit, candidates)
        elif expander == "random":
            k = int(rng.choice(np.flatnonzero(candidates)))
        else:
            k = next(j for j in order if candidates[j])
        counts[k] += 1
        provided = provided + cols[:, k]
        events.append((k, 1))
    final = [replace(p, current_nodes=c) for p, c in zip(pools, counts)]
    return CaResult(final, _allocation(catalog, counts, pools), satisfied, events)


def simulate_scale_down(catalog: InstanceCatalog, state: ClusterState, utilization_threshold: float = 0.5) -> CaResult:
    """Remove nodes while the rest still cover the demand and pools stay at or above min_nodes.

    The pool with the most nodes goes first (lowest index on ties). With
    aggregate demand a node whose removal keeps coverage carries no load, so
    its utilization is below any threshold; the threshold is validated but
    never binds.
    """
    _check(catalog, state)
    if not 0 < utilization_threshold <= 1:
        raise CaError("utilization_threshold must lie in (0, 1]")
    pools = list(state.pools)
    counts = [p.current_nodes for p in pools]
    d = state.pending_demand
    K = composition_matrix(catalog)
    cols = K[:, [p.instance for p in pools]] if pools else np.zeros((catalog.m, 0))
    provided = cols @ np.asarray(counts, dtype=float)
    events = []
    while True:
        pick = None
        for k in sorted(range(len(pools)), key=lambda j: (-counts[j], j)):
            if counts[k] > pools[k].min_nodes and np.all(provided - cols[:, k] >= d):
                pick = k
                break
        if pick is None:
            break
        counts[pick] -= 1
        provided = provided - cols[:, pick]
        events.append((pick, -1))
    final = [replace(p, current_nodes=c) for p, c in zip(pools, counts)]
    return CaResult(final, _allocation(catalog, counts, pools), bool(np.all(provided >= d)), events)


def seed_existing(pools: Sequence[NodePool], existing) -> list:
    """Fold an existing allocation into the pools; types without a pool get a default one."""
    pools = list(pools)
    if existing is None:
        return pools
    x = existing.counts if isinstance(existing, Allocation) else np.asarray(existing, dtype=float)
    for i in np.flatnonzero(x > 0):
        k = int(round(x[i]))
        idx = next((j for j, p in enumerate(pools) if p.instance == i), None)
        if idx is None:
            pools.append(NodePool(int(i), DEFAULT_MIN_NODES, max(DEFAULT_MAX_NODES, k), k))
        else:
            p = pools[idx]
            now = p.current_nodes + k
            pools[idx] = replace(p, current_nodes=now, max_nodes=max(p.max_nodes, now))
    return pools


def run_baseline(catalog: InstanceCatalog, pools: Sequence[NodePool], existing, demand,
                 expander: str = "least_waste", seed: int = 42, priority=None,
                 utilization_threshold: float = 0.5) -> CaResult:
    """Seed pools from the existing allocation, scale up, then scale down."""
    seeded = seed_existing(pools, existing)
    st = ClusterState(tuple(seeded), demand, catalog.schema)
    up = simulate_scale_up(catalog, st, expander, seed, priority)
    if not up.satisfied:
        log.info("CA baseline could not cover demand with %d pools", len(seeded))
        return up
    down = simulate_scale_down(catalog, replace(st, pools=tuple(up.final_pools)), utilization_threshold)
    return CaResult(down.final_pools, down.allocation, down.satisfied, up.scale_events + down.scale_events)


# --- pool fixtures -------------------------------------------------------------

def pools_from_list(catalog: InstanceCatalog, items: list) -> list:
    out = []
    for k, item in enumerate(items):
        try:
            idx = catalog.find(item["provider"], item["instance_sku"])
        except (KeyError, CatalogError) as exc:
            raise CaError(f"pool {k}: {exc}") from None
        out.append(NodePool(idx, int(item.get("min_nodes", DEFAULT_MIN_NODES)),
                            int(item.get("max_nodes", DEFAULT_MAX_NODES)), int(item.get("current_nodes", 0))))
    return out


def pools_to_list(catalog: InstanceCatalog, pools: Sequence[NodePool]) -> list:
    return [
        {
            "instance_sku": catalog.instances[p.instance].sku,
            "provider": catalog.instances[p.instance].provider_id,
            "min_nodes": p.min_nodes,
            "max_nodes": p.max_nodes,
            "current_nodes": p.current_nodes,
        }
        for p in pools
    ]


def load_pools(catalog: InstanceCatalog, path: str) -> list:
    with open(path, encoding="utf-8") as fh:
        return pools_from_list(catalog, json.load(fh))
