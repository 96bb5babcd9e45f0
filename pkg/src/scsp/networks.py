"""Transportation networks for the pre-disaster planning family.

A network is a set of undirected links with lengths, investment costs, and
survival probabilities (without/with investment), plus the OD pairs whose
connectivity the recourse stage cares about. Files are human-editable JSON so
instances transcribed from the literature can be checked by eye.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

NETWORK_FORMAT = "scsp-network"
NETWORK_VERSION = 1


class NetworkSchemaError(ValueError):
    """Raised when a network file violates the schema or its invariants."""


@dataclass(frozen=True)
class Link:
    id: int
    u: str
    v: str
    t: float  # length
    c: int  # investment cost (integer: the budget constraint is finite-domain)
    p: float  # survival probability without investment
    q: float  # survival probability with investment


@dataclass(frozen=True)
class Network:
    nodes: tuple
    links: tuple
    od_pairs: tuple
    budgets: tuple  # three ascending levels
    penalty_low: float
    penalty_high: float

    def validate(self) -> "Network":
        nodes = set(self.nodes)
        if len(nodes) != len(self.nodes):
            raise NetworkSchemaError("duplicate node names")
        seen_ids = set()
        for link in self.links:
            where = f"link {link.id}"
            if link.id in seen_ids:
                raise NetworkSchemaError(f"{where}: duplicate link id")
            seen_ids.add(link.id)
            if link.u not in nodes or link.v not in nodes:
                raise NetworkSchemaError(f"{where}: endpoint not in nodes")
            if link.t < 0:
                raise NetworkSchemaError(f"{where}: negative length t={link.t}")
            if link.c < 0:
                raise NetworkSchemaError(f"{where}: negative cost c={link.c}")
            for name in ("p", "q"):
                val = getattr(link, name)
                if not 0.0 <= val <= 1.0:
                    raise NetworkSchemaError(f"{where}: {name}={val} outside [0, 1]")
            if link.q < link.p:
                raise NetworkSchemaError(
                    f"{where}: q={link.q} < p={link.p} (investment cannot hurt survival)"
                )
        if not self.links:
            raise NetworkSchemaError("network has no links")
        if not self.od_pairs:
            raise NetworkSchemaError("network has no od_pairs")
        for a, b in self.od_pairs:
            if a not in nodes or b not in nodes:
                raise NetworkSchemaError(f"od pair ({a}, {b}): endpoint not in nodes")
        if not (self.budgets[0] < self.budgets[1] < self.budgets[2]):
            raise NetworkSchemaError(f"budgets must be strictly ascending, got {self.budgets}")
        if self.budgets[0] <= 0:
            raise NetworkSchemaError("budgets must be positive")
        if self.penalty_low <= 0 or self.penalty_high <= 0:
            raise NetworkSchemaError("penalties must be positive")
        return self

    def budget_level(self, level: int) -> int:
        if level not in (1, 2, 3):
            raise ValueError(f"budget level must be 1, 2 or 3, got {level}")
        return self.budgets[level - 1]

    def penalty_level(self, level: str) -> float:
        if level == "low":
            return self.penalty_low
        if level == "high":
            return self.penalty_high
        raise ValueError(f"penalty level must be 'low' or 'high', got {level!r}")

    def total_length(self) -> float:
        return sum(link.t for link in self.links)

    def total_cost(self) -> int:
        return sum(link.c for link in self.links)


def shortest_path_cost(network: Network, survival: Sequence[int], penalty: float) -> float:
    """Summed shortest-path length over all OD pairs for one scenario.

    ``survival`` holds one bit per link, in ``network.links`` order; a pair
    with no surviving path contributes ``penalty``.
    """
    if len(survival) != len(network.links):
        raise ValueError("one survival bit per link required")
    adj = defaultdict(list)
    for link, alive in zip(network.links, survival):
        if alive:
            adj[link.u].append((link.v, link.t))
            adj[link.v].append((link.u, link.t))
    by_source = defaultdict(list)
    for a, b in network.od_pairs:
        by_source[a].append(b)
    total = 0.0
    for source, sinks in by_source.items():
        dist = _dijkstra(adj, source, set(sinks))
        for sink in sinks:
            d = dist.get(sink)
            total += penalty if d is None else d
    return total


def _dijkstra(adj, source, targets):
    dist = {source: 0.0}
    settled = set()
    remaining = set(targets)
    heap = [(0.0, source)]
    while heap and remaining:
        d, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        remaining.discard(node)
        for nbr, w in adj.get(node, ()):
            nd = d + w
            if nd < dist.get(nbr, math.inf):
                dist[nbr] = nd
                heapq.heappush(heap, (nd, nbr))
    return {t: dist[t] for t in targets if t in dist and t in settled}


def network_to_dict(network: Network) -> dict:
    return {
        "format": NETWORK_FORMAT,
        "version": NETWORK_VERSION,
        "nodes": list(network.nodes),
        "links": [
            {"id": l.id, "from": l.u, "to": l.v, "t": l.t, "c": l.c, "p": l.p, "q": l.q}
            for l in network.links
        ],
        "od_pairs": [{"from": a, "to": b} for a, b in network.od_pairs],
        "budgets": list(network.budgets),
        "penalties": {"low": network.penalty_low, "high": network.penalty_high},
    }


def network_from_dict(data: dict) -> Network:
    def require(mapping, key, where):
        if not isinstance(mapping, dict) or key not in mapping:
            raise NetworkSchemaError(f"missing field {where}{key}")
        return mapping[key]

    if data.get("format") not in (None, NETWORK_FORMAT):
        raise NetworkSchemaError(f"not a network file (format={data.get('format')!r})")
    nodes = tuple(require(data, "nodes", ""))
    links = []
    for k, entry in enumerate(require(data, "links", "")):
        where = f"links[{k}]."
        cost = require(entry, "c", where)
        if not isinstance(cost, int) or isinstance(cost, bool):
            raise NetworkSchemaError(f"{where}c must be an integer, got {cost!r}")
        links.append(
            Link(
                id=int(require(entry, "id", where)),
                u=str(require(entry, "from", where)),
                v=str(require(entry, "to", where)),
                t=float(require(entry, "t", where)),
                c=cost,
                p=float(require(entry, "p", where)),
                q=float(require(entry, "q", where)),
            )
        )
    od_pairs = tuple(
        (str(require(entry, "from", f"od_pairs[{k}].")), str(require(entry, "to", f"od_pairs[{k}].")))
        for k, entry in enumerate(require(data, "od_pairs", ""))
    )
    budgets = require(data, "budgets", "")
    if len(budgets) != 3:
        raise NetworkSchemaError(f"budgets must list exactly three levels, got {len(budgets)}")
    penalties = require(data, "penalties", "")
    network = Network(
        nodes=nodes,
        links=tuple(links),
        od_pairs=od_pairs,
        budgets=tuple(int(b) for b in budgets),
        penalty_low=float(require(penalties, "low", "penalties.")),
        penalty_high=float(require(penalties, "high", "penalties.")),
    )
    return network.validate()


def load_network(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkSchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return network_from_dict(data)


def save_network(network: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(network), fh, indent=2, sort_keys=True)
        fh.write("\n")


def gen_network(n_nodes: int, n_links: int, seed: int) -> Network:
    """Seeded random connected network with generator-chosen budgets/penalties.

    Budgets land near 25/50/75% of the total link cost; both penalty levels
    exceed any possible path length.
    """
    import random

    if n_nodes < 2:
        raise ValueError("need at least two nodes")
    if n_links < n_nodes - 1:
        raise ValueError("need at least n_nodes - 1 links for connectivity")
    rng = random.Random(seed)
    nodes = tuple(f"n{k}" for k in range(n_nodes))
    order = list(range(n_nodes))
    rng.shuffle(order)
    pairs = []
    used = set()
    for k in range(1, n_nodes):
        a, b = order[rng.randrange(k)], order[k]
        pairs.append((nodes[a], nodes[b]))
        used.add(frozenset((a, b)))
    while len(pairs) < n_links:
        a, b = rng.sample(range(n_nodes), 2)
        key = frozenset((a, b))
        if key in used and len(used) < n_nodes * (n_nodes - 1) // 2:
            continue
        used.add(key)
        pairs.append((nodes[a], nodes[b]))
    links = []
    for k, (u, v) in enumerate(pairs):
        p = round(rng.uniform(0.4, 0.8), 3)
        q = round(min(0.99, p + rng.uniform(0.1, 0.2)), 3)
        links.append(
            Link(id=k + 1, u=u, v=v, t=round(rng.uniform(1.0, 10.0), 2), c=rng.randint(1, 9), p=p, q=q)
        )
    n_pairs = min(5, max(2, n_nodes // 2))
    all_pairs = [(nodes[i], nodes[j]) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
    od_pairs = tuple(rng.sample(all_pairs, n_pairs))
    total_cost = sum(l.c for l in links)
    budgets = []
    for frac in (0.25, 0.5, 0.75):
        b = max(1, round(total_cost * frac))
        if budgets and b <= budgets[-1]:
            b = budgets[-1] + 1
        budgets.append(b)
    low = float(math.ceil(sum(l.t for l in links))) + 1.0
    return Network(
        nodes=nodes,
        links=tuple(links),
        od_pairs=od_pairs,
        budgets=tuple(budgets),
        penalty_low=low,
        penalty_high=10.0 * low,
    ).validate()
