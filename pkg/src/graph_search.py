"""
Heap-based multi-seed Dijkstra over the CSR edge layout of a GridDomain.

Pops are ordered by (label, node index), so ties settle the smallest node
index first and predecessor links are deterministic.
"""
import heapq
import math
from typing import Iterable, Sequence, Tuple

import numpy as np


def shortest_paths(n_nodes: int, ptr: Sequence[int], order: Sequence[int], nbr: Sequence[int],
                   weights: Sequence[float], seeds: Iterable[Tuple[int, float]],
                   cutoff: float = math.inf):
    """Single- or multi-seed shortest paths.

    ptr/order/nbr describe adjacency: the edges leaving node u (in the search
    direction) are order[ptr[u]:ptr[u+1]] and lead to nbr[edge].
    Returns (dist, pred, pred_edge) as numpy arrays; nodes not settled within
    the cutoff get +inf and predecessor -1.
    """
    inf = math.inf
    dist = [inf] * n_nodes
    pred = [-1] * n_nodes
    pred_edge = [-1] * n_nodes
    settled = [False] * n_nodes

    for node, label in seeds:
        if label < dist[node]:
            dist[node] = float(label)
    heap = [(d, u) for u, d in enumerate(dist) if d < inf]
    heapq.heapify(heap)

    while heap:
        d_u, u = heapq.heappop(heap)
        # Skip outdated entries
        if settled[u] or d_u > dist[u]:
            continue
        if d_u > cutoff:
            break
        settled[u] = True
        for k in range(ptr[u], ptr[u + 1]):
            e = order[k]
            v = nbr[e]
            if settled[v]:
                continue
            alt = d_u + weights[e]
            if alt < dist[v]:
                dist[v] = alt
                pred[v] = u
                pred_edge[v] = e
                heapq.heappush(heap, (alt, v))

    dist_arr = np.array(dist)
    pred_arr = np.array(pred, dtype=int)
    pred_edge_arr = np.array(pred_edge, dtype=int)
    unsettled = ~np.array(settled)
    dist_arr[unsettled] = inf
    pred_arr[unsettled] = -1
    pred_edge_arr[unsettled] = -1
    return dist_arr, pred_arr, pred_edge_arr
