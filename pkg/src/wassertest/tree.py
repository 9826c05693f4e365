"""Tree metric built from a net hierarchy, with a closed-form transport value.

The tree has the points of the space as leaves and one fresh internal node
per (level, center) pair; a point serving as a center on several levels
appears once per level.  Edges:

    leaf x            -> node (l, nearest level-l center of x), weight 2**l
    node (i, c)       -> node (i+1, parent center of c),        weight 2**(i+1)

The single level-r center is the root.  The tree distance d_T(x, y) is the
weight of the unique tree path; it dominates the ground distance pointwise,
because the path from x to y expands into a chain of hops of length at most
2**l, ..., 2**j, 2**j, ..., 2**l through the lowest common ancestor level j,
and the ground metric obeys the triangle inequality along that chain.

For distributions p, q pushed to the leaves, the transport cost under d_T
has an exact decomposition: each edge carries exactly the subtree mass
imbalance, so

    W_{d_T}(p, q) = 2**l * L1(p, q) + sum_{i=l}^{r-1} 2**(i+1) * L1(p_i~, q_i~)

where p_i~ is the leaf mass aggregated at the level-i nodes.  d_T is
evaluated on demand from ancestor chains and never materialized as a
matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LevelOutOfRange, SpaceMismatch
from .metric import Distribution, l1_distance
from .nets import NetHierarchy


@dataclass(frozen=True)
class TreeEmbedding:
    """Ancestor-chain representation of the hierarchy tree.

    ``chains[k][x]`` is the ordinal (into level l+k's centers) of the
    level-(l+k) ancestor of leaf x; chains compose the leaf assignment with
    the parent maps, which is what the tree structure dictates.
    """

    hierarchy: NetHierarchy
    chains: tuple[np.ndarray, ...]

    @property
    def l(self) -> int:
        return self.hierarchy.l

    @property
    def r(self) -> int:
        return self.hierarchy.r

    @property
    def num_leaves(self) -> int:
        return self.hierarchy.space.n

    @property
    def node_count(self) -> int:
        """Leaves plus one internal node per (level, center) pair."""
        return self.num_leaves + sum(lv.size for lv in self.hierarchy.levels)

    def ancestor(self, x: int, i: int) -> int:
        """Ordinal of leaf x's ancestor at level i."""
        if not self.l <= i <= self.r:
            raise LevelOutOfRange(f"level {i} outside [{self.l}, {self.r}]")
        return int(self.chains[i - self.l][x])


def embed(hierarchy: NetHierarchy) -> TreeEmbedding:
    chains = [hierarchy.levels[0].assign]
    for k in range(hierarchy.num_levels - 1):
        chains.append(hierarchy.parents[k][chains[-1]])
    return TreeEmbedding(hierarchy=hierarchy, chains=tuple(chains))


def tree_distance(tree: TreeEmbedding, x: int, y: int) -> float:
    """Path weight between leaves x and y: 2 * (2**l + ... + 2**j) with j
    the level of their lowest common ancestor; 0 when x == y."""
    if x == y:
        return 0.0
    l = tree.l
    for k, chain in enumerate(tree.chains):
        if chain[x] == chain[y]:
            j = l + k
            return 2.0 * (2.0 ** (j + 1) - 2.0 ** l)
    raise AssertionError("leaves do not meet at the root; hierarchy is malformed")


@dataclass(frozen=True)
class ProjectedDistribution:
    """Leaf mass aggregated at the level-i tree nodes."""

    level: int
    mass: np.ndarray


def project(tree: TreeEmbedding, p: Distribution, i: int) -> ProjectedDistribution:
    if not p.space.same_as(tree.hierarchy.space):
        raise SpaceMismatch("distribution not on the embedded space")
    if not tree.l <= i <= tree.r:
        raise LevelOutOfRange(f"level {i} outside [{tree.l}, {tree.r}]")
    chain = tree.chains[i - tree.l]
    size = tree.hierarchy.level(i).size
    mass = np.bincount(chain, weights=p.mass, minlength=size)
    mass.setflags(write=False)
    return ProjectedDistribution(level=i, mass=mass)


def tree_wasserstein(tree: TreeEmbedding, p: Distribution, q: Distribution) -> float:
    """Closed-form transport cost under the tree metric."""
    if not (p.space.same_as(tree.hierarchy.space) and q.space.same_as(tree.hierarchy.space)):
        raise SpaceMismatch("distributions not on the embedded space")
    l, r = tree.l, tree.r
    total = 2.0 ** l * l1_distance(p, q)
    for i in range(l, r):
        pm = project(tree, p, i).mass
        qm = project(tree, q, i).mass
        total += 2.0 ** (i + 1) * float(np.abs(pm - qm).sum())
    return total


def level_l1_gaps(tree: TreeEmbedding, p: Distribution, q: Distribution) -> list[tuple[int, float]]:
    """Exact L1 distances between the level projections, for i in [l, r-1]."""
    gaps = []
    for i in range(tree.l, tree.r):
        pm = project(tree, p, i).mass
        qm = project(tree, q, i).mass
        gaps.append((i, float(np.abs(pm - qm).sum())))
    return gaps


def export_tree(tree: TreeEmbedding) -> str:
    """Indented text rendering: one line per node with parent and edge weight."""
    h = tree.hierarchy
    lines: list[str] = []
    root_center = int(h.levels[-1].centers[0])
    lines.append(f"node level={h.r} center={root_center} root")

    def children_of(i: int, ordinal: int, depth: int) -> None:
        indent = "  " * depth
        if i == h.l:
            leaf_weight = 2.0 ** h.l
            for x in np.flatnonzero(tree.chains[0] == ordinal):
                lines.append(f"{indent}leaf point={int(x)} weight={leaf_weight}")
            return
        below = i - 1
        parent_map = h.parent_map(below)
        weight = 2.0 ** i
        for child_ord in np.flatnonzero(parent_map == ordinal):
            center = int(h.level(below).centers[child_ord])
            lines.append(f"{indent}node level={below} center={center} weight={weight}")
            children_of(below, int(child_ord), depth + 1)

    children_of(h.r, 0, 1)
    return "\n".join(lines) + "\n"
