"""Space-time cluster combinatorics.

Temporal edges live on a uniform grid of M intervals of length T.
A space cluster is a chain-connected set of same-slice edges; a time
cluster is a run of consecutive slices at one site.  A space-time cluster
bundles space and time clusters whose supports form a connected whole.

Conventions baked into the enumeration:
  * space-cluster sites are restricted to the neighborhood-interior of the
    volume (only those sites carry an interacting drift);
  * time clusters occupy slices 0..M-2 only (one transition-kernel factor
    per intermediate layer);
  * within one cluster, same-slice space clusters are pairwise compatible
    and same-site time clusters are separated by at least one slice
    (they are maximal runs of the expansion).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from math import factorial
from typing import Iterable, List, Sequence, Tuple

from .errors import BudgetError, ValidationError
from .lattice import Neighborhood, Site, Volume, as_site, interior


@dataclass(frozen=True)
class TimeGrid:
    """M intervals of length T covering [0, M*T]."""

    T: float
    M: int

    def __post_init__(self):
        if self.T <= 0 or self.M < 1:
            raise ValidationError("time grid needs T > 0 and M >= 1")

    @property
    def horizon(self) -> float:
        return self.T * self.M

    def to_record(self) -> dict:
        return {"T": self.T, "M": self.M}

    @classmethod
    def from_record(cls, rec) -> "TimeGrid":
        return cls(float(rec["T"]), int(rec["M"]))


@dataclass(frozen=True)
class TemporalEdge:
    """The unit space-time pair (site, I_slice)."""

    site: Site
    slice: int

    def __post_init__(self):
        object.__setattr__(self, "site", as_site(self.site))
        if self.slice < 0:
            raise ValidationError("negative slice index")

    @property
    def vertices(self) -> frozenset:
        return frozenset({(self.site, self.slice), (self.site, self.slice + 1)})


def is_chain_connected(sites: Iterable[Site], nbhd: Neighborhood) -> bool:
    """True iff the sites form one component of the (i+N) overlap graph."""
    sites = [as_site(s) for s in sites]
    if not sites:
        return False
    if len(sites) == 1:
        return True
    reached = {sites[0]}
    frontier = [sites[0]]
    rest = set(sites[1:])
    while frontier:
        cur = frontier.pop()
        hit = {s for s in rest if nbhd.overlaps(cur, s)}
        rest -= hit
        reached |= hit
        frontier.extend(hit)
    return not rest


@dataclass(frozen=True)
class SpaceCluster:
    """Same-slice temporal edges at pairwise chain-connected sites."""

    slice: int
    sites: frozenset

    def __post_init__(self):
        object.__setattr__(self, "sites", frozenset(as_site(s) for s in self.sites))
        if not self.sites:
            raise ValidationError("space cluster must be nonempty")
        if self.slice < 0:
            raise ValidationError("negative slice index")

    @classmethod
    def build(cls, slice: int, sites: Iterable, nbhd: Neighborhood) -> "SpaceCluster":
        cluster = cls(slice, frozenset(sites))
        if not is_chain_connected(cluster.sites, nbhd):
            raise ValidationError("space cluster sites are not chain-connected")
        return cluster

    @property
    def edges(self) -> frozenset:
        return frozenset(TemporalEdge(s, self.slice) for s in self.sites)

    @property
    def size(self) -> int:
        return len(self.sites)

    @property
    def vertices(self) -> frozenset:
        return frozenset(
            (s, j) for s in self.sites for j in (self.slice, self.slice + 1)
        )

    def key(self):
        return (self.slice, tuple(sorted(self.sites)))


@dataclass(frozen=True)
class TimeCluster:
    """A run of consecutive slices start..stop (inclusive) at one site."""

    site: Site
    start: int
    stop: int

    def __post_init__(self):
        object.__setattr__(self, "site", as_site(self.site))
        if self.start < 0 or self.stop < self.start:
            raise ValidationError("time cluster needs 0 <= start <= stop")

    @property
    def slices(self) -> range:
        return range(self.start, self.stop + 1)

    @property
    def edges(self) -> frozenset:
        return frozenset(TemporalEdge(self.site, j) for j in self.slices)

    @property
    def size(self) -> int:
        return self.stop - self.start + 1

    @property
    def vertices(self) -> frozenset:
        return frozenset((self.site, j) for j in range(self.start, self.stop + 2))

    def key(self):
        return (self.site, self.start, self.stop)


@dataclass(frozen=True)
class SpaceTimeCluster:
    """A nonempty collection of space and time clusters."""

    space_clusters: tuple
    time_clusters: tuple
    grid: TimeGrid

    def __post_init__(self):
        sc = tuple(sorted(self.space_clusters, key=lambda g: g.key()))
        tc = tuple(sorted(self.time_clusters, key=lambda g: g.key()))
        object.__setattr__(self, "space_clusters", sc)
        object.__setattr__(self, "time_clusters", tc)
        if not sc and not tc:
            raise ValidationError("space-time cluster must be nonempty")
        for g in sc:
            if g.slice >= self.grid.M:
                raise ValidationError("space cluster slice outside grid")
        for g in tc:
            if g.stop >= self.grid.M - 1:
                raise ValidationError("time cluster slice outside kernel range")

    @property
    def support(self) -> frozenset:
        """All vertices (site, layer) of the constituent edges."""
        verts = frozenset()
        for g in self.space_clusters:
            verts |= g.vertices
        for g in self.time_clusters:
            verts |= g.vertices
        return verts

    @property
    def size(self) -> int:
        """Total number of temporal edges, duplicates counted per constituent."""
        return sum(g.size for g in self.space_clusters) + sum(
            g.size for g in self.time_clusters
        )

    def key(self):
        return (
            tuple(g.key() for g in self.space_clusters),
            tuple(g.key() for g in self.time_clusters),
        )

    def to_record(self) -> dict:
        return {
            "spaceClusters": [
                {"slice": g.slice, "sites": [list(s) for s in sorted(g.sites)]}
                for g in self.space_clusters
            ],
            "timeClusters": [
                {"site": list(g.site), "start": g.start, "stop": g.stop}
                for g in self.time_clusters
            ],
            "grid": self.grid.to_record(),
        }

    @classmethod
    def from_record(cls, rec) -> "SpaceTimeCluster":
        grid = TimeGrid.from_record(rec["grid"])
        sc = tuple(
            SpaceCluster(g["slice"], frozenset(as_site(s) for s in g["sites"]))
            for g in rec["spaceClusters"]
        )
        tc = tuple(
            TimeCluster(as_site(g["site"]), g["start"], g["stop"])
            for g in rec["timeClusters"]
        )
        return cls(sc, tc, grid)


def space_compatible(g1: SpaceCluster, g2: SpaceCluster, nbhd: Neighborhood) -> bool:
    """No edge of g1 is space-connected with an edge of g2."""
    return not any(nbhd.overlaps(a, b) for a in g1.sites for b in g2.sites)


def non_intersecting(
    G1: SpaceTimeCluster, G2: SpaceTimeCluster, nbhd: Neighborhood
) -> bool:
    """Compatible space clusters, disjoint time clusters, disjoint supports."""
    if G1.grid != G2.grid:
        raise ValidationError("clusters live on different grids")
    for a in G1.space_clusters:
        for b in G2.space_clusters:
            if a.slice == b.slice and not space_compatible(a, b, nbhd):
                return False
    edges1 = frozenset().union(*(g.edges for g in G1.time_clusters)) if G1.time_clusters else frozenset()
    edges2 = frozenset().union(*(g.edges for g in G2.time_clusters)) if G2.time_clusters else frozenset()
    if edges1 & edges2:
        return False
    return not (G1.support & G2.support)


def conflicts(G1: SpaceTimeCluster, G2: SpaceTimeCluster, nbhd: Neighborhood) -> bool:
    """Polymer incompatibility: the negation of non_intersecting."""
    return not non_intersecting(G1, G2, nbhd)


def trace(G) -> Volume:
    """Spatial projection of one cluster or of a collection of clusters."""
    if isinstance(G, SpaceTimeCluster):
        return Volume(frozenset(site for site, _ in G.support))
    sites = frozenset()
    for g in G:
        sites |= frozenset(site for site, _ in g.support)
    return Volume(sites)


def _connected_site_subsets(sites: Sequence[Site], nbhd: Neighborhood, k_max: int):
    """All chain-connected subsets of the given sites with size <= k_max."""
    sites = sorted(sites)
    out = []
    for size in range(1, min(k_max, len(sites)) + 1):
        for sub in combinations(sites, size):
            if is_chain_connected(sub, nbhd):
                out.append(frozenset(sub))
    return out


def enumerate_clusters(
    vol: Volume,
    nbhd: Neighborhood,
    grid: TimeGrid,
    k_max: int,
    cap: int = 200_000,
) -> List[SpaceTimeCluster]:
    """All distinct space-time clusters with size <= k_max, in canonical order.

    Space clusters are rooted at interior(vol) sites on slices 0..M-1; time
    clusters at sites of vol on slices 0..M-2.  Raises BudgetError when the
    search exceeds ``cap`` intermediate collections.
    """
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    if not vol.sites:
        return []

    inner = interior(vol, nbhd)
    space_pool = [
        SpaceCluster(j, sub)
        for j in range(grid.M)
        for sub in _connected_site_subsets(inner.sorted_sites(), nbhd, k_max)
    ]
    time_pool = [
        TimeCluster(i, j, j + r)
        for i in vol.sorted_sites()
        for j in range(max(grid.M - 1, 0))
        for r in range(min(k_max, grid.M - 1 - j))
    ]
    pool: list = space_pool + time_pool
    n = len(pool)

    def weight(c) -> int:
        return c.size

    def excluded(a, b) -> bool:
        if isinstance(a, SpaceCluster) and isinstance(b, SpaceCluster):
            return a.slice == b.slice and not space_compatible(a, b, nbhd)
        if isinstance(a, TimeCluster) and isinstance(b, TimeCluster):
            if a.site != b.site:
                return False
            lo, hi = (a, b) if a.start <= b.start else (b, a)
            return hi.start <= lo.stop + 1  # overlapping or adjacent runs
        return False

    def touches(a, b) -> bool:
        return bool(a.vertices & b.vertices)

    results: list = []
    counter = [0]

    def search(start: int, chosen: tuple, total: int):
        for idx in range(start, n):
            cand = pool[idx]
            w = total + weight(cand)
            if w > k_max:
                continue
            if any(excluded(cand, c) for c in chosen):
                continue
            counter[0] += 1
            if counter[0] > cap:
                raise BudgetError(
                    f"cluster enumeration exceeded cap of {cap} collections"
                )
            new = chosen + (cand,)
            if _constituents_connected(new):
                results.append(new)
            search(idx + 1, new, w)

    def _constituents_connected(parts: tuple) -> bool:
        if len(parts) == 1:
            return True
        reached = {0}
        frontier = [0]
        while frontier:
            cur = frontier.pop()
            for other in range(len(parts)):
                if other not in reached and touches(parts[cur], parts[other]):
                    reached.add(other)
                    frontier.append(other)
        return len(reached) == len(parts)

    search(0, (), 0)

    clusters = [
        SpaceTimeCluster(
            tuple(c for c in parts if isinstance(c, SpaceCluster)),
            tuple(c for c in parts if isinstance(c, TimeCluster)),
            grid,
        )
        for parts in results
    ]
    clusters.sort(key=lambda g: (g.size, g.key()))
    return clusters


def _connected_spanning_sign_sum(n: int, edges: List[Tuple[int, int]]) -> int:
    """Sum of (-1)^{|H|} over connected spanning edge subsets H."""
    if n == 1:
        return 1
    total = 0
    m = len(edges)
    for mask in range(1 << m):
        chosen = [edges[k] for k in range(m) if mask >> k & 1]
        if len(chosen) < n - 1:
            continue
        reached = {0}
        frontier = [0]
        adj = {}
        for a, b in chosen:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        while frontier:
            cur = frontier.pop()
            for nxt in adj.get(cur, ()):
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        if len(reached) == n:
            total += -1 if len(chosen) % 2 else 1
    return total


def ursell_coefficient(Gs: Sequence[SpaceTimeCluster], nbhd: Neighborhood) -> Fraction:
    """Ursell coefficient of a multiset of clusters on its conflict graph.

    C = (1 / prod of multiplicity factorials) * sum over connected spanning
    subgraphs of (-1)^{#edges}; zero when the conflict graph is disconnected.
    """
    if not Gs:
        raise ValidationError("ursell_coefficient needs at least one cluster")
    n = len(Gs)
    edges = [
        (i, j) for i, j in combinations(range(n), 2) if conflicts(Gs[i], Gs[j], nbhd)
    ]
    sign_sum = _connected_spanning_sign_sum(n, edges)
    mult: dict = {}
    for g in Gs:
        mult[g.key()] = mult.get(g.key(), 0) + 1
    denom = 1
    for c in mult.values():
        denom *= factorial(c)
    return Fraction(sign_sum, denom)


def is_connected(Gs: Sequence[SpaceTimeCluster], nbhd: Neighborhood) -> bool:
    """True iff the conflict graph on the collection is connected."""
    if not Gs:
        raise ValidationError("is_connected needs a nonempty collection")
    n = len(Gs)
    reached = {0}
    frontier = [0]
    while frontier:
        cur = frontier.pop()
        for other in range(n):
            if other not in reached and conflicts(Gs[cur], Gs[other], nbhd):
                reached.add(other)
                frontier.append(other)
    return len(reached) == n
