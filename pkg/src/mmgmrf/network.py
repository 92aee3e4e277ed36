"""Road network, (link, state) variable indexing and the GMRF edge pattern."""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import UnknownLink, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoadNetwork:
    """Directed link graph.

    Links are dense integers ``0..n-1``; ``downstream[l]`` lists the links a
    vehicle can enter after leaving ``l``.
    """

    downstream: tuple
    modes: np.ndarray
    length: np.ndarray
    components: int = field(default=1, compare=False)

    def __post_init__(self):
        n = len(self.downstream)
        modes = np.asarray(self.modes, dtype=np.int64)
        length = np.asarray(self.length, dtype=float)
        if modes.shape != (n,) or length.shape != (n,):
            raise ValidationError("modes and length must have one entry per link")
        if n and modes.min() < 1:
            raise ValidationError("every link needs at least one mode")
        down = tuple(tuple(int(v) for v in row) for row in self.downstream)
        for l, row in enumerate(down):
            for v in row:
                if not 0 <= v < n:
                    raise UnknownLink(v, f"link {l} references unknown downstream link {v}")
        object.__setattr__(self, "downstream", down)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "length", length)
        ncomp = connected_components(self.adjacency(), directed=True,
                                     connection="weak")[0] if n else 0
        object.__setattr__(self, "components", int(ncomp))
        if ncomp > 1:
            log.warning("road network has %d disconnected components", ncomp)

    @classmethod
    def from_downstream(cls, downstream, length=None, m=2):
        n = len(downstream)
        modes = np.full(n, m, dtype=np.int64) if np.isscalar(m) else np.asarray(m)
        length = np.full(n, 100.0) if length is None else np.asarray(length, dtype=float)
        return cls(tuple(downstream), modes, length)

    @property
    def n_links(self):
        return len(self.downstream)

    def adjacency(self):
        """Directed link-to-link adjacency as a CSR matrix."""
        n = self.n_links
        rows = [l for l, row in enumerate(self.downstream) for _ in row]
        cols = [v for row in self.downstream for v in row]
        return sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))

    @property
    def upstream(self):
        up = [[] for _ in range(self.n_links)]
        for l, row in enumerate(self.downstream):
            for v in row:
                up[v].append(l)
        return tuple(tuple(u) for u in up)

    def is_adjacent(self, u, l):
        return l in self.downstream[u]

    def check_link(self, l):
        if not 0 <= int(l) < self.n_links:
            raise UnknownLink(l)

    def check_path(self, path):
        for l in path:
            self.check_link(l)
        for u, l in zip(path[:-1], path[1:]):
            if not self.is_adjacent(u, l):
                raise ValidationError(f"links {u} and {l} are not adjacent")


@dataclass(frozen=True)
class VariableIndex:
    """Bijection between (link, state) pairs and variable ids ``0..d-1``."""

    offset: np.ndarray
    var_link: np.ndarray
    var_state: np.ndarray

    @property
    def d(self):
        return int(self.var_link.shape[0])

    def beta(self, link, state):
        return self.offset[link] + state

    def inverse(self, var):
        return int(self.var_link[var]), int(self.var_state[var])

    def link_vars(self, link):
        return np.arange(self.offset[link], self.offset[link + 1])


def build_variable_index(network):
    modes = network.modes
    offset = np.zeros(network.n_links + 1, dtype=np.int64)
    np.cumsum(modes, out=offset[1:])
    var_link = np.repeat(np.arange(network.n_links, dtype=np.int64), modes)
    var_state = np.arange(offset[-1], dtype=np.int64) - offset[var_link]
    return VariableIndex(offset=offset, var_link=var_link, var_state=var_state)


@dataclass(frozen=True)
class EdgePattern:
    """Symmetric sparsity pattern of the precision matrix, diagonal included.

    ``matrix`` is a CSC boolean matrix holding both triangles.
    """

    matrix: sp.csc_matrix

    @property
    def d(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return int(self.matrix.nnz)

    def pairs(self):
        """Unordered off-diagonal pairs ``(u, v)`` with ``u < v`` as two arrays."""
        coo = sp.triu(self.matrix, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)

    def __contains__(self, uv):
        u, v = uv
        return bool(self.matrix[u, v])

    def edges(self):
        """Set of unordered pairs including self-pairs, as ``(min, max)`` tuples."""
        coo = sp.triu(self.matrix).tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))

    def average_degree(self):
        return (self.nnz - self.d) / max(self.d, 1)

    def without(self, rows, cols):
        """Pattern with the given off-diagonal pairs removed (both triangles)."""
        if len(rows) == 0:
            return self
        d = self.d
        drop = sp.csc_matrix((np.ones(2 * len(rows), dtype=np.int8),
                              (np.r_[rows, cols], np.r_[cols, rows])), shape=(d, d))
        M = self.matrix.astype(np.int8) - drop.astype(bool).multiply(self.matrix).astype(np.int8)
        M.eliminate_zeros()
        return EdgePattern(sp.csc_matrix(M.astype(bool)))


def build_edge_pattern(network, index):
    """(β(l,s), β(l',s')) is an edge iff l == l' or l, l' are adjacent either way."""
    A = network.adjacency()
    link_graph = (A + A.T + sp.eye(network.n_links, dtype=np.int8, format="csr")).astype(bool)
    # expand link-level pattern to variables: B^T G B with B the link->var incidence
    d = index.d
    B = sp.csr_matrix((np.ones(d, dtype=np.int8), (index.var_link, np.arange(d))),
                      shape=(network.n_links, d))
    M = (B.T @ link_graph.astype(np.int8) @ B).astype(bool)
    return EdgePattern(sp.csc_matrix(M))


def grid_network(width, height, m=2, block_length=200.0, rng=None):
    """Directed 4-neighbour grid of ``width x height`` intersections.

    Every street segment carries one link per direction, so the link count is
    ``2 * (2*W*H - W - H)``.  Link lengths are ``block_length`` scaled by a
    random factor in [0.75, 1.25] when ``rng`` is given.
    """
    def node(x, y):
        return y * width + x

    links = []
    for y in range(height):
        for x in range(width):
            if x + 1 < width:
                links.append((node(x, y), node(x + 1, y)))
                links.append((node(x + 1, y), node(x, y)))
            if y + 1 < height:
                links.append((node(x, y), node(x, y + 1)))
                links.append((node(x, y + 1), node(x, y)))
    out_of = {}
    for i, (a, _) in enumerate(links):
        out_of.setdefault(a, []).append(i)
    downstream = [tuple(out_of.get(b, ())) for (_, b) in links]
    n = len(links)
    if rng is None:
        length = np.full(n, float(block_length))
    else:
        length = block_length * rng.uniform(0.75, 1.25, size=n)
    return RoadNetwork.from_downstream(downstream, length=length, m=m)


def load_network(path, m=2):
    """Read the network CSV (``link_id,length_m,downstream_ids``).

    An optional ``modes`` column overrides ``m`` per link.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"link_id", "length_m", "downstream_ids"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"network file missing columns: {sorted(missing)}")
        for rec in reader:
            rows.append(rec)
    ids = [int(r["link_id"]) for r in rows]
    if sorted(ids) != list(range(len(ids))):
        raise ValidationError("link ids must be dense 0..n-1")
    n = len(ids)
    downstream = [()] * n
    length = np.zeros(n)
    modes = np.full(n, m, dtype=np.int64)
    for r, l in zip(rows, ids):
        ds = r["downstream_ids"].strip()
        downstream[l] = tuple(int(v) for v in ds.split(";")) if ds else ()
        length[l] = float(r["length_m"])
        if r.get("modes"):
            modes[l] = int(r["modes"])
    return RoadNetwork(tuple(downstream), modes, length)


def save_network(network, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        uniform = bool(np.all(network.modes == network.modes[0])) if network.n_links else True
        header = ["link_id", "length_m", "downstream_ids"] + ([] if uniform else ["modes"])
        w.writerow(header)
        for l in range(network.n_links):
            row = [l, repr(float(network.length[l])),
                   ";".join(str(v) for v in network.downstream[l])]
            if not uniform:
                row.append(int(network.modes[l]))
            w.writerow(row)
