"""Interconnection topology and locality index sets.

A networked linear system ``x(t+1) = A x(t) + B u(t)`` is split into N
subsystems with block-partitioned dynamics.  The directed interconnection
graph carries an arrow ``j -> i`` whenever block ``(i, j)`` of A or B is
nonzero, i.e. whenever subsystem j influences subsystem i.  Bounded-hop
incoming/outgoing sets of that graph decide which entries of the closed-loop
response maps may be nonzero, and therefore which rows, columns and coupled
slices of those maps each subsystem owns or needs.

Conventions used throughout the package:

* subsystem ids are 1-based (``1 <= i <= N``);
* row/column indices into assembled matrices are 0-based;
* the stacked response map has ``n*(T+1)`` state rows (time-major:
  all components at t=0, then t=1, ...) followed by ``p*T`` input rows
  (time-major), and ``n`` columns, one per initial-state component;
* state rows are localized to ``d`` hops and input rows to ``d+1`` hops.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class ModelValidationError(ValueError):
    """Inconsistent block dimensions or malformed model data."""


def _as_block_dict(blocks, name):
    out = {}
    for key, val in blocks.items():
        i, j = key
        out[(int(i), int(j))] = np.asarray(val, dtype=float)
    return out


@dataclass(frozen=True)
class NetworkModel:
    """Block-partitioned system matrices with per-subsystem dimensions.

    ``a_blocks`` and ``b_blocks`` map 1-based ``(i, j)`` pairs to dense
    blocks; absent blocks are exactly zero.  ``a_blocks[(i, j)]`` must have
    shape ``(state_dims[i-1], state_dims[j-1])`` and ``b_blocks[(i, j)]``
    shape ``(state_dims[i-1], input_dims[j-1])``.
    """

    state_dims: tuple
    input_dims: tuple
    a_blocks: dict = field(default_factory=dict)
    b_blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "state_dims", tuple(int(m) for m in self.state_dims))
        object.__setattr__(self, "input_dims", tuple(int(m) for m in self.input_dims))
        object.__setattr__(self, "a_blocks", _as_block_dict(self.a_blocks, "a_blocks"))
        object.__setattr__(self, "b_blocks", _as_block_dict(self.b_blocks, "b_blocks"))
        n_sub = len(self.state_dims)
        if len(self.input_dims) != n_sub:
            raise ModelValidationError(
                f"state_dims has {n_sub} subsystems but input_dims has "
                f"{len(self.input_dims)}"
            )
        if any(m <= 0 for m in self.state_dims):
            raise ModelValidationError("every subsystem needs at least one state")
        if any(m < 0 for m in self.input_dims):
            raise ModelValidationError("input dimensions must be nonnegative")
        for (i, j), blk in self.a_blocks.items():
            self._check_ids(i, j)
            want = (self.state_dims[i - 1], self.state_dims[j - 1])
            if blk.shape != want:
                raise ModelValidationError(
                    f"a_blocks[({i},{j})] has shape {blk.shape}, expected {want}"
                )
        for (i, j), blk in self.b_blocks.items():
            self._check_ids(i, j)
            want = (self.state_dims[i - 1], self.input_dims[j - 1])
            if blk.shape != want:
                raise ModelValidationError(
                    f"b_blocks[({i},{j})] has shape {blk.shape}, expected {want}"
                )

    def _check_ids(self, i, j):
        n_sub = len(self.state_dims)
        if not (1 <= i <= n_sub and 1 <= j <= n_sub):
            raise ModelValidationError(
                f"block key ({i},{j}) outside 1..{n_sub}"
            )

    @property
    def n_subsystems(self) -> int:
        return len(self.state_dims)

    @property
    def n_states(self) -> int:
        return sum(self.state_dims)

    @property
    def n_inputs(self) -> int:
        return sum(self.input_dims)

    @property
    def state_offsets(self) -> tuple:
        offs, acc = [], 0
        for m in self.state_dims:
            offs.append(acc)
            acc += m
        return tuple(offs)

    @property
    def input_offsets(self) -> tuple:
        offs, acc = [], 0
        for m in self.input_dims:
            offs.append(acc)
            acc += m
        return tuple(offs)

    def state_indices(self, i: int) -> np.ndarray:
        """Global state-component indices owned by subsystem ``i``."""
        off = self.state_offsets[i - 1]
        return np.arange(off, off + self.state_dims[i - 1])

    def input_indices(self, i: int) -> np.ndarray:
        off = self.input_offsets[i - 1]
        return np.arange(off, off + self.input_dims[i - 1])

    def full_a(self) -> np.ndarray:
        """Assemble the dense n x n state matrix."""
        a = np.zeros((self.n_states, self.n_states))
        for (i, j), blk in self.a_blocks.items():
            a[np.ix_(self.state_indices(i), self.state_indices(j))] = blk
        return a

    def full_b(self) -> np.ndarray:
        """Assemble the dense n x p input matrix."""
        b = np.zeros((self.n_states, self.n_inputs))
        for (i, j), blk in self.b_blocks.items():
            b[np.ix_(self.state_indices(i), self.input_indices(j))] = blk
        return b


@dataclass(frozen=True)
class Graph:
    """Directed interconnection graph over 1-based subsystem ids.

    An edge ``(i, j)`` records that j influences i, i.e. the arrow runs
    ``j -> i``.  ``successors[j]`` therefore lists who j influences and
    ``predecessors[i]`` lists who influences i.  Every vertex implicitly
    belongs to its own in/out sets regardless of self-loop edges.
    """

    n_vertices: int
    edges: frozenset

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset((int(i), int(j)) for i, j in self.edges))
        for i, j in self.edges:
            if not (1 <= i <= self.n_vertices and 1 <= j <= self.n_vertices):
                raise ModelValidationError(f"edge ({i},{j}) outside 1..{self.n_vertices}")
        succ = {v: set() for v in range(1, self.n_vertices + 1)}
        pred = {v: set() for v in range(1, self.n_vertices + 1)}
        for i, j in self.edges:
            succ[j].add(i)
            pred[i].add(j)
        object.__setattr__(self, "_succ", succ)
        object.__setattr__(self, "_pred", pred)

    def successors(self, v: int) -> frozenset:
        return frozenset(self._succ[v])

    def predecessors(self, v: int) -> frozenset:
        return frozenset(self._pred[v])


def build_graph(model: NetworkModel) -> Graph:
    """Interconnection graph from the nonzero block support of (A, B).

    A block that is present but identically zero contributes no edge: the
    edge set matches the exact nonzero support.
    """
    edges = set()
    for (i, j), blk in model.a_blocks.items():
        if np.any(blk != 0.0):
            edges.add((i, j))
    for (i, j), blk in model.b_blocks.items():
        if np.any(blk != 0.0):
            edges.add((i, j))
    return Graph(n_vertices=model.n_subsystems, edges=frozenset(edges))


def _bfs(adj: dict, start: int, depth: int) -> frozenset:
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        v, dist = frontier.popleft()
        if dist == depth:
            continue
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                frontier.append((w, dist + 1))
    return frozenset(seen)


def d_in_set(graph: Graph, i: int, d: int) -> frozenset:
    """Subsystems whose influence reaches ``i`` within ``d`` hops (incl. i)."""
    if not 1 <= i <= graph.n_vertices:
        raise IndexError(f"subsystem id {i} outside 1..{graph.n_vertices}")
    if d < 0:
        raise ValueError("hop count must be nonnegative")
    return _bfs(graph._pred, i, d)


def d_out_set(graph: Graph, i: int, d: int) -> frozenset:
    """Subsystems that ``i``'s influence reaches within ``d`` hops (incl. i)."""
    if not 1 <= i <= graph.n_vertices:
        raise IndexError(f"subsystem id {i} outside 1..{graph.n_vertices}")
    if d < 0:
        raise ValueError("hop count must be nonnegative")
    return _bfs(graph._succ, i, d)


@dataclass(frozen=True)
class SubsystemIndex:
    """Index bookkeeping for one subsystem's share of the response map.

    rows            global response-map rows owned by the subsystem (its state
                    rows for t = 0..T, then its input rows for t = 0..T-1)
    row_is_state    per-row flag (True for state rows)
    row_time        per-row time index
    row_component   per-row global state/input component index
    cols            global columns owned (its initial-state components)
    row_cols        coupled column set for the row partition (state columns of
                    the (d+1)-hop incoming set, ascending)
    col_rows        coupled row set for the column partition (state rows of
                    the d-hop outgoing set plus input rows of the (d+1)-hop
                    outgoing set, ascending)
    row_mask        boolean (len(rows), len(row_cols)); True where the entry
                    may be nonzero.  State rows only reach columns of the
                    d-hop incoming set, so some of their entries are masked.
    state_col_positions  positions within row_cols that state rows may touch
    """

    sub_id: int
    rows: np.ndarray
    row_is_state: np.ndarray
    row_time: np.ndarray
    row_component: np.ndarray
    cols: np.ndarray
    row_cols: np.ndarray
    col_rows: np.ndarray
    row_mask: np.ndarray
    state_col_positions: np.ndarray


@dataclass(frozen=True)
class LocalityIndex:
    """Locality sets, ownership partitions and sparsity masks for one (d, T).

    ``in_sets``/``out_sets`` hold the d-hop sets, ``in_sets_ext``/
    ``out_sets_ext`` the (d+1)-hop sets used by input rows and by the
    exchange footprint.  ``mask_x`` (n x n) and ``mask_u`` (p x n) are the
    per-component sparsity masks of a single time block; ``phi_mask`` is the
    full stacked mask of the response map (same mask at every time block).
    """

    d: int
    horizon: int
    n_states: int
    n_inputs: int
    in_sets: tuple
    out_sets: tuple
    in_sets_ext: tuple
    out_sets_ext: tuple
    subsystems: tuple
    mask_x: np.ndarray
    mask_u: np.ndarray
    phi_mask: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.n_states * (self.horizon + 1) + self.n_inputs * self.horizon

    def subsystem(self, i: int) -> SubsystemIndex:
        return self.subsystems[i - 1]


def x_row_index(t: int, component: int, n: int) -> int:
    """Global row of state component ``component`` at time ``t``."""
    return t * n + component

def u_row_index(t: int, component: int, n: int, p: int, horizon: int) -> int:
    """Global row of input component ``component`` at time ``t``."""
    return n * (horizon + 1) + t * p + component


def build_locality_index(graph: Graph, model: NetworkModel, d: int, horizon: int) -> LocalityIndex:
    """Derive ownership partitions, coupled slices and masks for locality d.

    State rows are d-localized and input rows (d+1)-localized, so the coupled
    column set of a row partition is the state-column footprint of the
    (d+1)-hop incoming set, with state rows masked down to the d-hop subset.
    """
    if d < 0:
        raise ValueError("locality parameter must be nonnegative")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if graph.n_vertices != model.n_subsystems:
        raise ModelValidationError("graph and model disagree on subsystem count")

    n_sub = model.n_subsystems
    n, p, t_hor = model.n_states, model.n_inputs, horizon

    in_sets = tuple(d_in_set(graph, i, d) for i in range(1, n_sub + 1))
    out_sets = tuple(d_out_set(graph, i, d) for i in range(1, n_sub + 1))
    in_ext = tuple(d_in_set(graph, i, d + 1) for i in range(1, n_sub + 1))
    out_ext = tuple(d_out_set(graph, i, d + 1) for i in range(1, n_sub + 1))

    mask_x = np.zeros((n, n), dtype=bool)
    mask_u = np.zeros((p, n), dtype=bool)
    for i in range(1, n_sub + 1):
        xi = model.state_indices(i)
        ui = model.input_indices(i)
        for j in in_sets[i - 1]:
            mask_x[np.ix_(xi, model.state_indices(j))] = True
        for j in in_ext[i - 1]:
            if len(ui):
                mask_u[np.ix_(ui, model.state_indices(j))] = True

    phi_mask = np.vstack(
        [np.tile(mask_x, (t_hor + 1, 1)), np.tile(mask_u, (t_hor, 1))]
        if p
        else [np.tile(mask_x, (t_hor + 1, 1))]
    )

    subsystems = []
    for i in range(1, n_sub + 1):
        xi = model.state_indices(i)
        ui = model.input_indices(i)

        x_rows = np.concatenate([t * n + xi for t in range(t_hor + 1)])
        u_rows = (
            np.concatenate([n * (t_hor + 1) + t * p + ui for t in range(t_hor)])
            if len(ui)
            else np.array([], dtype=int)
        )
        rows = np.concatenate([x_rows, u_rows])
        row_is_state = np.concatenate(
            [np.ones(len(x_rows), dtype=bool), np.zeros(len(u_rows), dtype=bool)]
        )
        row_time = np.concatenate(
            [np.repeat(np.arange(t_hor + 1), len(xi)),
             np.repeat(np.arange(t_hor), len(ui))]
        )
        row_component = np.concatenate([np.tile(xi, t_hor + 1), np.tile(ui, t_hor)])

        cols = xi.copy()
        row_cols = np.sort(np.concatenate([model.state_indices(j) for j in sorted(in_ext[i - 1])]))
        state_cols = np.sort(np.concatenate([model.state_indices(j) for j in sorted(in_sets[i - 1])]))
        state_col_positions = np.searchsorted(row_cols, state_cols)

        row_mask = np.zeros((len(rows), len(row_cols)), dtype=bool)
        row_mask[~row_is_state, :] = True
        row_mask[np.ix_(row_is_state, state_col_positions)] = True

        cx = [t * n + model.state_indices(j) for t in range(t_hor + 1) for j in sorted(out_sets[i - 1])]
        cu = [
            n * (t_hor + 1) + t * p + model.input_indices(j)
            for t in range(t_hor)
            for j in sorted(out_ext[i - 1])
            if model.input_dims[j - 1]
        ]
        col_rows = np.sort(np.concatenate(cx + cu)) if (cx or cu) else np.array([], dtype=int)

        subsystems.append(
            SubsystemIndex(
                sub_id=i,
                rows=rows,
                row_is_state=row_is_state,
                row_time=row_time,
                row_component=row_component,
                cols=cols,
                row_cols=row_cols,
                col_rows=col_rows,
                row_mask=row_mask,
                state_col_positions=state_col_positions,
            )
        )

    return LocalityIndex(
        d=d,
        horizon=t_hor,
        n_states=n,
        n_inputs=p,
        in_sets=in_sets,
        out_sets=out_sets,
        in_sets_ext=in_ext,
        out_sets_ext=out_ext,
        subsystems=tuple(subsystems),
        mask_x=mask_x,
        mask_u=mask_u,
        phi_mask=phi_mask,
    )
