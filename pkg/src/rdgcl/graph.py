"""Bipartite interaction graph and its normalized sparse operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed interaction data or incompatible operator shapes."""


@dataclass(frozen=True)
class InteractionSet:
    """Deduplicated implicit-feedback pairs over a fixed user/item catalog.

    ``user_ids`` and ``item_ids`` hold the external tokens in index order, so
    ``user_ids[u]`` is the original id of dense user index ``u``.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()

    def __post_init__(self):
        users = np.array(self.users, dtype=np.int64)
        items = np.array(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise GraphError("users and items must be 1-d arrays of equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise GraphError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise GraphError("item index out of range")
        codes = users * self.num_items + items
        if np.unique(codes).size != codes.size:
            raise GraphError("duplicate (user, item) pair")
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @cached_property
    def popularity(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    @cached_property
    def user_degree(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    @cached_property
    def codes(self) -> np.ndarray:
        """Sorted ``user * num_items + item`` keys, for vectorized membership tests."""
        return np.sort(self.users * self.num_items + self.items)

    @cached_property
    def user_items(self) -> list[np.ndarray]:
        order = np.lexsort((self.items, self.users))
        splits = np.cumsum(self.user_degree)[:-1]
        return np.split(self.items[order], splits)

    def contains(self, users, items) -> np.ndarray:
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if self.codes.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self.codes, keys), self.codes.size - 1)
        return self.codes[pos] == keys

    def with_pairs(self, users, items) -> "InteractionSet":
        """A copy with extra pairs appended (same catalog)."""
        return InteractionSet(
            self.num_users,
            self.num_items,
            np.concatenate([self.users, np.asarray(users, dtype=np.int64)]),
            np.concatenate([self.items, np.asarray(items, dtype=np.int64)]),
            self.user_ids,
            self.item_ids,
        )

    def to_records(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[v]) for u, v in zip(self.users, self.items)]


def _index(vocab: dict[str, int], token: str) -> int:
    idx = vocab.get(token)
    if idx is None:
        idx = vocab[token] = len(vocab)
    return idx


def build_interactions(
    records: Iterable[tuple[str, str]],
    user_vocab: Mapping[str, int] | None = None,
    item_vocab: Mapping[str, int] | None = None,
) -> InteractionSet:
    """Map (user_id, item_id) tokens to dense indices in first-seen order.

    Passing vocabularies from another split keeps indices aligned across
    train/test files; tokens not yet seen are appended.
    """
    users_v = dict(user_vocab or {})
    items_v = dict(item_vocab or {})
    seen: set[tuple[int, int]] = set()
    us: list[int] = []
    vs: list[int] = []
    count = 0
    for rec in records:
        count += 1
        u, v = _index(users_v, str(rec[0])), _index(items_v, str(rec[1]))
        if (u, v) not in seen:
            seen.add((u, v))
            us.append(u)
            vs.append(v)
    if count == 0:
        raise GraphError("no interaction records")
    return InteractionSet(
        len(users_v),
        len(items_v),
        np.array(us, dtype=np.int64),
        np.array(vs, dtype=np.int64),
        tuple(users_v),
        tuple(items_v),
    )


def parse_interaction_lines(lines: Iterable[str], source: str = "<input>") -> list[tuple[str, str]]:
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise GraphError(f"{source}:{lineno}: expected 'user_id<TAB>item_id', got {line!r}")
        records.append((parts[0], parts[1]))
    return records


def read_interaction_file(path: str | Path) -> list[tuple[str, str]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_interaction_lines(fh, str(path))


def write_interaction_file(path: str | Path, records: Iterable[tuple[str, str]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, v in records:
            fh.write(f"{u}\t{v}\n")


def build_splits(train: Sequence[tuple[str, str]], *others: Sequence[tuple[str, str]]) -> list[InteractionSet]:
    """Build aligned InteractionSets sharing one catalog.

    Ids are numbered in first-seen order over train first, then the other
    splits, so every returned set has identical ``num_users``/``num_items``.
    An empty extra split yields an empty set.
    """
    users_v: dict[str, int] = {}
    items_v: dict[str, int] = {}
    for records in (train, *others):
        for u, v in records:
            _index(users_v, u)
            _index(items_v, v)
    out = [build_interactions(train, users_v, items_v)]
    for records in others:
        if records:
            out.append(build_interactions(records, users_v, items_v))
        else:
            out.append(InteractionSet(len(users_v), len(items_v), np.empty(0, np.int64), np.empty(0, np.int64),
                                      tuple(users_v), tuple(items_v)))
    return out


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Square CSR matrix over the N = users + items node set."""

    dim: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.array(self.row_offsets, dtype=np.int64)
        cols = np.array(self.col_indices, dtype=np.int64)
        vals = np.array(self.values)
        if not np.issubdtype(vals.dtype, np.floating):
            vals = vals.astype(np.float64)
        if offsets.shape != (self.dim + 1,) or offsets[0] != 0 or offsets[-1] != cols.size:
            raise GraphError("row_offsets inconsistent with dim / nnz")
        if np.any(np.diff(offsets) < 0):
            raise GraphError("row_offsets must be monotone")
        if cols.size != vals.size:
            raise GraphError("col_indices and values differ in length")
        if cols.size and (cols.min() < 0 or cols.max() >= self.dim):
            raise GraphError("column index out of range")
        if not np.all(np.isfinite(vals)):
            raise GraphError("non-finite operator value")
        for arr in (offsets, cols, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_csr", sp.csr_matrix((vals, cols, offsets), shape=(self.dim, self.dim)))

    @classmethod
    def from_scipy(cls, mat) -> "SparseOperator":
        csr = sp.csr_matrix(mat)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def astype(self, dtype) -> "SparseOperator":
        return SparseOperator(self.dim, self.row_offsets, self.col_indices, self.values.astype(dtype))

    def is_symmetric(self) -> bool:
        t = self._csr.T.tocsr()
        t.sort_indices()
        return (np.array_equal(t.indptr, self.row_offsets)
                and np.array_equal(t.indices, self.col_indices)
                and np.array_equal(t.data, self.values))

    def __matmul__(self, x):
        return spmm(self, x)


def bipartite_adjacency(inter: InteractionSet) -> sp.csr_matrix:
    """The unnormalized block matrix [[0, R], [R^T, 0]]."""
    n, nu = inter.num_nodes, inter.num_users
    rows = np.concatenate([inter.users, inter.items + nu])
    cols = np.concatenate([inter.items + nu, inter.users])
    data = np.ones(rows.size, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def build_normalized_adjacency(inter: InteractionSet) -> SparseOperator:
    """D̄^{-1/2} (A + I) D̄^{-1/2} with D̄ = D + I."""
    a_bar = bipartite_adjacency(inter) + sp.identity(inter.num_nodes, format="csr")
    deg = np.asarray(a_bar.sum(axis=1)).ravel()
    coo = a_bar.tocoo()
    # integer degree products are exact, so (i, j) and (j, i) get identical values
    vals = 1.0 / np.sqrt(deg[coo.row] * deg[coo.col])
    return SparseOperator.from_scipy(sp.csr_matrix((vals, (coo.row, coo.col)), shape=a_bar.shape))


def build_laplacian(adj: SparseOperator) -> SparseOperator:
    """I - Ã."""
    if not isinstance(adj, SparseOperator):
        raise GraphError("expected a SparseOperator")
    lap = sp.identity(adj.dim, format="csr", dtype=adj.values.dtype) - adj.to_scipy()
    return SparseOperator.from_scipy(lap)


def spmm(op: SparseOperator, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``op @ x``.

    Backed by scipy's CSR kernel, which walks rows in order and accumulates
    each row's nonzeros in stored column order, so results are bit-stable.
    """
    x = np.asarray(x)
    if x.ndim not in (1, 2) or x.shape[0] != op.dim:
        raise GraphError(f"shape mismatch: operator is {op.dim}x{op.dim}, operand has shape {x.shape}")
    return op.to_scipy() @ x
