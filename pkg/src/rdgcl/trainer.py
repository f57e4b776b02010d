"""Epoch loop: BPR sampling, forward/backward, Adam, early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .evaluation import ndcg_at_k, rank_all, recall_at_k
from .graph import InteractionSet, SparseOperator, build_laplacian, build_normalized_adjacency
from .losses import (AdamState, CLConfig, GradientBuffer, TrainBatch, adam_step, backward, bpr_loss,
                     infonce_loss, l2_penalty, total_loss)
from .model import ForwardTrace, RDGConfig, euler_integrate

log = logging.getLogger(__name__)

VARIANTS = ("full", "eb", "es", "no_cl", "only_diffusion", "only_reaction")

EPOCH_LOG_COLUMNS = ("epoch", "bpr", "cl", "reg", "recall20", "ndcg20", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 2048
    lr: float = 5e-4
    seed: int = 0
    variant: str = "full"
    cl: CLConfig = field(default_factory=CLConfig)
    rdg: RDGConfig = field(default_factory=RDGConfig)
    eval_every: int = 5
    patience: int = 10
    full_matrix_l2: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("epochs >= 0, eval_every >= 1 and patience >= 1 required")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"lr must be finite and > 0, got {self.lr}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def effective(self) -> tuple[RDGConfig, CLConfig]:
        """RDG/CL settings after applying the ablation variant."""
        rdg, cl = self.rdg, self.cl
        if self.variant == "only_diffusion":
            rdg = replace(rdg, reaction=False)
        elif self.variant == "only_reaction":
            rdg = replace(rdg, diffusion=False)
        elif self.variant == "no_cl":
            cl = replace(cl, lambda1=0.0)
        return rdg, cl


@dataclass(frozen=True)
class GraphOperators:
    adj: SparseOperator
    lap: SparseOperator
    num_users: int
    num_items: int

    @classmethod
    def build(cls, inter: InteractionSet, dtype="float64") -> "GraphOperators":
        adj = build_normalized_adjacency(inter)
        lap = build_laplacian(adj)
        if dtype != "float64":
            adj, lap = adj.astype(dtype), lap.astype(dtype)
        return cls(adj, lap, inter.num_users, inter.num_items)


@dataclass
class EpochStats:
    epoch: int
    bpr: float
    cl: float
    reg: float
    total: float
    seconds: float
    recall20: float | None = None
    ndcg20: float | None = None


def init_embeddings(num_nodes: int, dim: int, rng: np.random.Generator, dtype="float64") -> np.ndarray:
    """Xavier-uniform initialisation of the N x D table."""
    bound = np.sqrt(6.0 / (num_nodes + dim))
    return rng.uniform(-bound, bound, size=(num_nodes, dim)).astype(dtype)


def sample_epoch_batches(inter: InteractionSet, batch_size: int, rng: np.random.Generator,
                         max_tries: int = 100) -> list[TrainBatch]:
    """Shuffle all observed pairs into batches and draw one unobserved negative per pair."""
    if len(inter) == 0:
        raise ValueError("no training interactions")
    order = rng.permutation(len(inter))
    users = inter.users[order]
    pos = inter.items[order]
    neg = rng.integers(0, inter.num_items, size=users.size)
    bad = inter.contains(users, neg)
    tries = 1
    while bad.any() and tries < max_tries:
        idx = np.flatnonzero(bad)
        neg[idx] = rng.integers(0, inter.num_items, size=idx.size)
        bad[idx] = inter.contains(users[idx], neg[idx])
        tries += 1
    if bad.any():
        log.warning("skipping %d pairs whose users observed (nearly) every item", int(bad.sum()))
        keep = ~bad
        users, pos, neg = users[keep], pos[keep], neg[keep]
    return [TrainBatch(users[i:i + batch_size], pos[i:i + batch_size], neg[i:i + batch_size])
            for i in range(0, users.size, batch_size)]


def contrast_views(trace: ForwardTrace, variant: str) -> tuple[str, str] | None:
    if variant == "no_cl":
        return None
    if variant == "eb":
        return ("final", "view_b")
    if variant == "es":
        return ("final", "view_s")
    return ("view_b", "view_s")


def compute_objective(e0: np.ndarray, batch: TrainBatch, ops: GraphOperators,
                      cfg: TrainConfig) -> tuple[GradientBuffer, ForwardTrace]:
    """Loss breakdown and exact dL/dE(0) for one batch under ``cfg.variant``."""
    rdg, cl = cfg.effective()
    trace = euler_integrate(rdg, ops.lap, ops.adj, e0)
    heads = {"final": None, "view_b": None, "view_s": None}

    bpr, g_final = bpr_loss(trace.final, batch, ops.num_users)
    heads["final"] = g_final

    cl_loss = 0.0
    pair = contrast_views(trace, cfg.variant)
    if pair is not None and cl.lambda1 > 0:
        a_name, b_name = pair
        cl_loss, ga, gb = infonce_loss(getattr(trace, a_name), getattr(trace, b_name), batch,
                                       ops.num_users, cl.tau)
        for name, g in ((a_name, ga), (b_name, gb)):
            g = cl.lambda1 * g
            heads[name] = g if heads[name] is None else heads[name] + g

    reg, g_reg = l2_penalty(e0, batch, ops.num_users, cfg.full_matrix_l2)
    grad = backward(trace, heads["final"], heads["view_b"], heads["view_s"])
    grad += cl.lambda2 * g_reg
    total = total_loss(bpr, cl_loss, reg, cl)
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite loss (bpr={bpr}, cl={cl_loss}, reg={reg})")
    return GradientBuffer(grad, bpr, cl_loss, reg, total), trace


@dataclass
class TrainState:
    embeddings: np.ndarray
    adam: AdamState
    ops: GraphOperators


def train_step(cfg: TrainConfig, state: TrainState, batch: TrainBatch) -> GradientBuffer:
    buf, _ = compute_objective(state.embeddings, batch, state.ops, cfg)
    adam_step(state.embeddings, buf.grad, state.adam)
    return buf


def propagate(e0: np.ndarray, ops: GraphOperators, cfg: TrainConfig) -> ForwardTrace:
    rdg, _ = cfg.effective()
    return euler_integrate(rdg, ops.lap, ops.adj, e0)


@dataclass
class FitResult:
    embeddings: np.ndarray
    history: list[EpochStats]
    best_epoch: int | None
    ops: GraphOperators


def _write_epoch_log(path: Path, history: list[EpochStats]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_LOG_COLUMNS)
        for s in history:
            w.writerow([s.epoch, repr(s.bpr), repr(s.cl), repr(s.reg),
                        "" if s.recall20 is None else repr(s.recall20),
                        "" if s.ndcg20 is None else repr(s.ndcg20), f"{s.seconds:.6f}"])


def fit(cfg: TrainConfig, train: InteractionSet, valid: InteractionSet | None = None,
        log_path: str | Path | None = None, ops: GraphOperators | None = None) -> FitResult:
    """Train E(0); returns the snapshot with the best validation Recall@20.

    Without a (non-empty) validation set early stopping is off and the last
    epoch's table is returned.
    """
    rng = np.random.default_rng(cfg.seed)
    ops = ops or GraphOperators.build(train, cfg.dtype)
    state = TrainState(init_embeddings(train.num_nodes, cfg.rdg.dim, rng, cfg.dtype), AdamState(lr=cfg.lr), ops)
    use_valid = valid is not None and len(valid) > 0
    if not use_valid:
        log.warning("no validation interactions: early stopping disabled")

    history: list[EpochStats] = []
    best, best_epoch, bad_evals = -np.inf, None, 0
    best_table = state.embeddings.copy()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        batches = sample_epoch_batches(train, cfg.batch_size, rng)
        for batch in batches:
            buf = train_step(cfg, state, batch)
            sums += (buf.bpr, buf.cl, buf.reg, buf.total)
        means = sums / max(len(batches), 1)
        stats = EpochStats(epoch, *map(float, means), seconds=0.0)

        last = epoch == cfg.epochs - 1
        if use_valid and ((epoch + 1) % cfg.eval_every == 0 or last):
            final = propagate(state.embeddings, ops, cfg).final
            lists = rank_all(final, train, 20)
            stats.recall20 = recall_at_k(lists, valid, 20)
            stats.ndcg20 = ndcg_at_k(lists, valid, 20)
            if stats.recall20 > best:
                best, best_epoch, bad_evals = stats.recall20, epoch, 0
                best_table = state.embeddings.copy()
            else:
                bad_evals += 1
        stats.seconds = time.perf_counter() - t0
        history.append(stats)
        log.info("epoch %d bpr=%.5f cl=%.5f reg=%.3f recall20=%s", epoch, stats.bpr, stats.cl, stats.reg,
                 stats.recall20)
        if use_valid and bad_evals >= cfg.patience:
            log.info("early stop at epoch %d (best epoch %s)", epoch, best_epoch)
            break

    if log_path is not None:
        _write_epoch_log(Path(log_path), history)
    table = best_table if use_valid and best_epoch is not None else state.embeddings
    return FitResult(table, history, best_epoch, ops)
