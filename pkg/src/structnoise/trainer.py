"""Splits, best-validation training loops and the two augmentation schemes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Adam, no_grad, softmax_cross_entropy
from .gin import GinModel, f1_macro, init_model, model_forward
from .graphgen import Graph

_MASK64 = (1 << 64) - 1

# stream ids for derive_seed
NOISE_STREAM = 1
SPLIT_STREAM = 2
INIT_STREAM = 3
AUG_NOISE_STREAM = 4
AUG_ORDER_STREAM = 5


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, *parts: int) -> int:
    """Fold ``parts`` into ``master`` with splitmix64, one round per part."""
    s = splitmix64(master & _MASK64)
    for part in parts:
        s = splitmix64(s ^ (part & _MASK64))
    return s


class InfeasibleSplit(ValueError):
    pass


class TrialFailed(RuntimeError):
    def __init__(self, trial: int, cause: BaseException):
        super().__init__(f"trial {trial} failed: {cause!r}")
        self.trial = trial


@dataclass(frozen=True)
class SplitConfig:
    per_class_train: int = 20
    val_size: int = 200
    test_size: int = 1000
    seed: int = 0
    # shrink the test set to whatever is left instead of failing
    clip_test: bool = False


@dataclass(frozen=True)
class Splits:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray


def make_splits(graph: Graph, config: SplitConfig) -> Splits:
    """Stratified training nodes, then uniform validation and test nodes from the rest."""
    if graph.labels is None:
        raise InfeasibleSplit("graph has no labels")
    rng = np.random.default_rng(config.seed)
    labels = graph.labels
    train = []
    for c in range(graph.num_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < config.per_class_train:
            raise InfeasibleSplit(f"class {c} has {len(members)} nodes, fewer than {config.per_class_train}")
        train.append(rng.permutation(members)[: config.per_class_train])
    train_ids = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.int64)
    pool = np.setdiff1d(np.arange(graph.num_nodes), train_ids)
    test_size = config.test_size
    if config.val_size + test_size > len(pool):
        if not config.clip_test or config.val_size >= len(pool):
            raise InfeasibleSplit(
                f"need {config.val_size} + {test_size} nodes outside training, only {len(pool)} remain"
            )
        test_size = len(pool) - config.val_size
    pool = rng.permutation(pool)
    val_ids = np.sort(pool[: config.val_size])
    test_ids = np.sort(pool[config.val_size : config.val_size + test_size])
    return Splits(train_ids, val_ids, test_ids)


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden_dim: int = 32
    num_layers: int = 3
    eps_gin: float = 0.0
    relu_after_aggregation: bool = True


@dataclass(frozen=True)
class TrialResult:
    test_f1: float
    best_epoch: int  # -1 when no epoch was run
    val_curve: tuple[float, ...]
    seed: int
    best_val_f1: float = float("nan")


# one gradient step: (graph, node ids whose labels enter the loss)
Step = tuple[Graph, np.ndarray]


def _evaluate(graph: Graph, model: GinModel, ids: np.ndarray) -> float:
    with no_grad():
        pred = model_forward(graph, model, training=False).data.argmax(axis=1)
    return f1_macro(pred[ids], graph.labels[ids], model.num_classes)


def fit(
    model: GinModel,
    steps_for_epoch: Callable[[int], Sequence[Step]],
    val: Step,
    test: Step,
    options: TrainOptions,
    seed: int = 0,
    forbidden: Optional[tuple[Graph, np.ndarray]] = None,
) -> TrialResult:
    """Train for ``options.epochs`` epochs keeping the best-validation snapshot.

    Each epoch takes one full-batch Adam step per entry of
    ``steps_for_epoch(epoch)``, then scores the validation nodes in eval mode.
    The earliest epoch with the highest validation F1 wins; its parameters are
    restored before scoring the test nodes. ``forbidden`` names a graph and node
    ids that must never appear in a loss mask.
    """
    opt = Adam(model.parameters(), lr=options.lr, weight_decay=options.weight_decay)
    best_val = -1.0
    best_epoch = -1
    best_state = None
    curve = []
    for epoch in range(options.epochs):
        for graph, ids in steps_for_epoch(epoch):
            if forbidden is not None and graph is forbidden[0]:
                if np.intersect1d(ids, forbidden[1]).size:
                    raise AssertionError("evaluation nodes leaked into a training loss")
            opt.zero_grad()
            logits = model_forward(graph, model, training=True)
            loss = softmax_cross_entropy(logits, graph.labels, ids)
            loss.backward()
            opt.step()
        score = _evaluate(val[0], model, val[1])
        curve.append(score)
        if score > best_val:
            best_val, best_epoch, best_state = score, epoch, model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    test_f1 = _evaluate(test[0], model, test[1])
    return TrialResult(test_f1, best_epoch, tuple(curve), seed, best_val if best_epoch >= 0 else float("nan"))


def _new_model(graph: Graph, options: TrainOptions, init_seed: int) -> GinModel:
    return init_model(
        init_seed,
        num_classes=graph.num_classes,
        hidden_dim=options.hidden_dim,
        num_layers=options.num_layers,
        eps_gin=options.eps_gin,
        relu_after_aggregation=options.relu_after_aggregation,
    )


def _held_out(splits: Splits) -> np.ndarray:
    return np.union1d(splits.val_ids, splits.test_ids)


def train_baseline(
    graph: Graph, splits: Splits, options: TrainOptions = TrainOptions(), init_seed: int = 0
) -> TrialResult:
    model = _new_model(graph, options, init_seed)
    steps = [(graph, splits.train_ids)]
    return fit(
        model,
        lambda epoch: steps,
        (graph, splits.val_ids),
        (graph, splits.test_ids),
        options,
        init_seed,
        forbidden=(graph, _held_out(splits)),
    )


@dataclass(frozen=True)
class AugmentConfig:
    kind: str = "same"  # "same" (one same-distribution graph) or "small" (n smaller graphs)
    n: int = 10

    def __post_init__(self):
        if self.kind not in ("same", "small"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


def small_graph_schedule(n: int, epochs: int, seed: int) -> list[int]:
    """Index of the augmenting graph used in each epoch; order redrawn every ``n`` epochs."""
    rng = np.random.default_rng(seed)
    order: list[int] = []
    while len(order) < epochs:
        order.extend(rng.permutation(n).tolist())
    return order[:epochs]


def train_augmented(
    target: Graph,
    target_splits: Splits,
    augmenting: Sequence[Graph],
    config: AugmentConfig,
    options: TrainOptions = TrainOptions(),
    init_seed: int = 0,
    order_seed: int = 0,
) -> TrialResult:
    """Interleave a full-label step on an augmenting graph with a step on the target's train nodes.

    Validation and test only ever look at the target graph.
    """
    if not augmenting:
        raise ValueError("no augmenting graphs given")
    for g in augmenting:
        if g.labels is None:
            raise ValueError("augmenting graphs must be fully labeled")
        if g.num_classes != target.num_classes:
            raise ValueError("augmenting graph has a different class count")
    if config.kind == "same":
        schedule = [0] * options.epochs
    else:
        if len(augmenting) != config.n:
            raise ValueError(f"expected {config.n} augmenting graphs, got {len(augmenting)}")
        schedule = small_graph_schedule(config.n, options.epochs, order_seed)
    everything = [np.arange(g.num_nodes) for g in augmenting]
    target_step = (target, target_splits.train_ids)

    def steps(epoch: int) -> list[Step]:
        j = schedule[epoch]
        return [(augmenting[j], everything[j]), target_step]

    model = _new_model(target, options, init_seed)
    return fit(
        model,
        steps,
        (target, target_splits.val_ids),
        (target, target_splits.test_ids),
        options,
        init_seed,
        forbidden=(target, _held_out(target_splits)),
    )


def train_on_surrogate(
    surrogate: Graph,
    target: Graph,
    split_config: SplitConfig,
    options: TrainOptions = TrainOptions(),
    init_seed: int = 0,
    target_splits: Optional[Splits] = None,
) -> TrialResult:
    """Train and validate on ``surrogate``; report F1 on the target's test nodes.

    When ``target_splits`` is omitted the target's splits are drawn with
    ``split_config``, which makes ``surrogate is target`` identical to
    :func:`train_baseline`.
    """
    if surrogate.num_classes != target.num_classes:
        raise ValueError(
            f"surrogate has {surrogate.num_classes} classes, target has {target.num_classes}"
        )
    s_splits = make_splits(surrogate, split_config)
    if target_splits is None:
        target_splits = make_splits(target, split_config)
    model = _new_model(target, options, init_seed)
    steps = [(surrogate, s_splits.train_ids)]
    return fit(
        model,
        lambda epoch: steps,
        (surrogate, s_splits.val_ids),
        (target, target_splits.test_ids),
        options,
        init_seed,
        forbidden=(target, target_splits.test_ids),
    )
