"""Three-layer GIN node classifier and the macro-F1 metric."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    _check_finite,
    affine,
    batchnorm,
    neighbor_sum,
    no_grad,
    parameter,
    relu,
)
from .graphgen import Graph


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    def __call__(self, X: Tensor) -> Tensor:
        return affine(X, self.W, self.b)


@dataclass
class GinLayer:
    lin1: Linear
    lin2: Linear
    bn: BatchNormState
    eps_gin: float = 0.0


@dataclass
class GinModel:
    layers: list[GinLayer]
    head: Linear
    out: Linear
    relu_after_aggregation: bool = True

    @property
    def num_classes(self) -> int:
        return self.out.W.shape[1]

    @property
    def input_dim(self) -> int:
        return self.layers[0].lin1.W.shape[0]

    def parameters(self) -> list[Tensor]:
        ps: list[Tensor] = []
        for layer in self.layers:
            ps += [layer.lin1.W, layer.lin1.b, layer.lin2.W, layer.lin2.b, layer.bn.gamma, layer.bn.beta]
        ps += [self.head.W, self.head.b, self.out.W, self.out.b]
        return ps

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copies of every learnable array plus batch-norm running statistics."""
        state = {p.name: p.data.copy() for p in self.parameters()}
        for i, layer in enumerate(self.layers):
            state[f"gin{i}.bn.running_mean"] = layer.bn.running_mean.copy()
            state[f"gin{i}.bn.running_var"] = layer.bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.data = state[p.name].copy()
        for i, layer in enumerate(self.layers):
            layer.bn.running_mean = state[f"gin{i}.bn.running_mean"].copy()
            layer.bn.running_var = state[f"gin{i}.bn.running_var"].copy()


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Linear:
    bound = np.sqrt(1.0 / fan_in)
    W = parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.W")
    b = parameter(np.zeros((1, fan_out)), f"{name}.b")
    return Linear(W, b)


def init_model(
    seed: int,
    num_classes: int,
    input_dim: int = 1,
    hidden_dim: int = 32,
    num_layers: int = 3,
    eps_gin: float = 0.0,
    relu_after_aggregation: bool = True,
) -> GinModel:
    """Fresh model: weights uniform in +-sqrt(1/fan_in), zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(num_layers):
        d_in = input_dim if i == 0 else hidden_dim
        layers.append(
            GinLayer(
                lin1=_linear(rng, d_in, hidden_dim, f"gin{i}.lin1"),
                lin2=_linear(rng, hidden_dim, hidden_dim, f"gin{i}.lin2"),
                bn=BatchNormState.create(hidden_dim, name=f"gin{i}.bn"),
                eps_gin=eps_gin,
            )
        )
    head = _linear(rng, hidden_dim, hidden_dim, "head")
    out = _linear(rng, hidden_dim, num_classes, "out")
    return GinModel(layers, head, out, relu_after_aggregation)


def model_forward(graph: Graph, model: GinModel, training: bool, features: Optional[np.ndarray] = None) -> Tensor:
    """Raw class logits for every node of ``graph``.

    Each GIN layer runs aggregate -> ReLU -> linear -> ReLU -> linear ->
    batch norm -> ReLU; the head is linear -> ReLU -> linear.
    """
    x = graph.features if features is None else features
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (graph.num_nodes, model.input_dim):
        raise ValueError(f"features of shape {x.shape} do not fit a model with input_dim {model.input_dim}")
    adj = graph.adjacency_matrix
    h = Tensor(x)
    for layer in model.layers:
        h = neighbor_sum(h, adj, layer.eps_gin)
        if model.relu_after_aggregation:
            h = relu(h)
        h = relu(layer.lin1(h))
        h = layer.lin2(h)
        h = relu(batchnorm(h, layer.bn, training))
    h = relu(model.head(h))
    logits = model.out(h)
    _check_finite(logits.data, "logits")
    return logits


def predict(graph: Graph, model: GinModel) -> np.ndarray:
    with no_grad():
        return model_forward(graph, model, training=False).data.argmax(axis=1)


def f1_macro(predictions: Sequence[int] | np.ndarray, truth: Sequence[int] | np.ndarray, num_classes: int) -> float:
    """Unweighted mean of per-class F1; classes with P + R = 0 count as 0."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size and (min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= num_classes):
        raise ValueError("class index out of range")
    tp = np.bincount(true[pred == true], minlength=num_classes).astype(np.float64)
    n_pred = np.bincount(pred, minlength=num_classes).astype(np.float64)
    n_true = np.bincount(true, minlength=num_classes).astype(np.float64)
    denom = n_pred + n_true
    # F1 = 2TP / (|pred| + |true|), which equals 2PR/(P+R) whenever defined
    f1 = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    return float(f1.mean())
