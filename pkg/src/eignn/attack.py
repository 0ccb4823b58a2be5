"""Feature-perturbation robustness in the evasive setting: the model is
frozen and perturbations are added to the node-feature matrix only.

FGSM and PGD target the nodes the clean model classifies correctly and
ascend the same cross-entropy used for training.
"""

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .errors import EmptyMaskError
from .graphs import Graph
from .model import EignnModel


@dataclass(frozen=True)
class AttackConfig:
    kind: str  # uniform | fgsm | pgd
    epsilon: float
    step_size: float = 0.0  # pgd only
    iterations: int = 15  # pgd only
    seed: int = 0  # uniform only

    def __post_init__(self):
        if self.kind not in ("uniform", "fgsm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.kind == "pgd" and (self.step_size <= 0.0 or self.iterations < 1):
            raise ValueError("pgd requires step_size > 0 and iterations >= 1")


def uniform_noise(X, alpha: float, seed: int) -> np.ndarray:
    """X plus i.i.d. U(-alpha, alpha) noise, deterministic per seed."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    return X + rng.uniform(-alpha, alpha, size=X.shape)


def correctly_classified(model: EignnModel, graph: Graph, cache, mask) -> np.ndarray:
    """Mask of nodes in `mask` that the clean model classifies correctly."""
    trace = model_mod.spectral_forward(model, graph.X, cache)
    pred = np.argmax(trace.logits, axis=0)
    return mask & (pred == graph.labels)


def attack_loss_grad(model: EignnModel, X, graph: Graph, cache, target_mask):
    """(loss, dL/dX) of the training cross-entropy on the targeted nodes."""
    if not np.any(target_mask):
        raise EmptyMaskError("attack target set is empty")
    trace = model_mod.spectral_forward(model, X, cache)
    loss, D = model_mod.loss_and_output_grad(trace.logits, graph.labels, target_mask)
    return loss, model_mod.input_grad(model, cache, trace, D)


def fgsm(model: EignnModel, graph: Graph, cache, epsilon: float, target_mask=None):
    """One signed gradient step of size epsilon; sign(0) leaves entries put."""
    if target_mask is None:
        target_mask = correctly_classified(model, graph, cache, graph.test_mask)
    _, gx = attack_loss_grad(model, graph.X, graph, cache, target_mask)
    return graph.X + epsilon * np.sign(gx)


def pgd(model: EignnModel, graph: Graph, cache, epsilon, step_size, iterations, target_mask=None):
    """Iterated signed ascent, projected onto the l-inf ball around the clean
    features after every step."""
    if target_mask is None:
        target_mask = correctly_classified(model, graph, cache, graph.test_mask)
    X0 = graph.X
    X = X0.copy()
    for _ in range(iterations):
        _, gx = attack_loss_grad(model, X, graph, cache, target_mask)
        X = np.clip(X + step_size * np.sign(gx), X0 - epsilon, X0 + epsilon)
    return X
