"""Central-difference verification of model gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .graph import Graph, build_graph, normalized_laplacian
from .layers import EXPONENT_CLAMP
from .models import DmpGcnConfig, DmpGcnModel, DmpPrgConfig, DmpPrgModel
from .training import total_loss

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5
STEP = 1e-6
MIN_GRADIENT_NORM = 1e-4
MAX_DRAWS = 100


@dataclass
class Instance:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    n_classes: int


def random_instance(n: int, seed: int, n_features: int = 8, n_classes: int = 3, p_edge: float = 0.5) -> Instance:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p_edge
    graph = build_graph(n, np.stack([iu[keep], ju[keep]], axis=1))
    return Instance(
        graph=graph,
        features=rng.random((n, n_features)),
        labels=rng.integers(0, n_classes, size=n),
        mask=np.ones(n, dtype=bool),
        n_classes=n_classes,
    )


def loss_fn(model, inst: Instance, L=None):
    """Total loss (cross-entropy + regularizer) of an inference pass, as ``f(params) -> (tape, loss)``."""
    L = normalized_laplacian(inst.graph) if L is None else L
    features = Tensor(inst.features)

    def f(params: dict[str, np.ndarray]) -> tuple[Tape, Tensor]:
        tape = Tape()
        p = tape.params(params)
        logits = model.forward(p, features, inst.graph, training=False)
        loss, _ = total_loss(logits, inst.labels, inst.mask, p["X_base"], L)
        return tape, loss

    return f


def numerical_gradient(f, params: dict[str, np.ndarray], name: str, h: float = STEP) -> np.ndarray:
    arr = params[name]
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        up = f(params)[1].item()
        arr[idx] = orig - h
        down = f(params)[1].item()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_model(model, inst: Instance, h: float = STEP) -> dict[str, float]:
    """Relative error of the analytic gradient for every parameter of ``model``."""
    f = loss_fn(model, inst)
    analytic = analytic_gradient(model, inst)
    return {name: relative_error(analytic[name], numerical_gradient(f, model.params, name, h)) for name in model.params}


def analytic_gradient(model, inst: Instance) -> dict[str, np.ndarray]:
    return _loss_and_gradient(model, inst)[1]


def _loss_and_gradient(model, inst: Instance) -> tuple[float, dict[str, np.ndarray]]:
    tape, loss = loss_fn(model, inst)(model.params)
    return loss.item(), tape.backward(loss)


# parameters each ablation leaves out of the forward pass
UNUSED = {
    "full": (),
    "context_only": (".W_x", ".beta_raw"),
    "structure_only": (".a", ".beta_raw"),
    "none": (".W_x", ".a", ".beta_raw", ".gamma"),
}


def well_conditioned(model, inst: Instance, floor: float = MIN_GRADIENT_NORM) -> bool:
    """True when the draw is a fair place to compare gradients.

    Every parameter the model uses needs a gradient norm of at least
    ``floor * max(1, |loss|)``: the rounding noise of a central difference
    grows with the loss (about 1e-10 per unit loss at h = 1e-6), and a
    relative error is only meaningful well above it. This also rejects draws
    where every ReLU unit is dead. Draws whose edge exponents reach the clamp
    are rejected as non-smooth.
    """
    loss, grads = _loss_and_gradient(model, inst)
    bound = floor * max(1.0, abs(loss))
    unused = UNUSED[model.config.ablation]
    if any(np.linalg.norm(g) < bound for name, g in grads.items() if not name.endswith(unused)):
        return False
    params = {k: Tensor(v) for k, v in model.params.items()}
    weights = model.edge_weights(params, Tensor(inst.features), inst.graph)
    return all(np.abs(np.log(w.values.values)).max() < EXPONENT_CLAMP - 1.0 for w in weights)


def _randomize(model, rng: np.random.Generator):
    # unit-scale weights keep the softmax rows apart, so divergences (and the
    # gradients of gamma and beta) are of order one rather than 1e-3
    for name, arr in model.params.items():
        if name.endswith((".beta_raw", ".gamma")) or name in ("lambda", "X_base") or name.startswith("mlp.b"):
            arr[...] = rng.uniform(-1.0, 1.0, size=arr.shape)
        else:
            arr[...] = rng.normal(size=arr.shape)


def gradcheck_models(inst: Instance, seed: int, ablation: str = "full"):
    """Small DMPGCN and DMPPRG at a generic point.

    Every parameter is redrawn at unit scale: the one-hot latent
    initialization can make every row of ``X`` identical on tiny graphs, where
    the latent gradients vanish exactly and only rounding noise is compared.
    Parameters are redrawn (at most ``MAX_DRAWS`` times) until every gradient
    group is well conditioned; the last draw is checked regardless, so a
    backward pass that wrongly returns zeros is still caught.
    """
    rng = np.random.default_rng(seed + 1)
    d = inst.features.shape[1]
    n = inst.graph.n
    builders = (
        lambda: DmpGcnModel(DmpGcnConfig(d, inst.n_classes, hidden=4, ablation=ablation), n, rng, rng),
        lambda: DmpPrgModel(DmpPrgConfig(d, inst.n_classes, hidden=6, K=3, ablation=ablation), n, rng, rng),
    )
    models = []
    for build in builders:
        for _ in range(MAX_DRAWS):
            model = build()
            _randomize(model, rng)
            if well_conditioned(model, inst):
                break
        else:
            logger.warning("%s: no well-conditioned draw in %d tries; checking the last one", model.kind, MAX_DRAWS)
        models.append(model)
    return models


def run_gradcheck(n: int = 5, seed: int = 0, ablation: str = "full") -> list[tuple[str, str, float]]:
    inst = random_instance(n, seed)
    rows = []
    for model in gradcheck_models(inst, seed, ablation):
        rows += [(model.kind, name, err) for name, err in check_model(model, inst).items()]
    return rows
