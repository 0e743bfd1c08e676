"""Loss assembly, full-batch semi-supervised training and evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor
from .data import Dataset
from .errors import ConfigError, NonFiniteError, TrainingError
from .graph import normalized_laplacian
from .metrics import accuracy, nmi, predict
from .models import build_model


def structural_regularizer(X: Tensor, L: sp.spmatrix) -> Tensor:
    """``tr(X^T L X) + ||X^T X / n - I||_F^2``."""
    n, C = X.shape
    if L.shape != (n, n):
        raise ConfigError(f"Laplacian of shape {L.shape} does not match {n} latent rows")
    smooth = ad.sum_all(ad.hadamard(X, ad.spmm(L, X)))
    gram = ad.add(ad.scale(ad.matmul(ad.transpose(X), X), 1.0 / n), Tensor(-np.eye(C)))
    return ad.add(smooth, ad.sum_all(ad.hadamard(gram, gram)))


def total_loss(logits: Tensor, labels, train_mask, X: Tensor, L) -> tuple[Tensor, Tensor]:
    """Return ``(loss, regularizer)`` where loss is cross-entropy plus the regularizer."""
    reg = structural_regularizer(X, L)
    return ad.add(ad.softmax_cross_entropy(logits, labels, train_mask), reg), reg


@dataclass
class TrainConfig:
    model: str = "dmpgcn"
    epochs: int = 300
    patience: int = 50
    lr: float = 0.01
    weight_decay: float = 5e-4
    seed: int = 0
    latent_seed: int | None = None
    ablation: str | None = None
    hidden: int | None = None
    dropout: float | None = None
    K: int | None = None
    divergence_mode: str = "normalized"
    frozen: tuple = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")
        self.frozen = tuple(self.frozen)


@dataclass
class TrainReport:
    config: dict
    train_loss: list = field(default_factory=list)
    regularizer: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    test_acc: float = 0.0
    test_nmi: float = 0.0
    epochs_run: int = 0
    wall_seconds: float = field(default=0.0, compare=False)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_seconds")
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)

    def to_text(self) -> str:
        """One ``key<TAB>value`` line per metric; per-epoch series are indexed."""
        lines = [f"config.{k}\t{v}" for k, v in sorted(self.config.items())]
        lines += [
            f"epochs_run\t{self.epochs_run}",
            f"best_epoch\t{self.best_epoch}",
            f"best_val_acc\t{self.best_val_acc!r}",
            f"test_acc\t{self.test_acc!r}",
            f"test_nmi\t{self.test_nmi!r}",
            f"wall_seconds\t{self.wall_seconds:.3f}",
        ]
        for name in ("train_loss", "regularizer", "val_acc"):
            lines += [f"{name}[{i}]\t{v!r}" for i, v in enumerate(getattr(self, name))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(**d)


def seed_streams(seed: int, latent_seed: int | None = None):
    """Independent generators for weight init, latent positions and dropout."""
    init_ss, latent_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
    if latent_seed is not None:
        latent_ss = np.random.SeedSequence([latent_seed, 1])
    return np.random.default_rng(init_ss), np.random.default_rng(latent_ss), np.random.default_rng(drop_ss)


def create_model(dataset: Dataset, config: TrainConfig):
    init_rng, latent_rng, _ = seed_streams(config.seed, config.latent_seed)
    return build_model(
        config.model,
        dataset.n_features,
        dataset.n_classes,
        dataset.n,
        init_rng,
        latent_rng,
        hidden=config.hidden,
        dropout=config.dropout,
        K=config.K,
        ablation=config.ablation,
        divergence_mode=config.divergence_mode,
    )


def no_decay_names(model) -> frozenset:
    """Scalars, biases, fusion weights and latent positions are not decayed."""
    return frozenset(
        name
        for name in model.params
        if name in ("X_base", "lambda") or name.endswith((".beta_raw", ".gamma")) or name.startswith("mlp.b")
    )


def logits_of(model, dataset: Dataset, features: Tensor | None = None) -> np.ndarray:
    """Inference-mode logits (dropout off)."""
    features = Tensor(dataset.features) if features is None else features
    p = {name: Tensor(arr) for name, arr in model.params.items()}
    return model.forward(p, features, dataset.graph, training=False).values


def evaluate(model, dataset: Dataset, mask) -> tuple[float, float]:
    """``(ACC, NMI)`` of the argmax predictions on ``mask``."""
    pred = predict(logits_of(model, dataset))
    return accuracy(pred, dataset.labels, mask), nmi(pred, dataset.labels, mask)


def train(model, dataset: Dataset, config: TrainConfig) -> TrainReport:
    """Full-batch training with early stopping on validation accuracy.

    The best-validation parameters are restored into ``model`` before the test
    metrics are computed.
    """
    if not dataset.has_splits:
        raise ConfigError("dataset has no train/val/test split")
    train_mask, val_mask, test_mask = dataset.train_mask, dataset.val_mask, dataset.test_mask
    if not (train_mask.any() and val_mask.any() and test_mask.any()):
        raise ConfigError("train, validation and test masks must all be nonempty")
    unknown = [f for f in config.frozen if f not in model.params]
    if unknown:
        raise ConfigError(f"cannot freeze unknown parameters {unknown}")

    start = time.perf_counter()
    _, _, drop_rng = seed_streams(config.seed, config.latent_seed)
    features = Tensor(dataset.features)
    L = normalized_laplacian(dataset.graph)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay, no_decay=no_decay_names(model))
    report = TrainReport(config=asdict(config) | {"frozen": list(config.frozen)})

    best_params = {k: v.copy() for k, v in model.params.items()}
    best_val = -1.0
    best_epoch = -1
    stale = 0
    for epoch in range(config.epochs):
        tape = Tape()
        p = tape.params(model.params)
        try:
            logits = model.forward(p, features, dataset.graph, training=True, rng=drop_rng)
            loss, reg = total_loss(logits, dataset.labels, train_mask, p["X_base"], L)
        except NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from None
        grads = tape.backward(loss)
        try:
            ad.adam_step(state, model.params, grads, frozen=config.frozen)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from None
        val_acc = accuracy(logits_of(model, dataset, features), dataset.labels, val_mask)
        report.train_loss.append(loss.item())
        report.regularizer.append(reg.item())
        report.val_acc.append(val_acc)
        if val_acc > best_val:
            best_val, best_epoch, stale = val_acc, epoch, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.params = best_params
    pred = predict(logits_of(model, dataset, features))
    report.epochs_run = len(report.train_loss)
    report.best_epoch = best_epoch
    report.best_val_acc = best_val
    report.test_acc = accuracy(pred, dataset.labels, test_mask)
    report.test_nmi = nmi(pred, dataset.labels, test_mask)
    report.wall_seconds = time.perf_counter() - start
    return report


def run(dataset: Dataset, config: TrainConfig):
    """Build a model for ``config`` and train it; returns ``(model, report)``."""
    model = create_model(dataset, config)
    return model, train(model, dataset, config)
