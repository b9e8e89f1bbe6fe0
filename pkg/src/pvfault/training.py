"""Mini-batch training loop, optimizers, evaluation, and metric curves.

Determinism contract: with a fixed config seed and single-threaded BLAS the
whole loop is a deterministic function of (model init, dataset order, config)
— batch shuffling comes from one generator seeded with the config seed, and
each augmentation draw is seeded with (seed, epoch, sample index). Two runs
therefore produce byte-identical metrics.csv files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ArraySet, augment, compute_norm_stats, normalize
from .errors import ConfigError, DataError, NumericError, ShapeError
from .layers import cross_entropy, softmax_cross_entropy_grad
from .models import Model

OPTIMIZERS = ("adam", "sgd-momentum")

# per-optimizer default learning rates, used when the config leaves lr unset
DEFAULT_LR = {"adam": 1e-3, "sgd-momentum": 0.01}


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float | None = None  # None -> DEFAULT_LR[optimizer]
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    augment: bool = True

    def validate(self) -> None:
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum!r}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must be in (0,1), got {b!r}")

    @property
    def resolved_learning_rate(self) -> float:
        return DEFAULT_LR[self.optimizer] if self.learning_rate is None else self.learning_rate


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


class MetricsLog:
    """Per-epoch metric trace; epochs strictly increasing, accuracies in [0,1]."""

    def __init__(self, records=()):
        self.records: list[EpochRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(
                f"epoch {record.epoch} does not follow {self.records[-1].epoch}"
            )
        for name in ("train_acc", "test_acc"):
            v = getattr(record, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0,1]")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, MetricsLog) and self.records == other.records


@dataclass
class EvalReport:
    """Confusion matrix (rows = true class, cols = predicted) plus accuracies.

    per_class_accuracy is NaN for classes absent from the evaluation set:
    undefined, not zero.
    """

    confusion: np.ndarray
    overall_accuracy: float
    per_class_accuracy: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        total = int(self.confusion.sum())
        if total == 0:
            raise DataError("evaluation set was empty")
        trace = int(np.trace(self.confusion))
        assert abs(self.overall_accuracy - trace / total) < 1e-12

    def format_lines(self) -> list[str]:
        lines = [f"overall accuracy: {self.overall_accuracy:.4f}"]
        for i, name in enumerate(self.class_names):
            acc = self.per_class_accuracy[i]
            shown = "n/a (no samples)" if np.isnan(acc) else f"{acc:.4f}"
            lines.append(f"  {name}: {shown}")
        lines.append("confusion matrix (rows = true, cols = predicted):")
        for i, name in enumerate(self.class_names):
            row = " ".join(f"{int(v):6d}" for v in self.confusion[i])
            lines.append(f"  {name:>9s} {row}")
        return lines


class SGDMomentum:
    """v <- momentum * v - lr * g; p <- p + v. Plain SGD when momentum is 0."""

    def __init__(self, params: dict[str, np.ndarray], lr=0.01, momentum=0.9):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                raise ShapeError(f"missing gradient for parameter '{name}'")
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * g
            p += v


class Adam:
    """Adam with bias correction: m/v moments, p -= lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                raise ShapeError(f"missing gradient for parameter '{name}'")
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: TrainConfig, params: dict[str, np.ndarray]):
    lr = config.resolved_learning_rate
    if config.optimizer == "adam":
        return Adam(params, lr=lr, betas=(config.beta1, config.beta2))
    return SGDMomentum(params, lr=lr, momentum=config.momentum)


def _check_data_matches_model(model: Model, data: ArraySet, role: str) -> None:
    if len(data) == 0:
        raise DataError(f"{role} dataset is empty")
    if len(data.class_names) != model.num_classes:
        raise DataError(
            f"{role} dataset has {len(data.class_names)} classes "
            f"({', '.join(data.class_names)}) but the model expects {model.num_classes}"
        )
    if data.labels.size and (data.labels.min() < 0 or data.labels.max() >= model.num_classes):
        raise DataError(f"{role} dataset labels fall outside [0,{model.num_classes})")
    if data.images.shape[1:] != model.input_shape:
        raise ShapeError(
            f"{role} images have shape {data.images.shape[1:]} but the model "
            f"expects {model.input_shape}"
        )


def _batched_loss_acc(model: Model, data: ArraySet, batch_size: int = 64):
    """Inference-mode loss/accuracy over a dataset."""
    total_loss = 0.0
    correct = 0
    n = len(data)
    for start in range(0, n, batch_size):
        idx = slice(start, min(start + batch_size, n))
        x = normalize(data.images[idx], model.norm_mean, model.norm_std)
        probs = model.forward(x, train=False)
        y = data.labels[idx]
        total_loss += cross_entropy(probs, y) * (idx.stop - idx.start)
        correct += int((probs.argmax(axis=1) == y).sum())
    return total_loss / n, correct / n


def train(model: Model, train_data: ArraySet, test_data: ArraySet,
          config: TrainConfig) -> MetricsLog:
    """Run the full training loop; the model is updated in place.

    Normalization statistics are computed from the training split only and
    stored on the model so they travel with the checkpoint. Test metrics are
    measured in inference mode after every epoch. The model is left in
    inference mode.
    """
    config.validate()
    _check_data_matches_model(model, train_data, "train")
    _check_data_matches_model(model, test_data, "test")

    mean, std = compute_norm_stats(train_data.images)
    model.norm_mean[...] = mean
    model.norm_std[...] = std

    params = model.param_dict()
    optimizer = make_optimizer(config, params)
    shuffle_rng = np.random.default_rng(config.seed)
    log = MetricsLog()
    n = len(train_data)

    for epoch in range(1, config.epochs + 1):
        model.training = True
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):  # final partial batch is kept
            idx = order[start : start + config.batch_size]
            images = train_data.images[idx]
            if config.augment:
                for j, sample_idx in enumerate(idx):
                    rng = np.random.default_rng([config.seed, epoch, int(sample_idx)])
                    images[j], _ = augment(images[j], int(train_data.labels[sample_idx]), rng)
            x = normalize(images, model.norm_mean, model.norm_std)
            y = train_data.labels[idx]

            probs = model.forward(x, train=True)
            loss = cross_entropy(probs, y)
            if not np.isfinite(loss):
                raise NumericError(f"training loss became non-finite at epoch {epoch}")
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y).sum())

            model.backward(softmax_cross_entropy_grad(probs, y))
            optimizer.step(model.grad_dict())

        model.training = False
        test_loss, test_acc = _batched_loss_acc(model, test_data)
        log.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / n,
                train_acc=correct / n,
                test_loss=test_loss,
                test_acc=test_acc,
            )
        )

    model.training = False
    return log


def evaluate(model: Model, data: ArraySet, batch_size: int = 64) -> EvalReport:
    """Confusion matrix and accuracies in inference mode.

    Predictions take the argmax of the probability row; exact ties resolve to
    the lowest class index.
    """
    _check_data_matches_model(model, data, "evaluation")
    k = model.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    n = len(data)
    for start in range(0, n, batch_size):
        idx = slice(start, min(start + batch_size, n))
        x = normalize(data.images[idx], model.norm_mean, model.norm_std)
        probs = model.forward(x, train=False)
        preds = probs.argmax(axis=1)  # numpy argmax: first (lowest) index wins ties
        np.add.at(confusion, (data.labels[idx], preds), 1)

    row_totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_totals > 0, np.diag(confusion) / row_totals, np.nan)
    return EvalReport(
        confusion=confusion,
        overall_accuracy=float(np.trace(confusion)) / n,
        per_class_accuracy=per_class,
        class_names=data.class_names,
    )


CSV_HEADER = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]


def emit_curves(log: MetricsLog, out_dir) -> tuple[Path, Path]:
    """Write metrics.csv and curves.svg under out_dir; returns both paths.

    Floats are written with repr so re-parsing reproduces the log exactly.
    """
    if len(log) == 0:
        raise ValueError("metrics log is empty; nothing to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for r in log.records:
            fh.write(
                f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.test_loss!r},{r.test_acc!r}\n"
            )

    svg_path = out_dir / "curves.svg"
    _plot_curves(log, svg_path)
    return csv_path, svg_path


def _plot_curves(log: MetricsLog, svg_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in log.records]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    marker = "o" if len(epochs) == 1 else None
    ax_loss.plot(epochs, [r.train_loss for r in log.records], label="train loss", marker=marker)
    ax_loss.plot(epochs, [r.test_loss for r in log.records], label="test loss", marker=marker)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [r.train_acc for r in log.records], label="train accuracy", marker=marker)
    ax_acc.plot(epochs, [r.test_acc for r in log.records], label="test accuracy", marker=marker)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def parse_metrics_csv(path) -> MetricsLog:
    """Inverse of the metrics.csv writer; round-trips exactly."""
    log = MetricsLog()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise DataError(f"{path}: unexpected metrics header {header}")
        for row in reader:
            log.append(
                EpochRecord(
                    epoch=int(row[0]),
                    train_loss=float(row[1]),
                    train_acc=float(row[2]),
                    test_loss=float(row[3]),
                    test_acc=float(row[4]),
                )
            )
    return log
