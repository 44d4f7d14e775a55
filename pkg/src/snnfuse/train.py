"""Target coding, loss, STBP backward, Adam, and the train/evaluate loops."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cma import FusionConfig, build_model, required_inputs
from .events import (
    DualSample,
    align_frames,
    centered_segment,
    confuse_timing,
    eliminate_time,
    extract_segment,
    rasterize,
)
from .neurons import NeuronParams
from .nn.model import ModelSpec

log = logging.getLogger(__name__)

PERTURB_MODES = ("baseline", "confusion", "elimination")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 2.0
    v_th: float = 1.0
    v_reset: float = 0.0
    tau: float = 2.0
    neuron: str = "LIF"
    batch_size: int = 16
    seed: int = 0
    dt_us: int = 10_000
    T: int = 20
    t_lat_us: int = 200_000
    binarize: bool = False
    eval_batch_size: int = 64

    def validate(self) -> None:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be positive")
        if not self.lr >= 0:
            problems.append("lr must be non-negative")
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if self.dt_us <= 0 or self.T < 1:
            problems.append("dt_us and T must be positive")
        elif self.T * self.dt_us != self.t_lat_us:
            problems.append(f"T * dt_us = {self.T * self.dt_us} must equal t_lat_us = {self.t_lat_us}")
        try:
            self.neuron_params()
        except ValueError as e:
            problems.append(str(e))
        if problems:
            raise ValueError("; ".join(problems))

    def neuron_params(self, **overrides) -> NeuronParams:
        return NeuronParams(
            v_th=self.v_th, v_reset=self.v_reset, tau=self.tau, alpha=self.alpha, kind=self.neuron, **overrides
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    wall_s: float


@dataclass
class RunReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    confusion: np.ndarray | None = None
    perturbation: dict[str, float] = field(default_factory=dict)

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1].test_acc if self.epochs else float("nan")

    def epochs_csv(self) -> str:
        # wall time stays out of the CSV so reruns are byte-identical
        lines = ["epoch,train_loss,train_acc,test_acc"]
        for r in self.epochs:
            lines.append(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.4f},{r.test_acc:.4f}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self, class_names: Sequence[str] | None = None) -> str:
        C = self.confusion.shape[0]
        names = list(class_names) if class_names else [str(i) for i in range(C)]
        lines = ["true\\pred," + ",".join(names)]
        for i in range(C):
            lines.append(names[i] + "," + ",".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


# -- coding, loss, decision ---------------------------------------------------


def target(label: int, T: int, C: int) -> np.ndarray:
    if not 0 <= label < C:
        raise ValueError(f"label {label} outside [0, {C})")
    y = np.zeros((T, C))
    y[:, label] = 1.0
    return y


def mse_loss(O: np.ndarray, Y: np.ndarray) -> float:
    """Mean squared error over timesteps and classes (and batch, if present)."""
    return float(np.mean((O - Y) ** 2))


def mse_grad(O: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return 2.0 * (O - Y) / O.size


def predict(O: np.ndarray) -> int | np.ndarray:
    """Class with the largest time-summed score; ties go to the lowest index."""
    return np.argmax(O.sum(axis=0), axis=-1)


def percentage_drop(baseline: float, perturbed: float) -> float:
    return (baseline - perturbed) / baseline * 100.0


def format_perturbed(baseline: float, perturbed: float) -> str:
    """``"69.07 (-27.13%)"``: accuracy and its signed change relative to baseline."""
    change = round(-percentage_drop(baseline, perturbed), 2) + 0.0  # + 0.0 folds -0.0
    return f"{perturbed:.2f} ({change:+.2f}%)"


# -- gradients ------------------------------------------------------------------


def set_neuron_mode(model, **changes) -> None:
    """Switch e.g. ``soft`` or ``detach_reset`` on every spiking layer."""
    for layer in model.spiking_layers():
        layer.set_mode(**changes)


def backward_stbp(model, O: np.ndarray, Y: np.ndarray) -> float:
    """Backpropagate the MSE loss through layers and time. Returns the loss."""
    for layer in model.spiking_layers():
        if getattr(layer, "_trace", None) is None:
            raise RuntimeError("no retained forward traces; run a forward pass first")
    model.backward(mse_grad(O, Y).astype(O.dtype, copy=False))
    for layer in model.spiking_layers():
        layer._trace = None
    return mse_loss(O, Y)


def zero_grad(model) -> None:
    for p in model.params().values():
        p.zero_grad()


def adam_step(params: dict, grads: dict, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """In-place Adam update with bias correction.

    ``params``/``grads`` map names to arrays; ``state`` is a dict owned by the
    caller (empty on the first call).
    """
    t = state.get("t", 0) + 1
    state["t"] = t
    m, v = state.setdefault("m", {}), state.setdefault("v", {})
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        m[name] = beta1 * m[name] + (1 - beta1) * g
        v[name] = beta2 * v[name] + (1 - beta2) * g * g
        step = lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
        p -= step.astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.betas, self.eps = (beta1, beta2), eps
        self.state: dict = {}

    def step(self):
        adam_step(
            {k: p.value for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state, self.lr, *self.betas, self.eps,
        )


# -- input pipeline -------------------------------------------------------------


@dataclass
class InputMode:
    keys: tuple[str, ...] = ("event",)
    eliminate: bool = False
    replicate: int = 1
    binarize: bool = False


def prepare(seg: DualSample, cfg: TrainConfig, mode: InputMode) -> dict[str, np.ndarray]:
    out = {}
    if "event" in mode.keys:
        if mode.eliminate:
            x = eliminate_time(seg.events, mode.replicate).data
        else:
            x = rasterize(seg.events, 0, cfg.dt_us, cfg.T).data
        out["event"] = np.minimum(x, 1.0) if mode.binarize else x
    if "frame" in mode.keys:
        out["frame"] = align_frames(seg.frames, 0, cfg.dt_us, cfg.T).data
    return out


def stack(items: list[dict[str, np.ndarray]], dtype) -> dict[str, np.ndarray]:
    return {k: np.stack([it[k] for it in items], axis=1).astype(dtype) for k in items[0]}


def _labels_onehot(labels, T, C, dtype):
    Y = np.zeros((T, len(labels), C), dtype=dtype)
    Y[:, np.arange(len(labels)), labels] = 1.0
    return Y


def run_inference(model, samples: Sequence[DualSample], cfg: TrainConfig, mode: InputMode,
                  transform: Callable[[DualSample, int], DualSample] | None = None) -> np.ndarray:
    """Time-summed class scores (N x C) on one centered segment per sample."""
    dtype = model.spec.dtype
    sums = []
    for lo in range(0, len(samples), cfg.eval_batch_size):
        chunk = samples[lo:lo + cfg.eval_batch_size]
        items = []
        for j, s in enumerate(chunk):
            if transform is not None:
                s = transform(s, lo + j)
            items.append(prepare(centered_segment(s, cfg.t_lat_us), cfg, mode))
        O = model.forward(stack(items, dtype), training=False)
        sums.append(O.astype(np.float64).sum(axis=0))
    return np.concatenate(sums, axis=0)


def accuracy(scores: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == np.asarray(labels)) * 100.0)


def pair_accuracy(scores: np.ndarray, labels, pair: tuple[int, int]) -> float:
    """Accuracy on samples of the two classes, deciding between those two only."""
    labels = np.asarray(labels)
    a, b = pair
    sel = (labels == a) | (labels == b)
    if not sel.any():
        return float("nan")
    pick = np.where(scores[sel, b] > scores[sel, a], b, a)
    return float(np.mean(pick == labels[sel]) * 100.0)


def confusion_matrix(scores, labels, C) -> np.ndarray:
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.argmax(scores, axis=1)), 1)
    return cm


# -- training ---------------------------------------------------------------------


def train(cfg: TrainConfig, spec: ModelSpec, fusion: FusionConfig,
          train_set: Sequence[DualSample], test_set: Sequence[DualSample],
          mode: InputMode | None = None, on_epoch: Callable[[EpochRecord], None] | None = None):
    """Minibatch STBP training. Returns ``(model, RunReport)``.

    Every training sample contributes a freshly drawn segment each epoch; the
    test split is scored on one centered segment per sample. All randomness is
    derived from ``cfg.seed``.
    """
    cfg.validate()
    if not train_set:
        raise ValueError("empty training set")
    if mode is None:
        mode = InputMode(required_inputs(fusion.mode), binarize=cfg.binarize)
    T = mode.replicate if mode.eliminate else cfg.T
    spec = replace(spec, neuron=cfg.neuron_params())
    model = build_model(spec, fusion, T, np.random.default_rng([cfg.seed, 1]))
    opt = Adam(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    C = spec.n_classes
    report = RunReport()
    train_labels = np.array([s.label for s in train_set])
    test_labels = np.array([s.label for s in test_set])
    if train_labels.max() >= C or (len(test_labels) and test_labels.max() >= C):
        raise ValueError(f"labels exceed class count {C}")
    t_start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            items = []
            for i in idx:
                seg = extract_segment(train_set[i], cfg.t_lat_us, np.random.default_rng([cfg.seed, 3, epoch, int(i)]))
                items.append(prepare(seg, cfg, mode))
            batch = stack(items, spec.dtype)
            labels = train_labels[idx]
            O = model.forward(batch, training=True)
            Y = _labels_onehot(labels, O.shape[0], C, O.dtype)
            zero_grad(model)
            loss = backward_stbp(model, O, Y)
            opt.step()
            loss_sum += loss * len(idx)
            correct += int(np.sum(predict(O) == labels))
        scores = run_inference(model, test_set, cfg, mode) if len(test_set) else np.zeros((0, C))
        rec = EpochRecord(
            epoch, loss_sum / len(order), 100.0 * correct / len(order),
            accuracy(scores, test_labels) if len(test_set) else float("nan"),
            time.perf_counter() - t_start,
        )
        report.epochs.append(rec)
        log.info("epoch %d loss %.4f train %.2f test %.2f (%.1fs)", epoch, rec.train_loss, rec.train_acc, rec.test_acc, rec.wall_s)
        if on_epoch is not None:
            on_epoch(rec)
    if len(test_set):
        report.confusion = confusion_matrix(scores, test_labels, C)
    return model, report


def confused_transform(seed: int):
    def apply(sample: DualSample, i: int) -> DualSample:
        ev = confuse_timing(sample.events, np.random.default_rng([seed, 4, i]))
        return DualSample(ev, sample.frames, sample.label, sample.scenario)

    return apply


@dataclass
class PerturbResult:
    mode: str
    accuracy: float
    pair_accuracy: float = float("nan")
    scores: np.ndarray | None = None


def evaluate_perturbed(model, mode: str, cfg: TrainConfig, fusion: FusionConfig, test_set: Sequence[DualSample],
                       train_set: Sequence[DualSample] | None = None, spec: ModelSpec | None = None,
                       pair: tuple[int, int] | None = None, replicate: int = 1) -> PerturbResult:
    """Score a model under a temporal perturbation of the event modality.

    ``confusion`` shuffles event timestamps of each test stream at inference.
    ``elimination`` retrains a fresh model on whole-segment accumulated frames
    (``train_set`` and ``spec`` required) and scores it the same way.
    """
    if mode not in PERTURB_MODES:
        raise ValueError(f"unknown perturbation mode {mode!r} (valid: {', '.join(PERTURB_MODES)})")
    keys = required_inputs(fusion.mode)
    if mode != "baseline" and "event" not in keys:
        raise ValueError("perturbations apply to the event modality; fusion mode has no event input")
    labels = [s.label for s in test_set]
    if mode == "elimination":
        if fusion.mode != "none-event":
            raise ValueError("temporal elimination is defined for the event-only model")
        if train_set is None or spec is None:
            raise ValueError("elimination retrains and needs train_set and spec")
        emode = InputMode(keys, eliminate=True, replicate=replicate, binarize=cfg.binarize)
        model, _ = train(cfg, spec, fusion, train_set, [], mode=emode)
        scores = run_inference(model, test_set, cfg, emode)
    else:
        imode = InputMode(keys, binarize=cfg.binarize)
        transform = confused_transform(cfg.seed) if mode == "confusion" else None
        scores = run_inference(model, test_set, cfg, imode, transform)
    pa = pair_accuracy(scores, labels, pair) if pair is not None else float("nan")
    return PerturbResult(mode, accuracy(scores, labels), pa, scores)
