"""Training pipelines: full-precision baseline, SPQ and PPQ.

SPQ quantizes weights and activations on every iteration and re-selects
GM masks at the end of each epoch; masked filters keep receiving gradient
updates and may come back. PPQ trains in full precision while pruning in
cumulative stages (pruned filters are frozen at zero), then runs
quantization-aware training on the pruned model at a lower learning rate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Dataset, augment_batch, train_val_split
from .errors import ConfigError
from .metrics import Policy, builtin_arch, compression_report
from .models import Model
from .optim import SGD
from .prune import apply_mask, gm_mask
from .quant import QuantConfig

log = logging.getLogger(__name__)

PHASES = ("baseline", "spq", "ppq-prune", "ppq-qat")


@dataclass
class TrainConfig:
    epochs_prune: int = 50          # n: baseline / SPQ epochs, PPQ pruning-phase epochs
    epochs_quant: int = 20          # m: PPQ quantization-phase epochs
    stages: int = 2                 # s
    prune_rates: tuple = (0.15, 0.30)  # cumulative per stage; the last is p_max
    lr0: float = 0.1
    lr_quant: float = 0.01
    lr_decay: float = 0.9
    plateau_window: int = 3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    seed: int = 0
    val_fraction: float = 0.1
    weight_quant: QuantConfig = field(default_factory=lambda: QuantConfig(4, 2, signed=True))
    act_quant: QuantConfig = field(default_factory=lambda: QuantConfig(4, 2))
    first_last_bits: int = 8
    augment: bool = False           # random flip + crop on training batches

    def __post_init__(self):
        self.prune_rates = tuple(float(p) for p in self.prune_rates)
        if not self.prune_rates:
            raise ConfigError("prune_rates must not be empty")
        if any(b < a for a, b in zip(self.prune_rates, self.prune_rates[1:])):
            raise ConfigError(f"prune_rates must be nondecreasing, got {self.prune_rates}")
        if not 0 <= self.prune_rates[0] or not self.prune_rates[-1] < 1:
            raise ConfigError(f"prune rates must lie in [0, 1), got {self.prune_rates}")
        if self.batch_size < 1 or self.plateau_window < 1:
            raise ConfigError("batch_size and plateau_window must be positive")
        if self.act_quant.signed:
            raise ConfigError("activations are post-ReLU; use an unsigned quantizer")

    @property
    def p_max(self) -> float:
        return self.prune_rates[-1]

    def iterations(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.batch_size)

    def policy(self, prune_rate: float, quantized: bool) -> Policy:
        if not quantized:
            return Policy(prune_rate=prune_rate)
        return Policy(self.weight_quant.bits, self.act_quant.bits,
                      max(self.first_last_bits, self.weight_quant.bits), prune_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prune_rates"] = list(self.prune_rates)
        return d


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_acc: float
    eval_acc: float
    lr: float
    pruned_fraction: float
    stage: int = 0


@dataclass
class RunResult:
    model: Model
    records: list
    report: dict
    mask_history: list = field(default_factory=list)  # per epoch: {layer: keep array}

    def checkpoint(self):
        return self.model.state()


# ---------------------------------------------------------------- learning rate


def lr_update(lr: float, history, decay: float = 0.9, window: int = 3) -> float:
    """Plateau rule, evaluated after each epoch with the eval-accuracy history so far.

    Every ``window`` epochs the lr decays by ``decay`` unless the best accuracy
    inside the window beats the best accuracy before it. The first window is
    judged against its own first epoch.
    """
    t = len(history)
    if t == 0:
        raise ValueError("accuracy history is empty")
    if t % window:
        return lr
    recent = history[t - window:t]
    before = history[:t - window] if t > window else history[:1]
    return lr if max(recent) > max(before) else lr * decay


class PlateauSchedule:
    def __init__(self, lr0: float, decay: float = 0.9, window: int = 3):
        self.lr, self.decay, self.window = lr0, decay, window
        self.history: list = []

    def step(self, eval_acc: float) -> float:
        self.history.append(eval_acc)
        self.lr = lr_update(self.lr, self.history, self.decay, self.window)
        return self.lr


# ---------------------------------------------------------------- training primitives


def evaluate(model: Model, ds: Dataset, quantized: bool = False, batch_size: int = 256) -> float:
    images = ds.normalized()
    correct = 0
    for start in range(0, len(ds), batch_size):
        logits = model(Tensor(images[start:start + batch_size]), quantized=quantized, training=False)
        correct += int((logits.data.argmax(axis=1) == ds.labels[start:start + batch_size]).sum())
    return correct / len(ds)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _train_epoch(model: Model, opt: SGD, ds: Dataset, images: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator, quantized: bool) -> float:
    total_loss = 0.0
    for idx in _batches(len(ds), cfg.batch_size, rng):
        batch = augment_batch(images[idx], rng) if cfg.augment else images[idx]
        logits = model(Tensor(batch), quantized=quantized, training=True)
        loss = ag.softmax_cross_entropy(logits, ds.labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        total_loss += float(loss.data) * len(idx)
    return total_loss / len(ds)


Callback = Callable[[str, int, Model], None]


def _notify(callbacks, event: str, epoch: int, model: Model) -> None:
    for cb in callbacks or ():
        cb(event, epoch, model)


def _snapshot_masks(model: Model) -> dict:
    return {c.name: (np.ones(c.out_channels, bool) if c.mask is None else c.mask.keep.copy())
            for c in model.convs}


def _run_phase(model, train, val, cfg, *, phase, epochs, lr0, quantized, rng, end_of_epoch=None,
               callbacks=None, records, mask_history, start_epoch=0, stage_fn=lambda: 0):
    opt = SGD(model.parameters(), lr=lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = PlateauSchedule(lr0, cfg.lr_decay, cfg.plateau_window)
    images = train.normalized()
    for e in range(epochs):
        lr_used = opt.lr
        _train_epoch(model, opt, train, images, cfg, rng, quantized)
        if quantized and e == 0:
            model.freeze_activation_ranges()
        _notify(callbacks, "trained", start_epoch + e, model)
        if end_of_epoch is not None:
            end_of_epoch(e, opt)
        train_acc = evaluate(model, train, quantized)
        eval_acc = evaluate(model, val, quantized)
        records.append(EpochRecord(start_epoch + e, phase, train_acc, eval_acc, lr_used,
                                   model.pruned_fraction(), stage_fn()))
        mask_history.append(_snapshot_masks(model))
        opt.lr = sched.step(eval_acc)
        _notify(callbacks, "epoch_end", start_epoch + e, model)
        log.info("%s epoch %d: train %.4f eval %.4f lr %.5g pruned %.3f", phase, start_epoch + e,
                 train_acc, eval_acc, lr_used, model.pruned_fraction())
    return opt


def _split(data, cfg: TrainConfig):
    if isinstance(data, tuple):
        return data
    return train_val_split(data, cfg.val_fraction, cfg.seed)


def build_report(pipeline: str, model: Model, cfg: TrainConfig, records, train: Dataset,
                 prune_rate: float, quantized: bool, test: Optional[Dataset] = None) -> dict:
    image_size = train.images.shape[-1]
    metrics = compression_report(builtin_arch(model.name, image_size), Policy.baseline(),
                                 cfg.policy(prune_rate, quantized))
    last = records[-1] if records else None
    return {
        "schema_version": 1,
        "pipeline": pipeline,
        "model": model.name,
        "epochs": len(records),
        "final": {
            "train_acc": None if last is None else last.train_acc,
            "eval_acc": None if last is None else last.eval_acc,
            "test_acc": None if test is None else evaluate(model, test.with_normalization(train.mean, train.std),
                                                           quantized),
            "pruned_fraction": model.pruned_fraction(),
        },
        "mask_census": model.mask_census(),
        "quant": {"enabled": quantized, "weights": asdict(cfg.weight_quant),
                  "activations": asdict(cfg.act_quant), "first_last_bits": cfg.first_last_bits,
                  "activation_alpha": [aq.alpha for aq in model.activation_quantizers()] if quantized else []},
        "config": cfg.to_dict(),
        "normalization": {"mean": train.mean.tolist(), "std": train.std.tolist()},
        "metrics": metrics,
        "records": [asdict(r) for r in records],
    }


# ---------------------------------------------------------------- pipelines


def train_baseline(model: Model, data, cfg: TrainConfig, epochs: Optional[int] = None,
                   callbacks=None, test: Optional[Dataset] = None) -> RunResult:
    train, val = _split(data, cfg)
    rng = np.random.default_rng(cfg.seed)
    records, history = [], []
    n = cfg.epochs_prune if epochs is None else epochs
    _run_phase(model, train, val, cfg, phase="baseline", epochs=n, lr0=cfg.lr0, quantized=False,
               rng=rng, callbacks=callbacks, records=records, mask_history=history)
    report = build_report("baseline", model, cfg, records, train, 0.0, False, test)
    return RunResult(model, records, report, history)


class _SPQPrune:
    def __init__(self, model: Model, rate: float):
        self.model, self.rate = model, rate

    def __call__(self, epoch: int, opt) -> None:
        for conv in self.model.convs:
            mask = gm_mask(conv.weight, self.rate, conv.name)
            conv.mask = mask
            apply_mask(conv.weight, mask, zero_grad=False)


def run_spq(model: Model, data, cfg: TrainConfig, callbacks=None,
            test: Optional[Dataset] = None) -> RunResult:
    train, val = _split(data, cfg)
    rng = np.random.default_rng(cfg.seed)
    model.configure_quantization(cfg.weight_quant, cfg.act_quant, cfg.first_last_bits)
    for conv in model.convs:
        conv.mask_pass_grad = True  # pruned filters are still updated
    records, history = [], []
    _run_phase(model, train, val, cfg, phase="spq", epochs=cfg.epochs_prune, lr0=cfg.lr0,
               quantized=True, rng=rng, end_of_epoch=_SPQPrune(model, cfg.p_max),
               callbacks=callbacks, records=records, mask_history=history)
    report = build_report("spq", model, cfg, records, train, cfg.p_max, True, test)
    return RunResult(model, records, report, history)


class _PPQStages:
    def __init__(self, model: Model, cfg: TrainConfig):
        self.model, self.cfg, self.stage = model, cfg, 0
        self.period = cfg.epochs_prune // cfg.stages
        self.boundaries: list = []

    def __call__(self, epoch: int, opt) -> None:
        if self.stage >= self.cfg.stages or (epoch + 1) % self.period:
            return
        self.stage += 1
        self.boundaries.append(epoch)
        rate = self.cfg.prune_rates[self.stage - 1]
        for conv in self.model.convs:
            mask = gm_mask(conv.weight, rate, conv.name, previous=conv.mask)
            conv.mask = mask
            apply_mask(conv.weight, mask, zero_grad=True, optim_state=opt.state)


def run_ppq(model: Model, data, cfg: TrainConfig, callbacks=None,
            test: Optional[Dataset] = None) -> RunResult:
    if len(cfg.prune_rates) != cfg.stages:
        raise ConfigError(f"{cfg.stages} stages need {cfg.stages} prune rates, got {len(cfg.prune_rates)}")
    if cfg.stages < 1 or cfg.epochs_prune // cfg.stages < 1:
        raise ConfigError("epochs_prune must be at least the number of stages")
    train, val = _split(data, cfg)
    rng = np.random.default_rng(cfg.seed)
    records, history = [], []

    stages = _PPQStages(model, cfg)
    for conv in model.convs:
        conv.mask_pass_grad = False
    _run_phase(model, train, val, cfg, phase="ppq-prune", epochs=cfg.epochs_prune, lr0=cfg.lr0,
               quantized=False, rng=rng, end_of_epoch=stages, callbacks=callbacks,
               records=records, mask_history=history, stage_fn=lambda: stages.stage)

    # load the pruned model and run QAT with frozen masks
    model.load_state(model.state())
    model.configure_quantization(cfg.weight_quant, cfg.act_quant, cfg.first_last_bits)
    for conv in model.convs:
        if conv.mask is not None:
            apply_mask(conv.weight, conv.mask, zero_grad=True)
    _run_phase(model, train, val, cfg, phase="ppq-qat", epochs=cfg.epochs_quant, lr0=cfg.lr_quant,
               quantized=True, rng=rng, callbacks=callbacks, records=records, mask_history=history,
               start_epoch=cfg.epochs_prune, stage_fn=lambda: stages.stage)
    report = build_report("ppq", model, cfg, records, train, cfg.p_max, True, test)
    report["stage_boundaries"] = stages.boundaries
    return RunResult(model, records, report, history)
