"""Desk-scale CNNs built on the autograd engine.

Both nets are batch-norm free and their convolutions carry no bias, so a
masked filter produces an output channel that is exactly zero.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .prune import PruneMask
from .quant import ActivationQuantizer, QuantConfig, quantize_tensor_ste

MODEL_NAMES = ("desknet-s", "desknet-r8")


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class QConv:
    def __init__(self, name: str, cin: int, cout: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator):
        self.name = name
        self.weight = ag.parameter(he_normal(rng, (cout, cin, k, k), cin * k * k), name=name)
        self.stride, self.pad = stride, pad
        self.wq: QuantConfig = QuantConfig(32)
        self.aq: Optional[ActivationQuantizer] = None
        self.mask: Optional[PruneMask] = None
        self.mask_pass_grad = False
        self.last_output: Optional[np.ndarray] = None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor, quantized: bool = False, training: bool = False) -> Tensor:
        w = self.weight
        if quantized:
            if self.aq is not None:
                x = self.aq(x, training)
            w = quantize_tensor_ste(w, self.wq)
        if self.mask is not None and self.mask.pruned_count:
            w = ag.mul_rows(w, self.mask.keep, pass_grad=self.mask_pass_grad)
        out = ag.conv2d(x, w, None, self.stride, self.pad)
        self.last_output = out.data
        return out


class QLinear:
    def __init__(self, name: str, fin: int, fout: int, rng: np.random.Generator):
        self.name = name
        self.weight = ag.parameter(he_normal(rng, (fout, fin), fin), name=name)
        self.bias = ag.parameter(np.zeros(fout, dtype=np.float32), name=name + ".bias")
        self.wq: QuantConfig = QuantConfig(32)
        self.aq: Optional[ActivationQuantizer] = None

    def __call__(self, x: Tensor, quantized: bool = False, training: bool = False) -> Tensor:
        w = self.weight
        if quantized:
            if self.aq is not None:
                x = self.aq(x, training)
            w = quantize_tensor_ste(w, self.wq)
        return ag.linear(x, w, self.bias)


class Model:
    """Ordered collection of conv layers plus one classifier head."""

    name = "model"

    def __init__(self):
        self.convs: list[QConv] = []
        self.fc: Optional[QLinear] = None

    def parameters(self) -> list[Tensor]:
        return [c.weight for c in self.convs] + [self.fc.weight, self.fc.bias]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters()]

    def forward(self, x: Tensor, quantized: bool = False, training: bool = False) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor, quantized: bool = False, training: bool = False) -> Tensor:
        return self.forward(x, quantized, training)

    def configure_quantization(self, weights: QuantConfig, activations: QuantConfig,
                               first_last_bits: int = 8) -> None:
        """Body layers use the given configs; first and last layers use ``first_last_bits``.

        The first conv reads raw image data, so its input is left unquantized.
        """
        edge = max(first_last_bits, weights.bits)

        def widen(cfg: QuantConfig, bits: int) -> QuantConfig:
            return QuantConfig(bits, cfg.k, cfg.signed, cfg.clip, cfg.percentile) if bits != cfg.bits else cfg

        for i, conv in enumerate(self.convs):
            if i == 0:
                conv.wq, conv.aq = widen(weights, edge), None
            else:
                conv.wq, conv.aq = weights, ActivationQuantizer(activations)
        self.fc.wq = widen(weights, edge)
        self.fc.aq = ActivationQuantizer(widen(activations, max(first_last_bits, activations.bits)))

    def activation_quantizers(self) -> list[ActivationQuantizer]:
        found = [c.aq for c in self.convs if c.aq is not None]
        if self.fc.aq is not None:
            found.append(self.fc.aq)
        return found

    def freeze_activation_ranges(self) -> None:
        for aq in self.activation_quantizers():
            aq.freeze()

    def masks(self) -> dict[str, Optional[PruneMask]]:
        return {c.name: c.mask for c in self.convs}

    def mask_census(self) -> dict[str, dict]:
        return {c.name: {"filters": c.out_channels,
                         "pruned": 0 if c.mask is None else c.mask.pruned_count}
                for c in self.convs}

    def pruned_fraction(self) -> float:
        total = sum(c.out_channels for c in self.convs)
        pruned = sum(0 if c.mask is None else c.mask.pruned_count for c in self.convs)
        return pruned / total

    def _quantized_inputs(self):
        return [(c.name, c) for c in self.convs] + [(self.fc.name, self.fc)]

    def state(self) -> list[tuple[str, np.ndarray, Optional[np.ndarray]]]:
        """Checkpoint entries: weights, masks, and any activation thresholds."""
        out = [(c.name, c.weight.data.copy(), None if c.mask is None else c.mask.keep.copy())
               for c in self.convs]
        out += [(self.fc.weight.name, self.fc.weight.data.copy(), None),
                (self.fc.bias.name, self.fc.bias.data.copy(), None)]
        for name, layer in self._quantized_inputs():
            if layer.aq is not None and not layer.aq.config.passthrough:
                out.append((f"{name}.act_alpha", np.array([layer.aq.alpha], dtype=np.float32), None))
        return out

    def load_state(self, entries) -> None:
        by_name = {name: (data, keep) for name, data, keep in entries}
        for name, p in self.named_parameters():
            if name not in by_name:
                raise KeyError(f"checkpoint has no entry for {name!r}")
            data, keep = by_name[name]
            if data.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {data.shape} != model shape {p.shape}")
            p.data = np.array(data, dtype=np.float32)
        for c in self.convs:
            keep = by_name[c.name][1]
            c.mask = None if keep is None else PruneMask(c.name, keep.astype(bool))
        for name, layer in self._quantized_inputs():
            key = f"{name}.act_alpha"
            if key in by_name and layer.aq is not None:
                layer.aq.alpha = float(by_name[key][0][0])
                layer.aq.freeze()

    def activation_alphas(self, entries) -> dict:
        return {name[:-len(".act_alpha")]: float(data[0]) for name, data, _ in entries
                if name.endswith(".act_alpha")}


class DeskNetS(Model):
    """conv3x3(3->w1) -> relu -> conv3x3/2(w1->w2) -> relu -> GAP -> fc."""

    name = "desknet-s"

    def __init__(self, num_classes: int = 10, widths=(8, 16), seed: int = 0, in_channels: int = 3):
        super().__init__()
        rng = np.random.default_rng(seed)
        w1, w2 = widths
        self.convs = [QConv("conv1", in_channels, w1, 3, 1, 1, rng),
                      QConv("conv2", w1, w2, 3, 2, 1, rng)]
        self.fc = QLinear("fc", w2, num_classes, rng)

    def forward(self, x, quantized=False, training=False):
        h = ag.relu(self.convs[0](x, quantized, training))
        h = ag.relu(self.convs[1](h, quantized, training))
        return self.fc(ag.global_avg_pool(h), quantized, training)


class DeskNetR8(Model):
    """Three-stage residual net, one basic block per stage (conv-relu only)."""

    name = "desknet-r8"

    def __init__(self, num_classes: int = 10, widths=(8, 16, 32), seed: int = 0, in_channels: int = 3):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.convs = [QConv("stem", in_channels, widths[0], 3, 1, 1, rng)]
        self.blocks = []
        cin = widths[0]
        for s, c in enumerate(widths):
            stride = 1 if s == 0 else 2
            c1 = QConv(f"s{s}.conv1", cin, c, 3, stride, 1, rng)
            c2 = QConv(f"s{s}.conv2", c, c, 3, 1, 1, rng)
            sc = QConv(f"s{s}.shortcut", cin, c, 1, stride, 0, rng) if (stride != 1 or cin != c) else None
            self.convs += [c1, c2] + ([sc] if sc else [])
            self.blocks.append((c1, c2, sc))
            cin = c
        self.fc = QLinear("fc", cin, num_classes, rng)

    def forward(self, x, quantized=False, training=False):
        h = ag.relu(self.convs[0](x, quantized, training))
        for c1, c2, sc in self.blocks:
            y = c2(ag.relu(c1(h, quantized, training)), quantized, training)
            skip = h if sc is None else sc(h, quantized, training)
            h = ag.relu(ag.add(y, skip))
        return self.fc(ag.global_avg_pool(h), quantized, training)


def build_model(name: str, num_classes: int = 10, seed: int = 0) -> Model:
    if name == "desknet-s":
        return DeskNetS(num_classes, seed=seed)
    if name == "desknet-r8":
        return DeskNetR8(num_classes, seed=seed)
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
