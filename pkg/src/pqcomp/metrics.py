"""Static model-size and BOPs accounting.

Size is the sum over layers of stored weights times weight bit-width; BOPs
is the sum of MACs times weight bits times input-activation bits. Pruned
filters count as removed: a layer keeps ``O - floor(p*O)`` output channels,
and its consumers lose the matching input channels.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .prune import prune_count

ARCH_NAMES = ("resnet20", "resnet32", "resnet56", "resnet110", "vgg16", "desknet-s", "desknet-r8")
BITS_PER_MB = 8e6


class DescriptorError(ValueError):
    pass


@dataclass
class LayerSpec:
    name: str
    kind: str  # "conv" or "fc"
    in_ch: int
    out_ch: int
    kernel_h: int = 1
    kernel_w: int = 1
    out_h: int = 1
    out_w: int = 1
    has_bias: bool = False
    weight_bits: int = 32
    act_in_bits: int = 32
    prune_rate_out: float = 0.0
    prune_rate_in: float = 0.0
    source: Optional[str] = None  # producing layer; None means the network input

    @property
    def kept_out(self) -> int:
        return self.out_ch - prune_count(self.prune_rate_out, self.out_ch)

    @property
    def kept_in(self) -> int:
        return self.in_ch - prune_count(self.prune_rate_in, self.in_ch)

    def param_count(self, effective: bool = True, bias: bool = True) -> int:
        cin, cout = (self.kept_in, self.kept_out) if effective else (self.in_ch, self.out_ch)
        n = cin * cout * self.kernel_h * self.kernel_w
        return n + (cout if bias and self.has_bias else 0)

    def macs(self, effective: bool = True) -> int:
        return self.out_h * self.out_w * self.param_count(effective, bias=False)

    def size_bits(self) -> int:
        return self.param_count() * self.weight_bits

    def bops(self) -> int:
        return self.macs() * self.weight_bits * self.act_in_bits


@dataclass
class ArchDescriptor:
    name: str
    layers: list
    residual: list = field(default_factory=list)  # pairs of layer names whose outputs are summed

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def validate(self) -> None:
        names = {l.name for l in self.layers}
        if len(names) != len(self.layers):
            raise DescriptorError(f"{self.name}: duplicate layer names")
        for l in self.layers:
            if l.kind not in ("conv", "fc"):
                raise DescriptorError(f"{l.name}: unknown kind {l.kind!r}")
            if l.source is not None:
                if l.source not in names:
                    raise DescriptorError(f"{l.name}: unknown source layer {l.source!r}")
                if self.layer(l.source).out_ch != l.in_ch:
                    raise DescriptorError(
                        f"{l.name}: expects {l.in_ch} input channels but {l.source} produces "
                        f"{self.layer(l.source).out_ch}")
        for a, b in self.residual:
            if a not in names or b not in names:
                raise DescriptorError(f"residual link {a}+{b} names an unknown layer")
            if self.layer(a).out_ch != self.layer(b).out_ch:
                raise DescriptorError(f"residual link {a}+{b} sums mismatched channel counts")


@dataclass
class Policy:
    """Bit-widths and pruning applied uniformly, with the first/last layers special-cased.

    ``image_bits`` is the precision of the raw network input fed to the first
    layer; by default it follows the first layer's precision.
    """

    weight_bits: int = 32
    act_bits: int = 32
    first_last_bits: int = 32
    prune_rate: float = 0.0
    prune_fc: bool = False
    image_bits: Optional[int] = None
    overrides: dict = field(default_factory=dict)  # layer name -> {field: value}

    @classmethod
    def baseline(cls) -> "Policy":
        return cls()

    @classmethod
    def reference(cls, prune_rate: float = 0.3, bits: int = 4, first_last_bits: int = 8) -> "Policy":
        return cls(bits, bits, first_last_bits, prune_rate)

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**d)


def apply_policy(arch: ArchDescriptor, policy: Policy) -> list:
    arch.validate()
    last = len(arch.layers) - 1
    rates = {}
    for l in arch.layers:
        prunable = l.kind == "conv" or policy.prune_fc
        rates[l.name] = policy.prune_rate if prunable and l.name != arch.layers[last].name else 0.0
    out = []
    for i, l in enumerate(arch.layers):
        edge = i == 0 or i == last
        wbits = policy.first_last_bits if edge else policy.weight_bits
        if i == 0:
            abits = policy.image_bits if policy.image_bits is not None else policy.first_last_bits
        else:
            abits = policy.first_last_bits if i == last else policy.act_bits
        spec = replace(l, weight_bits=wbits, act_in_bits=abits, prune_rate_out=rates[l.name],
                       prune_rate_in=0.0 if l.source is None else rates[l.source])
        if l.name in policy.overrides:
            spec = replace(spec, **policy.overrides[l.name])
        out.append(spec)
    return out


def model_size(arch: ArchDescriptor, policy: Policy) -> int:
    return sum(s.size_bits() for s in apply_policy(arch, policy))


def bops(arch: ArchDescriptor, policy: Policy) -> int:
    return sum(s.bops() for s in apply_policy(arch, policy))


def total_macs(arch: ArchDescriptor) -> int:
    return sum(l.macs(effective=False) for l in arch.layers)


def compression_report(arch: ArchDescriptor, baseline: Policy, compressed: Policy) -> dict:
    base, comp = apply_policy(arch, baseline), apply_policy(arch, compressed)
    rows = []
    for b, c in zip(base, comp):
        rows.append({
            "layer": c.name, "kind": c.kind,
            "params": b.param_count(effective=False), "params_kept": c.param_count(),
            "macs": b.macs(effective=False), "macs_kept": c.macs(),
            "weight_bits": c.weight_bits, "act_in_bits": c.act_in_bits,
            "survival_out": c.kept_out / c.out_ch, "survival_in": c.kept_in / c.in_ch,
            "size_bits_baseline": b.size_bits(), "size_bits": c.size_bits(),
            "bops_baseline": b.bops(), "bops": c.bops(),
        })
    size_b, size_c = sum(r["size_bits_baseline"] for r in rows), sum(r["size_bits"] for r in rows)
    bops_b, bops_c = sum(r["bops_baseline"] for r in rows), sum(r["bops"] for r in rows)
    return {
        "arch": arch.name,
        "accounting": "pruned filters counted as removed (input and output channels)",
        "size_bits_baseline": size_b, "size_bits_compressed": size_c,
        "size_ratio": size_b / size_c,
        "bops_baseline": bops_b, "bops_compressed": bops_c,
        "bops_ratio": bops_b / bops_c,
        "layers": rows,
    }


# ---------------------------------------------------------------- built-in descriptors


def _conv(name, cin, cout, k, hw, source, bias=False):
    return LayerSpec(name, "conv", cin, cout, k, k, hw, hw, bias, source=source)


def _resnet(depth: int, image_size: int = 32) -> ArchDescriptor:
    if (depth - 2) % 6:
        raise DescriptorError(f"CIFAR ResNet depth must be 6n+2, got {depth}")
    blocks = (depth - 2) // 6
    layers = [_conv("conv1", 3, 16, 3, image_size, None)]
    residual = []
    prev, cin, hw = "conv1", 16, image_size
    for stage, cout in enumerate((16, 32, 64)):
        if stage:
            hw //= 2
        for b in range(blocks):
            tag = f"layer{stage + 1}.{b}"
            layers.append(_conv(f"{tag}.conv1", cin, cout, 3, hw, prev))
            layers.append(_conv(f"{tag}.conv2", cout, cout, 3, hw, f"{tag}.conv1"))
            if cin != cout:
                layers.append(_conv(f"{tag}.shortcut", cin, cout, 1, hw, prev))
                residual.append((f"{tag}.conv2", f"{tag}.shortcut"))
            else:
                residual.append((f"{tag}.conv2", prev))
            prev, cin = f"{tag}.conv2", cout
    layers.append(LayerSpec("fc", "fc", 64, 10, has_bias=True, source=prev))
    return ArchDescriptor(f"resnet{depth}", layers, residual)


def _vgg16(image_size: int = 32) -> ArchDescriptor:
    cfg = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]
    layers, prev, cin, hw = [], None, 3, image_size
    for v in cfg:
        if v == "M":
            hw //= 2
            continue
        name = f"conv{len(layers) + 1}"
        layers.append(_conv(name, cin, v, 3, hw, prev))
        prev, cin = name, v
    flat = cin * hw * hw
    layers.append(LayerSpec("fc1", "fc", flat, 512, has_bias=True, source=prev))
    layers.append(LayerSpec("fc2", "fc", 512, 10, has_bias=True, source="fc1"))
    return ArchDescriptor("vgg16", layers)


def _desknet_s(image_size: int = 32, classes: int = 10) -> ArchDescriptor:
    half = (image_size - 1) // 2 + 1
    return ArchDescriptor("desknet-s", [
        _conv("conv1", 3, 8, 3, image_size, None),
        _conv("conv2", 8, 16, 3, half, "conv1"),
        LayerSpec("fc", "fc", 16, classes, has_bias=True, source="conv2"),
    ])


def _desknet_r8(image_size: int = 32, classes: int = 10) -> ArchDescriptor:
    layers = [_conv("stem", 3, 8, 3, image_size, None)]
    residual, prev, cin, hw = [], "stem", 8, image_size
    for s, c in enumerate((8, 16, 32)):
        if s:
            hw = (hw - 1) // 2 + 1
        layers.append(_conv(f"s{s}.conv1", cin, c, 3, hw, prev))
        layers.append(_conv(f"s{s}.conv2", c, c, 3, hw, f"s{s}.conv1"))
        if cin != c:
            layers.append(_conv(f"s{s}.shortcut", cin, c, 1, hw, prev))
            residual.append((f"s{s}.conv2", f"s{s}.shortcut"))
        else:
            residual.append((f"s{s}.conv2", prev))
        prev, cin = f"s{s}.conv2", c
    layers.append(LayerSpec("fc", "fc", cin, classes, has_bias=True, source=prev))
    return ArchDescriptor("desknet-r8", layers, residual)


def builtin_arch(name: str, image_size: int = 32) -> ArchDescriptor:
    key = name.lower()
    if key.startswith("resnet") and key in ARCH_NAMES:
        arch = _resnet(int(key[6:]), image_size)
    elif key == "vgg16":
        arch = _vgg16(image_size)
    elif key == "desknet-s":
        arch = _desknet_s(image_size)
    elif key == "desknet-r8":
        arch = _desknet_r8(image_size)
    else:
        raise DescriptorError(f"unknown architecture {name!r}; valid names: {', '.join(ARCH_NAMES)}")
    arch.validate()
    return arch


# ---------------------------------------------------------------- descriptor / policy files


def _read_structured(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    from .config import parse_toml

    return parse_toml(text)


def load_arch(path) -> ArchDescriptor:
    """Read a descriptor: ``name``, ``[[layer]]`` tables of LayerSpec fields, ``residual`` pairs."""
    d = _read_structured(path)
    layers = []
    for raw in d.get("layer", d.get("layers", [])):
        raw = dict(raw)
        if "kernel" in raw:
            k = raw.pop("kernel")
            raw.setdefault("kernel_h", k)
            raw.setdefault("kernel_w", k)
        layers.append(LayerSpec(**raw))
    arch = ArchDescriptor(d.get("name", Path(path).stem), layers,
                          [tuple(p) for p in d.get("residual", [])])
    arch.validate()
    return arch


def load_policy(path) -> Policy:
    return Policy.from_dict(_read_structured(path))


def arch_to_dict(arch: ArchDescriptor) -> dict:
    return {"name": arch.name, "layer": [asdict(l) for l in arch.layers],
            "residual": [list(p) for p in arch.residual]}
