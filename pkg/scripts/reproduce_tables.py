"""Print uncompressed sizes and compression ratios for the CIFAR architectures.

Targets are the reference figures; the per-layer breakdown shows where each
layer's share of the compressed size and BOPs comes from.

    python scripts/reproduce_tables.py [--layers resnet20]
"""
import argparse

from pqcomp.metrics import Policy, builtin_arch, compression_report, model_size

TARGET_MB = {"resnet20": 1.08, "resnet32": 1.86, "resnet56": 3.41, "resnet110": 6.89, "vgg16": 59.91}
TARGET_RATIOS = {
    "resnet20": (15.78, 115.85), "resnet32": (15.84, 118.18), "resnet56": (15.89, 119.88),
    "resnet110": (15.94, 120.95), "vgg16": (15.95, 126.24),
}


def summary() -> None:
    print(f"{'arch':<10} {'MB':>8} {'target':>7} {'gap':>7} | {'size x':>7} {'target':>7} {'gap':>7}"
          f" | {'BOPs x':>7} {'target':>7} {'gap':>7}")
    for name, mb_t in TARGET_MB.items():
        arch = builtin_arch(name)
        mb = model_size(arch, Policy.baseline()) / 8e6
        rep = compression_report(arch, Policy.baseline(), Policy.reference())
        size_t, bops_t = TARGET_RATIOS[name]
        print(f"{name:<10} {mb:>8.3f} {mb_t:>7.2f} {mb / mb_t - 1:>+7.2%} | "
              f"{rep['size_ratio']:>7.2f} {size_t:>7.2f} {rep['size_ratio'] / size_t - 1:>+7.2%} | "
              f"{rep['bops_ratio']:>7.2f} {bops_t:>7.2f} {rep['bops_ratio'] / bops_t - 1:>+7.2%}")


def per_layer(name: str) -> None:
    rep = compression_report(builtin_arch(name), Policy.baseline(), Policy.reference())
    print(f"\n{name}: per-layer contributions")
    print(f"{'layer':<22} {'w/a bits':>8} {'keep out/in':>12} {'size share':>10} {'BOPs share':>10}")
    for r in rep["layers"]:
        print(f"{r['layer']:<22} {r['weight_bits']:>4}/{r['act_in_bits']:<3} "
              f"{r['survival_out']:>6.2f}/{r['survival_in']:<5.2f} "
              f"{r['size_bits'] / rep['size_bits_compressed']:>10.2%} {r['bops'] / rep['bops_compressed']:>10.2%}")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--layers", nargs="*", default=[], help="architectures to break down per layer")
    args = p.parse_args()
    summary()
    for name in args.layers:
        per_layer(name)


if __name__ == "__main__":
    main()
