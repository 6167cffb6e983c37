"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` or
``python tests/test_acceptance.py``. Every tolerance is pinned below.
"""
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from pqcomp import autograd as ag
from pqcomp import checkpoint, optim
from pqcomp.autograd import Tensor
from pqcomp.config import data_spec, load_datasets, load_toml, train_config_from_dict
from pqcomp.metrics import Policy, builtin_arch, compression_report, model_size
from pqcomp.models import QConv, build_model
from pqcomp.pipelines import PlateauSchedule, run_ppq, run_spq, train_baseline
from pqcomp.prune import gm_mask
from pqcomp.quant import QuantConfig, build_level_set, max_raw_level, quantize_array
from pqcomp.shiftmac import verify_equivalence
from tests.helpers import brute_prune_set, central_difference, max_rel_err

SIZE_TOL = 0.02          # criterion 1, relative
RATIO_TOL = 0.05         # criterion 2, relative
ORACLE_SAMPLES = 10_000  # criterion 4, inputs per config
GM_LAYERS, GM_SCALES = 200, 20   # criterion 5
GRAD_TOL = 1e-5          # criterion 7, max relative error in float64
LR_TOL = 1e-12           # criterion 10, relative
MIN_BASELINE_TRAIN = 0.95    # criterion 11
MAX_DROP = 0.05              # criterion 11, accuracy points vs baseline on held-out data
PPQ_VS_SPQ_SLACK = 0.02      # criterion 11
BASELINE_EPOCH_BUDGET = 50   # criterion 11

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.toml"

TARGET_MB = {"resnet20": 1.08, "resnet32": 1.86, "resnet56": 3.41, "resnet110": 6.89, "vgg16": 59.91}
TARGET_RATIOS = {  # (size, BOPs)
    "resnet20": (15.78, 115.85), "resnet32": (15.84, 118.18), "resnet56": (15.89, 119.88),
    "resnet110": (15.94, 120.95), "vgg16": (15.95, 126.24),
}


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" | {detail}" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"
    return emit


# ---------------------------------------------------------------- analytic reproductions


def test_criterion_01_uncompressed_sizes(verdict):
    rows = []
    ok = True
    for name, target in TARGET_MB.items():
        mb = model_size(builtin_arch(name), Policy.baseline()) / 8e6
        err = abs(mb - target) / target
        ok &= err <= SIZE_TOL
        rows.append(f"{name} {mb:.3f}MB ({err:+.2%})")
    verdict(1, f"uncompressed sizes within {SIZE_TOL:.0%}", ok, "; ".join(rows))


def test_criterion_02_compression_ratios(verdict):
    rows = []
    ok = True
    for name, (size_t, bops_t) in TARGET_RATIOS.items():
        report = compression_report(builtin_arch(name), Policy.baseline(), Policy.reference())
        es = abs(report["size_ratio"] - size_t) / size_t
        eb = abs(report["bops_ratio"] - bops_t) / bops_t
        itemized = sum(r["size_bits"] for r in report["layers"]) == report["size_bits_compressed"]
        ok &= es <= RATIO_TOL and eb <= RATIO_TOL and itemized
        rows.append(f"{name} x{report['size_ratio']:.2f}/x{report['bops_ratio']:.2f} ({es:.1%},{eb:.1%})")
    verdict(2, f"size/BOPs ratios within {RATIO_TOL:.0%}, per-layer rows present", ok, "; ".join(rows))


def test_criterion_03_level_counts_and_resolution(verdict):
    supported = [(b, k) for b in (2, 3, 4, 8) for k in (1, 2) if b % k == 0]
    counts = {(b, k): len(np.unique(build_level_set(QuantConfig(b, k), 1.0).levels)) for b, k in supported}
    ok = all(counts[(b, k)] == 2 ** b for b, k in supported)
    # signed sets: 2^b codes (sign bit + b-1 magnitude bits); +0 and -0 share a value
    signed = [(b, k) for b in (2, 3, 4, 8) for k in (1, 2)]
    signed_ok = all(build_level_set(QuantConfig(b, k, signed=True), 1.0).code_count == 2 ** b and
                    len(build_level_set(QuantConfig(b, k, signed=True), 1.0).levels) == 2 ** b - 1
                    for b, k in signed)
    lv = build_level_set(QuantConfig(4, 2), 1.0).levels
    near_zero, near_alpha = lv[1] - lv[0], lv[-1] - lv[-2]
    ok &= signed_ok and near_zero < near_alpha
    verdict(3, "2^b distinct levels per supported (b,k); finer gap near 0 for b=4,k=2", ok,
            f"counts {dict((f'b{b}k{k}', c) for (b, k), c in counts.items())}; signed codes 2^b "
            f"(2^b-1 distinct) {signed_ok}; gaps {near_zero:.4f} < {near_alpha:.4f}")


# ---------------------------------------------------------------- oracle-equivalence suites


def _exhaustive_nearest(x, levels):
    """Full |x - level| table, then the smallest distance with ties to the smaller magnitude."""
    xc = np.clip(x, levels[0], levels[-1])
    d = np.abs(xc[:, None] - levels[None, :])
    tied = d == d.min(axis=1, keepdims=True)
    mag = np.where(tied, np.abs(levels)[None, :], np.inf)
    return levels[mag.argmin(axis=1)]


def test_criterion_04_projection_oracle(verdict):
    rng = np.random.default_rng(4)
    configs = [QuantConfig(b, k) for b in (2, 3, 4, 8) for k in (1, 2) if b % k == 0]
    configs += [QuantConfig(b, k, signed=True) for b in (2, 3, 4, 8) for k in (1, 2)]
    failures = []
    for cfg in configs:
        ls = build_level_set(cfg, float(rng.uniform(0.2, 3.0)))
        # spread past alpha, plus exact levels and exact midpoints to exercise ties
        x = rng.uniform(-1.5 * ls.alpha, 1.5 * ls.alpha, ORACLE_SAMPLES)
        x[:len(ls.levels)] = ls.levels
        mids = (ls.levels[1:] + ls.levels[:-1]) / 2
        x[len(ls.levels):len(ls.levels) + len(mids)] = mids
        q = quantize_array(x, ls)
        order = np.argsort(x)
        checks = {
            "oracle": np.array_equal(q, _exhaustive_nearest(x, ls.levels)),
            "idempotent": np.array_equal(quantize_array(q, ls), q),
            "monotone": bool(np.all(np.diff(q[order]) >= 0)),
            "symmetric": (not cfg.signed) or np.array_equal(quantize_array(-x, ls), -q),
        }
        failures += [f"b{cfg.bits}k{cfg.k}{'s' if cfg.signed else 'u'}:{k}" for k, v in checks.items() if not v]
    verdict(4, f"nearest-level projection vs exhaustive argmin, {ORACLE_SAMPLES} inputs x {len(configs)} configs",
            not failures, "all properties hold" if not failures else ", ".join(failures))


def test_criterion_05_gm_oracle(verdict):
    rng = np.random.default_rng(5)
    mismatches = scale_breaks = 0
    for _ in range(GM_LAYERS):
        o, d = int(rng.integers(2, 9)), int(rng.integers(1, 19))
        w = rng.standard_normal((o, d))
        rate = float(rng.uniform(0, 0.99))
        picked = set(gm_mask(w, rate).pruned.tolist())
        mismatches += picked != brute_prune_set(w, rate)
        for c in rng.uniform(0, 10, GM_SCALES):
            c = max(c, 1e-3)  # the interval is open at 0
            scale_breaks += set(gm_mask(w * c, rate).pruned.tolist()) != picked
    verdict(5, f"GM selection vs O(n^2) oracle on {GM_LAYERS} layers; {GM_SCALES} scales each",
            mismatches == 0 and scale_breaks == 0, f"oracle mismatches {mismatches}, scale breaks {scale_breaks}")


def test_criterion_06_shift_mac_exhaustive(verdict):
    rows, total_bad = [], 0
    for b in (2, 4):
        for k in (1, 2):
            acts = build_level_set(QuantConfig(b, k), max_raw_level(QuantConfig(b, k)))
            for signed in (False, True):
                wcfg = QuantConfig(b, k, signed=signed)
                for alpha in (max_raw_level(wcfg), 0.731):
                    rep = verify_equivalence(build_level_set(wcfg, alpha), acts, strict=False)
                    total_bad += rep.mismatches
                    rows.append(rep.pairs)
    verdict(6, "shift-add == exact product for b in {2,4}, k in {1,2}", total_bad == 0,
            f"{sum(rows)} pairs over {len(rows)} set combinations, {total_bad} mismatches")


def test_criterion_07_finite_differences(verdict):
    rng = np.random.default_rng(7)
    worst = {}

    def check(name, build, arrays):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = build(*leaves)
        probe = rng.standard_normal(out.shape) if out.data.ndim else np.float64(1.0)
        out.backward(probe if out.data.ndim else None)
        f = lambda: float((build(*[Tensor(a) for a in arrays]).data * probe).sum())
        err = max(max_rel_err(l.grad, central_difference(f, a)) for l, a in zip(leaves, arrays))
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(3):
        n, c, o, s = (int(v) for v in rng.integers(1, 5, 4))
        size = int(rng.integers(4, 9))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        check("conv", lambda x, w, b: ag.conv2d(x, w, b, stride, pad),
              [rng.standard_normal((n, c, size, size)), rng.standard_normal((o, c, 3, 3)), rng.standard_normal(o)])
        check("linear", ag.linear, [rng.standard_normal((n, 6)), rng.standard_normal((s, 6)), rng.standard_normal(s)])
        x = rng.standard_normal((n, c, size, size))
        check("relu", ag.relu, [np.where(np.abs(x) < 0.05, 0.5, x)])
        check("pool", ag.global_avg_pool, [rng.standard_normal((n, c, size, size))])
        labels = rng.integers(0, 4, n)
        check("loss", lambda z: ag.softmax_cross_entropy(z, labels), [rng.standard_normal((n, 4))])
    ok = all(v < GRAD_TOL for v in worst.values())
    verdict(7, f"finite-difference gradients, rel err < {GRAD_TOL:g}", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# ---------------------------------------------------------------- desk-scale pipelines


@pytest.fixture(scope="module")
def desk():
    raw = load_toml(DESK_CONFIG)
    cfg = train_config_from_dict(raw)
    train, test = load_datasets(data_spec(raw))
    name = raw["model"]
    return name, cfg, train, test


class _ForwardAudit:
    """Checks every masked conv forward for exactly-zero masked output channels."""

    def __init__(self, monkeypatch):
        self.calls = self.masked_calls = self.violations = 0
        real = QConv.__call__
        audit = self

        def audited(conv, x, quantized=False, training=False):
            out = real(conv, x, quantized, training)
            audit.calls += 1
            if conv.mask is not None and conv.mask.pruned_count:
                audit.masked_calls += 1
                audit.violations += bool(out.data[:, ~conv.mask.keep].any())
            return out

        monkeypatch.setattr(QConv, "__call__", audited)


@pytest.fixture(scope="module")
def desk_runs(desk):
    name, cfg, train, test = desk
    mp = pytest.MonkeyPatch()
    out = {}
    try:
        out["baseline"] = train_baseline(build_model(name, train.num_classes, cfg.seed), train, cfg, test=test)

        audit = _ForwardAudit(mp)
        pre, post = [], []

        def spq_watch(event, epoch, model):
            snap = {c.name: c.weight.data.copy() for c in model.convs}
            if event == "trained":
                pre.append((snap, {c.name: gm_mask(c.weight, cfg.p_max, c.name).keep for c in model.convs}))
            else:
                post.append(snap)

        out["spq"] = run_spq(build_model(name, train.num_classes, cfg.seed), train, cfg,
                             callbacks=[spq_watch], test=test)
        out["spq_audit"], out["spq_pre"], out["spq_post"] = audit, pre, post
        mp.undo()

        model = build_model(name, train.num_classes, cfg.seed)
        steps = []
        real_step = optim.SGD.step

        def step(self):
            real_step(self)
            if any(c.mask is not None for c in model.convs):
                steps.append((self.lr, all(c.mask is None or not c.weight.data[~c.mask.keep].any()
                                          for c in model.convs)))

        mp.setattr(optim.SGD, "step", step)
        out["ppq"] = run_ppq(model, train, cfg, test=test)
        out["ppq_steps"] = steps
    finally:
        mp.undo()
    return out


@pytest.mark.slow
def test_criterion_08_spq_semantics(verdict, desk, desk_runs):
    result, audit = desk_runs["spq"], desk_runs["spq_audit"]
    pre, post = desk_runs["spq_pre"], desk_runs["spq_post"]
    recomputed = all(all(np.array_equal(want[k], got[k]) for k in want)
                     for (_, want), got in zip(pre, result.mask_history))
    moved = []
    for e in range(len(post) - 1):
        for layer, keep in result.mask_history[e].items():
            for j in np.flatnonzero(~keep):
                moved.append(bool(pre[e + 1][0][layer][j].any()))
    ok = audit.violations == 0 and audit.masked_calls > 0 and any(moved) and recomputed
    verdict(8, "SPQ: masked outputs exactly 0, pruned weights updated, masks re-selected each epoch", ok,
            f"{audit.masked_calls} masked forwards, {audit.violations} nonzero; "
            f"{sum(moved)}/{len(moved)} masked filters changed by next epoch; recomputed={recomputed}")


@pytest.mark.slow
def test_criterion_09_ppq_semantics(verdict, desk, desk_runs):
    _, cfg, _, _ = desk
    result, steps = desk_runs["ppq"], desk_runs["ppq_steps"]
    period = cfg.epochs_prune // cfg.stages
    expected_bounds = [period * (i + 1) - 1 for i in range(cfg.stages)]
    layers = result.mask_history[0].keys()
    monotone = all(not (~a[l] & b[l]).any() for a, b in zip(result.mask_history, result.mask_history[1:])
                   for l in layers)
    qat = [r for r in result.records if r.phase == "ppq-qat"]
    frozen = all(ok for _, ok in steps)
    ok = (monotone and frozen and result.report["stage_boundaries"] == expected_bounds
          and qat[0].lr == cfg.lr_quant == 0.01 and len(steps) > 0)
    verdict(9, "PPQ: monotone masks, pruned weights 0 at every step, stage boundaries, phase-2 lr 0.01", ok,
            f"boundaries {result.report['stage_boundaries']} (want {expected_bounds}), "
            f"{len(steps)} post-pruning steps all frozen={frozen}, phase-2 lr {qat[0].lr}")


def test_criterion_10_lr_schedule(verdict):
    sched = PlateauSchedule(0.1, 0.9, 3)
    flat = [sched.step(0.42) for _ in range(9)][-1]
    rng = np.random.default_rng(10)
    nonincreasing = True
    for _ in range(200):
        s = PlateauSchedule(0.1)
        lrs = [0.1] + [s.step(a) for a in rng.uniform(0, 1, int(rng.integers(1, 40)))]
        nonincreasing &= all(b <= a for a, b in zip(lrs, lrs[1:]))
    ok = abs(flat - 0.1 * 0.9 ** 3) <= LR_TOL * 0.0729 and nonincreasing
    verdict(10, "flat 9-epoch history gives 0.1*0.9^3; lr nonincreasing on 200 random histories", ok,
            f"lr={flat!r}")


@pytest.mark.slow
def test_criterion_11_accuracy_retention(verdict, desk, desk_runs):
    _, cfg, _, test = desk
    base, spq, ppq = desk_runs["baseline"], desk_runs["spq"], desk_runs["ppq"]
    reached = next((r.epoch + 1 for r in base.records if r.train_acc >= MIN_BASELINE_TRAIN), None)
    acc = {k: r.report["final"]["test_acc"] for k, r in (("baseline", base), ("spq", spq), ("ppq", ppq))}
    ok = (reached is not None and reached <= BASELINE_EPOCH_BUDGET
          and acc["spq"] >= acc["baseline"] - MAX_DROP and acc["ppq"] >= acc["baseline"] - MAX_DROP
          and acc["ppq"] >= acc["spq"] - PPQ_VS_SPQ_SLACK)
    verdict(11, "desk accuracy retention (held-out split)", ok,
            f"baseline hit {MIN_BASELINE_TRAIN:.0%} train at epoch {reached}; held-out acc "
            + ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
            + f"; pruned {ppq.report['final']['pruned_fraction']:.3f}, held-out n={len(test)}")


@pytest.mark.slow
def test_criterion_12_determinism(verdict, desk):
    name, cfg, train, test = desk
    from dataclasses import replace
    short = replace(cfg, epochs_prune=4, epochs_quant=2)
    same = {}
    for label, fn in (("baseline", train_baseline), ("spq", run_spq), ("ppq", run_ppq)):
        runs = [fn(build_model(name, train.num_classes, short.seed), train, short, test=test) for _ in range(2)]
        blobs = [checkpoint.dumps(r.checkpoint()) for r in runs]
        reports = [json.dumps(r.report, sort_keys=True, default=float) for r in runs]
        same[label] = blobs[0] == blobs[1] and reports[0] == reports[1]
    verdict(12, "identical config + seed gives bitwise-identical checkpoint and report", all(same.values()),
            ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
