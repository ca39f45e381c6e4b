"""Command-line interface: the full workflow in six subcommands.

    gen-data   synthesize a fingerprinted chirp dataset
    train      fit the reference net on the known training split
    classify   per-record ensemble decisions (CSV + distribution figure)
    sweep      accuracy vs lambda for both decision rules (CSV + figure)
    bench      trunk/head caching speedup benchmark (CSV + figure)
    delta      closed-form correction gain vs its Monte Carlo oracle

Every subcommand takes --seed, --config FILE, and --out DIR. Config files are
flat key=value text (see config.py); explicit CLI flags win over the file.
Exit codes: 0 success, 2 config error, 3 data/weights incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import engine, plots
from .config import ConfigError, parse_beta_pairs, read_config, root_seed, take
from .delta import PeakedMixture, delta_closed_form, delta_empirical_stats, estimate_delta_inputs, SoftmaxSampleSet
from .layers import NetSpec, build_network, default_widths
from .netio import WeightFormatError
from .pipeline import accuracy_rows, decide_rows, iq_to_features, lambda_grid, mc_statistics
from .rngutil import derive_rng, derive_seed
from .synthrf import (RECORD_LEN, DatasetManifest, ImpairmentRanges, generate,
                      load_dataset, write_dataset)
from .trainer import TrainConfig, load_model, save_model, train, write_train_log


class IncompatibilityError(Exception):
    """Weights, dataset, and parameters do not fit together."""


DATA_DEFAULTS = dict(
    n_known=44, n_unknown=4, signals_per_tx=1000, snr_db=20.0, oversample=4,
    n_random=1000, train_fraction=0.8, sym_len=256, n_symbols=8,
    random_phase=True, gain_db=1.0, phase_deg=5.0, cfo_hz=2000.0,
    dc_mag=0.02, tau_min=5.0, tau_max=50.0, nonlin_max=0.1,
)
NET_DEFAULTS = dict(n_conv=8, base_channels=16, double_every=2, max_channels=64,
                    dropout_rate=0.5)
TRAIN_DEFAULTS = dict(epochs=15, batch_size=32, lr=0.05, momentum=0.9,
                      decay_factor=0.1, max_shift=50, val_fraction=0.1)
SWEEP_DEFAULTS = dict(k=500, lambda_step=0.05, betas=((0.5, 0.92), (0.0, 1.0)),
                      batch_size=256)
CLASSIFY_DEFAULTS = {"k": 500, "beta1": 0.5, "beta2": 0.92, "lambda": 0.5,
                     "emit_dist": False, "batch_size": 256, "n_plot": 2}
BENCH_DEFAULTS = dict(batch=256, passes=10, warmup=10, n_conv=16,
                      base_channels=16, double_every=4, max_channels=128,
                      n_classes=44, dropout_rate=0.5)
DELTA_DEFAULTS = dict(alphas=(0.5, 0.7, 0.9, 0.99), classes=(5, 10, 44),
                      betas=((0.5, 0.92), (0.0, 1.0)), n_draws=100_000,
                      base_conc=0.25, peak_conc=20.0)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return "" if x is None else str(x)


def _write_csv(path, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _manifest_from(cfg: Dict, seed: int) -> DatasetManifest:
    ranges = ImpairmentRanges(
        gain_db=cfg["gain_db"], phase_deg=cfg["phase_deg"], cfo_hz=cfg["cfo_hz"],
        dc_mag=cfg["dc_mag"], tau_min=cfg["tau_min"], tau_max=cfg["tau_max"],
        nonlin_max=cfg["nonlin_max"])
    try:
        return DatasetManifest(
            n_known=cfg["n_known"], n_unknown=cfg["n_unknown"],
            signals_per_tx=cfg["signals_per_tx"], snr_db=cfg["snr_db"],
            oversample=cfg["oversample"], seed=seed, n_random=cfg["n_random"],
            train_fraction=cfg["train_fraction"], sym_len=cfg["sym_len"],
            n_symbols=cfg["n_symbols"], random_phase=cfg["random_phase"],
            ranges=ranges)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _net_spec_from(cfg: Dict, n_classes: int) -> NetSpec:
    try:
        widths = default_widths(cfg["n_conv"], cfg["base_channels"],
                                cfg["double_every"], cfg["max_channels"])
        return NetSpec(widths=widths, n_classes=n_classes,
                       dropout_rate=cfg["dropout_rate"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_model_for(data_manifest: Optional[DatasetManifest], model_dir):
    try:
        net = load_model(model_dir)
    except (FileNotFoundError, WeightFormatError, ValueError) as exc:
        raise IncompatibilityError(f"cannot load model from {model_dir}: {exc}") from None
    if data_manifest is not None and net.spec.n_classes != data_manifest.n_known:
        raise IncompatibilityError(
            f"model has {net.spec.n_classes} classes but dataset has "
            f"{data_manifest.n_known} known transmitters")
    return net


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    cfg = take(raw, "data.", DATA_DEFAULTS)
    manifest = _manifest_from(cfg, seed)
    ds = generate(manifest)
    out = write_dataset(ds, args.out)
    print(f"wrote {ds.train_iq.shape[0]} train / {ds.test_iq.shape[0]} test records to {out}")
    return 0


def cmd_train(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    ds = load_dataset(args.data)
    net_cfg = take(raw, "net.", NET_DEFAULTS)
    train_cfg_d = take(raw, "train.", TRAIN_DEFAULTS)
    spec = _net_spec_from(net_cfg, n_classes=ds.manifest.n_known)
    try:
        cfg = TrainConfig(seed=seed, **train_cfg_d)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = train(ds, spec, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.net, out)
    write_train_log(result.log_rows, out / "train_log.csv")
    plots.save_train_curves(result.log_rows, out / "train_curves.png")
    print(f"final val acc {result.final_val_acc:.4f}; model written to {out}")
    return 0


def _read_stdin_records() -> np.ndarray:
    data = sys.stdin.buffer.read()
    if len(data) % (8 * RECORD_LEN) != 0:
        raise IncompatibilityError(
            f"stdin holds {len(data)} bytes, not a whole number of "
            f"{RECORD_LEN}-sample float32 IQ records")
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, RECORD_LEN, 2)
    out = np.empty(raw.shape[:2], dtype=np.complex64)
    out.real = raw[:, :, 0]
    out.imag = raw[:, :, 1]
    return out


def cmd_classify(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    cfg = take(raw, "classify.", CLASSIFY_DEFAULTS)
    if not cfg["beta1"] < cfg["beta2"]:
        raise ConfigError("classify.beta1 must be strictly below classify.beta2")
    if not 0.0 <= cfg["lambda"] <= 1.0:
        raise ConfigError("classify.lambda must lie in [0, 1]")
    if args.stdin:
        iq, labels, tags = _read_stdin_records(), None, None
        manifest = None
    else:
        if not args.data:
            raise ConfigError("classify needs --data DIR or --stdin")
        ds = load_dataset(args.data)
        iq, labels, tags, manifest = ds.test_iq, ds.test_labels, ds.test_tags, ds.manifest
    net = _load_model_for(manifest, args.model)
    sn = engine.split(net)
    pair = (cfg["beta1"], cfg["beta2"])
    stats = mc_statistics(sn, iq_to_features(iq), cfg["k"], derive_seed(seed, "classify"),
                          [pair], batch_size=cfg["batch_size"])
    known_ids = manifest.known_ids if manifest else list(range(net.spec.n_classes))
    lam = cfg["lambda"]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["record", "label", "tag", "algorithm", "beta1", "beta2",
              "decision", "category", "peak"]
    if cfg["emit_dist"]:
        header += [f"s_{i}" for i in range(net.spec.n_classes)]
    rows = []
    variants = [("average", None, stats.raw), ("corrected", pair, stats.corrected[pair])]
    for name, p, s in variants:
        is_known, cats, peaks = decide_rows(s, lam)
        for i in range(stats.n):
            row = [i,
                   "" if labels is None else int(labels[i]),
                   "stdin" if tags is None else tags[i],
                   name,
                   None if p is None else p[0],
                   None if p is None else p[1],
                   "known" if is_known[i] else "other",
                   int(known_ids[cats[i]]) if is_known[i] else "",
                   float(peaks[i])]
            if cfg["emit_dist"]:
                row += [float(v) for v in s[i]]
            rows.append(row)
    _write_csv(out / "classify.csv", header, rows)

    entries = []
    seen: Dict[str, int] = {}
    for i in range(stats.n):
        tag = "stdin" if tags is None else tags[i]
        if seen.get(tag, 0) >= cfg["n_plot"]:
            continue
        seen[tag] = seen.get(tag, 0) + 1
        entries.append({
            "title": f"record {i} ({tag})",
            "variants": [("average", stats.raw[i]),
                         (f"corrected ({pair[0]:g}, {pair[1]:g})", stats.corrected[pair][i])],
        })
    if entries:
        plots.save_distribution_figure(entries, out / "distributions.png")
    print(f"classified {stats.n} records (K={cfg['k']}, lambda={lam:g}) -> {out}")
    return 0


def cmd_sweep(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    cfg = take(raw, "sweep.", SWEEP_DEFAULTS)
    ds = load_dataset(args.data)
    net = _load_model_for(ds.manifest, args.model)
    sn = engine.split(net)
    pairs = [tuple(p) for p in cfg["betas"]]
    lambdas = lambda_grid(cfg["lambda_step"])
    stats = mc_statistics(sn, iq_to_features(ds.test_iq), cfg["k"],
                          derive_seed(seed, "classify"), pairs,
                          batch_size=cfg["batch_size"])
    rows = accuracy_rows(stats, ds.test_labels, ds.test_tags,
                         ds.manifest.known_ids, lambdas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv",
               ["algorithm", "beta1", "beta2", "lambda", "signal_type",
                "accuracy", "n_records"],
               [[r.algorithm, r.beta1, r.beta2, r.lam, r.signal_type,
                 r.accuracy, r.n_records] for r in rows])
    plots.save_sweep_figure(rows, out / "sweep_accuracy.png")
    print(f"swept {len(lambdas)} thresholds x {1 + len(pairs)} rules "
          f"on {stats.n} records -> {out}")
    return 0


def cmd_bench(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    cfg = take(raw, "bench.", BENCH_DEFAULTS)
    spec = _net_spec_from(
        dict(n_conv=cfg["n_conv"], base_channels=cfg["base_channels"],
             double_every=cfg["double_every"], max_channels=cfg["max_channels"],
             dropout_rate=cfg["dropout_rate"]),
        n_classes=cfg["n_classes"])
    net = build_network(spec, seed=seed)
    sn = engine.split(net)
    x = derive_rng(seed, "benchdata").standard_normal(
        (cfg["batch"], 2, RECORD_LEN)).astype(np.float32)
    result = engine.benchmark(sn, x, passes=cfg["passes"], warmup=cfg["warmup"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    row = {"trunk_ms": result.trunk_seconds * 1e3, "head_ms": result.head_seconds * 1e3,
           "ratio": result.ratio, "batch": cfg["batch"], "K": cfg["passes"],
           "depth": spec.n_conv}
    _write_csv(out / "bench.csv",
               ["trunk_ms", "head_ms", "ratio", "batch", "K", "depth"],
               [[row[k] for k in ("trunk_ms", "head_ms", "ratio", "batch", "K", "depth")]])
    plots.save_bench_figure([row], out / "bench_times.png")
    print(f"trunk {row['trunk_ms']:.2f} ms, head {row['head_ms']:.3f} ms, "
          f"ratio {row['ratio']:.1f} -> {out}")
    return 0


def cmd_delta(args, raw) -> int:
    seed = root_seed(raw, args.seed)
    cfg = take(raw, "delta.", DELTA_DEFAULTS)
    pairs = [tuple(p) for p in cfg["betas"]]
    out_rows: List[dict] = []
    for C in cfg["classes"]:
        for alpha in cfg["alphas"]:
            model = PeakedMixture(C=int(C), alpha=float(alpha),
                                  base_conc=cfg["base_conc"],
                                  peak_conc=cfg["peak_conc"],
                                  seed=derive_seed(seed, "delta", C, alpha))
            draws_est = model.draw(cfg["n_draws"], 0,
                                   derive_rng(model.seed, "estimate"))
            sample = SoftmaxSampleSet(draws_est, np.zeros(cfg["n_draws"], dtype=np.int64))
            for b1, b2 in pairs:
                from .probcore import CorrectionParams
                params = CorrectionParams(b1, b2)
                d = estimate_delta_inputs(sample, b1, b2)
                emp = delta_empirical_stats(model, 0, params, cfg["n_draws"],
                                            derive_rng(model.seed, "empirical"))
                out_rows.append({
                    "model": "peaked_mixture", "C": int(C), "alpha": float(alpha),
                    "base_conc": cfg["base_conc"], "peak_conc": cfg["peak_conc"],
                    "beta1": b1, "beta2": b2, "n_draws": cfg["n_draws"],
                    "delta_closed": delta_closed_form(d),
                    "delta_empirical": emp.delta, "se_empirical": emp.se,
                    "theorem1_holds": delta_closed_form(d) > 0.0,
                })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["model", "C", "alpha", "base_conc", "peak_conc", "beta1", "beta2",
            "n_draws", "delta_closed", "delta_empirical", "se_empirical",
            "theorem1_holds"]
    _write_csv(out / "delta.csv", cols, [[r[c] for c in cols] for r in out_rows])
    plots.save_delta_figure(out_rows, out / "delta_gain.png")
    print(f"evaluated {len(out_rows)} gain configurations -> {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitdrop",
        description="Cached-trunk MC dropout with error-corrected open-set ensembles")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="root seed (wins over the config file)")
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--out", type=str, default="out", help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)

    p = sub.add_parser("train", help="train the reference net")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")

    p = sub.add_parser("classify", help="per-record ensemble decisions")
    common(p)
    p.add_argument("--model", required=True, help="model directory from train")
    p.add_argument("--data", default=None, help="dataset directory (test split)")
    p.add_argument("--stdin", action="store_true",
                   help="read interleaved float32 IQ records from stdin")

    p = sub.add_parser("sweep", help="accuracy vs lambda for both rules")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("bench", help="trunk/head caching benchmark")
    common(p)

    p = sub.add_parser("delta", help="closed-form gain vs Monte Carlo oracle")
    common(p)
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "classify": cmd_classify,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "delta": cmd_delta,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = read_config(args.config) if args.config else {}
        return _COMMANDS[args.command](args, raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IncompatibilityError as exc:
        print(f"incompatible inputs: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
