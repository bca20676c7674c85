"""Command-line entry point wiring the pipeline into workflows.

Subcommands: extract, fit-baseline, train, eval, serve, simulate, bench,
flood, report.  Every run writes one manifest JSON next to its outputs;
each subcommand exits nonzero on any error raised by the operation it
wraps.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import forest as forest_mod
from . import lof as lof_mod
from . import metrics as metrics_mod
from .manifest import RunManifest
from .models import ModelBundle
from .relay import RelayConfig, run_relay
from .telemetry import (FEATURE_NAMES, Sensor, fit_baseline, load_baselines,
                        read_feature_csv, save_baselines, write_feature_csv)
from .train import macro_accuracy, train_models


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(args, name: str, seeds=None) -> RunManifest:
    cfg = {k: v for k, v in vars(args).items()
           if k != "func" and v is not None}
    return RunManifest(command=name, config=cfg, seeds=seeds or [])


def cmd_extract(args) -> int:
    from .simlab.dataset import load_trace

    man = _manifest(args, "extract")
    man.add_input(args.trace)
    baselines = None
    if args.baselines:
        baselines = load_baselines(args.baselines)
        man.add_input(args.baselines)
    sensor = Sensor(baselines=baselines)
    vectors = []
    for tp in load_trace(args.trace):
        fv = sensor.ingest(tp.meta)
        fv.label = tp.label
        vectors.append(fv)
    out = _out_dir(args)
    csv_path = os.path.join(out, "features.csv")
    write_feature_csv(csv_path, vectors)
    man.add_output(csv_path)
    man.write(os.path.join(out, "extract.manifest.json"))
    print(f"extracted {len(vectors)} feature rows -> {csv_path}")
    return 0


def cmd_fit_baseline(args) -> int:
    from .simlab.dataset import load_trace

    man = _manifest(args, "fit-baseline")
    man.add_input(args.trace)
    packets = [tp.meta for tp in load_trace(args.trace)
               if tp.label in (None, "Normal")]
    fit = fit_baseline(packets)
    if not fit.histograms:
        print("error: no peer reached the minimum packet count",
              file=sys.stderr)
        return 1
    out = _out_dir(args)
    path = os.path.join(out, "baselines.json")
    save_baselines(fit, path)
    man.add_output(path)
    man.write(os.path.join(out, "fit-baseline.manifest.json"))
    for peer, n in fit.skipped.items():
        print(f"skipped {peer}: only {n} packets")
    print(f"fitted {len(fit.histograms)} peer baselines -> {path}")
    return 0


def cmd_train(args) -> int:
    man = _manifest(args, "train", seeds=[args.seed])
    benign_rows, benign_labels, _ = read_feature_csv(args.benign)
    labeled_rows, labels, _ = read_feature_csv(args.labeled)
    man.add_input(args.benign)
    man.add_input(args.labeled)
    bad = [l for l in benign_labels if l not in ("", "Normal")]
    if bad:
        print(f"error: benign capture contains attack labels {set(bad)}",
              file=sys.stderr)
        return 1
    if any(not l for l in labels):
        print("error: labeled capture has rows without labels",
              file=sys.stderr)
        return 1
    baselines = load_baselines(args.baselines) if args.baselines else {}
    if args.baselines:
        man.add_input(args.baselines)
    report = train_models(benign_rows, labeled_rows, labels, baselines,
                          seed=args.seed, k=args.k, n_trees=args.trees,
                          tune_repeats=args.tune_repeats)
    out = _out_dir(args)
    models_path = args.models or os.path.join(out, "models.json")
    report.bundle.save(models_path)
    report_path = os.path.join(out, "train_report.json")
    with open(report_path, "w") as f:
        json.dump(report.summary(), f, indent=1, sort_keys=True)
    man.add_output(models_path)
    man.add_output(report_path)
    man.write(os.path.join(out, "train.manifest.json"))
    print(f"k={report.k_chosen} threshold={report.threshold:.3f} "
          f"holdout_macro={report.holdout_macro_accuracy:.4f}")
    print(f"models -> {models_path}")
    return 0


def cmd_eval(args) -> int:
    man = _manifest(args, "eval", seeds=[args.seed])
    bundle = ModelBundle.load(args.models)
    rows, labels, _ = read_feature_csv(args.dataset)
    man.add_input(args.models)
    man.add_input(args.dataset)
    if any(not l for l in labels):
        print("error: dataset has unlabeled rows", file=sys.stderr)
        return 1
    labels = np.asarray(labels)
    is_attack = labels != forest_mod.NORMAL_LABEL

    # Stage 1: binary anomaly decision from the calibrated novelty score.
    scores = lof_mod.lof_scores(bundle.lof, bundle.embed(rows))
    flagged = scores > bundle.lof.threshold
    stage1 = metrics_mod.evaluate(flagged.tolist(), is_attack.tolist())

    # Stage 2: attack categorization on the true attack rows.
    preds = forest_mod.predict(bundle.forest,
                               bundle.classifier_rows(rows[is_attack]))
    truth = labels[is_attack].tolist()
    stage2_macro = macro_accuracy(preds, truth)

    out = _out_dir(args)
    classes = sorted(set(truth) | set(preds))
    conf_path = os.path.join(out, "confusion.csv")
    with open(conf_path, "w") as f:
        f.write("truth," + ",".join(classes) + "\n")
        for t in classes:
            row = [sum(1 for p, tt in zip(preds, truth)
                       if tt == t and p == c) for c in classes]
            f.write(t + "," + ",".join(str(v) for v in row) + "\n")
    summary = {
        "stage1": stage1.to_dict(),
        "stage2_macro_accuracy": stage2_macro,
        "threshold": bundle.lof.threshold,
        "n_rows": int(len(rows)),
        "n_attack_rows": int(is_attack.sum()),
    }
    json_path = os.path.join(out, "eval.json")
    with open(json_path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    man.add_output(conf_path)
    man.add_output(json_path)
    man.write(os.path.join(out, "eval.manifest.json"))
    print(f"stage1 recall={stage1.recall:.4f} "
          f"specificity={stage1.specificity:.4f} mcc={stage1.mcc:.4f}")
    print(f"stage2 macro accuracy={stage2_macro:.4f}")
    return 0


def cmd_serve(args) -> int:
    config = RelayConfig.load(args.config) if args.config else RelayConfig()
    if args.models:
        config.models_path = args.models
    man = _manifest(args, "serve")
    man.add_input(config.models_path)
    out = _out_dir(args)
    man.write(os.path.join(out, "serve.manifest.json"))
    run_relay(config)
    return 0


def cmd_simulate(args) -> int:
    from .simlab.corpus import desk_corpus, live_corpus
    from .simlab.dataset import save_trace
    from .simlab.scenarios import ScenarioSpec, gen_traffic

    man = _manifest(args, "simulate", seeds=[args.seed])
    out = _out_dir(args)
    if args.corpus:
        corpus = (desk_corpus if args.corpus == "desk"
                  else live_corpus)(seed=args.seed, scale=args.scale)
        paths = {
            "benign.csv": corpus.baseline,
            "train.csv": corpus.train,
            "external.csv": corpus.external,
        }
        for name, ds in paths.items():
            p = os.path.join(out, name)
            ds.save_csv(p)
            man.add_output(p)
            print(f"{name}: {ds.summary()}")
        bpath = os.path.join(out, "baselines.json")
        save_baselines(corpus.baselines, bpath)
        man.add_output(bpath)
    else:
        spec = ScenarioSpec(kind=args.scenario, duration_s=args.duration,
                            poll_interval_ms=args.poll_ms,
                            rng_seed=args.seed)
        trace = gen_traffic(spec)
        p = os.path.join(out, f"{args.scenario.lower()}.jsonl")
        save_trace(p, trace)
        man.add_output(p)
        print(f"{args.scenario}: {len(trace)} packets -> {p}")
    man.write(os.path.join(out, "simulate.manifest.json"))
    return 0


def cmd_bench(args) -> int:
    from .relay import Mediator, RelayServer
    from .respond import MemoryBlocklist, ResponseEngine, ResponsePolicy
    from .simlab.bench import bench_latency
    from .simlab.modbus import StubController

    man = _manifest(args, "bench", seeds=[args.seed])
    bundle = ModelBundle.load(args.models)
    man.add_input(args.models)
    stub = StubController()
    stub.start()
    blocklist = MemoryBlocklist()
    responder = ResponseEngine(policy=ResponsePolicy(), blocklist=blocklist)
    config = RelayConfig(listen_host="127.0.0.1", listen_port=0,
                         upstream_host="127.0.0.1", upstream_port=stub.port)
    mediator = Mediator(bundle, responder)
    server = RelayServer(config, mediator, blocklist)
    server.start()
    try:
        report = bench_latency(("127.0.0.1", server.listen_port),
                               ("127.0.0.1", stub.port), cycles=args.cycles)
    finally:
        server.stop()
        mediator.close()
        stub.stop()
    if not report.valid:
        print("error: benchmark could not complete all cycles",
              file=sys.stderr)
        return 1
    out = _out_dir(args)
    path = os.path.join(out, "bench.csv")
    report.save_csv(path)
    man.add_output(path)
    man.write(os.path.join(out, "bench.manifest.json"))
    print(f"pooled median overhead: {report.median_overhead_us():.1f} us")
    return 0


def cmd_flood(args) -> int:
    from .simlab.flood import flood_experiment

    man = _manifest(args, "flood", seeds=[args.seed])
    bundle = ModelBundle.load(args.models)
    man.add_input(args.models)
    report = flood_experiment(bundle, sweep=args.sweep,
                              repetitions=args.repetitions)
    out = _out_dir(args)
    path = os.path.join(out, f"flood_{args.sweep}.csv")
    report.save_csv(path)
    man.add_output(path)
    man.write(os.path.join(out, "flood.manifest.json"))
    for setting, med in sorted(report.medians("block_time_ms").items()):
        print(f"{args.sweep}={setting}: median block time {med:.1f} ms")
    return 0


def _table(headers, rows) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows))
              for i, h in enumerate(headers)] if rows else [len(h) for h in headers]
    def fmt(vals):
        return "  ".join(str(v).ljust(w) for v, w in zip(vals, widths))
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)


def cmd_report(args) -> int:
    import csv as csv_mod

    path = args.artifact
    if path.endswith(".json"):
        with open(path) as f:
            doc = json.load(f)
        if "ablation" in doc:  # training report
            rows = [(r["config"], r["n_features"], f"{r['accuracy']:.5f}")
                    for r in doc["ablation"]]
            print(_table(["config", "n_features", "accuracy"], rows))
            print(f"\nk={doc['k']} threshold={doc['threshold']:.3f} "
                  f"holdout_macro={doc['holdout_macro_accuracy']:.5f}")
            print("rfe kept:", ", ".join(doc["rfe_kept"]))
        elif "stage1" in doc:  # eval report
            s1 = doc["stage1"]
            rows = [(k, f"{v:.5f}" if isinstance(v, float) else v)
                    for k, v in sorted(s1.items())]
            print(_table(["metric", "value"], rows))
            print(f"\nstage2 macro accuracy: "
                  f"{doc['stage2_macro_accuracy']:.5f}")
        else:
            print(json.dumps(doc, indent=1, sort_keys=True))
    elif path.endswith(".csv"):
        with open(path) as f:
            rdr = csv_mod.reader(f)
            headers = next(rdr)
            print(_table(headers, list(rdr)))
    else:
        print(f"error: cannot render {path}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plcsentry",
        description="Inline anomaly detection and response for Modbus/TCP")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("extract", help="trace JSONL -> feature CSV")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--baselines", help="baseline histograms JSON")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fit-baseline",
                       help="benign trace -> per-peer size histograms")
    common(p)
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_fit_baseline)

    p = sub.add_parser("train", help="feature CSVs -> model bundle")
    common(p)
    p.add_argument("--benign", required=True, help="benign feature CSV")
    p.add_argument("--labeled", required=True, help="labeled feature CSV")
    p.add_argument("--baselines", help="baseline histograms JSON")
    p.add_argument("--models", help="models output path")
    p.add_argument("--k", type=int, help="fixed neighborhood size")
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--tune-repeats", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a labeled dataset")
    common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the inline relay")
    common(p)
    p.add_argument("--config", help="relay config JSON")
    p.add_argument("--models")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="generate scenario traffic")
    common(p)
    p.add_argument("--scenario", default="Benign",
                   help="Benign or EX-1/2/3/4/6/7")
    p.add_argument("--corpus", choices=["desk", "live"],
                   help="emit a full training corpus instead of one trace")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--poll-ms", type=float, default=20.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="relay latency benchmark on loopback")
    common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--cycles", type=int, default=500)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("flood", help="flood mitigation experiment")
    common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--sweep", choices=["size", "threads"], default="size")
    p.add_argument("--repetitions", type=int, default=10)
    p.set_defaults(func=cmd_flood)

    p = sub.add_parser("report", help="render an artifact as a text table")
    p.add_argument("artifact")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
