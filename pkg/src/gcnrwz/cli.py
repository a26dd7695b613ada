"""Command-line surface: gen-synth, train, evaluate, ablate, predict.

Exit codes: 0 success, 2 usage error, 1 data/validation error. Diagnostics
go to stderr; results go to files (JSON/CSV for external plotting).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataio, features, metrics, pipeline, training
from . import model as modelmod

ABLATION_LAMBDAS = (1.0, 3.0, 5.0, 7.0)


def _default_seed():
    env = os.environ.get("GCNRWZ_SEED")
    return int(env) if env else 42


def positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def positive_float(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _info(msg):
    print(msg, file=sys.stderr)


def _model_config(args):
    return modelmod.ModelConfig(
        history=args.history,
        horizon=args.horizon,
        heads=args.heads,
        channels=args.channels,
        k_t=args.k_t,
        blocks=args.blocks,
        spatial_mode=args.spatial_mode,
        cheb_k=args.cheb_k,
        kernel_lambda=args.kernel_lambda,
        fusion_variant=args.fusion_variant,
        include_construction=not args.no_construction,
        spatial_activation=args.spatial_activation,
        d_hidden=args.d_hidden,
        seed=args.seed,
    )


def _add_model_flags(p):
    p.add_argument("--history", type=positive_int, default=12,
                   help="input window length H in 5-minute steps")
    p.add_argument("--horizon", type=positive_int, default=3,
                   help="forecast length P in 5-minute steps")
    p.add_argument("--heads", type=positive_int, default=4)
    p.add_argument("--channels", type=positive_int, default=8)
    p.add_argument("--k-t", type=positive_int, default=3, dest="k_t")
    p.add_argument("--blocks", type=positive_int, default=2)
    p.add_argument("--spatial-mode", choices=["linear", "chebyshev"],
                   default="linear")
    p.add_argument("--cheb-k", type=positive_int, default=2, dest="cheb_k")
    p.add_argument("--lambda", type=positive_float, default=3.0,
                   dest="kernel_lambda", help="construction kernel radius in miles")
    p.add_argument("--fusion-variant", choices=list(features.FUSION_VARIANTS),
                   default="learned-both")
    p.add_argument("--no-construction", action="store_true",
                   help="train the ablated variant without the workzone channel")
    p.add_argument("--spatial-activation", choices=["relu", "sigmoid"],
                   default="relu")
    p.add_argument("--d-hidden", type=positive_int, default=8, dest="d_hidden")
    p.add_argument("--adjacency", choices=["gaussian", "binary"], default="gaussian")


def _add_training_flags(p):
    p.add_argument("--epochs", type=positive_int, default=50)
    p.add_argument("--batch-size", type=positive_int, default=32)
    p.add_argument("--lr", type=positive_float, default=0.001)
    p.add_argument("--loss", choices=["mse", "mae"], default="mse")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_predictions_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "segment_id", "horizon_step",
                         "predicted_mph", "true_mph"])
        writer.writerows(rows)


def _prediction_rows(prepared, pred_mph, truth_mph):
    g = prepared.graph
    h = prepared.dataset.history
    rows = []
    for si, off in enumerate(prepared.test_window_offsets()):
        for step in range(pred_mph.shape[2]):
            ts = prepared.speeds.timestamp_of(off + h + step)
            for ni, sid in enumerate(g.segment_ids):
                rows.append([dataio._iso(ts), sid, step + 1,
                             repr(float(pred_mph[si, ni, step])),
                             repr(float(truth_mph[si, ni, step]))])
    return rows


def _predict_test_split(model, prepared, batch_size=256):
    preds = []
    for lo in range(0, prepared.test.num_samples, batch_size):
        preds.append(modelmod.predict(model, prepared.test.inputs[lo:lo + batch_size]))
    return features.denormalize(np.concatenate(preds, axis=0), prepared.norm_params)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args):
    cfg = dataio.SyntheticConfig(
        n_segments=args.segments,
        topology=args.topology,
        random_p=args.random_p,
        days=args.days,
        amplitude=args.amplitude,
        alpha=args.alpha,
        noise=args.noise,
        event_count=args.events,
        slowdown_depth=args.delta,
        influence_radius=args.radius,
        seed=args.seed,
    )
    g, speeds, events, _ = dataio.generate_synthetic(cfg)
    dataio.write_corpus(args.out, g, speeds, events, dataio.truth_dict(cfg))
    _info(f"wrote corpus to {args.out}: {g.n} segments, "
          f"{speeds.values.shape[1]} timesteps, {len(events)} events")
    return 0


def _load_and_prepare(args, config):
    g, speeds, mask, events = dataio.load_corpus(args.data, args.adjacency)
    prepared = pipeline.prepare(g, speeds, mask, events, config)
    return g, prepared


def cmd_train(args):
    config = _model_config(args)
    g, prepared = _load_and_prepare(args, config)
    model = modelmod.init_model(config, g)
    _info(f"training on {prepared.train.num_samples} samples "
          f"({model.parameter_count()} parameters)")
    history, best_values = training.train(
        model, prepared.train, prepared.val, prepared.norm_params,
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        lr=args.lr, loss=args.loss)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extras = {
        "normalization": {"min": prepared.norm_params.per_min.tolist(),
                          "max": prepared.norm_params.per_max.tolist()},
        "best_epoch": history.best_epoch(),
        "adjacency_mode": args.adjacency,
    }
    (out / "checkpoint_last.gcnrwz").write_bytes(
        modelmod.save_checkpoint(model, extras))
    training.restore_parameters(model, best_values)
    (out / "checkpoint_best.gcnrwz").write_bytes(
        modelmod.save_checkpoint(model, extras))
    # wall times are excluded so reruns with the same seed are bit-identical
    _write_json(out / "history.json", history.to_json_list())
    _info(f"best validation RMSE {min(r.val_rmse for r in history.records):.4f} MPH "
          f"at epoch {history.best_epoch()}")
    return 0


def _report_from_predictions_file(path):
    groups_seg = {}
    groups_step = {}
    preds, truths = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            p, t = float(row["predicted_mph"]), float(row["true_mph"])
            preds.append(p)
            truths.append(t)
            groups_seg.setdefault(row["segment_id"], []).append((p, t))
            groups_step.setdefault(int(row["horizon_step"]), []).append((p, t))
    pred, truth = np.array(preds), np.array(truths)

    def triple(pr, tr):
        try:
            mape_val, _ = metrics.mape(pr, tr)
        except ValueError:
            mape_val = float("nan")
        return metrics.rmse(pr, tr), metrics.mae(pr, tr), mape_val

    r, m, p = triple(pred, truth)
    per_segment = [(sid,) + triple(np.array([x for x, _ in v]), np.array([y for _, y in v]))
                   for sid, v in sorted(groups_seg.items())]
    per_horizon = [(step,) + triple(np.array([x for x, _ in v]), np.array([y for _, y in v]))
                   for step, v in sorted(groups_step.items())]
    _, excluded = metrics.mape(pred, truth)
    return metrics.MetricReport(r, m, p, excluded, per_segment, per_horizon,
                                {"cell_count": 0})


def cmd_evaluate(args):
    g, speeds, mask, events = dataio.load_corpus(args.data, args.adjacency)
    ckpt = Path(args.checkpoint).read_bytes()
    model, extras = modelmod.load_checkpoint(ckpt, g)
    prepared = pipeline.prepare(g, speeds, mask, events, model.config)

    truth_mph = pipeline.test_truth_mph(prepared)
    event_mask = pipeline.test_event_mask(prepared)
    model_name = ("gcn-rwz" if model.config.include_construction else "gcn-rwz-minus")

    if args.predictions_file:
        model_report = _report_from_predictions_file(args.predictions_file)
        rows = None
    else:
        pred_mph = _predict_test_split(model, prepared)
        model_report = metrics.report(pred_mph, truth_mph, g.segment_ids,
                                      event_mask=event_mask)
        rows = _prediction_rows(prepared, pred_mph, truth_mph)

    ha = pipeline.historical_average_baseline(prepared)
    pe = pipeline.persistence_baseline(prepared)
    report_payload = {
        "horizon": model.config.horizon,
        "models": {
            model_name: model_report.to_json_dict(),
            "historical_average": metrics.report(
                ha, truth_mph, g.segment_ids, event_mask=event_mask).to_json_dict(),
            "persistence": metrics.report(
                pe, truth_mph, g.segment_ids, event_mask=event_mask).to_json_dict(),
        },
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report_payload)
    if rows is not None:
        _write_predictions_csv(out / "predictions.csv", rows)
    _info(f"{model_name} test RMSE {model_report.rmse:.4f} MPH "
          f"(historical-average {report_payload['models']['historical_average']['rmse']:.4f}, "
          f"persistence {report_payload['models']['persistence']['rmse']:.4f})")
    return 0


def _train_and_score(args, config, g, speeds, mask, events):
    prepared = pipeline.prepare(g, speeds, mask, events, config)
    model = modelmod.init_model(config, g)
    training_result = training.train(
        model, prepared.train, prepared.val, prepared.norm_params,
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        lr=args.lr, loss=args.loss)
    _, best_values = training_result
    training.restore_parameters(model, best_values)
    pred_mph = _predict_test_split(model, prepared)
    truth_mph = pipeline.test_truth_mph(prepared)
    mape_val, _ = metrics.mape(pred_mph, truth_mph)
    return {"rmse": metrics.rmse(pred_mph, truth_mph),
            "mae": metrics.mae(pred_mph, truth_mph),
            "mape": mape_val}


def cmd_ablate(args):
    g, speeds, mask, events = dataio.load_corpus(args.data, args.adjacency)
    base = _model_config(args)

    fusion_rows = []
    for variant in features.FUSION_VARIANTS:
        cfg = modelmod.ModelConfig(**{**asdict(base), "fusion_variant": variant})
        _info(f"ablation: fusion variant {variant}")
        fusion_rows.append({"variant": variant,
                            **_train_and_score(args, cfg, g, speeds, mask, events)})

    lambda_rows = []
    for lam in ABLATION_LAMBDAS:
        cfg = modelmod.ModelConfig(**{**asdict(base), "kernel_lambda": lam})
        _info(f"ablation: lambda = {lam}")
        lambda_rows.append({"lambda": lam,
                            **_train_and_score(args, cfg, g, speeds, mask, events)})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation_report.json",
                {"fusion": fusion_rows, "lambda": lambda_rows})
    _info(f"wrote {out / 'ablation_report.json'}")
    return 0


def cmd_predict(args):
    g, speeds, mask, events = dataio.load_corpus(args.data, args.adjacency)
    ckpt = Path(args.checkpoint).read_bytes()
    model, extras = modelmod.load_checkpoint(ckpt, g)
    config = model.config

    imputed = dataio.impute_missing(speeds, mask) if mask.any() else speeds
    normalized, norm_params = features.min_max_normalize(imputed)
    t_len = normalized.shape[1]
    if t_len < config.history:
        raise ValueError(f"speeds series has {t_len} steps; the model needs a "
                         f"window of at least H = {config.history}")
    start = args.window_start if args.window_start is not None else t_len - config.history
    if start < 0 or start + config.history > t_len:
        raise ValueError(f"window start {start} out of range for series of "
                         f"length {t_len} and H = {config.history}")

    channels = [normalized[:, start:start + config.history]]
    if config.include_construction:
        cmap = features.construction_feature_map(
            g, events, config.kernel_lambda, t_len, speeds.start_timestamp)
        channels.append(cmap.values[:, start:start + config.history])
    inputs = np.stack(channels)[None]
    pred = features.denormalize(modelmod.predict(model, inputs), norm_params)[0]

    rows = []
    for step in range(config.horizon):
        t_idx = start + config.history + step
        ts = imputed.timestamp_of(t_idx)
        for ni, sid in enumerate(g.segment_ids):
            true = (repr(float(imputed.values[ni, t_idx])) if t_idx < t_len else "")
            rows.append([dataio._iso(ts), sid, step + 1,
                         repr(float(pred[ni, step])), true])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions_csv(out / "predictions.csv", rows)
    _info(f"wrote {out / 'predictions.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gcnrwz",
        description="Spatio-temporal graph-convolutional traffic speed "
                    "forecasting with workzone feature fusion.")
    parser.add_argument("--config", help="JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("gen-synth", help="generate a synthetic corridor corpus")
    p.add_argument("--out", default="corpus")
    p.add_argument("--segments", type=positive_int, default=20)
    p.add_argument("--topology", choices=["ring", "grid", "random"], default="ring")
    p.add_argument("--random-p", type=positive_float, default=0.15, dest="random_p")
    p.add_argument("--days", type=positive_int, default=21)
    p.add_argument("--amplitude", type=float, default=8.0)
    p.add_argument("--alpha", type=positive_float, default=0.2)
    p.add_argument("--noise", type=float, default=2.0)
    p.add_argument("--events", type=int, default=30)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--radius", type=positive_float, default=3.0)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.set_defaults(func=cmd_gen_synth)
    subparsers["gen-synth"] = p

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_model_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--adjacency", choices=["gaussian", "binary"], default="gaussian")
    p.add_argument("--predictions-file",
                   help="score an externally supplied predictions.csv instead "
                        "of running the model")
    p.set_defaults(func=cmd_evaluate)
    subparsers["evaluate"] = p

    p = sub.add_parser("ablate", help="run the fusion-variant and lambda ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--seed", type=int, default=_default_seed())
    _add_model_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate, epochs=10)
    subparsers["ablate"] = p

    p = sub.add_parser("predict", help="forecast from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--adjacency", choices=["gaussian", "binary"], default="gaussian")
    p.add_argument("--window-start", type=int, default=None, dest="window_start")
    p.set_defaults(func=cmd_predict)
    subparsers["predict"] = p

    return parser, subparsers


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)

    parser, subparsers = build_parser()
    if known.config:
        try:
            with open(known.config, encoding="utf-8") as fh:
                file_defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config file: {exc}", file=sys.stderr)
            return 1
        for p in subparsers.values():
            dests = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in file_defaults.items() if k in dests})

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
