"""Command-line entry point: train, score, steer, eval, penalty-grad.

Exit codes: 0 success, 1 data/shape error, 2 usage error. Flags override a
key=value config file (--config); bare model filenames are resolved against
$AFFECTSTEER_MODEL_DIR when set.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import dataio, evalreport, predictor, steering
from .nn import DimensionError


def _resolve_model_path(path):
    base = os.environ.get("AFFECTSTEER_MODEL_DIR")
    if base and not os.path.dirname(path) and not os.path.exists(path):
        return os.path.join(base, path)
    return path


def _load_config_file(path):
    cfg = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            cfg[key.strip().replace("-", "_")] = val.strip()
    return cfg


def build_dataset(entries, container, kind="word"):
    """Match lexicon entries against container keys; returns (Dataset, skipped)."""
    key_index = {k: i for i, k in enumerate(container.keys)}
    inputs, targets, sds, kinds = [], [], [], []
    skipped = []
    for e in entries:
        i = key_index.get(e.word)
        if i is None:
            skipped.append(e.word)
            continue
        inputs.append(container.data[i])
        targets.append(e.mean)
        sds.append(e.sd)
        kinds.append(kind)
    if not inputs:
        raise ValueError("no lexicon entries matched container keys")
    ds = dataio.Dataset(np.stack(inputs), np.stack(targets), np.stack(sds), kinds)
    return ds, skipped


def _merge_datasets(a, b):
    return dataio.Dataset(
        np.concatenate([a.inputs, b.inputs]),
        np.concatenate([a.targets, b.targets]),
        np.concatenate([a.sds, b.sds]),
        a.kinds + b.kinds,
    )


def _train_config(args):
    return predictor.TrainConfig(
        epochs=args.epochs,
        dropout_rate=args.dropout,
        train_fraction=args.train_fraction,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _assemble(args):
    """Shared data assembly for train/eval: lexicon + embeddings (+ images)."""
    entries, rejects = dataio.parse_lexicon(args.lexicon, _columns_override(args))
    container = dataio.read_container(args.embeddings)
    info = {"lexicon_rows": len(entries), "lexicon_rejects": len(rejects)}
    if container.data.ndim == 3:
        # per-channel grids: one dataset per channel
        n_channels = container.data.shape[1]
        datasets = []
        base, skipped = build_dataset(entries, container)  # for skip accounting
        info["skipped_words"] = len(skipped)
        key_index = {k: i for i, k in enumerate(container.keys)}
        rows = [key_index[e.word] for e in entries if e.word in key_index]
        kept = [e for e in entries if e.word in key_index]
        targets = np.stack([e.mean for e in kept])
        sds = np.stack([e.sd for e in kept])
        kinds = ["word"] * len(kept)
        for c in range(n_channels):
            datasets.append(
                dataio.Dataset(container.data[rows, c, :], targets, sds, list(kinds))
            )
        return datasets, info
    ds, skipped = build_dataset(entries, container)
    info["skipped_words"] = len(skipped)
    if getattr(args, "image_embeddings", None):
        img_container = dataio.read_container(args.image_embeddings)
        img_entries, img_rejects = dataio.parse_lexicon(
            args.image_vad, {"word": args.image_key_column}
        )
        img_ds, img_skipped = build_dataset(img_entries, img_container, kind="image")
        info["image_rows"] = len(img_entries)
        info["image_rejects"] = len(img_rejects)
        info["skipped_images"] = len(img_skipped)
        ds = _merge_datasets(ds, img_ds)
    return ds, info


def _columns_override(args):
    cols = {}
    for role in ("word", "v_mean", "a_mean", "d_mean", "v_sd", "a_sd", "d_sd"):
        val = getattr(args, f"col_{role}", None)
        if val:
            cols[role] = val
    return cols


def cmd_train(args):
    config = _train_config(args)
    data, info = _assemble(args)
    if args.channels and not isinstance(data, list):
        raise ValueError("--channels requires a container of per-channel grids")
    if isinstance(data, list):
        if args.channels != len(data):
            raise ValueError(
                f"--channels {args.channels} but container has {len(data)} channels"
            )
        ensemble, reports = predictor.train_channel_ensemble(
            data, config, threads=args.threads
        )
        maes = [r.test_mae for r in reports]
        meta = {
            "epochs": config.epochs,
            "seed": config.seed,
            "loss": float(np.mean([r.epoch_losses[-1] for r in reports])) if config.epochs else None,
            "test_mae_mean": float(np.mean(maes)),
            "test_mae_std": float(np.std(maes)),
            **info,
        }
        predictor.save_ensemble(args.out, ensemble, training_meta=meta)
        report_dicts = [r.to_dict() for r in reports]
        print(
            f"trained 77-channel ensemble: test MAE {meta['test_mae_mean']:.4f} "
            f"± {meta['test_mae_std']:.4f}"
        )
    else:
        model, report = predictor.train_affect_model(data, config)
        meta = {
            "epochs": config.epochs,
            "seed": config.seed,
            "loss": report.epoch_losses[-1] if report.epoch_losses else None,
            "test_mae": report.test_mae,
            **info,
        }
        predictor.save_affect_model(args.out, model, training_meta=meta)
        report_dicts = [report.to_dict()]
        print(f"trained joint model: test MAE {report.test_mae:.4f}")
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        with open(os.path.join(args.report_dir, "training_report.json"), "w") as fh:
            json.dump({"info": info, "reports": report_dicts}, fh, indent=2)
        with open(os.path.join(args.report_dir, "training_report.txt"), "w") as fh:
            if isinstance(data, list):
                for c, r in enumerate(reports):
                    fh.write(f"# channel {c}\n{r.table()}\n")
            else:
                fh.write(report.table() + "\n")
        losses = report_dicts[0]["epoch_losses"]
        if losses:
            evalreport.plot_training_curve(
                losses, os.path.join(args.report_dir, "training_curve.png")
            )
    return 0


def cmd_score(args):
    model = predictor.load_affect_model(_resolve_model_path(args.model))
    container = dataio.read_container(args.embeddings)
    keys = args.keys.split(",") if args.keys else container.keys
    prompts = []
    for key in keys:
        row = container.row(key)
        if isinstance(model, predictor.ChannelEnsemble):
            if row.ndim != 2:
                raise DimensionError("ensemble scoring needs a grid container")
            # mean over channels; an aggregation convention, flagged in output
            scores = predictor.score_grid(model, row).mean(axis=0)
            prompts.append((key, scores))
        else:
            prompts.append((key, row))
    if isinstance(model, predictor.ChannelEnsemble):
        rows = [(k, float(s[0]), float(s[1]), float(s[2])) for k, s in prompts]
    else:
        rows = evalreport.prompt_score_table(model, prompts)
    if args.json:
        payload = [{"prompt": t, "V": v, "A": a, "D": d} for t, v, a, d in rows]
        text = json.dumps(payload, indent=2)
    else:
        text = evalreport.format_prompt_table(rows)
        if isinstance(model, predictor.ChannelEnsemble):
            text += "\n# scores are means over 77 channels (aggregation convention)"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_steer(args):
    ensemble = predictor.load_affect_model(_resolve_model_path(args.ensemble))
    if not isinstance(ensemble, predictor.ChannelEnsemble):
        raise ValueError("steering requires a 77-channel ensemble model file")
    container = dataio.read_container(args.anchors)
    keys = args.keys.split(",") if args.keys else container.keys
    config = steering.SteeringConfig(
        lam=args.lam,
        max_steps=args.max_steps,
        lr=args.lr,
        grad_tolerance=args.grad_tolerance,
        seed=args.seed,
    )
    target = steering.build_target(args.dim, args.dir)
    traces = {}
    for i, key in enumerate(keys):
        anchor = steering.EmbeddingGrid(container.row(key), prompt=key)
        z_star, trace = steering.steer_embedding(ensemble, anchor, target, config)
        steering.export_steered(z_star, args.out, args.dim, args.dir, args.lam, append=i > 0)
        traces[key] = trace
        if args.verbose:
            print(f"{key}: loss {trace[0]:.6g} -> {trace[-1]:.6g} in {len(trace) - 1} steps")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            json.dump(traces, fh, indent=2)
        evalreport.plot_steering_trace(
            traces[keys[-1]], os.path.splitext(args.trace)[0] + ".png"
        )
    print(f"steered {len(keys)} grid(s) -> {args.out}")
    return 0


def cmd_eval(args):
    model = predictor.load_affect_model(_resolve_model_path(args.model))
    if isinstance(model, predictor.ChannelEnsemble):
        raise ValueError("eval expects a joint model file; use train for ensemble metrics")
    data, info = _assemble(args)
    if isinstance(data, list):
        raise ValueError("eval expects a flat embedding container, not channel grids")
    _, test = dataio.split_dataset(data, args.train_fraction, args.seed)
    report = evalreport.evaluate(model, test)
    evalreport.write_report(report, args.report_dir, model=model, test=test)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_penalty_grad(args):
    model = predictor.load_affect_model(_resolve_model_path(args.model))
    if isinstance(model, predictor.ChannelEnsemble):
        raise ValueError("penalty-grad expects a joint model file")
    container = dataio.read_container(args.embeddings)
    target = steering.build_target(args.dim, args.dir)
    keys = args.keys.split(",") if args.keys else container.keys
    grads, out_keys, losses = [], [], {}
    for key in keys:
        loss, grad = steering.affect_penalty(model, container.row(key), target, args.lam)
        grads.append(grad)
        out_keys.append(steering.steered_key(key, args.dim, args.dir, args.lam))
        losses[out_keys[-1]] = loss
    out = dataio.EmbeddingContainer(
        out_keys, np.stack(grads), meta={"losses": losses, "content": "penalty_gradient"}
    )
    dataio.write_container(args.out, out)
    print(json.dumps(losses, indent=2))
    return 0


def _add_data_args(p):
    p.add_argument("--lexicon", required=True, help="word/VAD CSV file")
    p.add_argument("--embeddings", required=True, help="embedding container (AEC1)")
    p.add_argument("--image-embeddings", help="optional image embedding container")
    p.add_argument("--image-vad", help="CSV sidecar with VAD scores for image keys")
    p.add_argument("--image-key-column", default="filename")
    for role in ("word", "v_mean", "a_mean", "d_mean", "v_sd", "a_sd", "d_sd"):
        p.add_argument(f"--col-{role.replace('_', '-')}", dest=f"col_{role}")


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=1500)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="affectsteer",
        description="Predict affect (V/A/D) from embeddings and steer embeddings toward a target affect.",
    )
    parser.add_argument("--config", help="key=value config file; flags take precedence")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a joint model or a 77-channel ensemble")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--channels", type=int, default=0, help="77 for per-channel ensemble training")
    p.add_argument("--out", required=True, help="output model file (AFM1)")
    p.add_argument("--report-dir", help="directory for training report and figures")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score embeddings with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--keys", help="comma-separated subset of container keys")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("steer", help="steer anchor grids toward a target affect")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--anchors", required=True, help="container of 77xD anchor grids")
    p.add_argument("--keys")
    p.add_argument("--dim", required=True, choices=["V", "A", "D"])
    p.add_argument("--dir", required=True, choices=["high", "low"])
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--grad-tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write per-step losses (JSON) plus a figure")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("eval", help="evaluate a model on the held-out split")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("penalty-grad", help="export affect-penalty loss and gradient")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--keys")
    p.add_argument("--dim", required=True, choices=["V", "A", "D"])
    p.add_argument("--dir", required=True, choices=["high", "low"])
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_penalty_grad)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if "--config" in argv:
        cfg_path = argv[argv.index("--config") + 1]
        cfg = _load_config_file(cfg_path)
        known = {a.dest for a in parser._actions}
        for sp in parser._subparsers._group_actions[0].choices.values():
            known |= {a.dest for a in sp._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**cfg)
        for sp in parser._subparsers._group_actions[0].choices.values():
            sp.set_defaults(**{k: v for k, v in cfg.items() if k in {a.dest for a in sp._actions}})
    args = parser.parse_args(argv)
    # numeric config-file values arrive as strings; re-coerce via each action type
    all_actions = list(parser._actions)
    for sp in parser._subparsers._group_actions[0].choices.values():
        all_actions.extend(sp._actions)
    for action in all_actions:
        val = getattr(args, action.dest, None)
        if isinstance(val, str) and action.type in (int, float):
            setattr(args, action.dest, action.type(val))
    if args.verbose:
        shown = {k: v for k, v in vars(args).items() if k not in ("func",)}
        print(f"# effective settings: {shown}", file=sys.stderr)
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        OSError,
        DimensionError,
        dataio.FormatError,
        predictor.TrainingError,
        steering.SteeringError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
