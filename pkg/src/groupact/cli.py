"""Command-line front door: data generation, pre-training, protocol runs,
sweeps, embedding export and serving.

Every artifact embeds (tool version, seed, config hash) so a rerun with the
same triple reproduces it byte for byte; wall-clock timestamps live only in a
`<artifact>.sidecar.json` next to each output. Flag values take precedence
over the --config file, which takes precedence over built-in defaults.

Exit codes: 0 ok, 1 usage, 2 validation/missing input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .dataset import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .encoder import PretrainConfig, encode_gaf, load_params, pretrain, save_params
from .errors import ConfigError, GroupActError, ParseError, ValidationError
from .evaluation import EvalConfig, run_protocol, run_sweep
from .finetune import FinetuneConfig

USAGE_EXIT = 1
VALIDATION_EXIT = 2
RUNTIME_EXIT = 3


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _meta(seed: int, config: dict) -> dict:
    return {
        "tool_version": __version__,
        "seed": seed,
        "config_hash": _config_hash(config),
    }


def _write_sidecar(artifact: Path) -> None:
    sidecar = artifact.with_name(artifact.name + ".sidecar.json")
    sidecar.write_text(json.dumps({"created_at": time.time()}) + "\n")


class _Resolver:
    """flags > config file > defaults."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.file_values: dict = {}
        if getattr(args, "config", None):
            path = Path(args.config)
            if not path.exists():
                raise ValidationError(f"config file not found: {path}")
            try:
                self.file_values = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON: {exc.msg} at char {exc.pos}")

    def get(self, key: str, default):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.file_values:
            return self.file_values[key]
        return default


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    seed = int(r.get("seed", 0))
    cfg = SyntheticConfig(
        class_count=int(r.get("classes", 8)),
        train_per_class=int(r.get("train_per_class", 75)),
        test_per_class=int(r.get("test_per_class", 25)),
        persons=int(r.get("persons", 12)),
        frames=int(r.get("frames", 8)),
        feature_dim=int(r.get("dim", 16)),
        noise_scale=float(r.get("noise", 0.25)),
        appearance_scale=float(r.get("appearance_scale", 4.0)),
        class_appearance_strength=float(r.get("class_appearance_strength", 0.3)),
        seed=seed,
    )
    dataset = generate_synthetic(cfg)
    out = Path(r.get("out", "dataset.jsonl"))
    out.parent.mkdir(parents=True, exist_ok=True)
    from dataclasses import asdict

    save_dataset(dataset, out, meta=_meta(seed, asdict(cfg)))
    _write_sidecar(out)
    print(f"wrote {out} ({len(dataset.videos)} videos, "
          f"{len(dataset.class_catalog)} classes)")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    seed = int(r.get("seed", 0))
    dataset_path = r.get("dataset", None)
    if not dataset_path:
        raise ValidationError("--dataset is required")
    dataset = load_dataset(dataset_path)
    hidden = r.get("hidden", None)
    cfg = PretrainConfig(
        epochs=int(r.get("epochs", 30)),
        learning_rate=float(r.get("lr", 1e-4)),
        batch_size=int(r.get("batch_size", 32)),
        hidden=int(hidden) if hidden is not None else None,
    )
    params, history = pretrain(dataset.train_videos(), cfg, seed)
    out = Path(r.get("out", "params.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    from dataclasses import asdict

    meta = _meta(seed, asdict(cfg))
    meta["loss_history"] = history
    save_params(params, out, meta=meta)
    _write_sidecar(out)
    if history:
        print(f"wrote {out} (loss {history[0]:.4f} -> {history[-1]:.4f} "
              f"over {len(history)} epochs)")
    else:
        print(f"wrote {out} (untrained initialization)")
    return 0


def _eval_config(r: _Resolver, seed: int) -> EvalConfig:
    return EvalConfig(
        k_list=_int_list(str(r.get("k", "5,10"))),
        trials_per_class=int(r.get("trials", 10)),
        n_query=int(r.get("queries", 3)),
        n_select=int(r.get("select", 5)),
        evaluate_others=bool(r.get("others", True)),
        seed=seed,
        n_extra=int(r.get("n_extra", 4)),
        n_masked=int(r.get("n_masked", 2)),
        patterns=int(r.get("patterns", 10)),
        lambda_weight=float(r.get("lambda_weight", 1.0)),
        coreset_metric=str(r.get("coreset_metric", "cosine-distance")),
        ranking=str(r.get("ranking", "desc")),
        finetune=FinetuneConfig(
            margin=float(r.get("ft_margin", 10.0)),
            learning_rate=float(r.get("ft_lr", 3e-3)),
            epochs=int(r.get("ft_epochs", 30)),
            use_reg=bool(r.get("ft_use_reg", True)),
            reg_weight=float(r.get("ft_reg_weight", 1.0)),
        ),
    )


def _load_eval_inputs(r: _Resolver):
    dataset_path = r.get("dataset", None)
    params_path = r.get("params", None)
    if not dataset_path or not params_path:
        raise ValidationError("--dataset and --params are required")
    return load_dataset(dataset_path), load_params(params_path)


def cmd_run_protocol(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    seed = int(r.get("seed", 0))
    dataset, params = _load_eval_inputs(r)
    cfg = _eval_config(r, seed)
    variants = _str_list(str(r.get("variants", "ours,random")))
    workers = int(r.get("workers", 1))
    report = run_protocol(dataset, variants, cfg, params, max_workers=workers)

    out_dir = Path(r.get("out", "protocol-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    from dataclasses import asdict

    meta = _meta(seed, {**asdict(cfg.finetune), "k": cfg.k_list,
                        "variants": report.variants, "trials": cfg.trials_per_class})

    records_path = out_dir / "records.jsonl"
    with open(records_path, "w") as fh:
        fh.write(json.dumps({"kind": "protocol-meta", **meta}, sort_keys=True) + "\n")
        fh.write(report.records_jsonl())
    _write_sidecar(records_path)

    table_path = out_dir / "report.txt"
    table_path.write_text(
        f"# tool_version={meta['tool_version']} seed={seed} "
        f"config_hash={meta['config_hash']}\n" + report.table()
    )
    _write_sidecar(table_path)
    print(report.table())
    print(f"wrote {records_path} and {table_path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    seed = int(r.get("seed", 0))
    dataset, params = _load_eval_inputs(r)
    cfg = _eval_config(r, seed)
    nv_values = _int_list(str(r.get("nv_values", "1,2,3,4,5,6")))
    ne_values = _int_list(str(r.get("ne_values", "2,3,4,5")))
    workers = int(r.get("workers", 1))
    report = run_sweep(dataset, params, cfg, n_masked_values=nv_values,
                       n_extra_values=ne_values, max_workers=workers)

    out_dir = Path(r.get("out", "sweep-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _meta(seed, {"nv": nv_values, "ne": ne_values, "trials": cfg.trials_per_class})
    records_path = out_dir / "sweep_records.jsonl"
    with open(records_path, "w") as fh:
        fh.write(json.dumps({"kind": "sweep-meta", **meta}, sort_keys=True) + "\n")
        fh.write(report.records_jsonl())
    _write_sidecar(records_path)
    table_path = out_dir / "sweep.txt"
    table_path.write_text(
        f"# tool_version={meta['tool_version']} seed={seed} "
        f"config_hash={meta['config_hash']}\n" + report.table()
    )
    _write_sidecar(table_path)
    print(report.table())
    print(f"wrote {records_path} and {table_path}")
    return 0


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    r = _Resolver(args)
    seed = int(r.get("seed", 0))
    dataset, params = _load_eval_inputs(r)
    out = Path(r.get("out", "embeddings.jsonl"))
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = _meta(seed, {"dataset": dataset.id})
    with open(out, "w") as fh:
        fh.write(json.dumps({"kind": "embeddings-meta", **meta}, sort_keys=True) + "\n")
        for video in dataset.videos:
            fh.write(
                json.dumps(
                    {
                        "id": video.id,
                        "split": dataset.split[video.id],
                        "class": video.class_label,
                        "gaf": encode_gaf(video, params).tolist(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    _write_sidecar(out)
    print(f"wrote {out} ({len(dataset.videos)} embeddings)")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    r = _Resolver(args)
    data_dir = Path(r.get("data_dir", "service-data"))
    app = create_app(data_dir)
    dataset_path = r.get("dataset", None)
    params_path = r.get("params", None)
    if (dataset_path is None) != (params_path is None):
        raise ValidationError("preloading requires both --dataset and --params")
    if dataset_path:
        dataset = load_dataset(dataset_path)
        params = load_params(params_path)
        dataset_id = r.get("dataset_id", None) or dataset.id
        app.state.store.register_dataset(dataset, params, dataset_id)
        print(f"preloaded dataset {dataset_id!r} ({len(dataset.videos)} videos)")
    host = str(r.get("host", "127.0.0.1"))
    port = int(r.get("port", 8000))
    print(f"serving on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupact",
        description="Group-activity retrieval: generate data, pre-train, "
                    "evaluate, export, serve.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--train-per-class", type=int, dest="train_per_class")
    p.add_argument("--test-per-class", type=int, dest="test_per_class")
    p.add_argument("--persons", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--appearance-scale", type=float, dest="appearance_scale")
    p.add_argument("--class-appearance-strength", type=float,
                   dest="class_appearance_strength")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pre-train encoder parameters")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_pretrain)

    def eval_common(p: argparse.ArgumentParser) -> None:
        common(p)
        p.add_argument("--dataset")
        p.add_argument("--params")
        p.add_argument("--trials", type=int)
        p.add_argument("--k")
        p.add_argument("--queries", type=int)
        p.add_argument("--select", type=int)
        p.add_argument("--n-extra", type=int, dest="n_extra")
        p.add_argument("--n-masked", type=int, dest="n_masked")
        p.add_argument("--patterns", type=int)
        p.add_argument("--lambda", type=float, dest="lambda_weight")
        p.add_argument("--coreset-metric", dest="coreset_metric",
                       choices=["cosine-distance", "cosine-similarity"])
        p.add_argument("--ranking", choices=["desc", "asc"])
        p.add_argument("--ft-epochs", type=int, dest="ft_epochs")
        p.add_argument("--ft-lr", type=float, dest="ft_lr")
        p.add_argument("--ft-margin", type=float, dest="ft_margin")
        p.add_argument("--ft-reg-weight", type=float, dest="ft_reg_weight")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("run-protocol", help="repeated-trial retrieval evaluation")
    eval_common(p)
    p.add_argument("--variants", help="comma list: "
                   "pretrained,ours,ours-wo-s,ours-wo-v,random,coreset,kmeans")
    p.set_defaults(func=cmd_run_protocol)

    p = sub.add_parser("sweep", help="mask-count and extra-multiplier sweeps")
    eval_common(p)
    p.add_argument("--nv-values", dest="nv_values")
    p.add_argument("--ne-values", dest="ne_values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-embeddings",
                       help="dump per-video embeddings for external plotting")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--params")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("serve", help="run the HTTP session service")
    common(p)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--dataset")
    p.add_argument("--params")
    p.add_argument("--dataset-id", dest="dataset_id")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else USAGE_EXIT
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except (ConfigError, ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except GroupActError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
