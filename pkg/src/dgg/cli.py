"""Command-line interface.

Subcommands: gen-data, train, ablate, eval, gradcheck. Every command echoes
its effective configuration (file values overridden by explicit flags) so a
run can be reproduced bit-exactly from the echoed JSON. Exit codes:
0 success, 1 check or data/numeric failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .autodiff import AutodiffError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DatasetError, SbmSpec, generate_sbm, load_dataset, save_dataset
from .sampling import SamplingError
from .training import TrainConfig, TrainingError, ablate, evaluate_checkpoint, train
from .verify import run_gradcheck


def _echo_config(payload: dict, out_dir: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "effective_config.json").write_text(text + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: malformed config JSON at line {err.lineno}: {err.msg}") from err


_CONFIG_FIELDS = {f.name for f in fields(TrainConfig)}


def _merge_train_config(args) -> TrainConfig:
    merged = asdict(TrainConfig())
    file_values = _load_config_file(args.config)
    unknown = set(file_values) - _CONFIG_FIELDS
    if unknown:
        raise DatasetError(f"unknown config keys: {sorted(unknown)}")
    merged.update(file_values)
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return TrainConfig(**merged)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override file values")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--tau", type=float, default=None, help="gumbel softmax temperature")
    parser.add_argument("--lam", type=float, default=None, help="degree gate temperature")
    parser.add_argument("--mode", choices=["soft", "straight_through"], default=None)
    parser.add_argument("--symmetric", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--binarize", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--intermediate-weight", "--w0", dest="intermediate_weight", type=float, default=None)
    parser.add_argument("--anneal-epochs", dest="anneal_epochs", type=int, default=None)
    parser.add_argument("--fixed-k", dest="fixed_k", type=int, default=None)
    parser.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    parser.add_argument("--edge-noise", dest="edge_noise", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--degree-noise", dest="degree_noise", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--kl-weight", dest="kl_weight", type=float, default=None)
    parser.add_argument("--dropout", type=float, default=None)
    parser.add_argument("--gumbel-form", dest="gumbel_form", choices=["standard", "printed"], default=None)
    parser.add_argument("--use-input-graph", dest="use_input_graph", action=argparse.BooleanOptionalAction, default=None)


def _require_file(parser: argparse.ArgumentParser, path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        parser.error(f"{what} not found: {path}")
    return p


def _write_epoch_csv(report, path: Path) -> None:
    lines = ["epoch,train_loss,val_acc,k_mean,k_std"]
    for i in range(len(report.train_loss)):
        lines.append(
            f"{i},{report.train_loss[i]!r},{report.val_acc[i]!r},{report.k_mean[i]!r},{report.k_std[i]!r}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_adjacency_csv(adjacency: np.ndarray | None, path: Path) -> None:
    if adjacency is None:
        return
    lines = [",".join(repr(float(v)) for v in row) for row in adjacency]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_gen_data(parser, args) -> int:
    spec = SbmSpec(
        nodes_per_class=args.nodes_per_class,
        num_classes=args.num_classes,
        intra_prob=args.intra if len(args.intra) > 1 else args.intra[0],
        inter_prob=args.inter,
        feature_dim=args.feature_dim,
        separation=args.separation,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    spec.validate()
    out = Path(args.out)
    _echo_config({"command": "gen-data", "spec": {**asdict(spec), "intra_prob": spec.intra_list()}, "out": str(out)}, out.parent)
    dataset = generate_sbm(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    sidecar = out.with_suffix(out.suffix + ".meta.json")
    sidecar.write_text(
        json.dumps({**asdict(spec), "intra_prob": spec.intra_list()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {out} ({dataset.num_nodes} nodes, {len(dataset.edges)} directed edges)")
    return 0


def cmd_train(parser, args) -> int:
    data_path = _require_file(parser, args.data, "dataset")
    config = _merge_train_config(args)
    out_dir = Path(args.out)
    _echo_config({"command": "train", "data": str(data_path), "out": str(out_dir), **asdict(config)}, out_dir)

    dataset = load_dataset(data_path)
    result = train(dataset, config)
    report = result.report

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_epoch_csv(report, out_dir / "epochs.csv")
    _write_adjacency_csv(result.best_adjacency, out_dir / "adjacency.csv")
    if report.best_epoch >= 0:
        save_checkpoint(out_dir / "checkpoint.bin", result.meta, result.best_params)
    print(
        f"best_epoch={report.best_epoch} val_acc={report.best_val_acc:.4f} "
        f"test_acc={report.test_acc:.4f} wall_clock={report.wall_clock:.1f}s"
    )
    return 0


def cmd_ablate(parser, args) -> int:
    data_path = _require_file(parser, args.data, "dataset")
    config = _merge_train_config(args)
    out_dir = Path(args.out)
    k_values = [int(k) for k in args.k_list.split(",") if k]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    _echo_config(
        {"command": "ablate", "data": str(data_path), "out": str(out_dir),
         "k_values": k_values, "seeds": seeds, **asdict(config)},
        out_dir,
    )

    dataset = load_dataset(data_path)
    rows, aggregates = ablate(dataset, config, k_values=k_values, seeds=seeds)
    lines = ["variant,k,seed,accuracy"]
    for row in rows:
        k = "" if row["k"] is None else row["k"]
        lines.append(f"{row['variant']},{k},{row['seed']},{row['accuracy']!r}")
    for agg in aggregates:
        k = "" if agg["k"] is None else agg["k"]
        lines.append(f"{agg['variant']},{k},mean,{agg['mean_accuracy']!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for agg in aggregates:
        label = agg["variant"] if agg["k"] is None else f"{agg['variant']}(k={agg['k']})"
        print(f"{label}: mean accuracy {agg['mean_accuracy']:.4f} (+/- {agg['std_accuracy']:.4f})")
    return 0


def cmd_eval(parser, args) -> int:
    data_path = _require_file(parser, args.data, "dataset")
    ckpt_path = _require_file(parser, args.checkpoint, "checkpoint")
    _echo_config({"command": "eval", "data": str(data_path), "checkpoint": str(ckpt_path)}, None)
    dataset = load_dataset(data_path)
    meta, tensors = load_checkpoint(ckpt_path)
    metrics = evaluate_checkpoint(dataset, meta, tensors)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(parser, args) -> int:
    _echo_config(
        {"command": "gradcheck", "nodes": args.nodes, "feature_dim": args.feature_dim,
         "latent_dim": args.latent_dim, "hidden_dim": args.hidden_dim, "classes": args.classes,
         "seed": args.seed, "inject_adjoint_bug": args.inject_adjoint_bug},
        None,
    )
    results = run_gradcheck(
        nodes=args.nodes,
        feature_dim=args.feature_dim,
        latent_dim=args.latent_dim,
        hidden_dim=args.hidden_dim,
        num_classes=args.classes,
        seed=args.seed,
        inject_bug=args.inject_adjoint_bug,
    )
    all_passed = True
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: max_rel_err={res.max_rel_err:.3e} (tol {res.tolerance:.0e})")
        all_passed &= res.passed
    if not all_passed:
        failing = [r.name for r in results if not r.passed]
        print(f"gradcheck failed: {', '.join(failing)}", file=sys.stderr)
        return 1
    print(f"gradcheck passed: {len(results)} checks")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic block-model dataset")
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.add_argument("--nodes-per-class", dest="nodes_per_class", type=int, default=100)
    p.add_argument("--num-classes", dest="num_classes", type=int, default=3)
    p.add_argument("--intra", type=float, nargs="+", default=[0.1],
                   help="intra-class edge probability (one value, or one per class)")
    p.add_argument("--inter", type=float, default=0.05)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=6)
    p.add_argument("--separation", type=float, default=0.5)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the generator + GCN on a dataset")
    p.add_argument("--data", required=True, help="dataset JSON path")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the fixed-degree / deterministic-noise ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-list", dest="k_list", default="1,5,10")
    p.add_argument("--seeds", default="0,1,2")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="optional metrics JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--nodes", type=int, default=9)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=5)
    p.add_argument("--latent-dim", dest="latent_dim", type=int, default=6)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-adjoint-bug", dest="inject_adjoint_bug", action="store_true",
                   help="negative control: corrupt one adjoint and expect failure")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except (DatasetError, CheckpointError, TrainingError, AutodiffError, SamplingError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
