"""Command-line front end.

Subcommands map one-to-one onto the library surfaces: threshold math
(``alpha``), Monte Carlo verification (``montecarlo``), policy runs over
candidate streams (``simulate``), dataset preparation (``prepare``),
flow-feature extraction (``extract-features``), a plain federated run
(``fl-run``), and the experiment grid (``sweep`` / ``summarize``).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as data_mod
from . import flow_features as ff
from . import harness
from .fl import Dataset, TrainingPlan, federated_train, init_model, MlpSpec
from .policies import Candidate, run_stream
from .selection_math import (
    BudgetSpec,
    alpha_star,
    alpha_star_numeric,
    round_half_up,
    selection_probability,
)


def _load_dataset_csv(path: Path) -> Dataset:
    frame = pd.read_csv(path)
    if "label" not in frame.columns:
        raise SystemExit(f"{path}: dataset CSV must have a 'label' column")
    labels = frame.pop("label").to_numpy(dtype=np.int64)
    return Dataset(frame.to_numpy(dtype=np.float64), labels)


def _write_dataset_csv(dataset: Dataset, columns: list[str], path: Path) -> None:
    frame = pd.DataFrame(dataset.features, columns=columns)
    frame["label"] = dataset.labels
    frame.to_csv(path, index=False)


def _cmd_alpha(args) -> int:
    value = alpha_star(
        args.n, args.r1, args.r2, paper_table_variant=args.paper_table_variant
    )
    if args.numeric_check:
        numeric = alpha_star_numeric(args.n, args.r1, args.r2)
        print(f"# numeric maximizer: {numeric:.4f}", file=sys.stderr)
    index = max(1, min(round_half_up(value), args.n - 1))
    p_max = selection_probability(args.n, value, args.r1, args.r2).value
    print("n,r1,r2,alpha_star,alpha_index,p_max")
    print(f"{args.n},{args.r1},{args.r2},{value:.4f},{index},{p_max:.4f}")
    return 0


def _cmd_montecarlo(args) -> int:
    from .policies import monte_carlo_top_r_probability

    est = monte_carlo_top_r_probability(
        args.n, args.r, args.alpha, args.trials, args.seed
    )
    print("n,r,alpha,trials,p_hat,std_err")
    print(
        f"{args.n},{args.r},{args.alpha},{args.trials},"
        f"{est.value:.6f},{est.std_error:.6f}"
    )
    return 0


def _cmd_simulate(args) -> int:
    stream = []
    with open(args.stream, newline="") as handle:
        for row in csv.reader(handle):
            if not row or row[0].startswith("#"):
                continue
            stream.append(Candidate(int(row[0]), row[1], float(row[2])))
    spec = BudgetSpec.create(
        len(stream),
        args.r,
        args.r1,
        args.r2,
        enforce_small_window=not args.no_small_window_check,
    )
    audit = run_stream(args.policy, spec, stream, seed=args.seed)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for entry in audit.decisions:
            print(
                json.dumps(
                    {
                        "arrival_index": entry.arrival_index,
                        "client_id": entry.client_id,
                        "verdict": entry.verdict.value,
                        "reason": entry.reason,
                    }
                ),
                file=out,
            )
        print(
            json.dumps(
                {
                    "policy": audit.policy,
                    "selected": [c.arrival_index for c in audit.selected],
                    "forced_acceptances": audit.forced_acceptances,
                }
            ),
            file=out,
        )
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_prepare(args) -> int:
    full = _load_dataset_csv(Path(args.input))
    normalized, scaler = data_mod.minmax_normalize(full.features)
    dataset = Dataset(normalized, full.labels)
    train, test = data_mod.shuffle_split(dataset, args.test_frac, args.seed)
    part = data_mod.PartitionSpec(
        n_clients=args.n_clients,
        fat_fraction=args.fat_fraction,
        fat_share=args.fat_share,
        thin_share=args.thin_share,
        seed=args.seed,
    )
    clients, tags = data_mod.partition_clients(train, part)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = [f"f{i}" for i in range(dataset.features.shape[1])]
    _write_dataset_csv(test, columns, out / "test.csv")
    manifest_clients = []
    for i, (client, fat) in enumerate(zip(clients, tags), start=1):
        name = f"client_{i:04d}.csv"
        _write_dataset_csv(client, columns, out / name)
        manifest_clients.append({"file": name, "fat": fat, "rows": len(client)})
    manifest = {
        "seed": args.seed,
        "test_fraction": args.test_frac,
        "n_clients": args.n_clients,
        "scaler": {"min": scaler[0].tolist(), "max": scaler[1].tolist()},
        "clients": manifest_clients,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {args.n_clients} client datasets to {out}")
    return 0


def _cmd_extract_features(args) -> int:
    with open(args.devices, newline="") as handle:
        table = ff.DeviceTable.from_csv(handle)
    with open(args.flows) as handle:
        substreams, dropped = ff.label_stream(ff.read_flow_records(handle), table)
    rows = []
    for device_id in sorted(substreams):
        rows.extend(
            ff.extract_features(substreams[device_id], device_id, args.max_period)
        )
    with open(args.out, "w", newline="") as handle:
        ff.write_features_csv(rows, handle)
    print(f"wrote {len(rows)} feature rows to {args.out} ({dropped} unknown-MAC flows dropped)")
    return 0


def _cmd_fl_run(args) -> int:
    clients_dir = Path(args.clients)
    client_files = sorted(clients_dir.glob("client_*.csv"))
    if not client_files:
        raise SystemExit(f"no client_*.csv files in {clients_dir}")
    clients = [_load_dataset_csv(p) for p in client_files]
    test = _load_dataset_csv(Path(args.test))
    plan = TrainingPlan(rounds=args.rounds, epochs=args.epochs, batch_size=args.batch)
    n_classes = int(max(test.labels.max(), max(c.labels.max() for c in clients))) + 1
    spec = MlpSpec(input_dim=test.features.shape[1], output_dim=n_classes)
    params = init_model(spec, args.seed)
    _, history = federated_train(params, clients, test, plan, args.seed)
    print("round,test_accuracy")
    for k, acc in enumerate(history, start=1):
        print(f"{k},{acc:.6f}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


def _parse_synthetic(text: str) -> harness.SyntheticSpec:
    if not text.startswith("synthetic:"):
        raise SystemExit(f"unsupported data source {text!r} (expected synthetic:SxFxC)")
    dims = text.split(":", 1)[1].split("x")
    if len(dims) != 3:
        raise SystemExit("synthetic spec must be samples x features x classes")
    return harness.SyntheticSpec(int(dims[0]), int(dims[1]), int(dims[2]))


def _cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    plan_kwargs = grid.get("plan", {})
    plan = TrainingPlan(**plan_kwargs)
    seeds = _parse_seeds(args.seeds)
    data = _parse_synthetic(args.data)
    try:
        results = harness.sweep(
            ns=grid["n"], rs=grid["r"], r2s=grid["r2"], seeds=seeds, plan=plan, data=data
        )
    except Exception as exc:  # nonzero exit with a diagnostic per contract
        print(f"sweep failed: {exc}", file=sys.stderr)
        return 1
    with open(args.out, "w", newline="") as handle:
        harness.write_results_csv(results, handle)
    print(f"wrote {len(results)} result rows to {args.out}")
    return 0


def _cmd_summarize(args) -> int:
    frame = pd.read_csv(args.infile)
    summary = harness.summarize(frame)
    summary.to_csv(args.out, index=False)
    print(f"wrote {len(summary)} summary rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsel",
        description="Budgeted online FL client selection: math, policies, simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("alpha", help="closed-form stopping threshold")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r1", type=int, required=True)
    p.add_argument("--r2", type=int, required=True)
    p.add_argument("--paper-table-variant", action="store_true")
    p.add_argument("--numeric-check", action="store_true")
    p.set_defaults(func=_cmd_alpha)

    p = sub.add_parser("montecarlo", help="Monte Carlo top-R selection probability")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--alpha", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("simulate", help="run one policy over a candidate stream")
    p.add_argument("--policy", choices=["secretary", "random", "best"], required=True)
    p.add_argument("--stream", required=True, help="CSV: arrival_index,client_id,probe_accuracy")
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--r1", type=int, default=1)
    p.add_argument("--r2", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--no-small-window-check", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("prepare", help="normalize, split, and partition a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--n-clients", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--fat-fraction", type=float, default=0.20)
    p.add_argument("--fat-share", type=float, default=0.10)
    p.add_argument("--thin-share", type=float, default=0.01)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("extract-features", help="windowed features from flow records")
    p.add_argument("--flows", required=True, help="JSON-lines flow records")
    p.add_argument("--devices", required=True, help="CSV: mac,name,device_id")
    p.add_argument("--max-period", type=float, default=ff.DEFAULT_MAX_PERIOD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("fl-run", help="federated training over prepared client CSVs")
    p.add_argument("--clients", required=True, help="directory of client_*.csv")
    p.add_argument("--test", required=True)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fl_run)

    p = sub.add_parser("sweep", help="experiment grid over (n, r, r2) x seeds")
    p.add_argument("--grid", required=True, help="JSON with n, r, r2 arrays and plan overrides")
    p.add_argument("--seeds", required=True, help="'1..10' or comma list")
    p.add_argument("--data", default="synthetic:5000x10x28")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("summarize", help="aggregate a results CSV per grid cell")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_summarize)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
