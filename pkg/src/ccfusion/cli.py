"""Command-line pipeline: simulate, train, estimate-offset, localize, evaluate, baselines."""

import argparse
import copy
import csv
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .channel import ChannelParams, sample_dataset
from .chart import ChannelChart
from .dataset import DatasetFormatError, read_dataset, read_manifest, write_dataset
from .features import check_power_distance
from .metrics import evaluate as evaluate_positions
from .nn import ChartNetwork, ModelFormatError
from .pso import PsoConfig, TdoaPsoLocalizer, offset_bounds
from .world import Kinematics, LaserConfig, SceneError, generate_trajectory, scene_from_config

THREADS_ENV = "CCFUSION_THREADS"
MODEL_FILE = "model.ccfnet"
BIAS_FILE = "bias.f32"

DEFAULT_CONFIG = {
    "room": [[0.0, 0.0], [20.0, 0.0], [20.0, 15.0], [0.0, 15.0]],
    "obstacles": [],
    "trps": [[1.0, 14.0, 8.0], [19.0, 14.0, 8.0]],
    "baseline_trps": [[1.0, 14.0, 8.0], [19.0, 14.0, 8.0], [10.0, 1.0, 8.0]],
    "ue_height": 1.5,
    "trp_height": 8.0,
    "kinematics": asdict(Kinematics()),
    "laser": asdict(LaserConfig()),
    "channel": {f.name: getattr(ChannelParams(), f.name) for f in fields(ChannelParams)},
    "c_bar": 49,
}


class CliError(Exception):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(path=None):
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path) as fh:
        return _merge(DEFAULT_CONFIG, json.load(fh))


def _emit_config(out_dir, config):
    """Print the resolved configuration and snapshot it next to the outputs."""
    text = json.dumps(config, indent=2, sort_keys=True, default=float)
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            fh.write(text + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def write_positions(path, positions, ground_truth=None):
    rows = []
    for n, p in enumerate(np.asarray(positions, dtype=float)):
        err = None
        if ground_truth is not None:
            err = float(np.linalg.norm(p[:2] - ground_truth[n, :2]))
        rows.append([n, _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(err)])
    _write_csv(path, ["step", "x", "y", "z", "err"], rows)


def read_positions(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CliError(f"{path} holds no positions")
    steps = np.array([int(r["step"]) for r in rows])
    if not np.array_equal(steps, np.arange(len(rows))):
        raise CliError(f"{path}: steps must run 0..N-1 in order")
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])


def write_bias(out_dir, bias, extra):
    np.asarray(bias, dtype="<f4").tofile(os.path.join(out_dir, BIAS_FILE))
    meta = {"file": BIAS_FILE, "dtype": "float32", "byte_order": "little", "shape": [3],
            "values": [float(v) for v in np.asarray(bias, dtype="<f4")], **extra}
    with open(os.path.join(out_dir, "bias.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_bias(path):
    if os.path.isdir(path):
        path = os.path.join(path, BIAS_FILE)
    raw = np.fromfile(path, dtype="<f4")
    if raw.shape != (3,):
        raise CliError(f"{path}: expected 3 float32 values, found {raw.size}")
    return raw.astype(float)


def _model_path(path):
    return os.path.join(path, MODEL_FILE) if os.path.isdir(path) else path


def _load_chart(model_dir, trps, ue_height, bias=None):
    chart = ChannelChart(trp_positions=trps, ue_height=ue_height)
    chart.network_ = ChartNetwork.load(_model_path(model_dir))
    chart.bias_ = np.zeros(3) if bias is None else np.asarray(bias, dtype=float)
    return chart


def _room_bbox(ds):
    if ds.room_bbox is None:
        raise CliError("dataset manifest carries no room_bbox")
    return np.asarray(ds.room_bbox, dtype=float)


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    cfg = resolve_config(args.config)
    if args.trp_set == "baseline":
        cfg["trps"] = cfg["baseline_trps"]
    resolved = {"command": "simulate", "seed": args.seed, "n_steps": args.n_steps,
                "laser_enabled": not args.no_laser, "trp_set": args.trp_set, "scene": cfg}
    _emit_config(args.out, resolved)
    scene = scene_from_config(cfg)
    kin = Kinematics(**cfg["kinematics"])
    traj = generate_trajectory(scene, args.n_steps, args.seed, kin)
    ds = sample_dataset(scene, traj, ChannelParams(**cfg["channel"]), LaserConfig(**cfg["laser"]),
                        seed=args.seed, c_bar=cfg["c_bar"], with_laser=not args.no_laser)
    write_dataset(ds, args.out)
    return 0


def cmd_train(args):
    ds = read_dataset(args.data, mode="train")
    lam = args.lambda_value if args.window > 0 else 0.0
    if lam > 0 and not ds.has_laser:
        raise CliError("dataset has no laser scans; use --lambda 0 to train without them")
    params = dict(trp_positions=ds.trp_positions, ue_height=ds.ue_height, loss=args.loss,
                  lambda_value=args.lambda_value, lambda_window=args.window,
                  hinge_margin=args.margin, epochs=args.epochs,
                  pairs_per_epoch=args.pairs_per_epoch, batch_size=args.batch_size,
                  learning_rate=args.lr, output_scale=args.output_scale,
                  icp_stride=args.icp_stride, random_state=args.seed)
    shown = {k: v for k, v in params.items() if k != "trp_positions"}
    _emit_config(args.out, {"command": "train", "data": args.data, "seed": args.seed,
                            "trp_positions": ds.trp_positions.tolist(), **shown})
    chart = ChannelChart(**params).fit(ds.features, ds.toa, ds.laser if lam > 0 else None)
    chart.network_.save(os.path.join(args.out, MODEL_FILE))
    _write_csv(os.path.join(args.out, "loss.csv"), ["step", "loss"],
               [[i, repr(float(v))] for i, v in enumerate(chart.loss_history_)])
    return 0


def cmd_estimate_offset(args):
    ds = read_dataset(args.data, mode="train")
    bounds = offset_bounds(_room_bbox(ds), args.pad)
    pso = PsoConfig(args.swarm, args.iterations, seed=args.seed)
    _emit_config(args.out, {"command": "estimate-offset", "model": args.model, "data": args.data,
                            "seed": args.seed, "bounds": bounds.tolist(), "pso": asdict(pso)})
    chart = _load_chart(args.model, ds.trp_positions, ds.ue_height)
    bias = chart.estimate_offset(ds.features, ds.toa, bounds, pso)
    write_bias(args.out, bias, {"bounds": bounds.tolist()})
    print("bias", " ".join(f"{v:.6f}" for v in bias))
    return 0


def cmd_localize(args):
    ds = read_dataset(args.data, mode="test")
    bias = read_bias(args.bias) if args.bias else np.zeros(3)
    _emit_config(args.out, {"command": "localize", "model": args.model, "bias": bias.tolist(),
                            "data": args.data, "seed": args.seed})
    chart = _load_chart(args.model, ds.trp_positions, ds.ue_height, bias)
    write_positions(os.path.join(args.out, "positions.csv"), chart.predict(ds.features),
                    ds.ground_truth)
    return 0


def cmd_evaluate(args):
    man = read_manifest(args.data)
    if not man["has_ground_truth"]:
        raise CliError(f"{args.data} has no ground truth; evaluation needs it")
    ds = read_dataset(args.data, mode="test")
    est = read_positions(args.positions)
    if len(est) != ds.n_steps:
        raise CliError(f"{len(est)} positions for a dataset of {ds.n_steps} steps")
    _emit_config(args.out, {"command": "evaluate", "positions": args.positions,
                            "data": args.data, "k": args.k, "seed": args.seed})
    report = evaluate_positions(est, ds.ground_truth, args.k)
    summary = report.summary()
    if args.k_curve:
        from .metrics import continuity, trustworthiness
        gt = ds.ground_truth[:, :2]
        summary["k_curve"] = [{"k": k, "tw": trustworthiness(gt, est[:, :2], k),
                               "ct": continuity(gt, est[:, :2], k)} for k in args.k_curve]
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = [[n, *map(_fmt, est[n]), *map(_fmt, ds.ground_truth[n]), _fmt(e)]
            for n, e in enumerate(report.per_step_errors)]
    _write_csv(os.path.join(args.out, "errors.csv"),
               ["step", "x", "y", "z", "gt_x", "gt_y", "gt_z", "err"], rows)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_baseline_tdoa(args):
    ds = read_dataset(args.data, mode="test")
    if ds.n_trps < 3:
        raise CliError(f"TDoA baseline needs at least 3 TRPs, dataset has {ds.n_trps}")
    x0, y0, x1, y1 = _room_bbox(ds)
    _emit_config(args.out, {"command": "baseline-tdoa", "data": args.data, "seed": args.seed,
                            "swarm": args.swarm, "iterations": args.iterations})
    loc = TdoaPsoLocalizer(ds.trp_positions, ds.ue_height, (x0, y0, x1, y1),
                           args.swarm, args.iterations, args.seed)
    write_positions(os.path.join(args.out, "positions.csv"), loc.predict(ds.toa),
                    ds.ground_truth)
    return 0


def cmd_diagnose_power(args):
    ds = read_dataset(args.data, mode="test")
    if not ds.has_ground_truth:
        raise CliError("power/distance diagnostic needs ground truth")
    _emit_config(args.out, {"command": "diagnose-power", "data": args.data, "seed": args.seed,
                            "margin_db": args.margin_db, "n_triples": args.n_triples})
    rate = check_power_distance(ds.features, ds.ground_truth, ds.trp_positions,
                                args.margin_db, args.n_triples, args.seed)
    result = {"margin_db": args.margin_db, "n_triples": args.n_triples, "rate": rate}
    if args.out:
        with open(os.path.join(args.out, "power.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"rate {rate:.6f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ccfusion", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=func)
        return sp

    s = add("simulate", cmd_simulate, "simulate one dataset directory")
    s.add_argument("--config", help="scene JSON (defaults to the built-in 20x15 m hall)")
    s.add_argument("--out", required=True)
    s.add_argument("--n-steps", type=int, default=5000)
    s.add_argument("--no-laser", action="store_true")
    s.add_argument("--trp-set", choices=("default", "baseline"), default="default")

    s = add("train", cmd_train, "train a chart network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lambda", dest="lambda_value", type=float, default=5.0)
    s.add_argument("--window", type=int, default=500)
    s.add_argument("--loss", choices=("split_toa", "pair_toa", "hinge"), default="split_toa")
    s.add_argument("--margin", type=float, default=1.0, help="hinge margin in meters")
    s.add_argument("--epochs", type=int, default=6)
    s.add_argument("--pairs-per-epoch", type=int, default=20000)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--output-scale", type=float, default=10.0)
    s.add_argument("--icp-stride", type=int, default=2)

    s = add("estimate-offset", cmd_estimate_offset, "fit the chart offset by PSO")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--swarm", type=int, default=100)
    s.add_argument("--iterations", type=int, default=300)
    s.add_argument("--pad", type=float, default=5.0)

    s = add("localize", cmd_localize, "write offset-corrected positions")
    s.add_argument("--model", required=True)
    s.add_argument("--bias")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)

    s = add("evaluate", cmd_evaluate, "score positions against ground truth")
    s.add_argument("--positions", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=None)
    s.add_argument("--k-curve", type=int, nargs="*", default=None)

    s = add("baseline-tdoa", cmd_baseline_tdoa, "per-step TDoA trilateration by PSO")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--swarm", type=int, default=100)
    s.add_argument("--iterations", type=int, default=300)

    s = add("diagnose-power", cmd_diagnose_power, "power/distance ordering rate")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--margin-db", type=float, default=0.0)
    s.add_argument("--n-triples", type=int, default=10000)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = int(os.environ.get(THREADS_ENV, "1"))
    try:
        with threadpool_limits(threads):
            return args.func(args)
    except (CliError, DatasetFormatError, ModelFormatError, SceneError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
