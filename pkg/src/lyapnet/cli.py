"""Command-line interface.

Commands: gen, train, bench, sweep, synth, lyap. Configuration precedence
is built-in defaults < --config JSON file < explicit flags; the resolved
merge is dumped into a manifest next to the outputs so any run can be
replayed bit-identically from the manifest alone.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, lorenz, lyapunov, network, training
from .lyapunov import DivergenceError, RankDeficiencyError
from .training import NonConvergenceError, TrainConfig, TrainingError


class ConfigError(ValueError):
    pass


GEN_DEFAULTS = {
    "n": 1000, "dt": 0.01, "scale": 30.0, "transient": 0, "seed": 0,
    "sample_every": 10, "x0": "12,12,24",
    "sigma_a": 20.0, "rho_a": 28.0, "beta_a": 8.0 / 3.0,
    "sigma_b": 10.0, "rho_b": 28.0, "beta_b": 4.0 / 3.0,
    "out": "runs/gen",
}

TRAIN_DEFAULTS = {
    "data": None, "regularizer": "none", "alpha": 1.0, "dropout_p": 0.2,
    "lyap_horizon": 20, "lr": 1e-3, "optimizer": "adam", "seed": 0,
    "layers": "3,50,50,50,3", "n": 1000, "out": "runs/train",
}

BENCH_DEFAULTS = {
    "seeds": 10, "alpha": 1.0, "l1_alpha": 1e-4, "l2_alpha": 1e-3,
    "dropout_p": 0.2, "lyap_horizon": 20, "lr": 1e-3, "optimizer": "adam",
    "layers": "3,50,50,50,3", "n": 1000, "threads": 1, "out": "runs/bench",
}

SWEEP_DEFAULTS = {
    "alphas": ",".join(str(a) for a in training.DEFAULT_ALPHA_GRID),
    "seeds": 10, "lyap_horizon": 20, "lr": 1e-3, "optimizer": "adam",
    "layers": "3,50,50,50,3", "n": 1000, "threads": 1, "out": "runs/sweep",
}

SYNTH_DEFAULTS = {
    "target": 0.104, "seed": 0, "lr": 1e-2, "max_steps": 50000,
    "max_restarts": 5, "layers": "3,10,3", "out": "runs/synth",
}

LYAP_DEFAULTS = {
    "map": None, "params": None, "r": 4.0, "dt": 0.01,
    "sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0,
    "steps": 100000, "transient": 1000, "renorm_every": 1, "seed": 0,
    "full": False, "x0": None, "out": None,
}


def _parse_layers(s):
    try:
        sizes = tuple(int(v) for v in str(s).split(","))
    except ValueError:
        raise ConfigError(f"layers: cannot parse {s!r}")
    return sizes


def _resolve(defaults, args):
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if "resolved_config" in loaded:   # manifest replay
            loaded = loaded["resolved_config"]
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(loaded)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _prepare_out(cfg):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, t0, config_path=None):
    manifest = {
        "command": command,
        "config_path": config_path,
        "output_dir": out,
        "resolved_config": cfg,
        "tool_version": __version__,
        "wall_time": time.time() - t0,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _train_config(cfg, seed=None):
    tc = TrainConfig(
        regularizer=cfg.get("regularizer", "none"),
        alpha=float(cfg.get("alpha", 1.0)),
        dropout_p=float(cfg.get("dropout_p", 0.2)),
        lyap_horizon=int(cfg.get("lyap_horizon", 20)),
        learning_rate=float(cfg.get("lr", 1e-3)),
        optimizer=cfg.get("optimizer", "adam"),
        seed=int(cfg["seed"]) if seed is None else seed,
        layer_sizes=_parse_layers(cfg.get("layers", "3,50,50,50,3")),
    )
    try:
        tc.validate()
    except ValueError as e:
        raise ConfigError(str(e))
    return tc


# -- commands -------------------------------------------------------------

def cmd_gen(args):
    t0 = time.time()
    cfg = _resolve(GEN_DEFAULTS, args)
    if (cfg["n"] < 1 or cfg["dt"] <= 0 or cfg["scale"] <= 0
            or cfg["transient"] < 0 or cfg["sample_every"] < 1):
        raise ConfigError(
            "need n >= 1, dt > 0, scale > 0, transient >= 0, sample_every >= 1")
    pA = lorenz.LorenzParams(cfg["sigma_a"], cfg["rho_a"], cfg["beta_a"])
    pB = lorenz.LorenzParams(cfg["sigma_b"], cfg["rho_b"], cfg["beta_b"])
    try:
        x0 = tuple(float(v) for v in str(cfg["x0"]).split(","))
    except ValueError:
        raise ConfigError(f"bad x0 {cfg['x0']!r}; want 'x,y,z'")
    if len(x0) != 3:
        raise ConfigError(f"x0 needs 3 components, got {len(x0)}")
    traj = lorenz.generate_regime_shift(
        pA, pB, int(cfg["n"]), float(cfg["dt"]), x0=x0,
        transient=int(cfg["transient"]), scale=float(cfg["scale"]),
        seed=int(cfg["seed"]), sample_every=int(cfg["sample_every"]))
    out = _prepare_out(cfg)
    lorenz.save_trajectory(traj, os.path.join(out, "trajectory.csv"),
                           os.path.join(out, "trajectory.json"))
    _write_manifest(out, "gen", cfg, t0, args.config)
    print(f"wrote {len(traj)} states to {out} (shift at {traj.shift_index})")
    return 0


def _load_or_make_traj(cfg):
    if cfg.get("data"):
        base = cfg["data"]
        return lorenz.load_trajectory(os.path.join(base, "trajectory.csv"),
                                      os.path.join(base, "trajectory.json"))
    return training.default_trajectory(int(cfg["seed"]),
                                       n_per_regime=int(cfg["n"]))


def cmd_train(args):
    t0 = time.time()
    cfg = _resolve(TRAIN_DEFAULTS, args)
    tc = _train_config(cfg)
    traj = _load_or_make_traj(cfg)
    res = training.train_online(tc, traj)
    out = _prepare_out(cfg)
    with open(os.path.join(out, "series.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mse", "reg"])
        for t, (m, r) in enumerate(zip(res.per_step_mse, res.per_step_reg)):
            w.writerow([t, repr(float(m)), repr(float(r))])
    with open(os.path.join(out, "result.json"), "w") as fh:
        json.dump({
            "config": tc.to_dict(),
            "seed": res.seed,
            "shift_index": res.shift_index,
            "post_shift_mse_sum": res.post_shift_mse_sum,
            "skipped_reg_steps": res.skipped_reg_steps,
            "series": "series.csv",
            "params": "params.txt",
        }, fh, indent=2)
        fh.write("\n")
    network.save_params(res.final_network(), os.path.join(out, "params.txt"))
    _write_manifest(out, "train", cfg, t0, args.config)
    print(f"post-shift MSE sum {res.post_shift_mse_sum:.6g} "
          f"({res.skipped_reg_steps} skipped regularizer steps)")
    return 0


def _write_bench_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["regularizer", "param", "mean_ratio", "q1", "median", "q3"])
        for row in rows:
            w.writerow([row.regularizer,
                        "" if row.param is None else repr(float(row.param)),
                        repr(row.mean_ratio), repr(row.q1),
                        repr(row.median), repr(row.q3)])


def cmd_bench(args):
    t0 = time.time()
    cfg = _resolve(BENCH_DEFAULTS, args)
    base = _train_config(cfg, seed=0)
    if cfg["seeds"] < 1:
        raise ConfigError("seeds must be >= 1")
    regs = [("lyapunov", float(cfg["alpha"])),
            ("l1", float(cfg["l1_alpha"])),
            ("l2", float(cfg["l2_alpha"])),
            ("dropout", float(cfg["dropout_p"]))]

    def factory(seed):
        return training.default_trajectory(seed, n_per_regime=int(cfg["n"]))

    bench = training.run_benchmark(base, regs, int(cfg["seeds"]),
                                   traj_factory=factory,
                                   n_workers=int(cfg["threads"]))
    out = _prepare_out(cfg)
    _write_bench_csv(os.path.join(out, "benchmark.csv"), bench.rows)
    _write_manifest(out, "bench", cfg, t0, args.config)
    for row in bench.rows:
        print(f"{row.regularizer:9s} param={row.param} "
              f"mean r={row.mean_ratio:.3f} "
              f"[q1 {row.q1:.3f}, med {row.median:.3f}, q3 {row.q3:.3f}]")
    return 0


def cmd_sweep(args):
    t0 = time.time()
    cfg = _resolve(SWEEP_DEFAULTS, args)
    base = _train_config(cfg, seed=0)
    try:
        alphas = [float(a) for a in str(cfg["alphas"]).split(",")]
    except ValueError:
        raise ConfigError(f"alphas: cannot parse {cfg['alphas']!r}")
    if not alphas or any(a < 0 for a in alphas):
        raise ConfigError("alphas must be nonempty and >= 0")

    def factory(seed):
        return training.default_trajectory(seed, n_per_regime=int(cfg["n"]))

    curve = training.sweep_alpha(base, alphas, int(cfg["seeds"]),
                                 traj_factory=factory,
                                 n_workers=int(cfg["threads"]))
    out = _prepare_out(cfg)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "mean_ratio", "q1", "median", "q3"])
        for a, mean, q1, med, q3 in curve:
            w.writerow([repr(float(a)), repr(mean), repr(q1), repr(med),
                        repr(q3)])
    _write_manifest(out, "sweep", cfg, t0, args.config)
    for a, mean, q1, med, q3 in curve:
        print(f"alpha={a:g} mean r={mean:.3f} [q1 {q1:.3f}, q3 {q3:.3f}]")
    return 0


def cmd_synth(args):
    t0 = time.time()
    cfg = _resolve(SYNTH_DEFAULTS, args)
    if cfg["target"] <= 0:
        raise ConfigError("target must be positive")
    tc = TrainConfig(layer_sizes=_parse_layers(cfg["layers"]),
                     learning_rate=float(cfg["lr"]), seed=int(cfg["seed"]))
    net, traj, spec = training.synthesize_attractor(
        float(cfg["target"]), tc, max_steps=int(cfg["max_steps"]),
        max_restarts=int(cfg["max_restarts"]))
    out = _prepare_out(cfg)
    network.save_params(net, os.path.join(out, "params.txt"))
    lorenz.save_trajectory(traj, os.path.join(out, "trajectory.csv"),
                           os.path.join(out, "trajectory.json"))
    with open(os.path.join(out, "spectrum.json"), "w") as fh:
        fh.write(spec.to_json() + "\n")
    _write_manifest(out, "synth", cfg, t0, args.config)
    print(f"synthesized attractor, spectrum {spec.values()}")
    return 0


def cmd_lyap(args):
    t0 = time.time()
    cfg = _resolve(LYAP_DEFAULTS, args)
    if bool(cfg["map"]) == bool(cfg["params"]):
        raise ConfigError("give exactly one of --map or --params")
    if cfg["steps"] < 1:
        raise ConfigError("steps must be >= 1")
    if cfg["map"]:
        name = cfg["map"]
        if name == "logistic":
            dmap = lorenz.get_oracle_map("logistic", r=float(cfg["r"]))
            x0 = [0.3]
        elif name == "lorenz":
            p = lorenz.LorenzParams(float(cfg["sigma"]), float(cfg["rho"]),
                                    float(cfg["beta"]))
            dmap = lorenz.get_oracle_map("lorenz", params=p,
                                         dt=float(cfg["dt"]))
            x0 = [1.0, 1.0, 1.0]
        elif name == "linear":
            dmap = lorenz.get_oracle_map("linear")
            x0 = [1.0, 1.0, 1.0]
        else:
            raise ConfigError(f"unknown map {name!r}")
    else:
        net = network.load_params(cfg["params"])
        dmap = lyapunov.NetworkMap(net)
        x0 = [0.1] * net.dim_in
    if cfg["x0"]:
        x0 = [float(v) for v in str(cfg["x0"]).split(",")]
    if cfg["full"]:
        x = list(x0)
        for _ in range(int(cfg["transient"])):
            x = dmap.step(x)
        jacs = []
        for _ in range(int(cfg["steps"])):
            jacs.append(dmap.jacobian(x))
            x = dmap.step(x)
        spec = lyapunov.spectrum(jacs)
        lam = spec.values()[0]
        report = spec.to_json()
    else:
        lam = lyapunov.largest_exponent(dmap, x0, int(cfg["steps"]),
                                        renorm_every=int(cfg["renorm_every"]),
                                        transient=int(cfg["transient"]))
        report = json.dumps({"exponents": [lam], "horizon": int(cfg["steps"]),
                             "sum": lam, "chaotic": None})
    print(f"lambda_max = {lam:.6f} nats/step")
    if cfg["out"]:
        out = _prepare_out(cfg)
        with open(os.path.join(out, "spectrum.json"), "w") as fh:
            fh.write(report + "\n")
        _write_manifest(out, "lyap", cfg, t0, args.config)
    return 0


# -- parser ---------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file (or a manifest to replay)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="root RNG seed")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="lyapnet",
        description="Lyapunov-exponent estimation, regularized online "
                    "training, and chaotic attractor synthesis")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a regime-shift Lorenz trajectory")
    _add_common(p)
    p.add_argument("--n", type=int, help=f"states per regime (default {GEN_DEFAULTS['n']})")
    p.add_argument("--dt", type=float, help="integrator step (default 0.01)")
    p.add_argument("--scale", type=float, help="state divisor (default 30)")
    p.add_argument("--transient", type=int, help="discarded lead-in steps (default 0)")
    p.add_argument("--sample-every", type=int, dest="sample_every",
                   help="keep every k-th integrator step (default 10)")
    p.add_argument("--x0", help="initial state 'x,y,z' (default 12,12,24)")
    for k in ("sigma-a", "rho-a", "beta-a", "sigma-b", "rho-b", "beta-b"):
        p.add_argument(f"--{k}", type=float, dest=k.replace("-", "_"),
                       help=f"{k} (default {GEN_DEFAULTS[k.replace('-', '_')]:g})")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="one online training run")
    _add_common(p)
    p.add_argument("--data", help="directory with trajectory.csv/.json; generated if omitted")
    p.add_argument("--regularizer", choices=training.REGULARIZERS,
                   help="default none")
    p.add_argument("--alpha", type=float, help="regularizer weight (default 1.0)")
    p.add_argument("--dropout-p", type=float, dest="dropout_p", help="default 0.2")
    p.add_argument("--lyap-horizon", type=int, dest="lyap_horizon", help="default 20")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), help="default adam")
    p.add_argument("--layers", help="comma-separated sizes (default 3,50,50,50,3)")
    p.add_argument("--n", type=int, help="states per regime when generating data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="matched-seed regularizer comparison")
    _add_common(p)
    p.add_argument("--seeds", type=int, help="number of seeds (default 10)")
    p.add_argument("--alpha", type=float, help="largest-exponent regularizer weight (default 1.0)")
    p.add_argument("--l1-alpha", type=float, dest="l1_alpha", help="default 1e-4")
    p.add_argument("--l2-alpha", type=float, dest="l2_alpha", help="default 1e-3")
    p.add_argument("--dropout-p", type=float, dest="dropout_p", help="default 0.2")
    p.add_argument("--lyap-horizon", type=int, dest="lyap_horizon", help="default 20")
    p.add_argument("--lr", type=float, help="default 1e-3")
    p.add_argument("--optimizer", choices=("adam", "sgd"), help="default adam")
    p.add_argument("--layers", help="default 3,50,50,50,3")
    p.add_argument("--n", type=int, help="states per regime (default 1000)")
    p.add_argument("--threads", type=int, help="worker processes (default 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="loss-ratio curve over alpha")
    _add_common(p)
    p.add_argument("--alphas", help="comma-separated grid "
                                    f"(default {SWEEP_DEFAULTS['alphas']})")
    p.add_argument("--seeds", type=int, help="default 10")
    p.add_argument("--lyap-horizon", type=int, dest="lyap_horizon", help="default 20")
    p.add_argument("--lr", type=float, help="default 1e-3")
    p.add_argument("--optimizer", choices=("adam", "sgd"), help="default adam")
    p.add_argument("--layers", help="default 3,50,50,50,3")
    p.add_argument("--n", type=int, help="states per regime (default 1000)")
    p.add_argument("--threads", type=int, help="default 1")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="synthesize a chaotic attractor")
    _add_common(p)
    p.add_argument("--target", type=float, help="target largest exponent (default 0.104)")
    p.add_argument("--lr", type=float, help="default 1e-3")
    p.add_argument("--max-steps", type=int, dest="max_steps", help="default 50000")
    p.add_argument("--max-restarts", type=int, dest="max_restarts", help="default 5")
    p.add_argument("--layers", help="default 3,10,3")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("lyap", help="Lyapunov exponents of a map or saved network")
    _add_common(p)
    p.add_argument("--map", choices=("linear", "logistic", "lorenz"))
    p.add_argument("--params", help="saved network parameter file")
    p.add_argument("--r", type=float, help="logistic parameter (default 4)")
    p.add_argument("--dt", type=float, help="Lorenz step (default 0.01)")
    p.add_argument("--sigma", type=float, help="default 10")
    p.add_argument("--rho", type=float, help="default 28")
    p.add_argument("--beta", type=float, help="default 8/3")
    p.add_argument("--steps", type=int, help="horizon (default 100000)")
    p.add_argument("--transient", type=int, help="default 1000")
    p.add_argument("--renorm-every", type=int, dest="renorm_every", help="default 1")
    p.add_argument("--x0", help="comma-separated start state")
    p.add_argument("--full", action="store_true", default=None,
                   help="full QR spectrum instead of the largest exponent")
    p.set_defaults(func=cmd_lyap)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 2
    except (DivergenceError, RankDeficiencyError, TrainingError,
            NonConvergenceError, ZeroDivisionError) as e:
        print(f"error: numerical: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: io: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
