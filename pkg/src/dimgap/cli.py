"""Command-line interface.

Exit codes: 0 on success, 1 for usage errors (bad flags, missing arguments),
2 for runtime failures (bad data, infeasible sampling, IO errors).

`dimgap --help-json` prints the full command table as JSON; it is generated
from the same COMMANDS dict that builds the argparse tree, so the two can
never drift apart.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__, serialize
from .attacks import AttackSpec, minimal_strength_threshold, pgd_attack
from .datagen import (
    MEAN_MODES,
    TAU_MODES,
    AmbientSpec,
    build_manifold,
    read_dataset,
    sample_cluster_means,
    sample_nice_batch,
    synthesize,
    write_dataset,
)
from .idim import ESTIMATORS, load_point_cloud
from .linalg import IMMERSION_MODES
from .network import (
    INIT_MODES,
    LOSS_KINDS,
    TrainConfig,
    forward,
    init_params,
    model_from_json,
    model_to_json,
    train_gd,
)
from .sweep import read_config, resolve_threads, run_sweep
from .theory import monte_carlo_verify, theory_report_dict


class UsageError(Exception):
    """Raised for bad invocations; reported with exit code 1."""


GLOBAL_ARGS = [
    {"flag": "--seed", "dest": "seed", "type": "int", "default": 0,
     "help": "base random seed"},
    {"flag": "--out", "dest": "out", "type": "str", "default": None,
     "help": "output directory"},
    {"flag": "--threads", "dest": "threads", "type": "int", "default": None,
     "help": "worker processes (default: DIMGAP_THREADS or 1)"},
]

COMMANDS = {
    "gen": {
        "help": "generate a synthetic dataset directory",
        "args": [
            {"flag": "--d", "dest": "d", "type": "int", "required": True,
             "help": "intrinsic dimension"},
            {"flag": "--D", "dest": "D", "type": "int", "required": True,
             "help": "ambient dimension"},
            {"flag": "--k", "dest": "k", "type": "int", "default": 2,
             "help": "number of clusters"},
            {"flag": "--n", "dest": "n", "type": "int", "default": 1000,
             "help": "number of samples"},
            {"flag": "--tau-mode", "dest": "tau_mode", "type": "choice",
             "choices": list(TAU_MODES), "default": "d-over-D",
             "help": "how the shift scale tau is set"},
            {"flag": "--tau", "dest": "tau", "type": "float", "default": None,
             "help": "explicit tau (required for --tau-mode explicit)"},
            {"flag": "--xi-scale", "dest": "xi_scale", "type": "float",
             "default": 1.0, "help": "intrinsic noise scale"},
            {"flag": "--omega-scale", "dest": "omega_scale", "type": "float",
             "default": 1.0, "help": "ambient noise scale"},
            {"flag": "--mean-mode", "dest": "mean_mode", "type": "choice",
             "choices": list(MEAN_MODES), "default": "orthogonal-sqrt-d",
             "help": "cluster mean placement"},
            {"flag": "--immersion", "dest": "immersion", "type": "choice",
             "choices": list(IMMERSION_MODES), "default": "exact-qr",
             "help": "how the immersion matrix is sampled"},
            {"flag": "--nice", "dest": "nice", "type": "flag",
             "help": "rejection-sample nice examples (bounded noise norms)"},
        ],
    },
    "train": {
        "help": "train a two-layer ReLU network on a dataset directory",
        "args": [
            {"flag": "--data", "dest": "data", "type": "str", "required": True,
             "help": "dataset directory written by gen"},
            {"flag": "--width", "dest": "width", "type": "int", "default": 2000,
             "help": "hidden width"},
            {"flag": "--loss", "dest": "loss", "type": "choice",
             "choices": list(LOSS_KINDS), "default": "exponential",
             "help": "training loss"},
            {"flag": "--lr", "dest": "lr", "type": "float", "default": 0.1,
             "help": "learning rate"},
            {"flag": "--epochs", "dest": "epochs", "type": "int", "default": 1000,
             "help": "full-batch gradient steps"},
            {"flag": "--weight-decay", "dest": "weight_decay", "type": "float",
             "default": 0.0, "help": "l2 penalty coefficient"},
            {"flag": "--stop-loss", "dest": "stop_loss", "type": "float",
             "default": None, "help": "stop early when loss reaches this value"},
            {"flag": "--init", "dest": "init", "type": "choice",
             "choices": list(INIT_MODES), "default": "kaiming-normal",
             "help": "initialization mode"},
            {"flag": "--init-factor", "dest": "init_factor", "type": "float",
             "default": 1.0, "help": "scale multiplier for scaled init"},
        ],
    },
    "attack": {
        "help": "attack a trained model (fixed budget or threshold search)",
        "args": [
            {"flag": "--data", "dest": "data", "type": "str", "required": True,
             "help": "dataset directory"},
            {"flag": "--model", "dest": "model", "type": "str", "required": True,
             "help": "model.json written by train"},
            {"flag": "--norm", "dest": "norm", "type": "choice",
             "choices": ["l2", "linf"], "default": "l2", "help": "ball norm"},
            {"flag": "--subspace", "dest": "subspace", "type": "choice",
             "choices": ["full", "on-manifold", "off-manifold"],
             "default": "full", "help": "perturbation subspace"},
            {"flag": "--epsilon", "dest": "epsilon", "type": "float",
             "default": None,
             "help": "fixed budget; omit to search the minimal budget"},
            {"flag": "--steps", "dest": "steps", "type": "int", "default": 20,
             "help": "gradient steps per attack"},
            {"flag": "--target", "dest": "target", "type": "float",
             "default": 0.10, "help": "robust-accuracy target for the search"},
            {"flag": "--grid-lo", "dest": "grid_lo", "type": "float",
             "default": 1e-3, "help": "search lower bound"},
            {"flag": "--grid-hi", "dest": "grid_hi", "type": "float",
             "default": 1e4, "help": "search upper bound"},
            {"flag": "--refine-rel", "dest": "refine_rel", "type": "float",
             "default": 0.05, "help": "relative refinement width"},
            {"flag": "--eval-n", "dest": "eval_n", "type": "int", "default": 0,
             "help": "attack only the first N samples (0 = all)"},
        ],
    },
    "sweep": {
        "help": "run a sweep experiment from a TOML configuration",
        "args": [
            {"flag": "--config", "dest": "config", "type": "str",
             "required": True, "help": "experiment TOML file"},
            {"flag": "--resume", "dest": "resume", "type": "flag",
             "help": "skip cells already present in the output directory"},
        ],
    },
    "theory": {
        "help": "print the constants and perturbation-bound report",
        "args": [
            {"flag": "--d", "dest": "d", "type": "int", "required": True,
             "help": "intrinsic dimension"},
            {"flag": "--D", "dest": "D", "type": "int", "required": True,
             "help": "ambient dimension"},
            {"flag": "--tau", "dest": "tau", "type": "float", "required": True,
             "help": "shift scale"},
            {"flag": "--k", "dest": "k", "type": "int", "default": 2,
             "help": "number of clusters"},
            {"flag": "--p", "dest": "p", "type": "float", "default": 0.0,
             "help": "max cross-cluster mean inner product"},
            {"flag": "--balance", "dest": "balance", "type": "float",
             "default": None, "help": "class balance c (default floor(k/2)/k)"},
        ],
    },
    "verify-lemmas": {
        "help": "Monte Carlo check of the high-probability events",
        "args": [
            {"flag": "--d", "dest": "d", "type": "int", "required": True,
             "help": "intrinsic dimension"},
            {"flag": "--D", "dest": "D", "type": "int", "required": True,
             "help": "ambient dimension"},
            {"flag": "--tau", "dest": "tau", "type": "float", "required": True,
             "help": "shift scale"},
            {"flag": "--k", "dest": "k", "type": "int", "default": 2,
             "help": "number of shift vectors per draw"},
            {"flag": "--draws", "dest": "draws", "type": "int", "default": 10000,
             "help": "Monte Carlo draws"},
        ],
    },
    "idim": {
        "help": "estimate the intrinsic dimension of a CSV point cloud",
        "args": [
            {"flag": "--data", "dest": "data", "type": "str", "required": True,
             "help": "CSV file (data.csv from gen, or any numeric table)"},
            {"flag": "--method", "dest": "method", "type": "choice",
             "choices": ["lpca", "mle", "twonn", "all"], "default": "all",
             "help": "estimator to run"},
            {"flag": "--neighbors", "dest": "neighbors", "type": "int",
             "default": 20, "help": "neighborhood size for lpca"},
            {"flag": "--threshold", "dest": "threshold", "type": "float",
             "default": 0.95, "help": "eigenmass threshold for lpca"},
            {"flag": "--k", "dest": "k", "type": "int", "default": 5,
             "help": "neighbor count for mle"},
            {"flag": "--discard", "dest": "discard", "type": "float",
             "default": 0.10, "help": "tail fraction dropped by twonn"},
        ],
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        raise SystemExit(1)


def _add_arg(parser, spec):
    kwargs = {"dest": spec["dest"], "help": spec.get("help", "")}
    kind = spec["type"]
    if kind == "flag":
        kwargs["action"] = "store_true"
        kwargs["default"] = False
    else:
        kwargs["default"] = spec.get("default")
        if spec.get("required"):
            kwargs["required"] = True
        if kind == "int":
            kwargs["type"] = int
        elif kind == "float":
            kwargs["type"] = float
        elif kind == "choice":
            kwargs["choices"] = spec["choices"]
    parser.add_argument(spec["flag"], **kwargs)


def build_parser():
    parser = _Parser(prog="dimgap",
                     description="dimension-gap adversarial robustness laboratory")
    parser.add_argument("--version", action="version", version="dimgap %s" % __version__)
    parser.add_argument("--help-json", action="store_true", dest="help_json",
                        help="print the command table as JSON and exit")
    sub = parser.add_subparsers(dest="command")
    for name, info in COMMANDS.items():
        sp = sub.add_parser(name, help=info["help"], description=info["help"])
        for spec in info["args"]:
            _add_arg(sp, spec)
        for spec in GLOBAL_ARGS:
            _add_arg(sp, spec)
    return parser


def _require_out(ns, command):
    if not ns.out:
        raise UsageError("%s requires --out" % command)
    return ns.out


def cmd_gen(ns):
    out = _require_out(ns, "gen")
    cluster = sample_cluster_means(ns.k, ns.d, ns.mean_mode, seed=ns.seed)
    ambient = AmbientSpec.create(ns.D, ns.d, ns.tau_mode, ns.tau,
                                 ns.xi_scale, ns.omega_scale)
    if ns.nice:
        manifold = build_manifold(cluster, ambient, seed=ns.seed,
                                  immersion_mode=ns.immersion)
        ds = sample_nice_batch(manifold, ns.n, seed=ns.seed)
    else:
        ds = synthesize(cluster, ambient, ns.n, seed=ns.seed,
                        immersion_mode=ns.immersion)
    write_dataset(ds, out, seed=ns.seed)
    print("wrote %d samples (d=%d D=%d k=%d tau=%s) to %s"
          % (ds.n, ns.d, ns.D, ns.k, serialize.fmt_float(ambient.tau), out))
    return 0


def cmd_train(ns):
    out = _require_out(ns, "train")
    ds = read_dataset(ns.data)
    params = init_params(ns.width, ds.manifold.ambient.D, seed=ns.seed,
                         init_mode=ns.init, init_factor=ns.init_factor)
    config = TrainConfig(loss_kind=ns.loss, lr=ns.lr, epochs=ns.epochs,
                         weight_decay=ns.weight_decay, stop_loss=ns.stop_loss)
    params, trace = train_gd(params, ds.observed, ds.labels, config)
    serialize.ensure_dir(out)
    final_loss = trace.loss[-1] if trace.loss else float("nan")
    serialize.write_json(os.path.join(out, "model.json"),
                         model_to_json(params, config, final_loss, ns.seed))
    serialize.write_csv(os.path.join(out, "trace.csv"),
                        ["epoch", "loss", "accuracy", "theta_norm", "normalized_margin"],
                        ([i, trace.loss[i], trace.accuracy[i], trace.theta_norm[i],
                          trace.normalized_margin[i]] for i in range(trace.epochs_run)))
    print("trained %d epochs (stop: %s), loss %s, train accuracy %s -> %s"
          % (trace.epochs_run, trace.stop_reason, serialize.fmt_float(final_loss),
             serialize.fmt_float(trace.accuracy[-1] if trace.accuracy else float("nan")),
             out))
    return 0


def cmd_attack(ns):
    ds = read_dataset(ns.data)
    params = model_from_json(serialize.read_json(ns.model))
    X, y = ds.observed, ds.labels
    if ns.eval_n and ns.eval_n > 0:
        X, y = X[:ns.eval_n], y[:ns.eval_n]
    projectors = ds.manifold.projectors() if ns.subspace != "full" else None
    spec = AttackSpec(norm=ns.norm, epsilon=ns.epsilon or 0.0, steps=ns.steps,
                      subspace=ns.subspace)
    if ns.epsilon is not None:
        outcome = pgd_attack(params, X, y, spec, projectors)
        report = {"mode": "fixed", "norm": ns.norm, "subspace": ns.subspace,
                  "epsilon": ns.epsilon,
                  "robust_accuracy": outcome.robust_accuracy,
                  "success_rate": float(np.mean(outcome.success))}
        print("robust accuracy %s at epsilon %s (%s, %s)"
              % (serialize.fmt_float(outcome.robust_accuracy),
                 serialize.fmt_float(ns.epsilon), ns.norm, ns.subspace))
    else:
        result = minimal_strength_threshold(params, X, y, spec, projectors,
                                            target=ns.target,
                                            grid=(ns.grid_lo, ns.grid_hi),
                                            refine_rel=ns.refine_rel)
        report = {"mode": "threshold", "norm": ns.norm, "subspace": ns.subspace,
                  "target": ns.target, "epsilon_star": result.epsilon_star,
                  "saturated": result.saturated, "curve": result.curve}
        print("epsilon_star %s (saturated: %s) for %s/%s at target %s"
              % (serialize.fmt_float(result.epsilon_star),
                 "true" if result.saturated else "false",
                 ns.norm, ns.subspace, serialize.fmt_float(ns.target)))
    if ns.out:
        serialize.ensure_dir(ns.out)
        serialize.write_json(os.path.join(ns.out, "attack.json"), report)
    return 0


def cmd_sweep(ns):
    out = _require_out(ns, "sweep")
    config = read_config(ns.config)
    info = run_sweep(config, out, threads=resolve_threads(ns.threads),
                     resume=ns.resume)
    print("sweep complete: %d cells (%d run, %d reused) with %d workers -> %s"
          % (info["cells"], info["ran"], info["skipped"], info["threads"],
             info["outdir"]))
    return 0


def cmd_theory(ns):
    report = theory_report_dict(ns.d, ns.D, ns.tau, ns.k, p=ns.p,
                                c_balance=ns.balance)
    text = serialize.dumps_json(report)
    print(text)
    if ns.out:
        serialize.ensure_dir(ns.out)
        serialize.write_json(os.path.join(ns.out, "theory.json"), report)
    return 0


def cmd_verify_lemmas(ns):
    result = monte_carlo_verify(ns.d, ns.D, ns.tau, ns.k, draws=ns.draws,
                                seed=ns.seed)
    for name, ev in result.events.items():
        line = "%-3s empirical %-10s bound %-10s (%d/%d)" % (
            name, serialize.fmt_float(round(ev.empirical, 6)),
            serialize.fmt_float(round(ev.bound, 6)), ev.satisfied, ev.total)
        if not ev.applicable:
            line += "  [not applicable]"
        print(line)
    if ns.out:
        serialize.ensure_dir(ns.out)
        serialize.write_json(os.path.join(ns.out, "verify_lemmas.json"),
                             result.to_dict())
    return 0


def cmd_idim(ns):
    X, _ = load_point_cloud(ns.data)
    methods = list(ESTIMATORS) if ns.method == "all" else [ns.method]
    results = []
    for method in methods:
        if method == "lpca":
            est = ESTIMATORS[method](X, n_neighbors=ns.neighbors,
                                     threshold=ns.threshold)
        elif method == "mle":
            est = ESTIMATORS[method](X, k=ns.k)
        else:
            est = ESTIMATORS[method](X, discard_fraction=ns.discard)
        results.append(est)
        print("%-6s estimate %s (points %d, skipped %d)"
              % (est.method, serialize.fmt_float(est.estimate), est.n_points,
                 est.n_skipped))
    if ns.out:
        serialize.ensure_dir(ns.out)
        serialize.write_json(os.path.join(ns.out, "idim.json"),
                             [est.to_dict() for est in results])
    return 0


_HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "theory": cmd_theory,
    "verify-lemmas": cmd_verify_lemmas,
    "idim": cmd_idim,
}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.help_json:
        print(serialize.dumps_json({"prog": "dimgap", "version": __version__,
                                    "global_args": GLOBAL_ARGS,
                                    "commands": COMMANDS}))
        return 0
    if not ns.command:
        parser.print_help()
        return 1
    try:
        return _HANDLERS[ns.command](ns)
    except UsageError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
