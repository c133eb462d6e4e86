"""Sweep harness: train/attack grids over an ambient- or intrinsic-dimension
sweep, run cell-parallel with deterministic, byte-identical outputs.

A cell is one (sweep value, seed) pair. Every random stage of a cell draws
from its own child stream SeedSequence([seed, value_index, stage_tag]), so
results do not depend on scheduling; workers write one JSON file per cell
and the final CSV tables are assembled in canonical order afterward, which
makes reruns byte-identical for any thread count and makes interrupted runs
resumable with --resume.

Outputs in the target directory:
  config.toml        the resolved experiment configuration
  cells/*.json       one raw result per cell (intermediate, timing included)
  sweep.csv          one row per (value, seed, norm, subspace), plus
                     per-value median rows with seed="median"
  summary.csv        per (value, norm, subspace): median and IQR over seeds
  timings.csv        per-cell wall time (the only non-deterministic table)
  theory_attack.csv  per-cell closed-direction attack results (optional)
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .attacks import (
    NORMS,
    SUBSPACES,
    AttackSpec,
    build_theory_directions,
    mean_on_manifold_proportion,
    minimal_strength_threshold,
    pgd_attack,
    theory_attack,
)
from .datagen import AmbientSpec, build_manifold, sample_cluster_means, sample_nice_batch, synthesize
from .linalg import build_projectors
from .network import INIT_MODES, TrainConfig, forward, init_params, train_gd
from .theory import compute_constants

SWEEP_COLUMNS = ["sweep_value", "seed", "norm", "subspace", "eps_star", "saturated",
                 "clean_train_acc", "clean_test_acc", "on_manifold_prop",
                 "runtime_s", "status"]
SUMMARY_COLUMNS = ["sweep_value", "norm", "subspace", "eps_star_median", "eps_star_iqr",
                   "n_seeds", "n_saturated", "n_error", "clean_train_acc_median",
                   "clean_test_acc_median", "on_manifold_prop_median",
                   "on_manifold_prop_iqr"]
THEORY_COLUMNS = ["sweep_value", "seed", "direction", "flip_rate",
                  "median_perturbation_norm", "eta_theory", "n", "n_capped",
                  "margin_positive"]

# Stage tags for per-cell child streams.
_STAGE_MEANS = 1
_STAGE_MANIFOLD = 2
_STAGE_TRAIN_SAMPLES = 3
_STAGE_EVAL_SAMPLES = 4
_STAGE_INIT = 5
_STAGE_THEORY_EVAL = 6


def cell_seed(base, value_index, stage):
    """Deterministic integer child seed for one stage of one sweep cell."""
    ss = np.random.SeedSequence([int(base), int(value_index), int(stage)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a sweep run."""

    sweep_param: str = "D"
    sweep_values: list = field(default_factory=lambda: [200, 500, 1000, 2000])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    d: int = 100
    D: int = 1000
    k: int = 2
    n_train: int = 1000
    n_eval: int = 500
    tau_mode: str = "d-over-D"
    tau: float = None
    xi_scale: float = 1.0
    omega_scale: float = 1.0
    mean_mode: str = "gaussian"
    immersion_mode: str = "exact-qr"
    width: int = 1000
    init_mode: str = "kaiming-normal"
    init_factor: float = 1.0
    loss_kind: str = "exponential"
    lr: float = 0.1
    epochs: int = 800
    weight_decay: float = 0.0
    stop_loss: float = None
    attack_steps: int = 20
    target_robust_accuracy: float = 0.10
    refine_rel: float = 0.05
    grid_lo: float = 1e-3
    grid_hi: float = 1e4
    norms: list = field(default_factory=lambda: ["l2", "linf"])
    subspaces: list = field(default_factory=lambda: ["full", "on-manifold", "off-manifold"])
    theory_attack_examples: int = 0

    def __post_init__(self):
        if self.sweep_param not in ("d", "D"):
            raise ValueError("sweep_param must be 'd' or 'D'")
        if not self.sweep_values:
            raise ValueError("need at least one sweep value")
        if not self.seeds:
            raise ValueError("need at least one seed")
        for norm in self.norms:
            if norm not in NORMS:
                raise ValueError("unknown norm %r" % (norm,))
        for sub in self.subspaces:
            if sub not in SUBSPACES:
                raise ValueError("unknown subspace %r" % (sub,))
        if self.init_mode not in INIT_MODES:
            raise ValueError("unknown init_mode %r" % (self.init_mode,))
        if self.tau_mode == "explicit" and self.tau is None:
            raise ValueError("tau_mode=explicit requires tau")

    def specs(self):
        return [(norm, sub) for norm in self.norms for sub in self.subspaces]

    def cell_dims(self, value):
        d = int(value) if self.sweep_param == "d" else self.d
        D = int(value) if self.sweep_param == "D" else self.D
        return d, D

    def to_dict(self):
        out = asdict(self)
        return {k: v for k, v in out.items() if v is not None}


def write_config(config, path):
    serialize.write_toml(path, config.to_dict())


def config_from_dict(mapping):
    fields = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(mapping) - fields
    if unknown:
        raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    return ExperimentConfig(**mapping)


def read_config(path):
    return config_from_dict(serialize.read_toml(path))


def run_cell(config, value_index, seed):
    """Run one sweep cell: generate, train, search all attack thresholds.

    Returns a plain-dict record (JSON-ready, process-pool friendly).
    """
    t0 = time.perf_counter()
    value = int(config.sweep_values[value_index])
    d, D = config.cell_dims(value)
    cluster = sample_cluster_means(config.k, d, config.mean_mode,
                                   seed=cell_seed(seed, value_index, _STAGE_MEANS))
    ambient = AmbientSpec.create(D, d, config.tau_mode, config.tau,
                                 config.xi_scale, config.omega_scale)
    manifold = build_manifold(cluster, ambient,
                              seed=cell_seed(seed, value_index, _STAGE_MANIFOLD),
                              immersion_mode=config.immersion_mode)
    train = synthesize(cluster, ambient, config.n_train,
                       seed=cell_seed(seed, value_index, _STAGE_TRAIN_SAMPLES),
                       manifold=manifold)
    test = synthesize(cluster, ambient, config.n_eval,
                      seed=cell_seed(seed, value_index, _STAGE_EVAL_SAMPLES),
                      manifold=manifold)
    params = init_params(config.width, D,
                         seed=cell_seed(seed, value_index, _STAGE_INIT),
                         init_mode=config.init_mode, init_factor=config.init_factor)
    tconf = TrainConfig(loss_kind=config.loss_kind, lr=config.lr,
                        epochs=config.epochs, weight_decay=config.weight_decay,
                        init_mode=config.init_mode, init_factor=config.init_factor,
                        stop_loss=config.stop_loss)
    params, trace = train_gd(params, train.observed, train.labels, tconf)
    # factored projectors: attack loops project (n, D) batches every step, and
    # applying via M costs D*d per row instead of D^2
    projectors = build_projectors(manifold.immersion, force_factored=True)
    train_acc = float(np.mean(train.labels * forward(params, train.observed) > 0))
    test_acc = float(np.mean(test.labels * forward(params, test.observed) > 0))

    rows = []
    for norm, subspace in config.specs():
        spec = AttackSpec(norm=norm, epsilon=0.0, steps=config.attack_steps,
                          subspace=subspace, loss_kind=config.loss_kind)
        result = minimal_strength_threshold(
            params, test.observed, test.labels, spec, projectors,
            target=config.target_robust_accuracy,
            grid=(config.grid_lo, config.grid_hi), refine_rel=config.refine_rel)
        if result.saturated:
            on_prop = float("nan")
        else:
            outcome = pgd_attack(params, test.observed, test.labels,
                                 spec.with_epsilon(result.epsilon_star), projectors)
            on_prop = mean_on_manifold_proportion(outcome.perturbations, projectors,
                                                  mask=outcome.success)
        rows.append({"norm": norm, "subspace": subspace,
                     "eps_star": float(result.epsilon_star),
                     "saturated": bool(result.saturated),
                     "on_manifold_prop": on_prop})

    theory_rows = []
    if config.theory_attack_examples > 0:
        theory_rows = _theory_attack_rows(config, value_index, seed, manifold,
                                          projectors, params, train)
    return {"sweep_value": value, "seed": int(seed), "status": "ok",
            "runtime_s": time.perf_counter() - t0,
            "clean_train_acc": train_acc, "clean_test_acc": test_acc,
            "stop_reason": trace.stop_reason, "epochs_run": trace.epochs_run,
            "final_loss": trace.loss[-1] if trace.loss else float("nan"),
            "rows": rows, "theory": theory_rows}


def _theory_attack_rows(config, value_index, seed, manifold, projectors, params, train):
    cl, amb = manifold.cluster, manifold.ambient
    gram = cl.means @ cl.means.T
    p = float(np.abs(gram - np.diag(np.diag(gram))).max()) if cl.k >= 2 else 0.0
    n_pos = int(np.sum(cl.labels > 0))
    consts = compute_constants(cl.d, amb.D, amb.tau, cl.k, p=p,
                               c_balance=min(n_pos, cl.k - n_pos) / cl.k)
    dirs = build_theory_directions(manifold, projectors, constants=consts)
    nice = sample_nice_batch(manifold, config.theory_attack_examples,
                             seed=cell_seed(seed, value_index, _STAGE_THEORY_EVAL))
    margins = train.labels * forward(params, train.observed)
    min_margin = float(margins.min())
    margin_positive = min_margin > 0
    norm_scale = 1.0 / min_margin if margin_positive else 1.0
    out = []
    for direction, u, eta_th, defined in (
            ("off-manifold", dirs.u_perp,
             consts.eta1_perp + consts.eta2_perp, consts.eta_perp_defined),
            ("on-manifold", dirs.u_par,
             consts.eta1_par + consts.eta2_par, consts.eta_par_defined)):
        res = theory_attack(params, nice.observed, nice.labels, u, eta="auto",
                            eta_theory=eta_th if defined else None,
                            norm_scale=norm_scale)
        found = res.found
        med = (float(np.median(res.perturbation_norms[found]))
               if np.any(found) else float("nan"))
        out.append({"direction": direction,
                    "flip_rate": float(np.mean(found)),
                    "median_perturbation_norm": med,
                    "eta_theory": eta_th if defined else float("nan"),
                    "n": int(len(found)), "n_capped": int(res.capped.sum()),
                    "margin_positive": bool(margin_positive)})
    return out


def _error_record(config, value_index, seed, message, runtime_s):
    value = int(config.sweep_values[value_index])
    status = "error: " + " ".join(str(message).split()).replace(",", ";")
    return {"sweep_value": value, "seed": int(seed), "status": status,
            "runtime_s": runtime_s, "clean_train_acc": None,
            "clean_test_acc": None, "rows": [
                {"norm": norm, "subspace": sub, "eps_star": None,
                 "saturated": None, "on_manifold_prop": None}
                for norm, sub in config.specs()], "theory": []}


def _cell_worker(args):
    config, value_index, seed = args
    t0 = time.perf_counter()
    try:
        return run_cell(config, value_index, seed)
    except Exception as exc:  # noqa: BLE001 - cell errors become status rows
        return _error_record(config, value_index, seed,
                             "%s: %s" % (type(exc).__name__, exc),
                             time.perf_counter() - t0)


def _cell_path(outdir, value, seed):
    return os.path.join(outdir, "cells", "cell_v%d_s%d.json" % (value, seed))


def _as_float(x):
    if x is None or x == "":
        return float("nan")
    if isinstance(x, str):
        return float(x)
    return float(x)


def resolve_threads(threads=None):
    """Thread count: explicit argument, then DIMGAP_THREADS, then 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("DIMGAP_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return 1


def run_sweep(config, outdir, threads=None, resume=False):
    """Run all cells (in parallel when threads > 1) and write the tables.

    With resume=True, cells whose JSON file already exists are skipped and
    the tables are re-assembled from all cell files; the configuration must
    match the one stored in the output directory.
    """
    threads = resolve_threads(threads)
    serialize.ensure_dir(outdir)
    serialize.ensure_dir(os.path.join(outdir, "cells"))
    config_path = os.path.join(outdir, "config.toml")
    if resume and os.path.exists(config_path):
        stored = serialize.read_toml(config_path)
        if stored != config.to_dict():
            raise ValueError("resume-config-mismatch: %s does not match the "
                             "requested configuration" % config_path)
    write_config(config, config_path)

    cells = [(vi, seed) for vi in range(len(config.sweep_values))
             for seed in config.seeds]
    pending = []
    for vi, seed in cells:
        path = _cell_path(outdir, int(config.sweep_values[vi]), seed)
        if resume and os.path.exists(path):
            continue
        pending.append((vi, seed))

    n_ran = 0
    if pending:
        if threads == 1:
            for vi, seed in pending:
                record = _cell_worker((config, vi, seed))
                serialize.write_json(_cell_path(outdir, record["sweep_value"],
                                                record["seed"]), record)
                n_ran += 1
        else:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_cell_worker, (config, vi, seed))
                           for vi, seed in pending]
                for fut in as_completed(futures):
                    record = fut.result()
                    serialize.write_json(_cell_path(outdir, record["sweep_value"],
                                                    record["seed"]), record)
                    n_ran += 1

    records = {}
    for vi, seed in cells:
        value = int(config.sweep_values[vi])
        records[(value, seed)] = serialize.read_json(_cell_path(outdir, value, seed))
    _assemble_tables(config, outdir, records)
    return {"outdir": outdir, "cells": len(cells), "ran": n_ran,
            "skipped": len(cells) - len(pending), "threads": threads}


def _median_iqr(values):
    finite = [v for v in values if v is not None and math.isfinite(_as_float(v))]
    if not finite:
        return float("nan"), float("nan")
    arr = np.asarray([_as_float(v) for v in finite])
    q25, q50, q75 = np.percentile(arr, [25.0, 50.0, 75.0])
    return float(q50), float(q75 - q25)


def _assemble_tables(config, outdir, records):
    """Write sweep.csv, summary.csv, timings.csv, theory_attack.csv in
    canonical order from the per-cell records."""
    sweep_rows = []
    summary_rows = []
    timing_rows = []
    theory_rows = []
    specs = config.specs()
    for vi, value in enumerate(int(v) for v in config.sweep_values):
        cell_records = [records[(value, seed)] for seed in config.seeds]
        for record in cell_records:
            ok = record["status"] == "ok"
            by_spec = {(r["norm"], r["subspace"]): r for r in record["rows"]}
            for norm, sub in specs:
                row = by_spec[(norm, sub)]
                sweep_rows.append([value, record["seed"], norm, sub,
                                   _as_float(row["eps_star"]) if ok else None,
                                   row["saturated"] if ok else None,
                                   _as_float(record["clean_train_acc"]) if ok else None,
                                   _as_float(record["clean_test_acc"]) if ok else None,
                                   _as_float(row["on_manifold_prop"]) if ok else None,
                                   None, record["status"]])
            timing_rows.append([value, record["seed"],
                                _as_float(record["runtime_s"]), record["status"]])
            for trow in record.get("theory", []):
                theory_rows.append([value, record["seed"], trow["direction"],
                                    _as_float(trow["flip_rate"]),
                                    _as_float(trow["median_perturbation_norm"]),
                                    _as_float(trow["eta_theory"]), trow["n"],
                                    trow["n_capped"], trow["margin_positive"]])

        ok_records = [r for r in cell_records if r["status"] == "ok"]
        n_error = len(cell_records) - len(ok_records)
        for norm, sub in specs:
            spec_rows = [next(r for r in rec["rows"]
                              if r["norm"] == norm and r["subspace"] == sub)
                         for rec in ok_records]
            eps_values = [_as_float(r["eps_star"]) for r in spec_rows]
            n_sat = sum(1 for r in spec_rows if r["saturated"])
            eps_med, eps_iqr = _median_iqr(eps_values)
            # The median cell counts as saturated when at least half of the
            # contributing seeds saturated.
            sat_med = (2 * n_sat >= len(spec_rows)) if spec_rows else None
            train_med, _ = _median_iqr([_as_float(r["clean_train_acc"]) for r in ok_records])
            test_med, _ = _median_iqr([_as_float(r["clean_test_acc"]) for r in ok_records])
            prop_med, prop_iqr = _median_iqr([_as_float(r["on_manifold_prop"])
                                              for r in spec_rows])
            status = "ok" if n_error == 0 else ("error" if not ok_records else "partial")
            sweep_rows.append([value, "median", norm, sub,
                               None if (sat_med or not spec_rows) else eps_med,
                               sat_med,
                               None if not ok_records else train_med,
                               None if not ok_records else test_med,
                               None if not spec_rows else prop_med,
                               None, status])
            summary_rows.append([value, norm, sub,
                                 eps_med if spec_rows else None,
                                 eps_iqr if spec_rows else None,
                                 len(cell_records), n_sat, n_error,
                                 train_med if ok_records else None,
                                 test_med if ok_records else None,
                                 prop_med if spec_rows else None,
                                 prop_iqr if spec_rows else None])

    serialize.write_csv(os.path.join(outdir, "sweep.csv"), SWEEP_COLUMNS, sweep_rows)
    serialize.write_csv(os.path.join(outdir, "summary.csv"), SUMMARY_COLUMNS, summary_rows)
    serialize.write_csv(os.path.join(outdir, "timings.csv"),
                        ["sweep_value", "seed", "runtime_s", "status"], timing_rows)
    if theory_rows:
        serialize.write_csv(os.path.join(outdir, "theory_attack.csv"),
                            THEORY_COLUMNS, theory_rows)
