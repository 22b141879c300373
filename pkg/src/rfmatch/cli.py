"""Command-line orchestration for the whole pipeline.

Subcommands: `circuit validate|gen`, `data sweep|inverse|scenarios`,
`train recbm|ims`, `eval surrogate`, `match run`, `report`.  A JSON run
config may supply any value (sections mirror the strategy hyperparameter
names); explicit flags override file values, which override profile
defaults.  Exit codes: 0 success, 1 usage, 2 validation failure, 3 runtime
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import circuit as circ
from . import data as dat
from . import harness, matchers, nn
from .errors import (
    CircuitSpecError,
    DegenerateNormalizationError,
    ModelFormatError,
    ModelPairingError,
    RfMatchError,
)

PROFILES = {
    "desk": {
        "f_step_ghz": 0.05,
        "c_step_pf": 0.2,
        "width_scale": 0.125,
        "epochs_recbm": 600,
        "epochs_ims": 600,
        "learning_rate_recbm": 1e-3,
        "learning_rate_ims": 1e-3,
        "lr_decay": 0.5,
        "lr_decay_every": 200,
        "batch_size": 256,
        "scenarios": 500,
        "repeats": 5,
        "grid_step_pf": 0.05,
        "test_samples": 20000,
    },
    "paper": {
        "f_step_ghz": 0.02,
        "c_step_pf": 0.02,
        "width_scale": 1.0,
        "epochs_recbm": 8000,
        "epochs_ims": 3000,
        "learning_rate_recbm": 5e-8,
        "learning_rate_ims": 2e-5,
        "lr_decay": 1.0,
        "lr_decay_every": 100,
        "batch_size": 512,
        "scenarios": 9000,
        "repeats": 30,
        "grid_step_pf": 0.01,
        "test_samples": 100000,
    },
}
IMS_LABEL_SCALE = 1e13  # farads -> picofarads, then the x10 gradient-amplifying factor


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run-config file; flags override its values")
    p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                   help="default parameter set (desk unless given)")


def _resolve(args, key: str, flag_value, cast=None):
    """flag > config file > profile default."""
    if flag_value is not None:
        return flag_value
    cfg = getattr(args, "_config_doc", {})
    if key in cfg:
        val = cfg[key]
        return cast(val) if cast else val
    profile = PROFILES[args.profile or cfg.get("profile", "desk")]
    return profile.get(key)


def _load_config_doc(args):
    doc = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
    args._config_doc = doc
    return doc


def _write_manifest(out_dir: str, doc: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = dict(doc)
    doc["config_hash"] = harness.config_hash(doc)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# --- circuit ----------------------------------------------------------------------

def cmd_circuit_validate(args) -> int:
    topology = circ.load_topology(args.spec)
    series = sum(1 for a in topology.arms if a.orient == "series")
    shunt = len(topology.arms) - series
    slots = []
    for arm in topology.arms:
        slots.extend(circ.expr_slots(arm.expr))
    print(f"name:        {topology.name}")
    print(f"arms:        {len(topology.arms)} ({series} series, {shunt} shunt)")
    print(f"tunable:     slots {sorted(slots)}")
    print(f"band:        {topology.band_hz[0] / 1e9:g}-{topology.band_hz[1] / 1e9:g} GHz")
    print(f"cp range:    {topology.cp_range[0] / 1e-12:g}-{topology.cp_range[1] / 1e-12:g} pF")
    print(f"cs range:    {topology.cs_range[0] / 1e-12:g}-{topology.cs_range[1] / 1e-12:g} pF")
    print(f"fingerprint: {topology.fingerprint}")
    return 0


def cmd_circuit_gen(args) -> int:
    topology = circ.reference_practical_circuit()
    circ.save_topology(topology, args.out)
    print(f"wrote {args.out} (fingerprint {topology.fingerprint})")
    return 0


# --- data -------------------------------------------------------------------------

def cmd_data_sweep(args) -> int:
    _load_config_doc(args)
    topology = circ.load_topology(args.circuit)
    f_step = _resolve(args, "f_step_ghz", args.f_step_ghz, float) * 1e9
    c_step = _resolve(args, "c_step_pf", args.c_step_pf, float) * 1e-12
    spec = dat.SweepSpec.for_topology(topology, f_step, c_step)
    ds = dat.generate_sweep(topology, spec)
    dat.save_dataset(ds, args.out, fmt=args.format)
    print(f"wrote {args.out}: {len(ds)} rows "
          f"({ds.meta['skipped_singular']} singular points skipped)")
    return 0


def cmd_data_inverse(args) -> int:
    _load_config_doc(args)
    topology = circ.load_topology(args.circuit)
    model = nn.deserialize_model(args.model)
    if model.role != "recbm":
        raise ModelPairingError(f"--model must be a surrogate model, got role {model.role!r}")
    f_step = _resolve(args, "f_step_ghz", args.f_step_ghz, float) * 1e9
    c_step = _resolve(args, "c_step_pf", args.c_step_pf, float) * 1e-12
    spec = dat.SweepSpec.for_topology(topology, f_step, c_step)
    ds = dat.generate_inverse_dataset(model, spec)
    dat.save_dataset(ds, args.out, fmt=args.format)
    print(f"wrote {args.out}: {len(ds)} rows "
          f"({ds.meta['skipped_degenerate']} degenerate points skipped)")
    return 0


def cmd_data_scenarios(args) -> int:
    _load_config_doc(args)
    topology = circ.load_topology(args.circuit)
    count = int(_resolve(args, "scenarios", args.count))
    scenarios = dat.generate_scenarios(topology, count, seed=args.seed, sigma=args.sigma)
    dat.save_scenarios(scenarios, args.out, meta={
        "seed": args.seed,
        "sigma": args.sigma,
        "count": count,
        "topology_fingerprint": topology.fingerprint,
    })
    print(f"wrote {args.out}: {count} scenarios (seed {args.seed}, sigma {args.sigma})")
    return 0


# --- train / eval -------------------------------------------------------------------

def cmd_train(args) -> int:
    _load_config_doc(args)
    role = args.role
    ds = dat.load_dataset(args.data)
    if role == "ims":
        paired = ds.meta.get("recbm_fingerprint")
        if not paired:
            raise ModelPairingError("inverse dataset carries no surrogate fingerprint")
        label_scale = IMS_LABEL_SCALE
    else:
        paired = ""
        label_scale = 1.0
    epochs = int(_resolve(args, f"epochs_{role}", args.epochs))
    lr = float(_resolve(args, f"learning_rate_{role}", args.learning_rate))
    batch = int(_resolve(args, "batch_size", args.batch_size))
    scale = float(_resolve(args, "width_scale", args.width_scale))
    lr_decay = float(_resolve(args, "lr_decay", None))
    lr_decay_every = int(_resolve(args, "lr_decay_every", None))

    norm = dat.fit_normalization(ds.inputs)
    model = nn.build_model(role, norm, width_scale=scale, label_scale=label_scale,
                           seed=args.seed)
    model.paired_fingerprint = paired
    config = nn.TrainingConfig(learning_rate=lr, batch_size=batch, epochs=epochs,
                               seed=args.seed + 1, split=args.split,
                               lr_decay=lr_decay, lr_decay_every=lr_decay_every)
    trained, history = nn.train(model, ds.inputs, ds.targets * label_scale, config)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    nn.serialize_model(trained, args.out)
    history_path = args.loss_history or (args.out + ".loss.csv")
    with open(history_path, "w") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va in history:
            fh.write(f"{int(epoch)},{float(tr)!r},{float(va)!r}\n")
    _write_manifest(out_dir, {
        "command": f"train {role}",
        "data": os.path.abspath(args.data),
        "dataset_meta": ds.meta,
        "seed": args.seed,
        "training": {"learning_rate": lr, "batch_size": batch, "epochs": epochs,
                     "lr_decay": lr_decay, "lr_decay_every": lr_decay_every,
                     "split": args.split, "width_scale": scale,
                     "label_scale": label_scale},
        "model_fingerprint": trained.fingerprint,
        "paired_fingerprint": paired,
    })
    print(f"wrote {args.out} (fingerprint {trained.fingerprint}); "
          f"final train_mse={history[-1][1]:.3e} val_mse={history[-1][2]:.3e}")
    return 0


def _random_testset(topology, n: int, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    f_lo, f_hi = topology.band_hz
    rows_x, rows_y = [], []
    while len(rows_x) < n:
        f = f_lo + rng.random() * (f_hi - f_lo)
        cp = topology.cp_range[0] + rng.random() * (topology.cp_range[1] - topology.cp_range[0])
        cs = topology.cs_range[0] + rng.random() * (topology.cs_range[1] - topology.cs_range[0])
        s, valid = circ.simulate_states(topology, f, cp, cs)
        if not np.all(valid):
            continue
        s = np.asarray(s).reshape(4)
        y = np.empty(8)
        y[0::2] = s.real
        y[1::2] = s.imag
        rows_x.append([f, cp, cs])
        rows_y.append(y)
    return np.array(rows_x), np.array(rows_y)


def cmd_eval_surrogate(args) -> int:
    _load_config_doc(args)
    model = nn.deserialize_model(args.model)
    topology = circ.load_topology(args.circuit)
    n = int(_resolve(args, "test_samples", args.test_samples))
    x, y = _random_testset(topology, n, args.test_seed)
    report = nn.evaluate_surrogate(model, x, y)
    os.makedirs(args.out, exist_ok=True)
    doc = {k: report[k] for k in ("n", "per_dim", "overall_mae", "overall_mre",
                                  "mre_excluded_total")}
    doc["schema_version"] = harness.REPORT_SCHEMA_VERSION
    doc["model_fingerprint"] = model.fingerprint
    doc["circuit_fingerprint"] = topology.fingerprint
    doc["test_seed"] = args.test_seed
    with open(os.path.join(args.out, "eval_report.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for kind in ("abs", "rel"):
        with open(os.path.join(args.out, f"ecdf_{kind}.csv"), "w") as fh:
            fh.write("dimension,error,fraction\n")
            for name, table in report[f"ecdf_{kind}"].items():
                for err, frac in table:
                    fh.write(f"{name},{float(err)!r},{float(frac)!r}\n")
    # prediction-vs-truth sample rows for scatter plots
    sample = min(50, len(x))
    pred = nn.predict(model, x[:sample])
    with open(os.path.join(args.out, "pred_sample.csv"), "w") as fh:
        fh.write("sample,dimension,truth,predicted\n")
        for i in range(sample):
            for j, name in enumerate(model.output_names):
                fh.write(f"{i},{name},{float(y[i, j])!r},{float(pred[i, j])!r}\n")
    _write_manifest(args.out, {
        "command": "eval surrogate",
        "model_fingerprint": model.fingerprint,
        "circuit_fingerprint": topology.fingerprint,
        "test_samples": n,
        "test_seed": args.test_seed,
    })
    print(f"overall MAE {report['overall_mae']:.3e}, overall MRE {report['overall_mre']:.4%} "
          f"({report['mre_excluded_total']} near-zero targets excluded)")
    return 0


# --- match / report -----------------------------------------------------------------

def _strategy_configs(args) -> tuple[matchers.SapsoConfig, matchers.AdamMatchConfig]:
    cfg = getattr(args, "_config_doc", {})
    sapso = matchers.SapsoConfig(**cfg.get("sapso", {}))
    adam = matchers.AdamMatchConfig(
        **{k: (tuple(v) if k == "theta0_pf" else v) for k, v in cfg.get("adam", {}).items()}
    )
    return sapso, adam


def cmd_match_run(args) -> int:
    _load_config_doc(args)
    topology = circ.load_topology(args.circuit)
    scenarios, meta = dat.load_scenarios(args.scenarios)
    if meta.get("topology_fingerprint") not in (None, topology.fingerprint):
        raise RfMatchError(
            f"scenario suite was generated for circuit {meta['topology_fingerprint']}, "
            f"got {topology.fingerprint}"
        )
    recbm_model = None
    surrogate_fingerprint = topology.fingerprint
    if args.surrogate != "oracle":
        recbm_model = nn.deserialize_model(args.surrogate)
        surrogate_fingerprint = recbm_model.fingerprint
    ims_model = nn.deserialize_model(args.ims) if args.ims else None

    sapso_cfg, adam_cfg = _strategy_configs(args)
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    settings = harness.RunSettings(
        strategies=strategies,
        repeats=int(_resolve(args, "repeats", args.repeat)),
        base_seed=args.seed,
        threshold=args.threshold,
        grid_step=float(_resolve(args, "grid_step_pf", args.grid_step_pf)) * 1e-12,
        sapso=sapso_cfg,
        adam=adam_cfg,
        workers=args.workers,
    )
    rows = harness.run_scenarios(scenarios, topology, settings,
                                 recbm_model=recbm_model, ims_model=ims_model)
    header = {
        "sigma": float(meta.get("sigma", 0.0)),
        "n_scenarios": len(scenarios),
        "base_seed": settings.base_seed,
        "repeats": settings.repeats,
        "strategies_run": list(strategies),
        "circuit_fingerprint": topology.fingerprint,
        "surrogate_fingerprint": surrogate_fingerprint,
        "model_fingerprints": {
            "recbm": recbm_model.fingerprint if recbm_model else None,
            "ims": ims_model.fingerprint if ims_model else None,
        },
        "scenario_seed": meta.get("seed"),
    }
    report = harness.write_run_report(args.out, rows, settings.threshold, header)
    _write_manifest(args.out, {
        "command": "match run",
        "scenarios": os.path.abspath(args.scenarios),
        "scenario_meta": meta,
        "settings": {
            "strategies": list(strategies),
            "repeats": settings.repeats,
            "base_seed": settings.base_seed,
            "threshold": settings.threshold,
            "grid_step_pf": settings.grid_step / 1e-12,
            "sapso": vars(settings.sapso),
            "adam": {**vars(settings.adam), "theta0_pf": list(settings.adam.theta0_pf)},
            "workers": settings.workers,
        },
        **header,
    })
    for strategy in strategies:
        agg = report["strategies"].get(strategy)
        if agg:
            print(f"{strategy:>6}: compliance {agg['compliance']:.2%}, "
                  f"mean |gamma| {agg['mean']:.4f}, "
                  f"mean evaluations {agg['mean_evaluations']:.1f}")
    return 0


def cmd_report(args) -> int:
    harness.consolidate_reports(args.runs, args.out,
                                cost_per_inference=args.cost_per_inference)
    print(f"wrote consolidated tables to {args.out}")
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="rfmatch", description=__doc__)
    sub = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    p_circ = sub.add_parser("circuit", help="circuit spec tools")
    sub_circ = p_circ.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = sub_circ.add_parser("validate", help="validate a circuit spec file")
    p.add_argument("spec")
    p.set_defaults(func=cmd_circuit_validate)
    p = sub_circ.add_parser("gen", help="write the pinned reference circuit spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_circuit_gen)

    p_data = sub.add_parser("data", help="dataset generation")
    sub_data = p_data.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = sub_data.add_parser("sweep", help="exact-oracle S-parameter lattice sweep")
    p.add_argument("--circuit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--f-step-ghz", type=float, default=None)
    p.add_argument("--c-step-pf", type=float, default=None)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    _add_config_flags(p)
    p.set_defaults(func=cmd_data_sweep)
    p = sub_data.add_parser("inverse", help="inverse-solver dataset from a trained surrogate")
    p.add_argument("--circuit", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--f-step-ghz", type=float, default=None)
    p.add_argument("--c-step-pf", type=float, default=None)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    _add_config_flags(p)
    p.set_defaults(func=cmd_data_inverse)
    p = sub_data.add_parser("scenarios", help="mismatched-scenario suite")
    p.add_argument("--circuit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", "--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--sigma", type=float, default=0.0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_data_scenarios)

    p_train = sub.add_parser("train", help="model training")
    sub_train = p_train.add_subparsers(dest="role", required=True, parser_class=_Parser)
    for role, label in (("recbm", "S-parameter surrogate"), ("ims", "inverse solver")):
        p = sub_train.add_parser(role, help=f"train the {label}")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--loss-history", default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--learning-rate", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--width-scale", type=float, default=None)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--split", type=float, default=0.8)
        _add_config_flags(p)
        p.set_defaults(func=cmd_train, role=role)

    p_eval = sub.add_parser("eval", help="model evaluation")
    sub_eval = p_eval.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = sub_eval.add_parser("surrogate", help="error report on a random held-out set")
    p.add_argument("--model", required=True)
    p.add_argument("--circuit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-samples", type=int, default=None)
    p.add_argument("--test-seed", type=int, default=4242)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_surrogate)

    p_match = sub.add_parser("match", help="run matching strategies on scenarios")
    sub_match = p_match.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = sub_match.add_parser("run", help="evaluate strategies over a scenario suite")
    p.add_argument("--circuit", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--surrogate", required=True,
                   help="path to a trained surrogate model, or 'oracle'")
    p.add_argument("--ims", default=None, help="inverse solver model file")
    p.add_argument("--strategies", default="sapso,adam,ims")
    p.add_argument("--repeat", type=int, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threshold", type=float, default=harness.DEFAULT_COMPLIANCE_THRESHOLD)
    p.add_argument("--grid-step-pf", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_match_run)

    p_rep = sub.add_parser("report", help="consolidate run reports")
    p_rep.add_argument("--runs", nargs="+", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.add_argument("--cost-per-inference", type=float, default=None,
                       help="emit a cost table scaling evaluation counts by this constant")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CircuitSpecError, ModelFormatError, ModelPairingError,
            DegenerateNormalizationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RfMatchError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
