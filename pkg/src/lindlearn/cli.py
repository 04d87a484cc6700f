"""Command-line pipeline: simulate, fit, assemble, solve, finetune, report.

Every stage reads the artifacts persisted by its predecessors in the output
directory and writes its own.  ``stages.json`` records a content hash of each
stage's configuration and input files so that ``pipeline`` can skip stages
whose inputs have not changed.

Exit codes: 0 success, 2 configuration or missing-artifact error, 3 numerical
nonconvergence, 4 capacity error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import config as cfgmod
from .assemble import AssembleOptions, build_system, load_system_csv, save_system_csv
from .config import ConfigError
from .curvefit import fit_all, load_fits, save_fits
from .finetune import PatchSpec, fine_tune, merge_patches, spam_infidelity
from .mitigation import (
    calibrate_confusion,
    observable_supports,
    save_calibration,
    trex_calibrate,
)
from .model import GENERIC, T1T2, CapacityError, full_template, load_model, save_model
from .pauli import local_observables, schedule_bases, schedule_state_sets
from .sim import (
    exact_curves,
    load_curves_csv,
    load_series_csv,
    make_evolver,
    save_curves_csv,
    save_series_csv,
    series_from_records,
    simulate_records,
)
from .solve import NonConvergence, model_error, save_solve_report, solve

log = logging.getLogger("lindlearn")

STAGES = ("simulate", "fit", "assemble", "solve", "finetune", "report")

TRUTH = "truth_model.json"
RAW = "raw_series.csv"
SERIES = "series.csv"
MANIFEST = "manifest.json"
CALIBRATION = "calibration.json"
CURVES = "curves.csv"
FITS = "fits.json"
SYSTEM = "system.csv"
LEARNED = "learned_model.json"
SOLVE_REPORT = "solve_report.json"
FINETUNED = "finetuned_model.json"
FINETUNE_REPORT = "finetune_report.json"
REPORT_DIR = "report"
STATE_FILE = "stages.json"


class MissingArtifact(ConfigError):
    """A stage was run before the stage that produces its inputs."""


# ---------------------------------------------------------------- helpers


def _path(out, name):
    return os.path.join(out, name)


def _require(out, *names, stage):
    for name in names:
        if not os.path.exists(_path(out, name)):
            producer = _PRODUCER.get(name, "an earlier stage")
            raise MissingArtifact(f"{stage}: missing {name}; run `{producer}` first")


def _dump(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sections(cfg, stage):
    s = {
        "simulate": {k: cfg[k] for k in ("seed", "device", "schedule", "spam", "mitigation")}
        | {"exact_curves": cfg["fitting"]["exact_curves"]},
        "fit": {"fitting": cfg["fitting"]},
        "assemble": {"assemble": cfg["assemble"], "method": cfg["solve"]["method"],
                     "exact_curves": cfg["fitting"]["exact_curves"]},
        "solve": {"solve": cfg["solve"], "weighting": cfg["assemble"]["weighting"]},
        "finetune": {"finetune": cfg["finetune"]},
        "report": {"report": cfg["report"], "finetune": cfg["finetune"]["patches"]},
    }
    return s[stage]


def _inputs(cfg, stage):
    exact = cfg["fitting"]["exact_curves"]
    return {
        "simulate": [],
        "fit": [SERIES],
        "assemble": [TRUTH, SERIES, CURVES if exact else FITS],
        "solve": [TRUTH, SYSTEM],
        "finetune": [LEARNED, RAW],
        "report": [TRUTH, SERIES, LEARNED, SOLVE_REPORT, CURVES if exact else FITS],
    }[stage]


def _outputs(cfg, stage):
    return {
        "simulate": [TRUTH, RAW, SERIES, MANIFEST],
        "fit": [] if cfg["fitting"]["exact_curves"] else [FITS],
        "assemble": [SYSTEM],
        "solve": [LEARNED, SOLVE_REPORT],
        "finetune": [FINETUNE_REPORT],
        "report": [_path(REPORT_DIR, "summary.json")],
    }[stage]


_PRODUCER = {TRUTH: "simulate", RAW: "simulate", SERIES: "simulate", CURVES: "simulate",
             FITS: "fit", SYSTEM: "assemble", LEARNED: "solve", SOLVE_REPORT: "solve"}


def stage_key(cfg, stage, out):
    """Hash of a stage's configuration sections and input files."""
    doc = {"config": _sections(cfg, stage), "inputs": {}}
    for name in _inputs(cfg, stage):
        p = _path(out, name)
        doc["inputs"][name] = _file_hash(p) if os.path.exists(p) else None
    if stage == "report" and os.path.exists(_path(out, FINETUNED)):
        doc["inputs"][FINETUNED] = _file_hash(_path(out, FINETUNED))
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_state(out):
    p = _path(out, STATE_FILE)
    if os.path.exists(p):
        with open(p) as fh:
            return json.load(fh)
    return {}


def _record(cfg, stage, out, key):
    state = _load_state(out)
    state[stage] = key
    _dump(state, _path(out, STATE_FILE))


def _template(truth, method):
    return full_template(truth.topology, T1T2 if method == "t1t2" else GENERIC,
                         truth.unit_time_ns)


def _schedule(cfg, topology):
    sch = cfg["schedule"]
    states = schedule_state_sets(topology, sch["n_states"], cfg["seed"])
    return states, schedule_bases(topology), list(range(sch["max_depth"] + 1))


def _mitigation(cfg, spam, observables):
    m = cfg["mitigation"]
    if m["method"] == "trex":
        return trex_calibrate(spam, observable_supports(observables), m["calibration_shots"],
                              cfg["schedule"]["twirl_instances"], cfg["seed"], m["with_spe"])
    if m["method"] == "confusion":
        return calibrate_confusion(spam, m["calibration_shots"], m["with_spe"], cfg["seed"])
    return None


def _fits(cfg, out):
    if cfg["fitting"]["exact_curves"]:
        return load_curves_csv(_path(out, CURVES))
    return load_fits(_path(out, FITS))


# ---------------------------------------------------------------- stages


def run_simulate(cfg, out, jobs=1):
    truth = cfgmod.build_truth(cfg)
    n = truth.n_qubits
    spam = cfgmod.build_spam(cfg, n)
    sch = cfg["schedule"]
    states, bases, depths = _schedule(cfg, truth.topology)
    observables = local_observables(truth.topology)
    evolver = make_evolver(truth, sch["evolution"], sch["trotter_steps"], sch["trotter_order"])
    records = simulate_records(truth, states, bases, depths, sch["shots"], spam,
                               sch["twirl_instances"], cfg["seed"], evolver, jobs)
    raw = series_from_records(records, states, observables)
    mit = _mitigation(cfg, spam, observables)
    series = series_from_records(records, states, observables, mit) if mit else raw
    save_model(truth, _path(out, TRUTH))
    save_series_csv(raw, _path(out, RAW))
    save_series_csv(series, _path(out, SERIES))
    if mit is not None:
        save_calibration(mit, _path(out, CALIBRATION), spam)
    manifest = {
        "states": [str(s) for s in states],
        "bases": [str(b) for b in bases],
        "depths": depths,
        "shots": sch["shots"],
        "twirl_instances": sch["twirl_instances"],
        "seed": cfg["seed"],
        "spam": spam.to_dict(),
        "mitigation": cfg["mitigation"]["method"],
        "model_hash": truth.digest(),
        "n_series": len(series),
    }
    _dump(manifest, _path(out, MANIFEST))
    if cfg["fitting"]["exact_curves"]:
        if sch["evolution"] != "exact" or evolver.fallback:
            raise ConfigError("fitting/exact_curves needs exact, well-conditioned evolution")
        curves = exact_curves(evolver, states, observables, spam)
        save_curves_csv(curves, depths, _path(out, CURVES))
    log.info("simulated %d series on %d qubits", len(series), n)


def run_fit(cfg, out, jobs=1):
    if cfg["fitting"]["exact_curves"]:
        _require(out, CURVES, stage="fit")
        log.info("exact curves selected; nothing to fit")
        return
    _require(out, SERIES, stage="fit")
    series = load_series_csv(_path(out, SERIES))
    fits = fit_all(series, cfgmod.fit_options(cfg), jobs)
    save_fits(fits, _path(out, FITS))
    bad = sum(1 for f in fits.values() if f.status != "converged")
    if bad:
        log.warning("%d of %d fits did not reach the target misfit", bad, len(fits))


def run_assemble(cfg, out, jobs=1):
    exact = cfg["fitting"]["exact_curves"]
    _require(out, TRUTH, SERIES, CURVES if exact else FITS, stage="assemble")
    truth = load_model(_path(out, TRUTH))
    series = load_series_csv(_path(out, SERIES))
    opts = AssembleOptions(smooth_A=cfg["assemble"]["smooth_A"],
                           weighting=cfg["assemble"]["weighting"])
    system = build_system(series, _fits(cfg, out), _template(truth, cfg["solve"]["method"]), opts)
    save_system_csv(system, _path(out, SYSTEM))
    log.info("assembled system %s (%d rows dropped)", system.shape, system.dropped)


def run_solve(cfg, out, jobs=1):
    _require(out, TRUTH, SYSTEM, stage="solve")
    truth = load_model(_path(out, TRUTH))
    method = cfg["solve"]["method"]
    system = load_system_csv(_path(out, SYSTEM))
    want = T1T2 if method == "t1t2" else GENERIC
    if system.parameterization != want:
        raise MissingArtifact(f"solve: {SYSTEM} was assembled for another method; rerun `assemble`")
    result = solve(system, cfgmod.solve_options(cfg))
    learned = result.model(_template(truth, method))
    save_model(learned, _path(out, LEARNED))
    save_solve_report(result, _path(out, SOLVE_REPORT), shape=list(system.shape))
    if result.status not in ("converged", "rank_deficient"):
        raise NonConvergence(f"solve stopped with status {result.status}")


def run_finetune(cfg, out, jobs=1):
    _require(out, LEARNED, RAW, stage="finetune")
    ft = cfg["finetune"]
    patches = ft["patches"]
    report = {"patches": []}
    if not patches:
        _dump(report, _path(out, FINETUNE_REPORT))
        log.info("no fine-tuning patches configured")
        return
    learned = load_model(_path(out, LEARNED))
    raw = load_series_csv(_path(out, RAW))
    results = []
    stopped = False
    for qubits in patches:
        patch = PatchSpec.from_global(qubits, learned, raw)
        res = fine_tune(patch, delta=ft["delta"], maxiter=ft["maxiter"])
        results.append((tuple(qubits), res.model))
        stopped |= res.status != "converged"
        report["patches"].append({
            "qubits": list(qubits),
            "misfit_before": res.misfit_before,
            "misfit_after": res.misfit_after,
            "iterations": res.iterations,
            "status": res.status,
            "prep": [float(v) for v in res.prep],
            "meas": [float(v) for v in res.meas],
            "spam_infidelity": [float(v) for v in spam_infidelity(res.prep, res.meas)],
            "flags": res.flags,
        })
    merged, provenance = merge_patches(learned, results)
    save_model(merged, _path(out, FINETUNED), provenance=provenance)
    report["provenance"] = provenance
    _dump(report, _path(out, FINETUNE_REPORT))
    if stopped:
        log.warning("some patches stopped before convergence; best iterates kept")


def run_report(cfg, out, jobs=1):
    from . import report as rep

    exact = cfg["fitting"]["exact_curves"]
    _require(out, TRUTH, SERIES, LEARNED, SOLVE_REPORT, CURVES if exact else FITS, stage="report")
    d = _path(out, REPORT_DIR)
    os.makedirs(d, exist_ok=True)
    truth = load_model(_path(out, TRUTH))
    learned = load_model(_path(out, LEARNED))
    final = load_model(_path(out, FINETUNED)) if os.path.exists(_path(out, FINETUNED)) else learned
    series = load_series_csv(_path(out, SERIES))
    fits = _fits(cfg, out)
    preds = rep.predictions(final, series) if cfg["report"]["predictions"] else {}
    rep.write_series_tables(series, fits, preds, _path(d, "series"))
    err = rep.write_error_tables(final, truth, d)
    models = {"truth": truth, "learned": learned}
    if final is not learned:
        models["finetuned"] = final
    rep.write_coherence_table(models, _path(d, "coherence_times.csv"))
    sweep = []
    for shots in cfg["report"]["sweep_shots"]:
        sweep.append({"shots": shots, **shot_sweep_point(cfg, shots, jobs).as_dict()})
    if sweep:
        rep.write_sweep_table(sweep, _path(d, "sweep.csv"))
    with open(_path(out, SOLVE_REPORT)) as fh:
        solve_doc = json.load(fh)
    summary = {"model_error": err.as_dict(), "solve": solve_doc, "n_series": len(series),
               "finetuned": final is not learned}
    if final is not learned:
        summary["model_error_before_finetune"] = model_error(learned, truth).as_dict()
    if sweep:
        summary["sweep"] = sweep
    rep.write_summary(summary, _path(d, "summary.json"))
    log.info("median coefficient error %.3g", err.median)


def shot_sweep_point(cfg, shots, jobs=1):
    """Run simulate through solve in memory at ``shots`` and return the model error."""
    local = json.loads(json.dumps(cfg))
    local["schedule"]["shots"] = shots
    local["fitting"]["exact_curves"] = False
    truth = cfgmod.build_truth(local)
    spam = cfgmod.build_spam(local, truth.n_qubits)
    sch = local["schedule"]
    states, bases, depths = _schedule(local, truth.topology)
    observables = local_observables(truth.topology)
    evolver = make_evolver(truth, sch["evolution"], sch["trotter_steps"], sch["trotter_order"])
    records = simulate_records(truth, states, bases, depths, shots, spam,
                               sch["twirl_instances"], local["seed"], evolver, jobs)
    mit = _mitigation(local, spam, observables)
    series = series_from_records(records, states, observables, mit)
    fits = fit_all(series, cfgmod.fit_options(local), jobs)
    method = local["solve"]["method"]
    system = build_system(series, fits, _template(truth, method),
                          AssembleOptions(local["assemble"]["smooth_A"],
                                          local["assemble"]["weighting"]))
    result = solve(system, cfgmod.solve_options(local))
    return model_error(result.model(_template(truth, method)), truth)


RUNNERS = {
    "simulate": run_simulate,
    "fit": run_fit,
    "assemble": run_assemble,
    "solve": run_solve,
    "finetune": run_finetune,
    "report": run_report,
}


def run_stage(cfg, stage, out, jobs=1):
    os.makedirs(out, exist_ok=True)
    RUNNERS[stage](cfg, out, jobs)
    _record(cfg, stage, out, stage_key(cfg, stage, out))


def run_pipeline(cfg, out, jobs=1, force=False):
    """Run every stage, skipping those whose recorded hash still matches."""
    os.makedirs(out, exist_ok=True)
    ran = []
    for stage in STAGES:
        key = stage_key(cfg, stage, out)
        state = _load_state(out)
        fresh = all(os.path.exists(_path(out, f)) for f in _outputs(cfg, stage))
        if not force and state.get(stage) == key and fresh:
            log.info("%s is up to date", stage)
            continue
        RUNNERS[stage](cfg, out, jobs)
        _record(cfg, stage, out, key)
        ran.append(stage)
    return ran


# ---------------------------------------------------------------- entry point


def _shots(text):
    if text.lower() in ("inf", "none", "infinite"):
        return None
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid shot count {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("shots must be positive")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="lindlearn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
        s.add_argument("--seed", type=int, metavar="U64")
        s.add_argument("--jobs", type=int, default=1, metavar="N")
        s.add_argument("--out", metavar="DIR")
        s.add_argument("--mu", type=float)
        s.add_argument("--shots", type=_shots, metavar="N|inf", default=argparse.SUPPRESS)
        s.add_argument("--depth", type=int, help="maximum circuit depth")
        s.add_argument("--method", choices=("ls", "psd", "t1t2"))
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "pipeline":
            s.add_argument("--force", action="store_true", help="rerun every stage")
    return p


def config_from_args(args):
    overrides = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = args.out
    if args.mu is not None:
        overrides["fitting"] = {"mu": args.mu}
    if hasattr(args, "shots"):
        overrides["schedule"] = {"shots": args.shots}
    if args.depth is not None:
        overrides.setdefault("schedule", {})["max_depth"] = args.depth
    if args.method is not None:
        overrides["solve"] = {"method": args.method}
    if args.config:
        cfg = cfgmod.load_config(args.config, overrides)
        mf = cfg["device"].get("model_file")
        if mf and not os.path.isabs(mf):
            cfg["device"]["model_file"] = os.path.join(os.path.dirname(os.path.abspath(args.config)), mf)
        return cfg
    base = cfgmod.bundled_config("grid_2x3")
    cfgmod.validate(base)
    doc = cfgmod._merge(base, overrides)
    cfgmod.validate(doc)
    return cfgmod._merge(cfgmod.DEFAULTS, doc)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        out = cfg["output"]
        if args.command == "pipeline":
            ran = run_pipeline(cfg, out, args.jobs, args.force)
            print("ran: " + (", ".join(ran) if ran else "nothing (up to date)"))
        else:
            run_stage(cfg, args.command, out, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
