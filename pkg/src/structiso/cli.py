"""Command-line front end: ``structiso {simulate,train,monitor,isolate}``.

Exit codes: 0 success, 2 input or validation error, 3 nothing flagged as
faulty, 4 the solver did not converge (the report is still written).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, report, simgen
from .datamodel import DataMatrix, read_csv, standardize, write_csv
from .errors import DimensionMismatch, NoFaultySamples, StructIsoError
from .monitor import MonitoringModel, StatisticKind, detect, fit_monitoring_model, statistic
from .selection import (ALPHA_GRID, MIN_FRACTION, LambdaGrid, Mode, format_path, isolate)
from .solver import AdmmConfig
from .structure import Structure, load_structure, make_spec

log = logging.getLogger("structiso")

EXIT_OK, EXIT_INPUT, EXIT_NO_FAULT, EXIT_NOT_CONVERGED = 0, 2, 3, 4
FAMILIES = ("lasso", "support", "group", "sparse-group", "cluster", "tree")


@dataclass
class RunManifest:
    """What a run consumed and produced; kept apart from the reports, which
    must not carry timestamps."""

    command: str
    inputs: dict
    outputs: list
    parameters: dict
    seed: int | None = None
    version: str = __version__
    started: str = ""
    finished: str = ""
    argv: list = field(default_factory=list)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _digest(path) -> dict:
    data = Path(path).read_bytes()
    return {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _sibling(out, suffix) -> Path:
    out = Path(out)
    return out.with_name(out.stem + suffix)


def _write(path, text) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    fault = {"none": None, "bias": simgen.SensorBias(),
             "multiplicative": simgen.Multiplicative()}[args.fault]
    cfg = simgen.SimConfig(seed=args.seed, n_train=args.n_train, n_test=args.n_test,
                           fault_start_index=args.fault_start, fault=fault)
    started = _now()
    sim = simgen.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(sim.train, out / "train.csv")
    write_csv(sim.test, out / "test.csv")
    Structure("blocks", partition=sim.truth.blocks).save(out / "blocks.json")
    Structure("tree", tree=sim.truth.tree).save(out / "tree.json")
    truth = {"fault": args.fault, "fault_start_index": cfg.fault_start_index,
             "faulty_variables": list(sim.truth.faulty_variables)}
    _write(out / "truth.json", json.dumps(truth, indent=1) + "\n")
    files = ["train.csv", "test.csv", "blocks.json", "tree.json", "truth.json"]
    RunManifest("simulate", {}, [str(out / f) for f in files],
                {"fault": args.fault, "n_train": cfg.n_train, "n_test": cfg.n_test,
                 "fault_start_index": cfg.fault_start_index},
                seed=args.seed, started=started, finished=_now(),
                argv=list(args.argv)).save(out / "manifest.json")
    log.info("wrote %s", ", ".join(files))
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    train = read_csv(args.input)
    model = fit_monitoring_model(train, args.variance_target, args.significance, args.components)
    model.save(args.out)
    ratio = model.pca.explained_variance_ratio[: model.pca.l].sum()
    log.info("retained %d components (%.2f%% variance); T2 limit %.4g, SPE limit %.4g",
             model.pca.l, 100 * ratio, model.limits.t2_limit, model.limits.spe_limit)
    RunManifest("train", {"input": _digest(args.input)}, [str(args.out)],
                {"variance_target": args.variance_target, "components": args.components,
                 "significance": args.significance},
                started=started, finished=_now(), argv=list(args.argv)).save(
        _manifest_path(args.out))
    return EXIT_OK


def _load_test(model: MonitoringModel, path) -> DataMatrix:
    data = read_csv(path)
    if data.variable_names != model.variable_names:
        raise DimensionMismatch(
            f"{path}: columns {list(data.variable_names)} do not match the model's "
            f"{list(model.variable_names)}")
    return standardize(model.standardizer, data)


def cmd_monitor(args) -> int:
    started = _now()
    model = MonitoringModel.load(args.model)
    z = _load_test(model, args.input)
    det = detect(model.pca, model.limits, z.values)
    text = report.format_monitor(det.t2, det.spe, model.limits.t2_limit, model.limits.spe_limit,
                                 det.flagged)
    outputs = []
    if args.out:
        outputs.append(str(_write(args.out, text)))
    else:
        sys.stdout.write(text)
    if args.plot_dir:
        from .plotting import plot_monitoring

        outputs.append(str(plot_monitoring(det.t2, det.spe, model.limits.t2_limit,
                                           model.limits.spe_limit,
                                           Path(args.plot_dir) / "monitoring.png")))
    log.info("%d of %d samples flagged", int(det.flagged.sum()), len(det.flagged))
    if args.out:
        RunManifest("monitor", {"model": _digest(args.model), "input": _digest(args.input)},
                    outputs, {}, started=started, finished=_now(),
                    argv=list(args.argv)).save(_manifest_path(args.out))
    return EXIT_OK


def _parse_grid(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse lambda grid {text!r}") from None
    try:
        return LambdaGrid.from_values(values)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _active_blocks(structure, active):
    if structure is None or structure.kind not in ("blocks", "clusters"):
        return None
    act = set(active)
    return [b + 1 for b, blk in enumerate(structure.partition.blocks) if act & set(blk)]


def cmd_isolate(args) -> int:
    started = _now()
    model = MonitoringModel.load(args.model)
    z = _load_test(model, args.input)
    structure = load_structure(args.structure, model.m) if args.structure else None
    alpha = 0.5 if args.alpha is None else args.alpha
    lam = 1.0 if args.lam is None else args.lam
    spec = make_spec(args.family, lam, structure, model.m, alpha=alpha,
                     lam2=lam * args.lambda2_ratio)
    det = detect(model.pca, model.limits, z.values)
    rows = np.flatnonzero(det.flagged)
    if rows.size == 0:
        raise NoFaultySamples(f"{args.input}: no sample violates the control limits")
    kind = StatisticKind(args.statistic)
    mat = model.matrix(kind)
    limit = model.limits.for_kind(kind)
    cfg = AdmmConfig(rho=args.rho, epsilon=args.epsilon, max_iter=args.max_iter)
    alphas = ALPHA_GRID if (args.alpha is None and args.family == "sparse-group") else None
    batch = z.values[rows]
    iso = isolate(batch, mat, limit, spec, lam=args.lam, grid=args.lambda_grid, mode=args.mode,
                  cfg=cfg, alphas=alphas, min_fraction=args.min_fraction)
    names = model.variable_names

    out = Path(args.out)
    outputs = [str(_write(out, report.format_contributions(
        names, iso.f, iso.contributions, iso.frequency, iso.active_set)))]
    res = iso.results
    summary = [
        ("family", args.family), ("mode", iso.mode.value), ("statistic", kind.value),
        ("lambda", iso.lam),
    ]
    if args.family == "sparse-group":
        summary.append(("alpha", float(iso.spec.alpha)))
    summary += [
        ("n_samples", z.n), ("n_flagged", int(rows.size)), ("limit", float(limit)),
        ("active_variables", [names[j] for j in iso.active_set]),
        ("active_indices", list(iso.active_set)),
    ]
    blocks = _active_blocks(structure, iso.active_set)
    if blocks is not None:
        summary.append(("active_blocks", blocks))
    summary += [
        ("qualified", iso.qualified), ("converged", iso.converged),
        ("iterations", max(r.iterations for r in res)),
        ("primal_residual", max(r.primal_residual for r in res)),
        ("dual_residual", max(r.dual_residual for r in res)),
        ("relative_change", max(r.relative_change for r in res)),
    ]
    if iso.mode is Mode.POOLED:
        summary.append(("objective", res[0].objective))
    else:
        summary.append(("min_fraction", iso.min_fraction))
    outputs.append(str(_write(_sibling(out, ".summary.csv"), report.format_summary(summary))))
    if iso.mode is Mode.POOLED and iso.selections:
        outputs.append(str(_write(_sibling(out, ".path.csv"), format_path(iso.selections[0]))))
    if iso.mode is Mode.PER_SAMPLE:
        f = np.array([r.f for r in res])
        d = batch - f
        stats = np.einsum("ij,jk,ik->i", d, mat.m_mat, d)
        outputs.append(str(_write(_sibling(out, ".samples.csv"),
                                  report.format_samples(rows, names, res, stats, limit))))
    if args.bars:
        sys.stdout.write(report.render_bars(names, iso.contributions, marks=iso.active_set))
    if args.plot_dir:
        from .plotting import plot_contributions

        outputs.append(str(plot_contributions(
            names, iso.contributions, iso.active_set,
            Path(args.plot_dir) / f"contributions_{args.family}.png",
            title=f"{args.family}, lambda = {iso.lam:.3g}")))
    RunManifest("isolate",
                {"model": _digest(args.model), "input": _digest(args.input),
                 **({"structure": _digest(args.structure)} if args.structure else {})},
                outputs,
                {"family": args.family, "lambda": args.lam,
                 "lambda_grid": list(args.lambda_grid.candidates) if args.lambda_grid else None,
                 "alpha": args.alpha, "rho": args.rho, "epsilon": args.epsilon,
                 "max_iter": args.max_iter, "statistic": kind.value, "mode": args.mode,
                 "min_fraction": args.min_fraction, "lambda2_ratio": args.lambda2_ratio},
                started=started, finished=_now(), argv=list(args.argv)).save(_manifest_path(out))
    log.info("active: %s (lambda %.4g, %s)", ", ".join(names[j] for j in iso.active_set) or "none",
             iso.lam, iso.mode.value)
    if not iso.converged:
        log.warning("ADMM reached max_iter before converging")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="structiso", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate the 15-variable benchmark")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fault", choices=("none", "bias", "multiplicative"), default="bias")
    s.add_argument("--n-train", type=int, default=700)
    s.add_argument("--n-test", type=int, default=300)
    s.add_argument("--fault-start", type=int, default=100, help="0-based first faulty test row")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="fit the PCA monitoring model")
    t.add_argument("--input", required=True, help="training CSV")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--variance-target", type=float, default=0.85)
    t.add_argument("--components", type=int, help="retain exactly this many components")
    t.add_argument("--significance", type=float, default=0.01)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("monitor", parents=[common], help="T2 / SPE statistics of new samples")
    m.add_argument("--model", required=True)
    m.add_argument("--input", required=True)
    m.add_argument("--out", help="report file (default: standard output)")
    m.add_argument("--plot-dir", help="also write monitoring.png here")
    m.set_defaults(func=cmd_monitor)

    i = sub.add_parser("isolate", parents=[common], help="reconstruct the fault of the flagged samples")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--structure", help="structure descriptor (JSON)")
    i.add_argument("--family", choices=FAMILIES, required=True)
    g = i.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float,
                   help="fixed weight (default: select against the control limit)")
    g.add_argument("--lambda-grid", type=_parse_grid, help="comma-separated candidate weights")
    i.add_argument("--alpha", type=float,
                   help=f"sparse-group l1 share (default: sparsest of {ALPHA_GRID})")
    i.add_argument("--lambda2-ratio", type=float, default=1.0,
                   help="cluster family: weight of the l1 part relative to lambda")
    i.add_argument("--rho", type=float, default=1.2)
    i.add_argument("--epsilon", type=float, default=1e-6)
    i.add_argument("--max-iter", type=int, default=5000)
    i.add_argument("--statistic", choices=("t2", "spe"), default="spe")
    i.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.AUTO.value)
    i.add_argument("--min-fraction", type=float, default=MIN_FRACTION,
                   help="per-sample mode: share of samples a variable must be active in")
    i.add_argument("--out", required=True, help="contribution report to write")
    i.add_argument("--bars", action="store_true", help="print text bars of the contributions")
    i.add_argument("--plot-dir", help="also write a contribution figure here")
    i.set_defaults(func=cmd_isolate)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="structiso: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except NoFaultySamples as exc:
        log.error("%s", exc)
        return EXIT_NO_FAULT
    except (StructIsoError, ValueError, OSError) as exc:
        log.error("error: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
