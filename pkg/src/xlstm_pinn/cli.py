"""Command-line entry point: ``xlstm-pinn {train,spectral,kernel-probe,verify,report}``.

Configuration is one JSON document (``--config``); every flag overrides the
matching field.  ``XLSTM_PINN_OUT`` overrides the output root (flags still
win).  Exit codes: 0 ok, 1 runtime or numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import model as mdl
from . import problems as pb
from . import report as rp
from . import spectral as sp
from . import training as tr

OUT_ENV = "XLSTM_PINN_OUT"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad configuration or arguments; maps to exit code 2."""


@dataclass
class SpectralSettings:
    kmax: int = 24
    eps: float = 0.1
    seeds: list = dc_field(default_factory=lambda: [0, 1, 2, 3, 4])
    budget: int = 600
    eval_every: int = 10
    lr: float = 1e-3
    width: int = 16
    depth: int = 1
    micro_steps: int = 3
    n_train: int = 512
    n_grid: int = 2049
    probe_layer: int = 0
    probe_points: int = 512

    @property
    def ks(self) -> list:
        return list(range(1, self.kmax + 1))


@dataclass
class RunConfig:
    problem: str = "advection1d"
    model: dict = dc_field(default_factory=lambda: {"depth": 4, "width": 64, "micro_steps": 3})
    paired: bool = True
    arch: str = "xlstm"  # single mode only
    seed: int = 0
    optimizer: dict = dc_field(default_factory=lambda: dataclasses.asdict(tr.AdamConfig()))
    budget: int = tr.DEFAULT_BUDGET
    weights: dict = dc_field(default_factory=dict)
    output_dir: str = "out"
    spectral: SpectralSettings = dc_field(default_factory=SpectralSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config fields: {', '.join(sorted(unknown))}")
        data = dict(data)
        spectral = data.pop("spectral", {}) or {}
        s_known = {f.name for f in dataclasses.fields(SpectralSettings)}
        if set(spectral) - s_known:
            raise UsageError(f"unknown spectral fields: {', '.join(sorted(set(spectral) - s_known))}")
        return cls(spectral=SpectralSettings(**spectral), **data)

    def model_config(self, in_dim: int, arch: str | None = None) -> mdl.ModelConfig:
        fields = dict(self.model)
        fields.update(arch=arch or self.arch, in_dim=in_dim)
        try:
            return mdl.ModelConfig.from_dict(fields)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid model config: {exc}") from exc

    def adam(self) -> tr.AdamConfig:
        try:
            return tr.AdamConfig(**self.optimizer)
        except TypeError as exc:
            raise UsageError(f"invalid optimizer config: {exc}") from exc


def desk_profile(problem: str) -> dict:
    """Overrides that turn the defaults into the reduced desk-scale run."""
    return {"model": dict(tr.DESK_MODEL), "budget": tr.DESK_BUDGETS.get(problem, 1000)}


# --- config resolution --------------------------------------------------------------


def _load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    cfg = RunConfig.from_dict(data)
    if os.environ.get(OUT_ENV):
        cfg.output_dir = os.environ[OUT_ENV]
    if getattr(args, "profile", None) == "desk":
        problem = args.problem if getattr(args, "problem", None) else cfg.problem
        for key, value in desk_profile(problem).items():
            setattr(cfg, key, value)
    for name in ("problem", "seed", "budget", "arch"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "paired", None) is not None:
        cfg.paired = args.paired
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    for flag, key in (("width", "width"), ("depth", "depth"), ("micro_steps", "micro_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.model[key] = value
    if getattr(args, "lr", None) is not None:
        cfg.optimizer["lr"] = args.lr
    for flag in ("kmax", "eps", "seeds"):
        value = getattr(args, "spectral_" + flag, None)
        if value is not None:
            setattr(cfg.spectral, flag, value)
    if getattr(args, "spectral_budget", None) is not None:
        cfg.spectral.budget = args.spectral_budget
    if cfg.problem not in pb.REGISTRY:
        raise UsageError(f"unknown problem {cfg.problem!r}; choose from {', '.join(pb.REGISTRY)}")
    if cfg.budget < 1:
        raise UsageError("budget must be >= 1")
    return cfg


# --- train / report -----------------------------------------------------------------------


def _run_dir(root: Path, problem: str, tag: str) -> Path:
    return root / "runs" / problem / tag


def evaluate_run(spec: pb.ProblemSpec, record: tr.RunRecord, tag: str) -> list:
    """Validation-grid and collocation metrics for one trained run."""
    cfg = record.model_config
    grid = pb.validation_grid(spec)
    out = [rp.metrics(tr.predict(record.params, cfg, grid.points), pb.reference(spec, grid.points), grid,
                      tag, spec.name)]
    interior = pb.sample(spec, record.seed).interior
    out.append(rp.metrics(tr.predict(record.params, cfg, interior), pb.reference(spec, interior),
                          f"collocation interior ({len(interior)} points)", tag, spec.name))
    return out


def render_run(spec: pb.ProblemSpec, record: tr.RunRecord, tag: str, directory: Path) -> list:
    """metrics.csv, loss.svg and fields.svg for one run; returns its MetricRecords."""
    records = evaluate_run(spec, record, tag)
    rp.write_table(records, directory / "metrics.csv")
    rp.plot_loss({tag: record.totals}, directory / "loss.svg")
    grid = pb.raster_grid(spec)
    rp.plot_fields(grid, pb.reference(spec, grid.points),
                   {tag: tr.predict(record.params, record.model_config, grid.points)}, directory / "fields.svg",
                   labels=("x", "t") if spec.name == "advection1d" else ("x", "y"))
    return records


def _write_problem_summary(root: Path, problem: str, records: list, config: dict | None) -> str:
    base = root / "runs" / problem
    text = rp.write_table(records, base / "metrics.csv")
    (base / "metrics.txt").write_text(text)
    if config is not None:
        (base / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    return text


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if cfg.problem == "spectral-probe":
        raise UsageError("spectral-probe is a regression problem; use the spectral subcommand")
    spec = pb.get_problem(cfg.problem)
    root = Path(cfg.output_dir)
    opt = cfg.adam()
    model_cfg = cfg.model_config(spec.domain.dim, "xlstm" if cfg.paired else cfg.arch)

    def progress(tag, it, terms):
        if args.verbose and (it % 100 == 0 or it == cfg.budget - 1):
            print(f"[{tag}] iteration {it} loss {float(np.sum(terms)):.3e}", file=sys.stderr)

    if cfg.paired:
        runs = tr.train_pair(spec, model_cfg, cfg.budget, cfg.seed, opt, cfg.weights, progress=progress)
    else:
        cb = lambda it, t: progress(cfg.arch, it, t)  # noqa: E731
        runs = {cfg.arch: tr.train(spec, model_cfg, cfg.budget, cfg.seed, opt, cfg.weights, progress=cb)}
    records, failed = [], []
    for tag, record in runs.items():
        directory = _run_dir(root, spec.name, tag)
        record.save(directory)
        if record.status != "ok":
            failed.append(f"{tag}: training stopped at iteration {record.iterations} ({record.status})")
        records += render_run(spec, record, tag, directory)
    text = _write_problem_summary(root, spec.name, records, cfg.to_dict())
    print(text, end="")
    for tag, record in runs.items():
        print(f"{tag}: {record.param_count} parameters, {record.iterations} iterations, "
              f"{record.wall_clock:.1f} s, sample digest {record.sample_digest[:12]}")
    if failed:
        print("\n".join(failed), file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(os.environ.get(OUT_ENV) or "out") if not args.out else Path(args.out)
    problems = [args.problem] if args.problem else sorted(
        p.name for p in (root / "runs").glob("*") if p.is_dir()) if (root / "runs").is_dir() else []
    if args.problem and args.problem not in pb.REGISTRY:
        raise UsageError(f"unknown problem {args.problem!r}; choose from {', '.join(pb.REGISTRY)}")
    did_any = False
    for problem in problems:
        spec = pb.get_problem(problem)
        records = []
        for tag in rp.MODEL_ORDER:
            directory = _run_dir(root, problem, tag)
            if not (directory / "history.json").exists():
                continue
            try:
                record = tr.RunRecord.load(directory)
            except mdl.CheckpointError as exc:
                print(f"checkpoint load failure in {directory}: {exc}", file=sys.stderr)
                return EXIT_FAILURE
            if record.params is None:
                print(f"checkpoint load failure in {directory}: no checkpoint.json", file=sys.stderr)
                return EXIT_FAILURE
            records += render_run(spec, record, tag, directory)
        if records:
            did_any = True
            print(_write_problem_summary(root, problem, records, None), end="")
    spectral_json = root / "spectral" / "report.json"
    if spectral_json.exists() and not args.problem:
        report = sp.FrequencyReport.from_json(json.loads(spectral_json.read_text())["data"])
        _write_spectral(report, root / "spectral")
        print(_spectral_summary(report))
        did_any = True
    if not did_any:
        print(f"nothing to report under {root}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# --- spectral -----------------------------------------------------------------------------


def _spectral_configs(s: SpectralSettings) -> mdl.ModelConfig:
    return mdl.ModelConfig(arch="xlstm", in_dim=1, depth=s.depth, width=s.width, micro_steps=s.micro_steps)


def _write_spectral(report: sp.FrequencyReport, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.csv").write_text(rp.spectral_table(report))
    rp.plot_spectrum(report, directory / "spectrum.svg")


def _spectral_summary(report: sp.FrequencyReport) -> str:
    g_mean, _ = report.gain_mean_sd()
    upper = report.ks > (report.ks.max() + report.ks.min()) / 2.0 if len(report.ks) > 1 else np.ones(1, bool)
    return (f"k* xlstm {report.k_star('xlstm'):g}, baseline {report.k_star('baseline'):g}; "
            f"min mean G on upper half {float(np.min(g_mean[upper])):.6f}; "
            f"params {report.param_counts}; {report.wall_clock:.1f} s")


def _probe(cfg: RunConfig) -> sp.LinearizationProbe:
    s = cfg.spectral
    probe_cfg = sp.probe_config(width=s.width, depth=max(1, s.probe_layer + 1), micro_steps=s.micro_steps)
    params = mdl.init(probe_cfg, cfg.seed)
    return sp.build_probe(params, probe_cfg, s.ks, n=s.probe_points, layer=s.probe_layer)


def _write_probe(probe: sp.LinearizationProbe, directory: Path) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "probe.csv").write_text(rp.probe_table(probe))
    _, smin, smax = sp.effective_map(probe.A, probe.S)
    summary = {"S": probe.S, "bound_pass_rate": probe.bound_pass_rate(),
               "sigma_min": smin, "sigma_max": smax, "degenerate": int(np.sum(probe.degenerate))}
    (directory / "probe.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def cmd_spectral(args) -> int:
    cfg = _load_config(args)
    s = cfg.spectral
    if s.kmax < 1:
        raise UsageError("--kmax must be >= 1")
    directory = Path(cfg.output_dir) / "spectral"
    progress = (lambda tag, sec: print(f"[{tag}] done at {sec:.1f} s", file=sys.stderr)) if args.verbose else None
    report = sp.frequency_benchmark(_spectral_configs(s), ks=s.ks, budget=s.budget, seeds=s.seeds, eps=s.eps,
                                    lr=s.lr, n_train=s.n_train, n_grid=s.n_grid, eval_every=s.eval_every,
                                    progress=progress)
    sp.save_report(report, directory)
    _write_spectral(report, directory)
    (directory / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    _write_probe(_probe(cfg), directory)
    print(_spectral_summary(report))
    return EXIT_OK if not any(report.dropped.values()) else EXIT_FAILURE


def cmd_kernel_probe(args) -> int:
    cfg = _load_config(args)
    summary = _write_probe(_probe(cfg), Path(cfg.output_dir) / "spectral")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# --- verify -------------------------------------------------------------------------------


def cmd_verify(args) -> int:
    from . import verify as vf

    if args.list:
        print("\n".join(f"{n}{' (slow)' if n in vf.SLOW_SUITES else ''}" for n in vf.SUITES))
        return EXIT_OK
    names = list(vf.SUITES) if args.full else list(vf.DEFAULT_SUITES)
    if args.only:
        chosen = [n.strip() for n in args.only.split(",") if n.strip()]
        bad = [n for n in chosen if n not in vf.SUITES]
        if bad:
            raise UsageError(f"unknown suite(s) {', '.join(bad)}; choose from {', '.join(vf.SUITES)}")
        names = chosen
    root = Path(args.out or os.environ.get(OUT_ENV) or "out")
    results = vf.run_suites(names, root=root, checkpoints=args.checkpoint)
    for r in results:
        print(f"{r.status.upper():<10} {r.name:<14} {r.seconds:8.1f} s  {r.message}")
    summary = {"passed": all(r.passed for r in results), "suites": [r.to_json() for r in results]}
    root.mkdir(parents=True, exist_ok=True)
    (root / "verify.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if summary["passed"] else EXIT_FAILURE


# --- parser ---------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", help="JSON RunConfig file; flags override its fields")
    p.add_argument("--out", help=f"output root (default: ${OUT_ENV} or ./out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlstm-pinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model or a matched pair on a PDE benchmark")
    _common(p)
    p.add_argument("--problem")
    p.add_argument("--budget", type=int, help="iterations")
    pair = p.add_mutually_exclusive_group()
    pair.add_argument("--paired", dest="paired", action="store_true", default=None)
    pair.add_argument("--single", dest="paired", action="store_false")
    p.add_argument("--arch", choices=("xlstm", "baseline"), help="model for --single")
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--micro-steps", dest="micro_steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--profile", choices=("default", "desk"), help="desk: reduced model and budget")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("spectral", cmd_spectral, "plane-wave frequency benchmark and kernel probe"),
                              ("kernel-probe", cmd_kernel_probe, "linearization probe of one block")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--kmax", dest="spectral_kmax", type=int)
        p.add_argument("--eps", dest="spectral_eps", type=float)
        p.add_argument("--seeds", dest="spectral_seeds", type=int, nargs="+")
        p.add_argument("--budget", dest="spectral_budget", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run the numerical acceptance suites")
    p.add_argument("--only", help="comma-separated suite names")
    p.add_argument("--list", action="store_true", help="list suite names")
    p.add_argument("--full", action="store_true", help="include the slow benchmark suites")
    p.add_argument("--checkpoint", action="append", help="checkpoint file to load-check (repeatable)")
    p.add_argument("--out", help="output root scanned for checkpoints and receiving verify.json")
    p.add_argument("--json", action="store_true", help="also print the machine-readable summary")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="re-render tables and figures from saved runs")
    p.add_argument("--out", help="output root")
    p.add_argument("--problem")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, tr.ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"xlstm-pinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except mdl.CheckpointError as exc:
        print(f"xlstm-pinn: checkpoint load failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (FloatingPointError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"xlstm-pinn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
