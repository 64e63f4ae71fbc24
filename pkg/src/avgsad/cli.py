"""Command-line front end.

Every output file embeds the resolved run configuration (``run_config``);
``avgsad rerun FILE`` re-executes it and reproduces the same payload.  Exit
codes: 0 all verdicts pass, 1 a verdict failed, 2 usage error, 3 resource
limit (see ``AVGSAD_REGION_CAP``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as D
from . import experiments as E
from .averaging import InitialLaw, geometric_times, replica_configs, run_at_root, snapshots, summary
from .errors import AvgSadError, ResourceError
from .graphs import graph_name, parse_graph
from .schedule import (REGION_CAP_ENV, ClockConfig, MuLaw, UpdateSequence, explore_region,
                       sample_finite)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RESOURCE = 0, 1, 2, 3

# options that never change a payload and so stay out of the echo
_NOT_ECHOED = {"jobs", "out", "format", "func"}


@dataclass
class RunConfig:
    """Resolved command line: command path plus every payload-relevant option."""

    command: list
    options: dict = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        opts = {k: v for k, v in sorted(vars(ns).items())
                if k not in _NOT_ECHOED and k not in ("command", "suite", "name") and v is not None}
        cmd = [ns.command] + [getattr(ns, k) for k in ("suite", "name") if getattr(ns, k, None)]
        return cls(cmd, opts)

    def to_dict(self) -> dict:
        return {"command": list(self.command), "options": dict(self.options)}

    def to_argv(self) -> list[str]:
        argv = list(self.command)
        for k, v in self.options.items():
            flag = "--" + k.replace("_", "-")
            if isinstance(v, bool):
                if v:
                    argv.append(flag)
            elif isinstance(v, list):
                for item in v:
                    argv += [flag, *map(str, item)] if isinstance(item, list) else [flag, str(item)]
            else:
                argv += [flag, repr(v) if isinstance(v, float) else str(v)]
        return argv


# ---------------------------------------------------------------------------
# output plumbing


def _dump_json(payload: dict) -> str:
    return json.dumps(D._jsonable(payload), indent=2, sort_keys=True) + "\n"


def _with_echo(csv_text: str, rc: RunConfig) -> str:
    return f"# run_config={json.dumps(rc.to_dict(), sort_keys=True)}\n" + csv_text


def _emit(args, stem: str, json_payload: dict, csv_files: dict[str, str], rc: RunConfig) -> None:
    """Write ``stem.json`` and ``stem[_series].csv`` under --out; echo the primary one to stdout."""
    json_payload = dict(json_payload, run_config=rc.to_dict())
    json_text = _dump_json(json_payload)
    csv_texts = {name: _with_echo(text, rc) for name, text in csv_files.items()}
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json_text)
        for name, text in csv_texts.items():
            (out / f"{stem}{'_' + name if name else ''}.csv").write_text(text)
    if args.format == "csv" and "" in csv_texts:
        sys.stdout.write(csv_texts[""])
    else:
        sys.stdout.write(json_text)


def _parse_times(text: str) -> list[float]:
    from .errors import SpecError

    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise SpecError(f"bad time list {text!r}") from None


def _clock(args) -> ClockConfig:
    return ClockConfig(args.intensity, MuLaw.parse(args.mu), args.seed)


# ---------------------------------------------------------------------------
# commands


def _snapshot_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "vertex", "value"])
    for t, v, x in rows:
        w.writerow([repr(float(t)), v, repr(float(x))])
    return buf.getvalue()


def _finite_snapshots(g, init, seq, times):
    rows = []
    last = None
    for t, p in snapshots(g, init, seq, times):
        rows += [(t, g.label(v), p[v]) for v in g.vertices]
        last = p
    return rows, last


def cmd_simulate(args, rc: RunConfig) -> int:
    g = parse_graph(args.graph)
    cfg_c, law = replica_configs(_clock(args), InitialLaw.parse(args.law, g), args.seed)
    times = _parse_times(args.times) if args.times else geometric_times(args.t)
    times = sorted(set(times) | {float(args.t)})
    if g.is_finite:
        seq = sample_finite(g, cfg_c, args.t)
        rows, last = _finite_snapshots(g, law.profile(g), seq, times)
        info = summary(last, float(args.t), len(seq))
    else:
        root = g.parse_vertex(args.root) if args.root is not None else E.default_root(g)
        rows = [(t, g.label(root), run_at_root(g, law, cfg_c, t, root)) for t in times]
        region, seq = explore_region(g, root, cfg_c, args.t)
        info = {"horizon": float(args.t), "n_steps": len(seq), "root": g.label(root),
                "value": rows[-1][2], "region_size": len(region)}
    if args.trace:
        seq.to_csv(args.trace, header_comment=f"run_config={json.dumps(rc.to_dict(), sort_keys=True)}")
    _emit(args, "simulate", {"summary": info}, {"": _snapshot_csv(rows)}, rc)
    return EXIT_OK


def cmd_trace_replay(args, rc: RunConfig) -> int:
    g = parse_graph(args.graph)
    _, law = replica_configs(_clock(args), InitialLaw.parse(args.law, g), args.seed)
    seq = UpdateSequence.from_csv(Path(args.trace))
    times = _parse_times(args.times) if args.times else geometric_times(seq.horizon)
    times = sorted(set(times) | {float(seq.horizon)})
    if g.is_finite:
        rows, last = _finite_snapshots(g, law.profile(g), seq, times)
        info = summary(last, float(seq.horizon), len(seq))
    else:
        touched = sorted(set(map(int, seq.edges_u)) | set(map(int, seq.edges_v)))
        rows = []
        for t, p in snapshots(g, law.profile(g), seq, times):
            rows += [(t, g.label(v), p[v]) for v in touched]
        info = {"horizon": float(seq.horizon), "n_steps": len(seq), "vertices": len(touched)}
    _emit(args, "replay", {"summary": info}, {"": _snapshot_csv(rows)}, rc)
    return EXIT_OK


def cmd_check(args, rc: RunConfig) -> int:
    g = parse_graph(args.graph)
    cfg = _clock(args)
    root = g.parse_vertex(args.root) if args.root is not None else None
    if args.suite == "duality":
        rep = D.duality_suite(g, InitialLaw.parse(args.law, g), cfg, args.trials, args.t, root,
                              args.n_updates, args.exact)
    elif args.suite == "bounds":
        rep = D.bounds_suite(g, cfg, args.trials, args.t, root, n_random=args.subsets)
    elif args.suite == "energy":
        rep = D.energy_suite(g, InitialLaw.parse(args.law, g), cfg, args.trials, args.t, root)
    else:
        rep = D.simplif_suite(g, args.n_updates if args.n_updates is not None else 4, args.resolution)
    _emit(args, f"check_{args.suite}", rep.to_dict(), {}, rc)
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: worst={c.worst!r} tol={c.tolerance!r} "
              f"checked={c.checked}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _pairs(g, args) -> list[tuple[int, int]]:
    pairs = [(g.parse_vertex(a), g.parse_vertex(b)) for a, b in (args.pair or [])]
    if args.u is not None and args.v is not None:
        pairs.insert(0, (g.parse_vertex(args.u), g.parse_vertex(args.v)))
    if not pairs:
        from .errors import SpecError

        raise SpecError("symmetry needs --u and --v or at least one --pair")
    return pairs


def cmd_experiment(args, rc: RunConfig) -> int:
    g = parse_graph(args.graph)
    cfg = _clock(args)
    horizons = _parse_times(args.horizons)
    default_reps = 10_000 if args.name == "mean" else 1000
    reps = args.replicas if args.replicas is not None else default_reps
    root = g.parse_vertex(args.root) if args.root is not None else None
    if args.name == "mean":
        rep = E.mean_preservation(g, InitialLaw.parse(args.law, g), cfg, horizons, reps, root,
                                  jobs=args.jobs)
    elif args.name == "l2":
        rep = E.l2_convergence(g, InitialLaw.parse(args.law, g), cfg, horizons, reps, root, jobs=args.jobs)
    elif args.name == "decay":
        u = g.parse_vertex(args.u) if args.u is not None else root
        v = g.parse_vertex(args.v) if args.v is not None else u
        rep = E.contribution_decay(g, cfg, horizons, reps, u, v, eps=args.eps, jobs=args.jobs)
    elif args.name == "symmetry":
        rep = E.symmetry_test(g, cfg, args.t, reps, _pairs(g, args), alpha=args.alpha,
                              check_means=args.check_means, jobs=args.jobs)
    else:
        if not g.is_finite:
            from .errors import ValidationError

            raise ValidationError("consensus needs a finite graph")
        _, law = replica_configs(cfg, InitialLaw.parse(args.law, g), args.seed)
        rep = E.finite_consensus(g, law.profile(g), cfg, args.tolerance, args.max_steps)
    csvs = {"": rep.to_csv()}
    for name in rep.series()[1:]:
        csvs[name] = rep.to_csv(name)
    _emit(args, f"experiment_{args.name}", rep.to_dict(), csvs, rc)
    for name, v in rep.verdicts.items():
        tag = "INCONCLUSIVE" if v.passed is None else ("PASS" if v.passed else "FAIL")
        print(f"{tag} {name}: {v.tolerance} (replicas={v.replicas})", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_rerun(args, rc: RunConfig) -> int:
    payload = json.loads(Path(args.file).read_text())
    conf = payload.get("run_config", payload)
    argv = RunConfig(conf["command"], conf["options"]).to_argv()
    if args.out is not None:
        argv += ["--out", args.out]
    argv += ["--jobs", str(args.jobs), "--format", args.format]
    return main(argv)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master 64-bit seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for replicas")
    common.add_argument("--out", default=None, help="directory for output files")
    common.add_argument("--format", choices=("csv", "json"), default="json", help="what to print on stdout")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--graph", required=True, help="graph spec, e.g. lattice:d=2, cycle:n=10")
    model.add_argument("--law", default="uniform:0,1", help="initial law, e.g. gaussian:0,1")
    model.add_argument("--mu", default="half", help="half | fixed:x | uniform:a,b")
    model.add_argument("--intensity", type=float, default=1.0, help="Poisson rate per edge")
    model.add_argument("--root", default=None, help="vertex label (lattice points as 0,0)")

    p = argparse.ArgumentParser(prog="avgsad", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, model], help="one trajectory")
    s.add_argument("--t", type=float, required=True, help="horizon")
    s.add_argument("--times", default=None, help="observation times (default 0,1,2,4,...)")
    s.add_argument("--trace", default=None, help="also save the update sequence as CSV")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("trace-replay", parents=[common, model], help="re-run a saved update sequence")
    r.add_argument("--trace", required=True)
    r.add_argument("--times", default=None)
    r.set_defaults(func=cmd_trace_replay)

    c = sub.add_parser("check", help="diagnostic suites")
    csub = c.add_subparsers(dest="suite", required=True)
    for name in ("duality", "bounds", "energy", "simplif"):
        cs = csub.add_parser(name, parents=[common, model])
        cs.add_argument("--t", type=float, default=8.0)
        cs.add_argument("--trials", type=int, default=100)
        cs.add_argument("--n-updates", type=int, default=None)
        if name == "duality":
            cs.add_argument("--exact", action="store_true", help="rational arithmetic")
        if name == "bounds":
            cs.add_argument("--subsets", type=int, default=1000, help="random subsets per profile")
        if name == "simplif":
            cs.add_argument("--resolution", type=float, default=0.05)
        cs.set_defaults(func=cmd_check)

    x = sub.add_parser("experiment", help="Monte Carlo experiments")
    xsub = x.add_subparsers(dest="name", required=True)
    for name in ("mean", "l2", "decay", "symmetry", "consensus"):
        xs = xsub.add_parser(name, parents=[common, model])
        xs.add_argument("--horizons", default="1,2,4,8")
        xs.add_argument("--replicas", type=int, default=None)
        if name == "decay":
            xs.add_argument("--u", default=None)
            xs.add_argument("--v", default=None)
            xs.add_argument("--eps", type=float, default=None, help="report the ball cap at this eps")
        if name == "symmetry":
            xs.add_argument("--t", type=float, default=4.0)
            xs.add_argument("--u", default=None)
            xs.add_argument("--v", default=None)
            xs.add_argument("--pair", nargs=2, action="append", metavar=("U", "V"))
            xs.add_argument("--alpha", type=float, default=0.01)
            xs.add_argument("--check-means", action="store_true")
        if name == "consensus":
            xs.add_argument("--tolerance", type=float, default=1e-6)
            xs.add_argument("--max-steps", type=int, default=50_000_000)
        xs.set_defaults(func=cmd_experiment)

    rr = sub.add_parser("rerun", parents=[common], help="re-execute the run_config of an output file")
    rr.add_argument("file")
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    rc = RunConfig.from_namespace(args)
    try:
        return args.func(args, rc)
    except ResourceError as e:
        print(f"avgsad: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (AvgSadError, ValueError, OSError) as e:
        print(f"avgsad: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
