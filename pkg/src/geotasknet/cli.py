"""Command-line driver: demonstrations, skill learning, plan data, task networks, execution, benchmarks."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, pipeline, store
from .executor import ExecConfig, run
from .gtn import learn
from .skill import learn_skill
from .tamp import SearchConfig, generate_dataset
from .world import Environment, generate_demos, get_suite

log = logging.getLogger("geotasknet")


# usage errors match argparse's own exit status
EXIT_CODES = {"usage": 2, "schema": 3, "io": 4, "data": 5}


class CLIError(Exception):
    def __init__(self, kind: str, message: str, path: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.path = path

    def payload(self) -> dict:
        out = {"error": self.kind, "message": str(self)}
        if self.path is not None:
            out["path"] = self.path
        return out


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GTN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise CLIError("usage", f"GTN_SEED must be an integer, got {env!r}") from None


def _suite(name):
    try:
        return get_suite(name)
    except KeyError as exc:
        raise CLIError("usage", exc.args[0]) from None


def _parse_perturbations(specs) -> dict:
    """``step=2,entity=letter,pose=x:y:yaw:c``; ``nan`` keeps a coordinate."""
    out = {}
    for spec in specs or ():
        fields = {}
        for part in spec.split(","):
            key, sep, value = part.partition("=")
            if not sep:
                raise CLIError("usage", f"malformed perturbation {spec!r}")
            fields[key.strip()] = value.strip()
        try:
            step = int(fields["step"])
            pose = [float(v) for v in fields["pose"].split(":")]
            entity = fields["entity"]
        except (KeyError, ValueError):
            raise CLIError("usage", f"perturbation {spec!r} needs step=<int>,entity=<id>,pose=x:y:yaw:c") from None
        if len(pose) != 4:
            raise CLIError("usage", f"perturbation pose in {spec!r} needs 4 values")
        out.setdefault(step, []).append((entity, pose))
    return out


def _demo_files(path: Path) -> list:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise CLIError("usage", f"no .jsonl demonstration files in {path}", str(path))
        return files
    if not path.exists():
        raise CLIError("io", f"{path} does not exist", str(path))
    return [path]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_demo_gen(args):
    suite = _suite(args.suite)
    names = suite.skill_names if args.skill == "all" else [args.skill]
    seed = _seed(args)
    demos = []
    for i, name in enumerate(names):
        if name not in suite.specs:
            raise CLIError("usage", f"skill {name!r} is not in suite {suite.name!r}")
        demos += generate_demos(suite, name, args.count, args.noise, pipeline.sub_seed(seed, 0, i) if args.skill == "all"
                                else seed)
    store.save_demos(args.out, demos, suite.name)
    log.info("wrote %d demonstrations to %s", len(demos), args.out)


def cmd_learn_skills(args):
    suite = _suite(args.suite)
    by_skill = {}
    for f in _demo_files(Path(args.demos)):
        name, demos = store.load_demos(f)
        if name != suite.name:
            raise CLIError("schema", f"demonstrations are for suite {name!r}, not {suite.name!r}", str(f))
        for d in demos:
            by_skill.setdefault(d.skill, []).append(d)
    unknown = sorted(set(by_skill) - set(suite.specs))
    if unknown:
        raise CLIError("schema", f"demonstrations of unknown skills {unknown}", args.demos)
    skills = [learn_skill(by_skill[n], suite.specs[n]) for n in suite.skill_names if n in by_skill]
    missing = [n for n in suite.skill_names if n not in by_skill]
    if missing:
        log.warning("no demonstrations for %s; those skills are not learned", missing)
    store.save_skills(args.out, skills, suite.name)
    log.info("learned %d skills", len(skills))


def cmd_gen_data(args):
    suite = _suite(args.suite)
    name, skills = store.load_skills(args.skills)
    if name != suite.name:
        raise CLIError("schema", f"skills were learned for suite {name!r}", args.skills)
    seed = _seed(args)
    cfg = SearchConfig(max_expansions=args.max_expansions, precond_gate=args.gate)
    ds = generate_dataset(pipeline.train_problems(suite, args.problems, seed), skills, cfg, seed, args.jobs)
    store.save_dataset(args.out, ds, suite.name)
    log.info("solved %d of %d problems", len(ds), args.problems)


def cmd_learn_gtn(args):
    name, ds = store.load_dataset(args.dataset)
    sname, skills = store.load_skills(args.skills)
    if name != sname:
        raise CLIError("schema", f"dataset suite {name!r} does not match skills suite {sname!r}", args.dataset)
    try:
        g = learn(ds, {m.name: m for m in skills}, _seed(args))
    except (KeyError, ValueError) as exc:
        raise CLIError("data", str(exc.args[0] if exc.args else exc), args.dataset) from None
    store.save_gtn(args.out, g, name)
    log.info("task network with %d nodes, %d edges, %d components", *g.size)


def cmd_problem_gen(args):
    suite = _suite(args.suite)
    problems = pipeline.valid_problems(suite, args.count, _seed(args))
    store.save_problems(args.out, problems, suite.name)


def cmd_exec(args):
    gname, g = store.load_gtn(args.gtn)
    sname, skills = store.load_skills(args.skills)
    pname, problems = store.load_problems(args.problem)
    if not gname == sname == pname:
        raise CLIError("schema", f"suites disagree: network {gname!r}, skills {sname!r}, problem {pname!r}")
    if not 0 <= args.index < len(problems):
        raise CLIError("usage", f"problem index {args.index} out of range ({len(problems)} problems)", args.problem)
    suite = _suite(gname)
    problem = problems[args.index]
    env = Environment(suite, problem.start, args.noise, _parse_perturbations(args.perturb), _seed(args))
    trace = run(g, problem, env, {m.name: m for m in skills}, ExecConfig(rho_lower=args.rho_lower,
                                                                         max_steps=args.max_steps))
    store.save_trace(args.trace, trace, {"suite": gname, "problem": args.index})
    print(json.dumps({"outcome": trace.outcome, "skills": list(trace.skills()),
                      "recoveries": len(trace.events("recovery"))}))


def cmd_bench(args):
    seed = _seed(args)
    _suite(args.suite)
    report, episodes = pipeline.bench(args.suite, args.train, args.valid, seed, args.noise, args.jobs, args.demos)
    row = report.row()
    with open(args.report, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    if args.episodes:
        with open(args.episodes, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(episodes[0])))
            w.writeheader()
            for e in episodes:
                d = asdict(e)
                d["skills"] = " ".join(e.skills)
                d["tamp_skills"] = " ".join(e.tamp_skills) if e.tamp_skills else ""
                w.writerow(d)
    print(json.dumps({k: row[k] for k in ("suite", "success_rate", "speedup", "dataset_size")}))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geotasknet", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=None, help="defaults to $GTN_SEED, then 0")
        return p

    p = add("demo-gen", cmd_demo_gen, "generate scripted demonstrations")
    p.add_argument("--suite", required=True)
    p.add_argument("--skill", required=True, help="skill name, or 'all'")
    p.add_argument("--count", type=int, default=9)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = add("learn-skills", cmd_learn_skills, "learn skill models from demonstrations")
    p.add_argument("--suite", required=True)
    p.add_argument("--demos", required=True, help="a demonstration file or a directory of them")
    p.add_argument("--out", required=True)

    p = add("gen-data", cmd_gen_data, "solve random problems with the planner")
    p.add_argument("--suite", required=True)
    p.add_argument("--skills", required=True)
    p.add_argument("--problems", type=int, default=40)
    p.add_argument("--gate", type=float, default=pipeline.PIPELINE_SEARCH.precond_gate)
    p.add_argument("--max-expansions", type=int, default=pipeline.PIPELINE_SEARCH.max_expansions)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("learn-gtn", cmd_learn_gtn, "learn a task network from plan data")
    p.add_argument("--dataset", required=True)
    p.add_argument("--skills", required=True)
    p.add_argument("--out", required=True)

    p = add("problem-gen", cmd_problem_gen, "write validation problems")
    p.add_argument("--suite", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("exec", cmd_exec, "execute a problem with a learned task network")
    p.add_argument("--gtn", required=True)
    p.add_argument("--skills", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--perturb", action="append", help="step=<int>,entity=<id>,pose=x:y:yaw:c (repeatable)")
    p.add_argument("--rho-lower", type=float, default=ExecConfig.rho_lower)
    p.add_argument("--max-steps", type=int, default=ExecConfig.max_steps)
    p.add_argument("--trace", required=True)

    p = add("bench", cmd_bench, "timed end-to-end pipeline")
    p.add_argument("--suite", required=True)
    p.add_argument("--train", type=int, default=40)
    p.add_argument("--valid", type=int, default=40)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--demos", type=int, default=pipeline.PIPELINE_DEMOS)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", required=True)
    p.add_argument("--episodes", help="optional per-problem CSV")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CLIError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return EXIT_CODES[exc.kind]
    except store.SchemaError as exc:
        print(json.dumps({"error": "schema", "message": str(exc), "path": exc.path}), file=sys.stderr)
        return 3
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc), "path": getattr(exc, "filename", None)}),
              file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
