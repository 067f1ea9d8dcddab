"""On-disk formats: versioned JSON for models and problems, JSON lines for record streams.

Every document carries ``schema_version`` and ``kind``. Floats are written
with their shortest round-trip representation and keys are sorted, so
serialize, parse and serialize again gives identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .executor import ExecutionTrace, TraceRecord
from .gtn import GTN, ConstraintSet
from .skill import SkillModel, SkillSpec
from .state import Demonstration, Plan, PlanDataset, Problem
from .tphsmm import TPHSMM
from .tpgmm import TPGMM

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """A document that does not match its schema; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _req(d, key, path: str, kind=None):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing field")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return v


def _guard(path: str, fn, *args):
    """Run a constructor and report its failures against ``path``."""
    try:
        return fn(*args)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaError(path, str(exc)) from None


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False, separators=(",", ":"))


def _check_header(doc, kind: str, path: str):
    version = _req(doc, "schema_version", path, int)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}.schema_version", f"unsupported version {version}")
    found = _req(doc, "kind", path, str)
    if found != kind:
        raise SchemaError(f"{path}.kind", f"expected {kind!r}, found {found!r}")


def _document(kind: str, body: dict) -> dict:
    return dict(body, schema_version=SCHEMA_VERSION, kind=kind)


def write_json(path, kind: str, body: dict):
    Path(path).write_text(dumps(_document(kind, body)) + "\n")


def read_json(path, kind: str) -> dict:
    name = str(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(name, f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    _check_header(doc, kind, name)
    return doc


def write_jsonl(path, kind: str, header: dict, records):
    lines = [dumps(_document(kind, header))] + [dumps(r) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_jsonl(path, kind: str) -> tuple:
    name = str(path)
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{name}:{i}", f"invalid JSON ({exc.msg})") from None
    if not rows:
        raise SchemaError(name, "empty file")
    _check_header(rows[0], kind, f"{name}:1")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# model payloads
# ---------------------------------------------------------------------------

def tpgmm_to_dict(m: TPGMM) -> dict:
    return {"priors": m.priors.tolist(), "means": m.means.tolist(), "covs": m.covs.tolist(),
            "angle_dims": list(m.angle_dims)}


def tpgmm_from_dict(d: dict, path: str) -> TPGMM:
    return _guard(path, lambda: TPGMM(np.asarray(_req(d, "priors", path, list), dtype=float),
                                      np.asarray(_req(d, "means", path, list), dtype=float),
                                      np.asarray(_req(d, "covs", path, list), dtype=float),
                                      tuple(_req(d, "angle_dims", path, list))))


def tphsmm_to_dict(m: TPHSMM) -> dict:
    return {"trans": m.trans.tolist(), "durations": m.durations.tolist(), "initial": m.initial.tolist(),
            "emission": tpgmm_to_dict(m.emission)}


def tphsmm_from_dict(d: dict, path: str) -> TPHSMM:
    emission = tpgmm_from_dict(_req(d, "emission", path, dict), f"{path}.emission")
    return _guard(path, lambda: TPHSMM(np.asarray(_req(d, "trans", path, list), dtype=float),
                                       np.asarray(_req(d, "durations", path, list), dtype=float), emission,
                                       np.asarray(_req(d, "initial", path, list), dtype=float)))


def skill_to_dict(m: SkillModel) -> dict:
    return {
        "spec": m.spec.to_dict(),
        "trajectory": tphsmm_to_dict(m.trajectory),
        "precondition": {e: tpgmm_to_dict(g) for e, g in m.precondition.items()},
        "effect": {e: tpgmm_to_dict(g) for e, g in m.effect.items()},
        "param_priors": {p: tpgmm_to_dict(g) for p, g in m.param_priors.items()},
        "static": list(m.static),
    }


def _models(d: dict, key: str, path: str) -> dict:
    sub = _req(d, key, path, dict)
    return {k: tpgmm_from_dict(v, f"{path}.{key}.{k}") for k, v in sub.items()}


def skill_from_dict(d: dict, path: str) -> SkillModel:
    spec = _guard(f"{path}.spec", SkillSpec.from_dict, _req(d, "spec", path, dict))
    traj = tphsmm_from_dict(_req(d, "trajectory", path, dict), f"{path}.trajectory")
    m = SkillModel(spec, traj, _models(d, "precondition", path), _models(d, "effect", path),
                   _models(d, "param_priors", path), tuple(_req(d, "static", path, list)))
    missing = [e for e in spec.modeled_entities if e not in m.precondition or e not in m.effect]
    if missing:
        raise SchemaError(path, f"no precondition or effect model for {missing}")
    return m


def save_skills(path, skills, suite: str):
    write_json(path, "skills", {"suite": suite, "skills": [skill_to_dict(m) for m in skills]})


def load_skills(path) -> tuple:
    """``(suite name, [SkillModel, ...])``."""
    doc = read_json(path, "skills")
    name = str(path)
    items = _req(doc, "skills", name, list)
    return _req(doc, "suite", name, str), [skill_from_dict(s, f"{name}.skills[{i}]") for i, s in enumerate(items)]


def _frame_key_to_list(key) -> list:
    return [key[0], key[1]]


def constraint_to_dict(cs: ConstraintSet) -> dict:
    return {
        "skill": cs.skill,
        "objects": list(cs.objects),
        "free_params": [{"name": n, "entity": e, "free_dims": list(dims)} for n, e, dims in cs.free_params],
        "param_models": {k: tpgmm_to_dict(v) for k, v in cs.param_models.items()},
        "object_models": {k: tpgmm_to_dict(v) for k, v in cs.object_models.items()},
        "frames": [{"model": list(k), "frames": [_frame_key_to_list(f) for f in v]} for k, v in cs.frames.items()],
    }


def constraint_from_dict(d: dict, path: str) -> ConstraintSet:
    free = tuple((_req(f, "name", path, str), _req(f, "entity", path, str), tuple(_req(f, "free_dims", path, list)))
                 for f in _req(d, "free_params", path, list))
    frames = {}
    for i, item in enumerate(_req(d, "frames", path, list)):
        fp = f"{path}.frames[{i}]"
        frames[tuple(_req(item, "model", fp, list))] = tuple(tuple(f) for f in _req(item, "frames", fp, list))
    cs = ConstraintSet(_req(d, "skill", path, str), tuple(_req(d, "objects", path, list)), free,
                       _models(d, "param_models", path), _models(d, "object_models", path), frames)
    for key in [("param", n) for n, _, _ in free] + [("object", o) for o in cs.objects]:
        model = cs.param_models.get(key[1]) if key[0] == "param" else cs.object_models.get(key[1])
        if model is None or key not in frames:
            raise SchemaError(path, f"model {key} is missing or has no frame list")
        if len(frames[key]) != model.n_frames:
            raise SchemaError(path, f"model {key} has {model.n_frames} frames but lists {len(frames[key])}")
    return cs


def gtn_to_dict(g: GTN) -> dict:
    return {
        "nodes": list(g.nodes),
        "edges": [{"source": a, "target": b, "n_components": g.n_comp[(a, b)],
                   "constraints": constraint_to_dict(g.constraints[(a, b)]) if (a, b) in g.constraints else None}
                  for a, b in g.edges],
        "goal_entities": list(g.goal_entities),
    }


def gtn_from_dict(d: dict, path: str) -> GTN:
    edges, n_comp, constraints = [], {}, {}
    for i, item in enumerate(_req(d, "edges", path, list)):
        ep = f"{path}.edges[{i}]"
        e = (_req(item, "source", ep, str), _req(item, "target", ep, str))
        edges.append(e)
        n_comp[e] = _req(item, "n_components", ep, int)
        if item.get("constraints") is not None:
            constraints[e] = constraint_from_dict(item["constraints"], f"{ep}.constraints")
    return _guard(path, lambda: GTN(tuple(_req(d, "nodes", path, list)), tuple(edges), constraints, n_comp,
                                    tuple(_req(d, "goal_entities", path, list))))


def save_gtn(path, g: GTN, suite: str):
    write_json(path, "gtn", dict(gtn_to_dict(g), suite=suite))


def load_gtn(path) -> tuple:
    doc = read_json(path, "gtn")
    return _req(doc, "suite", str(path), str), gtn_from_dict(doc, str(path))


# ---------------------------------------------------------------------------
# problems, demonstrations, datasets, traces
# ---------------------------------------------------------------------------

def save_problems(path, problems, suite: str):
    write_json(path, "problems", {"suite": suite, "problems": [p.to_dict() for p in problems]})


def load_problems(path) -> tuple:
    doc = read_json(path, "problems")
    name = str(path)
    items = _req(doc, "problems", name, list)
    return _req(doc, "suite", name, str), [_guard(f"{name}.problems[{i}]", Problem.from_dict, p)
                                           for i, p in enumerate(items)]


def save_demos(path, demos, suite: str):
    write_jsonl(path, "demos", {"suite": suite}, [d.to_dict() for d in demos])


def load_demos(path) -> tuple:
    header, rows = read_jsonl(path, "demos")
    name = str(path)
    return (_req(header, "suite", f"{name}:1", str),
            [_guard(f"{name}:{i + 2}", Demonstration.from_dict, r) for i, r in enumerate(rows)])


def save_dataset(path, ds: PlanDataset, suite: str):
    records = [{"plan": p.to_dict()} for p in ds.plans]
    records += [{"failure": {"problem": int(i), "message": str(msg)}} for i, msg in ds.failures]
    write_jsonl(path, "dataset", {"suite": suite}, records)


def load_dataset(path) -> tuple:
    header, rows = read_jsonl(path, "dataset")
    name = str(path)
    ds = PlanDataset()
    for i, r in enumerate(rows):
        rp = f"{name}:{i + 2}"
        if "plan" in r:
            ds.plans.append(_guard(rp, Plan.from_dict, r["plan"]))
        elif "failure" in r:
            f = r["failure"]
            ds.failures.append((_req(f, "problem", rp, int), _req(f, "message", rp, str)))
        else:
            raise SchemaError(rp, "expected a 'plan' or 'failure' record")
    return _req(header, "suite", f"{name}:1", str), ds


def save_trace(path, trace: ExecutionTrace, meta: dict | None = None):
    header = dict(meta or {}, outcome=trace.outcome)
    write_jsonl(path, "trace", header, [r.to_dict() for r in trace.records])


def load_trace(path) -> tuple:
    header, rows = read_jsonl(path, "trace")
    name = str(path)
    records = [_guard(f"{name}:{i + 2}", TraceRecord.from_dict, r) for i, r in enumerate(rows)]
    return header, ExecutionTrace(records)
