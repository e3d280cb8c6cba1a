"""File formats: instances, allocations, deterministic tables and campaign configs.

Instance files are JSON::

    {
      "format": "linbpi-instance", "version": 1,
      "dim": 2,
      "actions": ["a0", "a1"],
      "contexts": [{"prob": 0.5, "phi": [[1, 0], [0, 1]]},
                   {"prob": 0.5, "phi": [[1, 1], [0, 1]], "kpi": [1, 0.2, 0.7]}],
      "theta": [1.0, 0.5]
    }

``phi`` holds one dense row per action. ``kpi`` is optional and only used by the
rule-based tilt sampler. Floats are written with Python's shortest round-trip
repr, so save/load is exact.

Allocation files are CSV with a header ``context,<action names...>`` and one row
per context. Deterministic tables are CSV ``context,action`` or JSON
``{"actions": [...]}``.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .harness import CampaignConfig, CellSpec, DEFAULT_MAX_ROUNDS
from .instances import passive_example, reference_instance
from .model import Allocation, ContextDistribution, FeatureMap, Instance
from .ret import ACTION_NAMES, RetConfig, build_ret_instance
from .sampling import SamplingPolicy

FORMAT = "linbpi-instance"


@dataclass
class InstanceFile:
    instance: Instance
    action_names: list
    kpis: np.ndarray | None = None


def instance_to_dict(instance: Instance, action_names=None, kpis=None) -> dict:
    names = list(action_names) if action_names else [f"a{k}" for k in range(instance.n_actions)]
    contexts = []
    for x in range(instance.n_contexts):
        entry = {"prob": float(instance.context_dist.probs[x]), "phi": instance.features.phi[x].tolist()}
        if kpis is not None:
            entry["kpi"] = [float(v) for v in kpis[x]]
        contexts.append(entry)
    return {
        "format": FORMAT,
        "version": 1,
        "dim": instance.dim,
        "actions": names,
        "contexts": contexts,
        "theta": instance.theta.tolist(),
    }


def instance_from_dict(doc: dict) -> InstanceFile:
    if doc.get("format", FORMAT) != FORMAT:
        raise ValueError(f"not an instance file (format={doc.get('format')!r})")
    ctx = doc["contexts"]
    phi = np.array([c["phi"] for c in ctx], dtype=float)
    if phi.ndim != 3 or phi.shape[2] != int(doc["dim"]):
        raise ValueError(f"phi table has shape {phi.shape}, expected (C, K, {doc['dim']})")
    names = list(doc.get("actions") or [f"a{k}" for k in range(phi.shape[1])])
    if len(names) != phi.shape[1]:
        raise ValueError("action list and phi rows disagree")
    kpis = np.array([c["kpi"] for c in ctx], dtype=float) if all("kpi" in c for c in ctx) else None
    inst = Instance(FeatureMap(phi), ContextDistribution([c["prob"] for c in ctx]), doc["theta"])
    return InstanceFile(inst, names, kpis)


def save_instance(path, instance: Instance, action_names=None, kpis=None) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance, action_names, kpis), fh, indent=1)
        fh.write("\n")


BUILTIN = ("ret", "reference", "passive-example")


def is_builtin(spec) -> bool:
    return str(spec).split(":", 1)[0] in BUILTIN


def load_instance(path) -> InstanceFile:
    """Load an instance file or a built-in instance.

    Built-ins: ``ret`` / ``ret:<mesh>`` (tilt environment), ``reference`` (d=2 test
    instance) and ``passive-example`` / ``passive-example:<gap>``.
    """
    spec = str(path)
    if is_builtin(spec):
        name, _, arg = spec.partition(":")
        if name == "ret":
            cfg = RetConfig(mesh=int(arg) if arg else 20)
            return InstanceFile(build_ret_instance(cfg), list(ACTION_NAMES), cfg.kpis())
        if name == "reference":
            inst = reference_instance()
        else:
            inst = passive_example(float(arg) if arg else 0.5)
        return InstanceFile(inst, [f"a{k}" for k in range(inst.n_actions)])
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_allocation(path, alloc: Allocation, action_names=None) -> None:
    rows = np.asarray(alloc.rows)
    names = list(action_names) if action_names else [f"a{k}" for k in range(rows.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["context", *names])
        for x, row in enumerate(rows):
            w.writerow([x, *(repr(float(v)) for v in row)])


def format_allocation(alloc: Allocation, action_names=None) -> str:
    import io

    buf = io.StringIO()
    rows = np.asarray(alloc.rows)
    names = list(action_names) if action_names else [f"a{k}" for k in range(rows.shape[1])]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["context", *names])
    for x, row in enumerate(rows):
        w.writerow([x, *(f"{v:.6g}" for v in row)])
    return buf.getvalue()


def load_allocation(path) -> Allocation:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = [r for r in rows[1:] if r]
    body.sort(key=lambda r: int(r[0]))
    return Allocation.normalized(np.array([[float(v) for v in r[1:]] for r in body]))


def load_table(path, n_contexts: int) -> np.ndarray:
    """Deterministic action table from CSV (context,action) or JSON ({"actions": [...]})."""
    if str(path).endswith(".json"):
        with open(path) as fh:
            acts = np.asarray(json.load(fh)["actions"], dtype=int)
    else:
        with open(path, newline="") as fh:
            rows = [r for r in list(csv.reader(fh))[1:] if r]
        acts = np.zeros(len(rows), dtype=int)
        for r in rows:
            acts[int(r[0])] = int(r[1])
    if acts.size != n_contexts:
        raise ValueError(f"table covers {acts.size} contexts, instance has {n_contexts}")
    return acts


def make_policy(spec: str, inst: InstanceFile, base_dir: str = ".") -> SamplingPolicy | None:
    """Sampler from its command-line name; None means the adaptive learner."""
    C, K = inst.instance.n_contexts, inst.instance.n_actions
    if spec == "adaptive":
        return None
    if spec == "random":
        return SamplingPolicy.uniform(C, K)
    if spec == "ret-rule":
        if inst.kpis is None:
            raise ValueError("ret-rule needs KPI vectors in the instance file")
        return SamplingPolicy.ret_rule(inst.kpis)
    if spec.startswith("table:"):
        path = os.path.join(base_dir, spec.split(":", 1)[1])
        return SamplingPolicy.table(load_table(path, C), K)
    if spec.startswith("alloc:"):
        path = os.path.join(base_dir, spec.split(":", 1)[1])
        return SamplingPolicy.from_allocation(load_allocation(path))
    raise ValueError(f"unknown sampler {spec!r}")


def load_campaign(path) -> tuple:
    """Campaign JSON -> (CampaignConfig, output directory).

    Keys: instance, samplers, eps, delta, n_sim, seed, and optionally name, out,
    max_rounds, workers, u, c, passive (list of sampler names to run with the
    projected estimator), subspace. Relative paths resolve against the config file.
    """
    with open(path) as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    inst_spec = doc["instance"]
    if not is_builtin(inst_spec):
        inst_spec = os.path.join(base, inst_spec)
    inst = load_instance(inst_spec)
    passive = set(doc.get("passive", []))
    cells = []
    for sampler in doc["samplers"]:
        policy = make_policy(sampler, inst, base)
        for delta in _as_list(doc["delta"]):
            for eps in _as_list(doc["eps"]):
                cells.append(CellSpec(sampler, float(eps), float(delta), policy, sampler in passive,
                                      doc.get("subspace", "auto")))
    cfg = CampaignConfig(
        instance=inst.instance,
        cells=cells,
        n_sim=int(doc["n_sim"]),
        base_seed=int(doc.get("seed", 0)),
        max_rounds=int(doc.get("max_rounds", DEFAULT_MAX_ROUNDS)),
        workers=int(doc.get("workers", 1)),
        u=float(doc.get("u", 1.0)),
        c=float(doc.get("c", 0.1)),
        name=str(doc.get("name", os.path.splitext(os.path.basename(path))[0])),
    )
    out = os.path.join(base, doc.get("out", "results"))
    return cfg, out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]
