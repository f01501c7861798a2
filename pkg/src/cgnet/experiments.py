"""End-to-end experiment pipeline behind the CLI.

Loads datasets, trains per seed, computes the five evaluation metrics,
exports concept/formula artifacts, runs intervention curves, and persists
checkpoints plus a JSON run report. Everything is deterministic under the
run config, which is what the rerun-bit-exactness guarantee rests on.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os

import numpy as np

from . import models
from .autodiff import DivergenceError
from .concepts import ClusterTable, assign_clusters, concept_representatives, export_concepts
from .config import RunConfig, ConfigError
from .graphs import (SYNTHETIC_IDS, DatasetSpec, LabeledGraph, gen_synthetic,
                     load_tu_dataset, make_split, subsample_graphs)
from .interventions import (accuracy_curve, aggregate_curves, build_label_oracle,
                            build_synthetic_oracle, curve_to_csv, eligible_nodes)
from .lens import extract_formulas, formulas_to_text
from .metrics import (completeness_score, concept_purity, formula_accuracy,
                      formula_complexity, kmeans_concepts, one_hot, summarize_runs)

DATA_ENV = "CGL_DATA"
OUT_ENV = "CGL_OUT"
TU_DIR_NAMES = {"mutagenicity": "Mutagenicity", "reddit-binary": "REDDIT-BINARY"}

CHECKPOINT_FORMAT = 1


class DataUnavailable(RuntimeError):
    """A real-world corpus is missing locally (downloads are out of scope)."""


def output_root(explicit=None):
    return explicit or os.environ.get(OUT_ENV) or "runs"


def run_dir(cfg: RunConfig, root=None):
    return os.path.join(output_root(root or cfg.out_dir or None),
                        cfg.dataset, cfg.model)


def load_dataset(cfg: RunConfig):
    """(LabeledGraph, MotifAnnotation or None), deterministic under data_seed."""
    if cfg.dataset in SYNTHETIC_IDS:
        return gen_synthetic(DatasetSpec.default(cfg.dataset, seed=cfg.data_seed))
    root = os.environ.get(DATA_ENV, "data")
    path = os.path.join(root, TU_DIR_NAMES[cfg.dataset])
    if not os.path.isdir(path):
        raise DataUnavailable(
            f"no local copy of {cfg.dataset} under {path!r}; place the TU "
            f"files there or set ${DATA_ENV} (downloading is out of scope)")
    graph = load_tu_dataset(path)
    if cfg.subsample:
        graph = subsample_graphs(graph, cfg.subsample, cfg.data_seed)
    return graph, None


def split_for_seed(graph: LabeledGraph, cfg: RunConfig, seed):
    graph.train_mask, graph.test_mask = make_split(graph, cfg.split_fraction, seed)


def build_run_model(cfg: RunConfig, seed, graph: LabeledGraph):
    num_classes = int(np.asarray(graph.labels).max()) + 1
    mc = cfg.model_config(seed)
    if cfg.model == "cgn":
        return models.ConceptGNN(mc, graph.features.shape[1], num_classes,
                                 epsilon=cfg.epsilon, tau=cfg.tau)
    return models.VanillaGNN(mc, graph.features.shape[1], num_classes)


# ---------------------------------------------------------------- checkpoints

def checkpoint_path(rd, seed):
    return os.path.join(rd, "checkpoints", f"seed{seed}.bin")


def config_to_dict(cfg: RunConfig):
    d = dataclasses.asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    return d


def config_from_dict(d) -> RunConfig:
    d = dict(d)
    d["seeds"] = tuple(d["seeds"])
    return RunConfig(**d)


def _in_dim(model):
    first = model.trunk.layers[0]
    for attr in ("w", "w1", "w_self"):
        if hasattr(first, attr):
            return int(getattr(first, attr).shape[0])
    raise AttributeError("first trunk layer exposes no weight matrix")


def save_checkpoint(path, model, cfg: RunConfig, seed, extra=None):
    meta = {"format": CHECKPOINT_FORMAT, "config": config_to_dict(cfg),
            "seed": int(seed), "in_dim": _in_dim(model),
            "num_classes": int(model.num_classes)}
    meta.update(extra or {})
    arrays = {name: t.data for name, t in model.named_parameters()}
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"),
                                            dtype=np.uint8), **arrays)


def load_checkpoint(path):
    """-> (model with restored weights, RunConfig, meta dict)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path!r} does not exist")
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format in {path!r}")
        cfg = config_from_dict(meta["config"])
        mc = cfg.model_config(meta["seed"])
        if cfg.model == "cgn":
            model = models.ConceptGNN(mc, meta["in_dim"], meta["num_classes"],
                                      epsilon=cfg.epsilon, tau=cfg.tau)
        else:
            model = models.VanillaGNN(mc, meta["in_dim"], meta["num_classes"])
        for name, tensor in model.named_parameters():
            arr = z[name]
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name} in {path!r}")
            tensor.data[:] = arr
    return model, cfg, meta


# --------------------------------------------------------------------- report

def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) or math.isinf(x) else x
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_path(rd):
    return os.path.join(rd, "report.json")


def read_report(rd):
    path = report_path(rd)
    if not os.path.exists(path):
        return {}
    with open(path) as fh:
        return json.load(fh)


def update_report(rd, patch):
    """Merge a patch into report.json; per_seed/summary merge per metric."""
    report = read_report(rd)
    for key, value in patch.items():
        if key in ("per_seed", "summary", "curves", "formulas") and isinstance(value, dict):
            merged = dict(report.get(key, {}))
            merged.update(value)
            report[key] = merged
        else:
            report[key] = value
    os.makedirs(rd, exist_ok=True)
    with open(report_path(rd), "w") as fh:
        json.dump(_json_safe(report), fh, indent=1)
    return report


def metric_block(per_seed: dict):
    """per_seed {metric: {seed: value}} -> (per_seed json, summary json).

    Summaries are recomputed from the stored per-seed values, never cached,
    so every reported mean stays reproducible from the report itself.
    """
    per_seed_json, summary_json = {}, {}
    for metric, by_seed in per_seed.items():
        per_seed_json[metric] = {str(s): by_seed[s] for s in sorted(by_seed)}
        values = [by_seed[s] for s in sorted(by_seed)]
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in values):
            summary_json[metric] = None
        else:
            summary_json[metric] = summarize_runs(values).as_dict()
    return per_seed_json, summary_json


# ------------------------------------------------------------------- training

def cmd_train(cfg: RunConfig, out_root=None, progress=None):
    """Train every seed, persist checkpoints, seed the run report."""
    say = progress or (lambda msg: None)
    graph, _ann = load_dataset(cfg)
    rd = run_dir(cfg, out_root)
    acc, train_acc = {}, {}
    for seed in cfg.seeds:
        split_for_seed(graph, cfg, seed)
        model = build_run_model(cfg, seed, graph)
        result = models.train(model, graph)
        save_checkpoint(checkpoint_path(rd, seed), model, cfg, seed,
                        extra={"train_accuracy": result.train_accuracy,
                               "test_accuracy": result.test_accuracy})
        acc[seed] = result.test_accuracy
        train_acc[seed] = result.train_accuracy
        say(f"{cfg.dataset}/{cfg.model} seed {seed}: "
            f"train {result.train_accuracy:.4f} test {result.test_accuracy:.4f}")
    per_seed, summary = metric_block({"accuracy": acc, "train_accuracy": train_acc})
    return update_report(rd, {"dataset": cfg.dataset, "model": cfg.model,
                              "config": config_to_dict(cfg),
                              "per_seed": per_seed, "summary": summary})


def resolve_checkpoints(target):
    """A run directory or a single .bin path -> ordered checkpoint list."""
    if os.path.isdir(target):
        ckdir = os.path.join(target, "checkpoints")
        if not os.path.isdir(ckdir):
            raise FileNotFoundError(f"no checkpoints/ under {target!r}")
        found = sorted(os.path.join(ckdir, f) for f in os.listdir(ckdir)
                       if f.endswith(".bin"))
        if not found:
            raise FileNotFoundError(f"no *.bin checkpoints under {ckdir!r}")
        return found
    if not os.path.exists(target):
        raise FileNotFoundError(f"checkpoint {target!r} does not exist")
    return [target]


class _DatasetCache:
    """Rebuilds each dataset once per process even across 5 seed checkpoints."""

    def __init__(self):
        self._held = {}

    def get(self, cfg: RunConfig):
        key = (cfg.dataset, cfg.data_seed, cfg.subsample)
        if key not in self._held:
            self._held[key] = load_dataset(cfg)
        return self._held[key]


# ----------------------------------------------------------------- evaluation

def _node_mask(graph, instance_mask):
    instance_mask = np.asarray(instance_mask, dtype=bool)
    return (instance_mask if not graph.is_graph_task
            else instance_mask[graph.graph_indicator])


def _pool_rows(rows, graph):
    if not graph.is_graph_task:
        return rows
    out = np.zeros((graph.graph_count, rows.shape[1]))
    np.add.at(out, graph.graph_indicator, rows)
    return out / np.bincount(graph.graph_indicator,
                             minlength=graph.graph_count)[:, None]


def evaluate_seed(model, graph: LabeledGraph, cfg: RunConfig):
    """All metrics for one trained model; artifacts returned for reuse."""
    state = models.model_state(model, graph)
    labels = np.asarray(graph.labels)
    train = np.asarray(graph.train_mask, dtype=bool)
    test = np.asarray(graph.test_mask, dtype=bool)
    metrics = {"accuracy": float((state["predictions"][test] == labels[test]).mean())}
    artifacts = {"state": state}
    if model.kind != "cgn":
        return metrics, artifacts

    inst_r = state["instance_r"].astype(np.float64)
    metrics["completeness"] = completeness_score(inst_r, labels, train, test)

    table = assign_clusters(state["r"], state["q"])
    reps = concept_representatives(table, state["q"], graph, cfg.representative_p)
    purity = concept_purity(reps, cfg.ged_cap)
    metrics["purity"] = purity.min_mean

    majority = int(np.bincount(labels[train]).argmax())
    formulas = extract_formulas(state["instance_r"], labels, state["predictions"],
                                state["gate"], mask=train)
    metrics["formula_accuracy"] = formula_accuracy(
        formulas, state["instance_r"], labels, mask=test, majority_class=majority)
    metrics["formula_complexity"] = formula_complexity(formulas)

    artifacts.update(table=table, reps=reps, purity=purity, formulas=formulas)
    return metrics, artifacts


def baseline_metrics(model, graph: LabeledGraph, cfg: RunConfig, seed):
    """Post-hoc k-Means concepts over trunk embeddings (completeness, purity)."""
    state = models.model_state(model, graph)
    labels = np.asarray(graph.labels)
    train = np.asarray(graph.train_mask, dtype=bool)
    test = np.asarray(graph.test_mask, dtype=bool)
    km = kmeans_concepts(state["h"], cfg.baseline_k, seed=seed)
    enc = _pool_rows(one_hot(km.assignments, cfg.baseline_k), graph)
    table = ClusterTable(patterns=np.arange(cfg.baseline_k)[:, None],
                         assignments=km.assignments, centroids=km.centroids)
    reps = concept_representatives(table, state["h"], graph, cfg.representative_p)
    purity = concept_purity(reps, cfg.ged_cap)
    return {"baseline_completeness": completeness_score(enc, labels, train, test),
            "baseline_purity": purity.min_mean}


def cmd_evaluate(target, baseline=None, out_root=None, progress=None):
    """Recompute metrics for every checkpoint under `target`; update report."""
    say = progress or (lambda msg: None)
    paths = resolve_checkpoints(target)
    cache = _DatasetCache()
    per_seed = {}
    rd = None
    policies = {}
    for path in paths:
        model, cfg, meta = load_checkpoint(path)
        if rd is None:
            rd = (run_dir(cfg, out_root) if (out_root or cfg.out_dir)
                  else os.path.dirname(os.path.dirname(path)))
        graph, _ann = cache.get(cfg)
        split_for_seed(graph, cfg, meta["seed"])
        if baseline == "gcexplainer":
            row = baseline_metrics(model, graph, cfg, meta["seed"])
        else:
            row, _artifacts = evaluate_seed(model, graph, cfg)
        for metric, value in row.items():
            per_seed.setdefault(metric, {})[meta["seed"]] = value
        say(f"{cfg.dataset}/{cfg.model} seed {meta['seed']}: " +
            " ".join(f"{k}={v:.4f}" if v is not None and not
                     (isinstance(v, float) and math.isnan(v)) else f"{k}=nan"
                     for k, v in row.items()))
    if baseline == "gcexplainer":
        policies["baseline"] = (f"k-means with k={cfg.baseline_k} over trunk "
                                "embeddings; one-hot cluster ids, mean-pooled "
                                "per graph for graph tasks")
    per_seed_json, summary_json = metric_block(per_seed)
    report = update_report(rd, {"dataset": cfg.dataset, "model": cfg.model,
                                "config": config_to_dict(cfg),
                                "per_seed": per_seed_json,
                                "summary": summary_json})
    if policies:
        report = update_report(rd, {"policies": {**report.get("policies", {}),
                                                 **policies}})
    return report


# ---------------------------------------------------------------- explanation

def cmd_explain(ckpt, out=None, color_by_label=False):
    """Concept DOT files + manifest + formulas for one checkpoint."""
    model, cfg, meta = load_checkpoint(ckpt)
    if cfg.model != "cgn":
        raise ConfigError("explanations need a concept model checkpoint")
    graph, _ann = load_dataset(cfg)
    split_for_seed(graph, cfg, meta["seed"])
    state = models.model_state(model, graph)
    labels = np.asarray(graph.labels)
    train = np.asarray(graph.train_mask, dtype=bool)

    table = assign_clusters(state["r"], state["q"])
    reps = concept_representatives(table, state["q"], graph, cfg.representative_p)
    dest = out or os.path.dirname(os.path.dirname(ckpt))
    manifest = export_concepts(reps, os.path.join(dest, "concepts"),
                               color_by_label=color_by_label)

    formulas = extract_formulas(state["instance_r"], labels, state["predictions"],
                                state["gate"], mask=train)
    text = formulas_to_text(formulas)
    os.makedirs(dest, exist_ok=True)
    with open(os.path.join(dest, "formulas.txt"), "w") as fh:
        fh.write(text)
    update_report(dest, {"dataset": cfg.dataset, "model": cfg.model,
                         "manifest": manifest,
                         "formulas": {str(meta["seed"]): text}})
    return {"manifest": manifest, "formulas": formulas, "dest": dest}


# -------------------------------------------------------------- interventions

def intervention_keys(graph: LabeledGraph, ann):
    if ann is not None:
        return np.asarray(ann.role)
    # real-world tasks: the oracle is keyed by the task label of the node's graph
    return np.asarray(graph.labels)[graph.graph_indicator]


def _seed_oracle(state, graph, ann):
    keys = intervention_keys(graph, ann)
    train_nodes = _node_mask(graph, graph.train_mask)
    if ann is not None:
        oracle = build_synthetic_oracle(state["q"], state["r"], keys, train_nodes)
    else:
        oracle = build_label_oracle(state["q"], state["r"], keys, train_nodes)
    return keys, oracle


def cmd_intervene(target, out_root=None, max_budget=None, progress=None):
    """Aggregate intervention accuracy curve over all checkpoints of a run."""
    say = progress or (lambda msg: None)
    paths = resolve_checkpoints(target)
    cache = _DatasetCache()
    prepared = []
    for path in paths:
        model, cfg, meta = load_checkpoint(path)
        if cfg.model != "cgn":
            raise ConfigError("interventions need concept model checkpoints")
        graph, ann = cache.get(cfg)
        split_for_seed(graph, cfg, meta["seed"])
        state = models.model_state(model, graph)
        keys, oracle = _seed_oracle(state, graph, ann)
        test_nodes = _node_mask(graph, graph.test_mask)
        pool = eligible_nodes(state["r"], keys, oracle, test_nodes)
        prepared.append((model, cfg, meta["seed"], state, keys, oracle, pool.size))
        say(f"{cfg.dataset} seed {meta['seed']}: {pool.size} eligible nodes")

    top = max(size for *_, size in prepared)
    if max_budget is not None:
        top = min(top, int(max_budget))
    budgets = np.arange(top + 1)
    rows, seeds, full = [], [], {}
    graph, ann = cache.get(prepared[0][1])
    for model, cfg, seed, state, keys, oracle, _size in prepared:
        split_for_seed(graph, cfg, seed)
        curve = accuracy_curve(model, graph, state["q"], state["r"], keys,
                               oracle, order_seed=seed, budgets=budgets)
        rows.append(curve)
        seeds.append(seed)
        full[seed] = float(curve[-1])
    agg = aggregate_curves(budgets, rows, seeds)
    rd = run_dir(cfg, out_root) if (out_root or cfg.out_dir) else \
        os.path.dirname(os.path.dirname(paths[0]))
    os.makedirs(os.path.join(rd, "curves"), exist_ok=True)
    csv_path = os.path.join(rd, "curves", "intervention.csv")
    curve_to_csv(agg, csv_path)
    per_seed_json, summary_json = metric_block({"intervened_accuracy": full})
    update_report(rd, {"per_seed": per_seed_json, "summary": summary_json,
                       "curves": {"intervention": os.path.relpath(csv_path, rd)},
                       "policies": {**read_report(rd).get("policies", {}),
                                    "interventions": oracle.policy +
                                    "; x-axis counts intervened nodes"}})
    return agg


# --------------------------------------------------------------------- sweeps

SWEEP_LRS = (0.1, 0.001, 0.0001)
SWEEP_HIDDEN_SYNTH = (10, 20, 30)
SWEEP_HIDDEN_REAL = (20, 30, 40)


def cmd_sweep(cfg: RunConfig, out_root=None, progress=None):
    """Grid over hidden units x learning rate; divergent combos disqualified."""
    say = progress or (lambda msg: None)
    graph, _ann = load_dataset(cfg)
    synthetic = cfg.dataset in SYNTHETIC_IDS
    hidden_grid = SWEEP_HIDDEN_SYNTH if synthetic else SWEEP_HIDDEN_REAL
    entries = []
    for hidden in hidden_grid:
        for lr in SWEEP_LRS:
            trial = dataclasses.replace(
                cfg, hidden_units=hidden, learning_rate=lr,
                # synthetic configs tie the encoding width to the hidden width
                concept_width=hidden if synthetic else cfg.concept_width)
            accs, diverged = [], False
            for seed in trial.seeds:
                split_for_seed(graph, trial, seed)
                model = build_run_model(trial, seed, graph)
                try:
                    result = models.train(model, graph)
                except DivergenceError as exc:
                    say(f"hidden={hidden} lr={lr} seed={seed}: diverged ({exc})")
                    diverged = True
                    break
                accs.append(result.test_accuracy)
            entry = {"hidden_units": hidden, "learning_rate": lr,
                     "diverged": diverged,
                     "test_accuracy": None if diverged else float(np.mean(accs)),
                     "per_seed": None if diverged else accs}
            entries.append(entry)
            if not diverged:
                say(f"hidden={hidden} lr={lr}: mean test {entry['test_accuracy']:.4f}")
    alive = [e for e in entries if not e["diverged"]]
    if not alive:
        raise RuntimeError("every sweep combination diverged")
    best = max(alive, key=lambda e: e["test_accuracy"])
    result = {"dataset": cfg.dataset, "model": cfg.model, "grid": entries,
              "selected": {"hidden_units": best["hidden_units"],
                           "learning_rate": best["learning_rate"],
                           "test_accuracy": best["test_accuracy"]},
              "selection_rule": ("highest mean test accuracy; diverging "
                                 "combinations disqualified")}
    rd = run_dir(cfg, out_root)
    os.makedirs(rd, exist_ok=True)
    with open(os.path.join(rd, "sweep.json"), "w") as fh:
        json.dump(_json_safe(result), fh, indent=1)
    return result


# ------------------------------------------------------------------ reproduce

REPRODUCE_DATASETS = ("ba-shapes", "ba-community", "ba-grid", "tree-cycles",
                      "tree-grid", "mutagenicity")


def cmd_reproduce(out_root=None, include_reddit=False, full=False,
                  datasets=None, seeds=None, epochs=None, progress=None):
    """Train/evaluate/explain/intervene the full benchmark suite; failures recorded."""
    from .config import default_config  # local to avoid cycle at import time

    say = progress or (lambda msg: None)
    names = list(datasets or REPRODUCE_DATASETS)
    if include_reddit and "reddit-binary" not in names:
        names.append("reddit-binary")
    failures = []
    summaries = {}
    for name in names:
        for model_kind in ("cgn", "vanilla"):
            overrides = {"model": model_kind}
            if seeds:
                overrides["seeds"] = tuple(seeds)
            if epochs:
                overrides["epochs"] = int(epochs)
            if full:
                overrides["subsample"] = 0
            try:
                cfg = default_config(name, **overrides)
                say(f"== {name} / {model_kind}")
                cmd_train(cfg, out_root, progress=say)
                rd = run_dir(cfg, out_root)
                cmd_evaluate(rd, out_root=out_root, progress=say)
                if model_kind == "vanilla":
                    cmd_evaluate(rd, baseline="gcexplainer", out_root=out_root,
                                 progress=say)
                else:
                    cmd_explain(checkpoint_path(rd, cfg.seeds[0]), out=rd)
                    cmd_intervene(rd, out_root=out_root, progress=say)
                summaries[(name, model_kind)] = read_report(rd).get("summary", {})
            except Exception as exc:   # suite must continue past bad datasets
                say(f"!! {name}/{model_kind} failed: {exc}")
                failures.append({"dataset": name, "model": model_kind,
                                 "error": f"{type(exc).__name__}: {exc}"})
    table = comparison_table(summaries)
    root = output_root(out_root)
    os.makedirs(root, exist_ok=True)
    bundle = {"datasets": names, "failures": failures,
              "summaries": {f"{d}/{m}": s for (d, m), s in summaries.items()},
              "comparison": table}
    with open(os.path.join(root, "reproduce.json"), "w") as fh:
        json.dump(_json_safe(bundle), fh, indent=1)
    with open(os.path.join(root, "comparison.txt"), "w") as fh:
        fh.write(table)
    return bundle


_TABLE_METRICS = (("accuracy", "acc"), ("completeness", "compl"),
                  ("baseline_completeness", "km-compl"), ("purity", "purity"),
                  ("baseline_purity", "km-purity"),
                  ("formula_accuracy", "f-acc"),
                  ("formula_complexity", "f-terms"),
                  ("intervened_accuracy", "interv"))


def comparison_table(summaries):
    """Plain-text mean [ci] table per dataset/model, built only from summaries."""
    header = ["dataset", "model"] + [short for _, short in _TABLE_METRICS]
    lines = ["  ".join(f"{h:>10}" for h in header)]
    for (dataset, model_kind), summary in sorted(summaries.items()):
        cells = [f"{dataset:>10}", f"{model_kind:>10}"]
        for metric, _short in _TABLE_METRICS:
            block = summary.get(metric)
            cells.append(f"{block['mean']:10.3f}" if block else f"{'-':>10}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
