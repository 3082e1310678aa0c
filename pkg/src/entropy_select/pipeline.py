"""End-to-end experiment: baseline, entropy scoring, subset search, comparison.

Every stage reads its inputs from and writes its outputs to one run
directory, so the stages can be invoked one at a time or chained by
:func:`run_pipeline`. Layout::

    manifest.json  timings.json  scores.csv  trace.csv  trace.json
    data/          internal.csv, external.csv, splits.csv
    checkpoints/   baseline.json, entropy.json, entropy_candidate.json
    reports/       metrics.json, validation_predictions.csv
    figures/       loss curves, embeddings, histograms, confusion, sankey
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import bayesopt, classifier, entropy
from .dataset import (
    Dataset, GroupSizes, SplitAssignment, SyntheticConfig, generate_synthetic, load_csv,
    load_splits, save_csv, save_splits, split_by_group,
)
from .stats import (
    ConfusionMatrix, compare_recall, confusion_at_threshold, metric_report, recall_with_ci,
    select_threshold_max_f,
)

log = logging.getLogger(__name__)

MODELS = ("baseline", "entropy")
STAGES = ("generate", "split", "train-baseline", "score", "optimize", "train-entropy",
          "evaluate", "compare", "export")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(run_seed: int, name: str) -> int:
    """Stable 64-bit sub-seed for a named stage."""
    ss = np.random.SeedSequence([int(run_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RunConfig:
    synthetic: SyntheticConfig | None = field(default_factory=SyntheticConfig)
    internal_csv: str | None = None
    external_csv: str | None = None
    # Synthetic external set: a shifted copy of the generator with fresh groups.
    external_groups: int = 100
    external_shift: float = 0.5
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    train: classifier.TrainConfig = field(default_factory=classifier.TrainConfig)
    bo: bayesopt.BOConfig = field(default_factory=bayesopt.BOConfig)
    space: bayesopt.SearchSpace = field(default_factory=bayesopt.SearchSpace)
    histogram_bins: int = 50
    seed: int = 0

    def seeds(self) -> dict[str, int]:
        return {name: derive_seed(self.seed, name) for name in ("data", "external", "split", "train", "bo")}

    def resolved(self) -> RunConfig:
        """Copy with every sub-seed derived from ``seed``."""
        s = self.seeds()
        syn = replace(self.synthetic, seed=s["data"]) if self.synthetic is not None else None
        return replace(
            self,
            synthetic=syn,
            train=replace(self.train, seed=s["train"]),
            bo=replace(self.bo, seed=s["bo"]),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        if d.get("synthetic") is not None:
            syn = dict(d["synthetic"])
            if isinstance(syn.get("samples_per_group"), dict):
                syn["samples_per_group"] = GroupSizes(**syn["samples_per_group"])
            if syn.get("grid_shape") is not None:
                syn["grid_shape"] = tuple(syn["grid_shape"])
            d["synthetic"] = SyntheticConfig(**syn)
        if "train" in d:
            d["train"] = classifier.TrainConfig.from_dict(d["train"])
        if "bo" in d:
            d["bo"] = bayesopt.BOConfig(**d["bo"])
        if "space" in d:
            d["space"] = bayesopt.SearchSpace(**d["space"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- small writers -------------------------------------------------------------

def _write_json(path: Path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _f(x: float) -> str:
    return format(float(x), ".17g")


def export_sankey(cm: ConfusionMatrix) -> list[tuple[str, str, float]]:
    """Confusion flows with each ground-truth class's outflow normalized to one."""
    if cm.positives == 0 or cm.negatives == 0:
        raise ValueError("both ground-truth classes must be present")
    pos, neg = cm.positives, cm.negatives
    return [
        ("normal", "normal", cm.tn / neg),
        ("normal", "abnormal", cm.fp / neg),
        ("abnormal", "normal", cm.fn / pos),
        ("abnormal", "abnormal", cm.tp / pos),
    ]


def sankey_prediction_widths(flows) -> dict[str, float]:
    out: dict[str, float] = {}
    for _, target, w in flows:
        out[target] = out.get(target, 0.0) + w
    return out


# -- the experiment ------------------------------------------------------------

class Experiment:
    """Stage runner bound to a run directory."""

    def __init__(self, config: RunConfig, out):
        self.config = config.resolved()
        self.out = Path(out)
        self.timings: dict[str, float] = {}
        self._cache: dict = {}

    # paths
    def p(self, rel: str) -> Path:
        return self.out / rel

    def _need(self, rel: str) -> Path:
        path = self.p(rel)
        if not path.exists():
            raise FileNotFoundError(f"missing upstream artifact {rel}")
        return path

    # cached loaders
    def internal(self) -> Dataset:
        if "internal" not in self._cache:
            self._cache["internal"] = load_csv(self._need("data/internal.csv"))
        return self._cache["internal"]

    def external(self) -> Dataset | None:
        if "external" not in self._cache:
            path = self.p("data/external.csv")
            self._cache["external"] = load_csv(path) if path.exists() else None
        return self._cache["external"]

    def splits(self) -> SplitAssignment:
        if "splits" not in self._cache:
            self._cache["splits"] = load_splits(self._need("data/splits.csv"), self.config.split_fractions)
        return self._cache["splits"]

    def model(self, name: str) -> classifier.TrainedModel:
        key = f"model:{name}"
        if key not in self._cache:
            self._cache[key] = classifier.load_checkpoint(self._need(f"checkpoints/{name}.json"))
        return self._cache[key]

    def scores(self) -> entropy.EntropyScoreTable:
        return entropy.load_score_table(self._need("scores.csv"))

    def trace(self) -> bayesopt.OptimizationTrace:
        return bayesopt.load_trace(self._need("trace.json"))

    # stages
    def generate(self):
        cfg = self.config
        self.p("data").mkdir(parents=True, exist_ok=True)
        if cfg.internal_csv:
            internal = load_csv(cfg.internal_csv)
            external = load_csv(cfg.external_csv) if cfg.external_csv else None
        else:
            syn = cfg.synthetic
            internal = generate_synthetic(syn)
            ext_cfg = replace(
                syn,
                n_groups=cfg.external_groups,
                duplicate_fraction=0.0,
                mean_shift=syn.mean_shift + cfg.external_shift,
                group_id_offset=int(internal.group_id.max()) + 1,
                sample_id_offset=int(internal.sample_id.max()) + 1,
                seed=cfg.seeds()["external"],
            )
            external = generate_synthetic(ext_cfg) if cfg.external_groups > 0 else None
        if external is not None:
            if np.intersect1d(internal.group_id, external.group_id).size:
                raise ValueError("external group ids overlap the internal set")
            if np.intersect1d(internal.sample_id, external.sample_id).size:
                raise ValueError("external sample ids overlap the internal set")
        save_csv(internal, self.p("data/internal.csv"))
        if external is not None:
            save_csv(external, self.p("data/external.csv"))
        self._cache.clear()

    def split(self):
        assign = split_by_group(self.internal(), self.config.split_fractions, self.config.seeds()["split"])
        save_splits(assign, self.p("data/splits.csv"))
        self._cache.pop("splits", None)

    def train_baseline(self):
        model = classifier.train_two_stage(self.internal(), self.splits(), self.config.train)
        self.p("checkpoints").mkdir(parents=True, exist_ok=True)
        classifier.save_checkpoint(model, self.p("checkpoints/baseline.json"))
        self._cache["model:baseline"] = model

    def score(self):
        table = entropy.score_training_set(self.model("baseline"), self.internal(), self.splits().ids("train"))
        entropy.save_score_table(table, self.p("scores.csv"))

    def make_objective(self, table: entropy.EntropyScoreTable):
        """Objective over proportions, caching by selected count ``m``."""
        data, splits, cfg = self.internal(), self.splits(), self.config.train
        results: dict[int, classifier.TrainedModel] = {}

        def objective(x: float) -> float:
            m = entropy.selected_count(x, len(table))
            if m not in results:
                ids, _, _ = entropy.select_informative(table, x)
                results[m] = classifier.train_two_stage(data, splits, cfg, train_ids=ids)
            return results[m].best.validation_loss

        return objective, results

    def optimize(self):
        table = self.scores()
        objective, results = self.make_objective(table)
        trace = bayesopt.minimize(objective, self.config.space, self.config.bo)
        bayesopt.save_trace(trace, self.p("trace.csv"), self.p("trace.json"))
        best_m = entropy.selected_count(trace.best_x, len(table))
        classifier.save_checkpoint(results[best_m], self.p("checkpoints/entropy_candidate.json"))

    def train_entropy(self):
        trace = self.trace()
        table = self.scores()
        _, _, flagged = entropy.select_informative(table, trace.best_x)
        candidate = self.p("checkpoints/entropy_candidate.json")
        if candidate.exists():
            model = classifier.load_checkpoint(candidate)
        else:
            ids, _, _ = entropy.select_informative(table, trace.best_x)
            model = classifier.train_two_stage(self.internal(), self.splits(), self.config.train, train_ids=ids)
        classifier.save_checkpoint(model, self.p("checkpoints/entropy.json"))
        entropy.save_score_table(flagged, self.p("scores.csv"))
        self._cache["model:entropy"] = model

    def test_sets(self) -> dict[str, Dataset]:
        data, splits, table = self.internal(), self.splits(), self.scores()
        sets = {"internal_test": data.subset(splits.ids("test"))}
        ext = self.external()
        if ext is not None:
            sets["external_test"] = ext
        redundant = np.sort(table.sample_id[~table.informative])
        if len(redundant):
            sets["redundant"] = data.subset(redundant)
        return sets

    def evaluate(self):
        data, splits = self.internal(), self.splits()
        val = data.subset(splits.ids("validation"))
        probs = {name: self.model(name).predict_proba(val.features)[:, 1] for name in MODELS}
        thresholds = {name: select_threshold_max_f(probs[name], val.label) for name in MODELS}
        _write_rows(
            self.p("reports/validation_predictions.csv"),
            ["sample_id", "label", *(f"{m}_prob" for m in MODELS)],
            ([int(s), int(y), *(_f(probs[m][i]) for m in MODELS)] for i, (s, y) in enumerate(zip(val.sample_id, val.label))),
        )
        reports: dict[str, dict] = {}
        for test_name, ds in self.test_sets().items():
            reports[test_name] = {}
            for name in MODELS:
                pp = self.model(name).predict_proba(ds.features)[:, 1]
                cm = confusion_at_threshold(pp, ds.label, thresholds[name])
                reports[test_name][name] = metric_report(cm, thresholds[name]).to_dict()
        for name in MODELS:
            _write_rows(
                self.p(f"figures/confusion_{name}.csv"),
                ["split", "TP", "FP", "TN", "FN"],
                ([t, r[name]["tp"], r[name]["fp"], r[name]["tn"], r[name]["fn"]] for t, r in reports.items()),
            )
        doc = {
            "seeds": self.config.seeds(),
            "thresholds": thresholds,
            "validation_loss": {name: self.model(name).best.validation_loss for name in MODELS},
            "reports": reports,
            "notes": {"redundant": "in-sample for the baseline model, which trained on these samples"},
        }
        _write_json(self.p("reports/metrics.json"), doc)

    def compare(self):
        path = self._need("reports/metrics.json")
        doc = json.loads(path.read_text(encoding="utf-8"))
        comparisons = {}
        for test_name, by_model in doc["reports"].items():
            cms = {m: ConfusionMatrix(by_model[m]["tp"], by_model[m]["fp"], by_model[m]["tn"], by_model[m]["fn"])
                   for m in MODELS}
            if cms["baseline"].positives == 0:
                continue
            r1, ci1 = recall_with_ci(cms["baseline"])
            r2, ci2 = recall_with_ci(cms["entropy"])
            comparisons[f"{test_name}:baseline:entropy"] = compare_recall(r1, ci1, r2, ci2).to_dict()
        doc["comparisons"] = comparisons
        table = self.scores()
        if table.informative.any() and not table.informative.all():
            doc["entropy_gap"] = entropy.entropy_gap_test(table).to_dict()
        _write_json(path, doc)

    def export(self):
        table = self.scores()
        if not table.informative.any():
            raise FileNotFoundError("scores.csv carries no selection; run train-entropy first")
        for name in MODELS:
            classifier.save_loss_curves(self.model(name).curves, self.p(f"figures/loss_{name}.csv"))
        entropy.save_histograms(table, self.config.histogram_bins, self.p("figures/entropy_histogram.csv"))
        for test_name, ds in self.test_sets().items():
            for name in MODELS:
                emb = self.model(name).embed(ds.features)
                _write_rows(
                    self.p(f"figures/embeddings_{name}_{test_name}.csv"),
                    ["sample_id", "label", *(f"e{j}" for j in range(emb.shape[1]))],
                    ([int(s), int(y), *(_f(v) for v in row)] for s, y, row in zip(ds.sample_id, ds.label, emb)),
                )
        metrics = json.loads(self._need("reports/metrics.json").read_text(encoding="utf-8"))
        for test_name, by_model in metrics["reports"].items():
            for name in MODELS:
                r = by_model[name]
                cm = ConfusionMatrix(r["tp"], r["fp"], r["tn"], r["fn"])
                if cm.positives == 0 or cm.negatives == 0:
                    continue
                _write_rows(
                    self.p(f"figures/sankey_{name}_{test_name}.csv"),
                    ["truth", "prediction", "flow"],
                    ((a, b, _f(w)) for a, b, w in export_sankey(cm)),
                )

    def run_stage(self, stage: str):
        fn = getattr(self, stage.replace("-", "_"))
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.timings[stage] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", stage, self.timings[stage])

    # manifest
    def write_manifest(self, completed: list[str], failed_stage: str | None = None) -> dict:
        artifacts = {}
        for path in sorted(self.out.rglob("*")):
            rel = path.relative_to(self.out).as_posix()
            if path.is_file() and rel not in ("manifest.json", "timings.json"):
                artifacts[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        doc = {
            "config": self.config.to_dict(),
            "seeds": self.config.seeds(),
            "stages_completed": completed,
            "complete": failed_stage is None and list(completed) == list(STAGES),
            "failed_stage": failed_stage,
            "artifacts": artifacts,
        }
        if self.p("trace.json").exists():
            trace = self.trace()
            doc["informative_proportion"] = trace.best_x
            doc["best_validation_loss"] = trace.best_y
        if self.p("scores.csv").exists() and self.p("data/splits.csv").exists():
            table = self.scores()
            doc["counts"] = {
                "train": int(len(self.splits().ids("train"))),
                "informative": int(table.informative.sum()),
                "redundant": int((~table.informative).sum()),
            }
        _write_json(self.p("manifest.json"), doc)
        _write_json(self.p("timings.json"), self.timings)
        return doc


def run_pipeline(config: RunConfig, out) -> dict:
    """Run every stage in order and return the manifest.

    On failure the manifest is still written, marked incomplete with the
    failing stage, and :class:`StageError` is raised.
    """
    exp = Experiment(config, out)
    exp.out.mkdir(parents=True, exist_ok=True)
    done: list[str] = []
    for stage in STAGES:
        try:
            exp.run_stage(stage)
        except StageError:
            exp.write_manifest(done, failed_stage=stage)
            raise
        done.append(stage)
    return exp.write_manifest(done)
