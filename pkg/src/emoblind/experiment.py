"""Experiment configuration, the staged pipeline behind the CLI, and report emission.

Configuration is a flat ``key = value`` text file. Keys carry a section
prefix naming the record they set::

    seed = 3
    gen.num_identities = 240
    suppression.outer_iterations = 20
    suppression.train.learning_rate = 0.001
    eval.ablation_fractions = 0.0, 0.5, 0.9

Stage seeds derive from the master seed by fixed offsets (``SEED_OFFSETS``).
Each module further tags its random streams with its own constants, so two
stages sharing an offset still draw independent numbers.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
import time
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import GenConfig, build_verification_pairs, generate_dataset, read_dataset, split_by_identity, \
    write_dataset
from .errors import ConfigError, DataError, UndefinedMetricError
from .fairness import BiasSpec, FairnessConfig, FairnessReport, run_fairness_experiment, table_csv
from .probes import ProbeConfig, centroid_separation, curve_csv, diff_metric, pca_csv, pca_project, \
    train_probe, verification_accuracy, feature_ablation_curve, AblationCurve, PCAResult
from .suppression import Suppressor, SuppressionConfig, load_suppressor, save_suppressor, train_lnl, \
    train_sensitivenets
from .tasks import EMOTION, ETHNICITY, GENDER, get_task

log = logging.getLogger("emoblind")

OUTPUT_ENV = "EMOBLIND_OUTPUT"
DEFAULT_OUTPUT = "emoblind-out"

SEED_OFFSETS = {
    "gen": 0,
    "split": 0,
    "dev_pairs": 0,
    "test_pairs": 1,
    "sn": 0,
    "lnl": 0,
    "probe": 0,
    "ablate": 0,
    "fairness_data": 100,
    "fairness": 0,
}

METHODS = {"sn": "SN", "lnl": "LnL"}
TABLE_ROWS = ("identity", "gender", "ethnicity", "emotion-nn", "emotion-svm", "emotion-rf")
CHANCE = {
    "identity": 50.0,  # verification is a same/different decision
    "gender": GENDER.chance,
    "ethnicity": ETHNICITY.chance,
    "emotion-nn": EMOTION.chance,
    "emotion-svm": EMOTION.chance,
    "emotion-rf": EMOTION.chance,
}
UTILITY_ROWS = ("identity", "gender", "ethnicity")
REPORT_SECTIONS = ("table1", "ablation", "pca", "fairness")


def stage_seed(master: int, stage: str) -> int:
    return master + SEED_OFFSETS[stage]


# ---------------------------------------------------------------------------
# configuration


@dataclass
class EvalConfig:
    split: tuple = (0.7, 0.1, 0.2)  # identity-disjoint train/dev/test
    attribute_split: tuple = (0.8, 0.0, 0.2)  # sample-level split for gender/ethnicity probes
    dev_pairs: int = 400
    test_pairs: int = 1000
    lnl_task: str = "gender"
    ablation_task: str = "emotion"
    ablation_fractions: tuple = (0.0, 0.5, 0.9, 0.99)
    ablation_repeats: int = 5
    fairness_repeats: int = 5
    fairness_identities: int = 700

    def __post_init__(self):
        self.split = tuple(float(f) for f in _as_tuple(self.split))
        self.attribute_split = tuple(float(f) for f in _as_tuple(self.attribute_split))
        self.ablation_fractions = tuple(float(f) for f in _as_tuple(self.ablation_fractions))
        for name in ("split", "attribute_split"):
            v = getattr(self, name)
            if len(v) != 3 or any(f < 0 for f in v) or abs(sum(v) - 1) > 1e-9:
                raise ConfigError(f"eval.{name} must be three non-negative fractions summing to 1")
        if self.split[1] == 0:
            raise ConfigError("eval.split needs a dev share to pick the verification threshold")
        if min(self.dev_pairs, self.test_pairs) < 2:
            raise ConfigError("eval.dev_pairs and eval.test_pairs must be at least 2")
        if self.lnl_task not in ("gender", "ethnicity", "identity"):
            raise ConfigError(f"eval.lnl_task must be gender, ethnicity or identity, not {self.lnl_task!r}")
        get_task(self.ablation_task, 2)
        if min(self.ablation_repeats, self.fairness_repeats, self.fairness_identities) < 1:
            raise ConfigError("eval repeat and identity counts must be positive")


def _as_tuple(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v,)


SECTIONS = {
    "gen": GenConfig,
    "suppression": SuppressionConfig,
    "probe": ProbeConfig,
    "bias": BiasSpec,
    "fairness": FairnessConfig,
    "eval": EvalConfig,
}
# seeds below are derived from the master seed
DERIVED_KEYS = {"gen.seed", "bias.seed"}


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str | None = None
    gen: GenConfig = field(default_factory=GenConfig)
    suppression: SuppressionConfig = field(default_factory=SuppressionConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    bias: BiasSpec = field(default_factory=BiasSpec)
    fairness: FairnessConfig = field(default_factory=FairnessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def gen_config(self) -> GenConfig:
        return replace(self.gen, seed=stage_seed(self.seed, "gen"))

    def fairness_gen_config(self) -> GenConfig:
        main = self.gen_config()
        return replace(main, seed=stage_seed(self.seed, "fairness_data"), mixing_seed=main.resolved_mixing_seed,
                       num_identities=self.eval.fairness_identities)

    def bias_spec(self, **changes) -> BiasSpec:
        return replace(self.bias, seed=stage_seed(self.seed, "fairness"), **changes)


def _default_of(f):
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def config_keys() -> list[str]:
    """Every accepted key, in a stable order."""
    keys = ["seed", "output_dir"]
    for prefix, cls in SECTIONS.items():
        for f in fields(cls):
            key = f"{prefix}.{f.name}"
            default = _default_of(f)
            if is_dataclass(default):
                keys += [f"{key}.{g.name}" for g in fields(default)]
            elif key not in DERIVED_KEYS:
                keys.append(key)
    return keys


def parse_value(text: str):
    """Decode one config value: bool, none, int, float, comma list or bare string."""
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    if "," in s:
        return tuple(parse_value(p) for p in s.split(",") if p.strip())
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s.strip("\"'")


def _coerce(key, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, tuple):
        value = _as_tuple(value)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected comma-separated numbers, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            value = str(value)
    return value


def build_config(entries) -> ExperimentConfig:
    """``entries`` is an iterable of ``(key, raw_text)``; later entries win."""
    known = set(config_keys())
    top, sections = {}, {p: {} for p in SECTIONS}
    for key, raw in entries:
        key = key.strip()
        if key in DERIVED_KEYS:
            raise ConfigError(f"config key {key!r} is derived from the master 'seed'; set 'seed' instead")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        value = parse_value(raw) if isinstance(raw, str) else raw
        if "." not in key:
            if key == "seed":
                value = _coerce(key, 0, value)
            top[key] = value if key != "output_dir" or value is None else str(value)
            continue
        prefix, rest = key.split(".", 1)
        sections[prefix][rest] = value
    built = {}
    for prefix, cls in SECTIONS.items():
        kwargs, nested = {}, {}
        defaults = {f.name: _default_of(f) for f in fields(cls)}
        for rest, value in sections[prefix].items():
            name, _, sub = rest.partition(".")
            if sub:
                sub_default = getattr(defaults[name], sub)
                nested.setdefault(name, {})[sub] = _coerce(f"{prefix}.{rest}", sub_default, value)
            else:
                kwargs[name] = _coerce(f"{prefix}.{rest}", defaults[name], value)
        for name, values in nested.items():
            kwargs[name] = replace(defaults[name], **values)
        try:
            built[prefix] = cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"[{prefix}] {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{prefix}] invalid value: {exc}") from None
    return ExperimentConfig(**top, **built)


def read_config_file(path) -> list[tuple[str, str]]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc.message}") from None
    return list(parser.items("root"))


def parse_overrides(items) -> list[tuple[str, str]]:
    out = []
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value")
        out.append((key.strip(), value))
    return out


def flatten_config(cfg: ExperimentConfig) -> dict:
    """Flat key -> value view (output_dir excluded so runs in different folders compare equal)."""
    flat = {"seed": cfg.seed}
    for prefix in SECTIONS:
        for name, value in asdict(getattr(cfg, prefix)).items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    flat[f"{prefix}.{name}.{sub}"] = v
            elif f"{prefix}.{name}" not in DERIVED_KEYS:
                flat[f"{prefix}.{name}"] = list(value) if isinstance(value, tuple) else value
    return flat


# ---------------------------------------------------------------------------
# metrics


def _plain(obj):
    """Convert numpy containers and scalars into JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


@dataclass
class MetricsReport:
    experiment: dict
    table1: dict | None = None
    comparison: dict | None = None
    training: dict | None = None
    ablation: dict | None = None
    pca: dict | None = None
    fairness: dict | None = None

    def to_json(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"metrics file is not valid JSON: {exc}") from None
        unknown = set(doc) - {f.name for f in fields(cls)}
        if "experiment" not in doc or unknown:
            raise DataError(f"metrics file has unexpected layout (extra keys: {sorted(unknown)})")
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> MetricsReport:
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"no metrics file at {path}; run the experiment stages first") from None


def build_table1(before: dict, after: dict[str, dict]) -> dict:
    """Leakage table: accuracies in percent, Diff per method and row."""
    diff = {}
    for method, acc in after.items():
        diff[method] = {}
        for row in TABLE_ROWS:
            try:
                diff[method][row] = diff_metric(before[row], acc[row], CHANCE[row])
            except UndefinedMetricError:
                diff[method][row] = None
    return {"rows": list(TABLE_ROWS), "chance": dict(CHANCE), "before": dict(before), "after": after, "diff": diff}


def utility_drop(table: dict, method: str) -> float | None:
    """Mean Diff over the utility rows (identity, gender, ethnicity)."""
    vals = [table["diff"][method][r] for r in UTILITY_ROWS]
    return None if any(v is None for v in vals) else float(np.mean(vals))


def compare_methods(table: dict) -> dict | None:
    after = table.get("after", {})
    if not {"SN", "LnL"} <= set(after):
        return None
    sn, lnl = utility_drop(table, "SN"), utility_drop(table, "LnL")
    return {"utility_rows": list(UTILITY_ROWS), "utility_drop": {"SN": sn, "LnL": lnl},
            "lnl_costs_more": None if sn is None or lnl is None else bool(lnl > sn)}


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Splits:
    full: object
    train: object  # identity-disjoint: suppressor training and emotion probes
    dev: object
    test: object
    attr_train: object  # sample-level: gender and ethnicity probes
    attr_test: object
    dev_pairs: list
    test_pairs: list


def make_splits(ds, cfg: ExperimentConfig) -> Splits:
    s = stage_seed(cfg.seed, "split")
    train, dev, test = split_by_identity(ds, cfg.eval.split, s)
    a_train, _, a_test = split_by_identity(ds, cfg.eval.attribute_split, s, mode="sample")
    dp = build_verification_pairs(dev, cfg.eval.dev_pairs, stage_seed(cfg.seed, "dev_pairs"))
    tp = build_verification_pairs(test, cfg.eval.test_pairs, stage_seed(cfg.seed, "test_pairs"))
    return Splits(ds, train, dev, test, a_train, a_test, dp, tp)


def train_method(method: str, splits: Splits, cfg: ExperimentConfig) -> Suppressor:
    if method == "sn":
        return train_sensitivenets(splits.train, splits.train, cfg.suppression, seed=stage_seed(cfg.seed, "sn"))
    if method == "lnl":
        task = get_task(cfg.eval.lnl_task, len(np.unique(splits.train.identity)))
        return train_lnl(splits.train, task, cfg.suppression, seed=stage_seed(cfg.seed, "lnl"))
    raise ConfigError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")


def measure_representation(splits: Splits, cfg: ExperimentConfig, representation=None):
    """Leakage-table accuracies (percent) for one representation, plus the emotion MLP probe."""
    seed = stage_seed(cfg.seed, "probe")
    pc = cfg.probe
    acc = {"identity": 100.0 * verification_accuracy(splits.dev, splits.dev_pairs, splits.test, splits.test_pairs,
                                                     representation)[0]}
    for row, task in (("gender", GENDER), ("ethnicity", ETHNICITY)):
        acc[row] = 100.0 * train_probe(splits.attr_train, splits.attr_test, task, "mlp", representation, pc,
                                       seed).test_accuracy
    probes = {}
    for row, kind in (("emotion-nn", "mlp"), ("emotion-svm", "linear_hinge"), ("emotion-rf", "random_forest")):
        probes[row] = train_probe(splits.train, splits.test, EMOTION, kind, representation, pc, seed)
        acc[row] = 100.0 * probes[row].test_accuracy
    return acc, probes["emotion-nn"]


def emotion_features(probe, X) -> np.ndarray:
    """Hidden-layer activations of an emotion MLP probe (the learned emotion feature space)."""
    return nn.forward(probe.params, X).activations[-2]


def pca_section(splits: Splits, probe, representation=None) -> dict:
    """2-D PCA of the emotion probe's hidden features on the test split, labelled by emotion."""
    X = splits.test.X if representation is None else representation(splits.test.X)
    res = pca_project(emotion_features(probe, X), 2)
    return {"space": "emotion-probe hidden layer", "sample_id": splits.test.sample_id, "label": splits.test.emotion,
            "coords": res.coords, "explained_variance": res.explained_variance,
            "emotion_separation": centroid_separation(res.coords, splits.test.emotion)}


def history_summary(s: Suppressor) -> dict:
    return {"kind": s.kind, "history": s.history}


class Pipeline:
    """Runs stages against one output directory and keeps ``metrics.json`` current."""

    def __init__(self, cfg: ExperimentConfig, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "models").mkdir(exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {self.out} is not writable: {exc.strerror}") from None
        self._splits = None
        self.timings = {}

    # paths
    @property
    def dataset_path(self) -> Path:
        return self.out / "dataset.txt"

    @property
    def metrics_path(self) -> Path:
        return self.out / "metrics.json"

    @property
    def timings_path(self) -> Path:
        return self.out / "timings.json"

    def model_path(self, method) -> Path:
        return self.out / "models" / f"{method}.txt"

    # bookkeeping
    def _metrics(self) -> MetricsReport:
        exp = {"id": f"seed-{self.cfg.seed}", "seed": self.cfg.seed, "config": flatten_config(self.cfg)}
        if self.metrics_path.exists():
            m = MetricsReport.load(self.metrics_path)
            if m.experiment.get("config") != _plain(exp["config"]):
                log.warning("configuration changed since metrics.json was written; sections are replaced as rerun")
            m.experiment = exp
            return m
        return MetricsReport(exp)

    def _update(self, **sections) -> MetricsReport:
        m = self._metrics()
        for k, v in sections.items():
            setattr(m, k, v)
        m.save(self.metrics_path)
        return m

    def _timed(self, stage, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.timings[stage] = round(time.perf_counter() - t0, 3)
        prev = {}
        if self.timings_path.exists():
            try:
                prev = json.loads(self.timings_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                prev = {}
        prev.update(self.timings)
        self.timings_path.write_text(json.dumps(prev, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        log.info("%s finished in %.1f s", stage, self.timings[stage])
        return out

    def splits(self) -> Splits:
        if self._splits is None:
            if not self.dataset_path.exists():
                raise DataError(f"no dataset at {self.dataset_path}; run 'generate' first")
            self._splits = make_splits(read_dataset(self.dataset_path), self.cfg)
        return self._splits

    def models(self) -> dict[str, Suppressor]:
        return {METHODS[m]: load_suppressor(self.model_path(m)) for m in METHODS if self.model_path(m).exists()}

    # stages
    def generate(self):
        def run():
            ds = generate_dataset(self.cfg.gen_config())
            write_dataset(ds, self.dataset_path)
            self._splits = None
            return ds
        return self._timed("generate", run)

    def train(self, method: str) -> Suppressor:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")

        def run():
            s = train_method(method, self.splits(), self.cfg)
            save_suppressor(s, self.model_path(method))
            return s
        s = self._timed(f"train-{method}", run)
        training = dict(self._metrics().training or {})
        training[METHODS[method]] = history_summary(s)
        self._update(training=training)
        return s

    def probe(self) -> MetricsReport:
        def run():
            sp = self.splits()
            models = self.models()
            before, probe = measure_representation(sp, self.cfg)
            pca = {"x": pca_section(sp, probe)}
            after = {}
            for name, s in models.items():
                after[name], probe = measure_representation(sp, self.cfg, s)
                pca[name] = pca_section(sp, probe, s)
            return build_table1(before, after), pca
        table, pca = self._timed("probe", run)
        return self._update(table1=table, comparison=compare_methods(table), pca=pca)

    def ablate(self) -> MetricsReport:
        ev = self.cfg.eval

        def run():
            sp = self.splits()
            task = get_task(ev.ablation_task, len(np.unique(sp.full.identity)))
            train, test = (sp.train, sp.test) if task.name in ("emotion", "identity") else (sp.attr_train, sp.attr_test)
            return feature_ablation_curve(train, test, task, ev.ablation_fractions, ev.ablation_repeats,
                                          self.cfg.probe, seed=stage_seed(self.cfg.seed, "ablate"))
        curve = self._timed("ablate", run)
        return self._update(ablation={"task": curve.task, "fractions": curve.fractions,
                                      "accuracies": curve.accuracies})

    def fairness(self) -> MetricsReport:
        cfg = self.cfg

        def run():
            ds = generate_dataset(cfg.fairness_gen_config())
            reps = {"x": None}
            reps.update(self.models())
            seed = stage_seed(cfg.seed, "fairness")
            rows = run_fairness_experiment(ds, cfg.bias_spec(), reps, cfg.eval.fairness_repeats, cfg.fairness, seed)
            unbiased = cfg.bias_spec(positive_class_smiling_rate=0.5, negative_class_smiling_rate=0.5)
            rows += run_fairness_experiment(ds, unbiased, {"x (unbiased)": None}, cfg.eval.fairness_repeats,
                                            cfg.fairness, seed)
            return rows
        rows = self._timed("fairness", run)
        return self._update(fairness={"rows": [{**r.as_row(), "repeats": r.repeats, "per_repeat": r.per_repeat}
                                               for r in rows]})

    def report(self, sections=None) -> list[Path]:
        return self._timed("report", lambda: emit_report(MetricsReport.load(self.metrics_path), self.out, sections))

    def run_all(self) -> MetricsReport:
        for p in (self.metrics_path, self.timings_path):
            if p.exists():
                p.unlink()
        self.timings = {}
        self.generate()
        self.train("sn")
        self.train("lnl")
        self.probe()
        self.ablate()
        self.fairness()
        self.report()
        return MetricsReport.load(self.metrics_path)


# ---------------------------------------------------------------------------
# report emission


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def table1_csv(table: dict) -> str:
    methods = list(table["after"])
    header = ["task", "chance", "x"]
    for m in methods:
        header += [m, f"{m} diff"]
    lines = [",".join(header)]
    for row in table["rows"]:
        cells = [row, _fmt(table["chance"][row]), _fmt(table["before"][row])]
        for m in methods:
            cells += [_fmt(table["after"][m][row]), _fmt(table["diff"][m][row])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _curve(section: dict) -> AblationCurve:
    return AblationCurve(section["task"], section["fractions"], np.asarray(section["accuracies"], dtype=float))


def ablation_svg(curve: AblationCurve) -> str:
    """Mean accuracy (with std bars) against the suppressed share of features."""
    import io

    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "emoblind", "svg.fonttype": "none"}):
        pts = np.array(curve.points)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(100 * pts[:, 0], 100 * pts[:, 1], yerr=100 * pts[:, 2], marker="o", capsize=3)
        ax.set_xlabel("features suppressed (%)")
        ax.set_ylabel(f"{curve.task} accuracy (%)")
        ax.set_ylim(0, 105)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def emit_report(metrics: MetricsReport, out_dir, sections=None) -> list[Path]:
    """Write tables (CSV) and the ablation chart (SVG) for the requested sections.

    With ``sections=None`` every section present in ``metrics`` is written;
    naming an absent section is a configuration error.
    """
    out = Path(out_dir)
    if sections is None:
        sections = [s for s in REPORT_SECTIONS if getattr(metrics, s) is not None]
    for s in sections:
        if s not in REPORT_SECTIONS:
            raise ConfigError(f"unknown report section {s!r}; expected one of {REPORT_SECTIONS}")
        if getattr(metrics, s) is None:
            raise ConfigError(f"report section {s!r} requested but absent from the metrics file")
    written = []

    def put(name, text):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    if "table1" in sections:
        put("table1.csv", table1_csv(metrics.table1))
    if "ablation" in sections:
        curve = _curve(metrics.ablation)
        put("ablation.csv", curve_csv(curve))
        put("ablation.svg", ablation_svg(curve))
    if "pca" in sections:
        for name, sec in metrics.pca.items():
            res = PCAResult(np.asarray(sec["coords"], dtype=float), np.zeros((2, 0)), np.asarray(sec["explained_variance"]),
                            np.zeros(0))
            put(f"pca_{name.lower()}.csv", pca_csv(res, sec["sample_id"], sec["label"]))
    if "fairness" in sections:
        reports = [FairnessReport(r["accuracy"], r["tpr_smiling"], r["tpr_not_smiling"], r["eq_opp"], r["method"],
                                  r.get("repeats", 1), r.get("per_repeat", [])) for r in metrics.fairness["rows"]]
        put("fairness.csv", table_csv(reports))
    return written


__all__ = [
    "CHANCE", "ExperimentConfig", "EvalConfig", "MetricsReport", "Pipeline", "SEED_OFFSETS",
    "TABLE_ROWS", "build_config", "build_table1", "compare_methods", "config_keys", "emit_report",
    "flatten_config", "make_splits", "measure_representation", "parse_overrides", "parse_value",
    "read_config_file", "stage_seed", "table1_csv", "train_method",
]
