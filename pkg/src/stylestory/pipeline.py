"""Pipeline stages behind the command line: annotate, stats, synth, train, generate, evaluate.

Each stage reads its inputs, writes its artifacts into one output directory
under a lock file, and finishes with ``manifest.json``. JSON is written with
sorted keys, so identical inputs and seeds give byte-identical files. Input
paths in manifests and asset files are stored relative to the output
directory, which keeps two runs in mirrored directory trees identical too.
"""
from __future__ import annotations

import hashlib
import json
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import torch
from filelock import FileLock

from . import __version__
from .annotator import (TAU1, TAU2, AnnotatedStory, StyleAnnotator, StyleStats, annotate_corpus,
                        fit_annotator, format_distribution_table)
from .corpus import (NameLexicon, SplitConfig, StyleToken, build_vocab, data_path, delexicalize,
                     detokenize, load_corpus, split_corpus, tokenize)
from .errors import ConfigError, FormatError, NoNgrams
from .keywords import EmotionLexicon, KeywordExtractor, LexiconTagger, load_wordlist
from .metrics import (MetricReport, SscConfig, bleu_best_of_styles, distinct_n, lsc, number_metric,
                      ppl_best_of_styles, ssc, train_ssc_classifier)
from .model import ModelConfig, load_checkpoint
from .sampler import SamplerConfig, generate, record_rng
from .synth import SynthConfig, config_to_json, generate_corpus, write_corpus, write_lexicon
from .trainer import TrainConfig, examples_from_annotated, make_example, train

MANIFEST = "manifest.json"
LOCK = ".lock"
GENERATION_STYLES = (StyleToken.EMO, StyleToken.EVE)


class UsageError(Exception):
    """Bad invocation: missing input file, empty input where records are required."""


# ---------------------------------------------------------------- serialization helpers

def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_jsonl(records: Sequence[Mapping], path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid json ({exc.msg})") from None
    return out


def git_blob_sha1(path: str | Path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(f"blob {len(data)}\0".encode())
    h.update(data)
    return h.hexdigest()


def config_sha256(config: Mapping) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


BUNDLED_PREFIX = "bundled:"


def _rel(path: Path, base: Path) -> str:
    """Path as recorded in manifests: bundled data by name, anything else relative to ``base``."""
    path = Path(path).resolve()
    if path.parent == data_path("").resolve():
        return BUNDLED_PREFIX + path.name
    return Path(os.path.relpath(path, base.resolve())).as_posix()


def _unrel(recorded: str, base: Path) -> Path:
    if recorded.startswith(BUNDLED_PREFIX):
        return data_path(recorded[len(BUNDLED_PREFIX):])
    return base / recorded


@contextmanager
def locked_dir(out: str | Path) -> Iterator[Path]:
    """Create ``out`` and hold its lock file for the duration of a stage."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with FileLock(str(out / LOCK)):
        yield out


def write_manifest(out: Path, command: str, config: Mapping, seed: int | None,
                   inputs: Mapping[str, Path], outputs: Sequence[str]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": dict(config),
        "config_sha256": config_sha256(config),
        "inputs": {role: {"path": _rel(p, out), "git_sha1": git_blob_sha1(p)} for role, p in inputs.items()},
        "outputs": {name: git_blob_sha1(out / name) for name in sorted(outputs)},
    }
    dump_json(manifest, out / MANIFEST)


def _from_mapping(cls, obj: Mapping | None, what: str):
    """Build a dataclass from a JSON object; unknown keys and invalid values are ConfigErrors."""
    obj = dict(obj or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{what}: unknown keys {unknown}")
    for key, val in obj.items():
        if isinstance(val, list):
            obj[key] = tuple(val)
    try:
        return cls(**obj)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


COMMANDS = frozenset({"synth", "stats", "annotate", "train", "generate", "evaluate"})


def load_config(path: str | Path | None, command: str) -> dict:
    """Read a JSON config for one command.

    A file whose top-level keys are all command names is a shared multi-stage
    config, and the section for ``command`` is used (empty when absent). Any
    other object is the command's config as is.
    """
    if path is None:
        return {}
    p = require_file(path, "config file")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid json ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: top level must be an object")
    section = obj.get(command, {}) if obj and set(obj) <= COMMANDS else obj
    if not isinstance(section, dict):
        raise ConfigError(f"{p}: section {command!r} must be an object")
    return section


# ---------------------------------------------------------------- annotation assets

@dataclass(frozen=True)
class AnnotateConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    n_banned: int = 10
    tau1: float = TAU1
    tau2: float = TAU2
    delexicalize: bool = True
    format: str | None = None

    def __post_init__(self) -> None:
        if self.n_banned < 0:
            raise ConfigError("n_banned must be >= 0")
        if not 0 <= self.tau2 <= self.tau1 <= 1:
            raise ConfigError("thresholds need 0 <= tau2 <= tau1 <= 1")


@dataclass(frozen=True)
class AssetPaths:
    lexicon: Path
    stopwords: Path | None = None
    tagger_lexicon: Path | None = None
    names_dir: Path | None = None

    def resolved(self) -> dict[str, Path]:
        return {
            "lexicon": self.lexicon,
            "stopwords": self.stopwords or data_path("stopwords.txt"),
            "tagger_lexicon": self.tagger_lexicon or data_path("tagger_lexicon.tsv"),
        }

    def check(self) -> None:
        for role, p in self.resolved().items():
            require_file(p, f"{role.replace('_', ' ')} file")
        if self.names_dir is not None:
            for name in ("male.txt", "female.txt", "neutral.txt"):
                require_file(Path(self.names_dir) / name, "name list")


def _extractor(lexicon: Path, stopwords: Path, tagger_lexicon: Path) -> KeywordExtractor:
    return KeywordExtractor(EmotionLexicon.from_nrc(lexicon), LexiconTagger.from_file(tagger_lexicon),
                            load_wordlist(stopwords))


def _fit(corpus: Path, assets: AssetPaths, cfg: AnnotateConfig, seed: int):
    assets.check()
    stories = load_corpus(corpus, cfg.format)
    if cfg.delexicalize:
        names = NameLexicon.from_dir(assets.names_dir) if assets.names_dir else NameLexicon.bundled()
        stories = [delexicalize(s, names) for s in stories]
    try:
        split_cfg = SplitConfig(cfg.ratios, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    train_s, valid_s, test_s = split_corpus(stories, split_cfg)
    paths = assets.resolved()
    annotator, idf = fit_annotator(train_s, _extractor(**paths), cfg.n_banned, cfg.tau1, cfg.tau2)
    return {"train": train_s, "valid": valid_s, "test": test_s}, annotator, idf, paths


def _write_assets(out: Path, annotator: StyleAnnotator, idf, paths: Mapping[str, Path]) -> list[str]:
    annotator.stats.save(out / "stats.json")
    idf.save(out / "idf.json")
    dump_json({
        "banned_stems": sorted(annotator.extractor.banned_stems),
        "tau1": annotator.tau1,
        "tau2": annotator.tau2,
        "files": {role: {"path": _rel(p, out), "git_sha1": git_blob_sha1(p)} for role, p in paths.items()},
    }, out / "assets.json")
    return ["stats.json", "idf.json", "assets.json"]


def load_annotator(annotation_dir: str | Path) -> StyleAnnotator:
    """Rebuild the frozen annotator from an annotate/stats output directory.

    Lexicon files are found through the recorded relative paths and checked
    against their recorded hashes.
    """
    d = Path(annotation_dir)
    assets = json.loads(require_file(d / "assets.json", "annotation assets").read_text(encoding="utf-8"))
    stats = StyleStats.load(require_file(d / "stats.json", "style statistics"))
    paths = {}
    for role, rec in assets["files"].items():
        p = require_file(_unrel(rec["path"], d), f"{role.replace('_', ' ')} file")
        if git_blob_sha1(p) != rec["git_sha1"]:
            raise FormatError(f"{p}: content changed since annotation (hash mismatch)")
        paths[role] = p
    extractor = _extractor(**paths).with_banned(assets["banned_stems"])
    return StyleAnnotator(extractor, stats, assets["tau1"], assets["tau2"])


def load_annotated(path: str | Path) -> list[AnnotatedStory]:
    p = Path(path)
    if p.is_dir():
        p = p / "annotated.jsonl"
    p = require_file(p, "annotated corpus")
    out = []
    for i, rec in enumerate(read_jsonl(p), start=1):
        try:
            out.append(AnnotatedStory.from_json(rec))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{p}:{i}: {exc}") from None
    return out


# ---------------------------------------------------------------- stages

def run_stats(corpus: str | Path, assets: AssetPaths, out: str | Path, seed: int = 0,
              config: Mapping | None = None) -> Path:
    """Fit IDF, banned stems and style statistics on the training split only."""
    cfg = _from_mapping(AnnotateConfig, config, "stats config")
    corpus = require_file(corpus, "corpus file")
    with locked_dir(out) as out:
        splits, annotator, idf, paths = _fit(corpus, assets, cfg, seed)
        outputs = _write_assets(out, annotator, idf, paths)
        write_manifest(out, "stats", _cfg_json(cfg), seed, {"corpus": corpus, **paths}, outputs)
    return out


def run_annotate(corpus: str | Path, assets: AssetPaths, out: str | Path, seed: int = 0,
                 config: Mapping | None = None) -> Path:
    """Split, fit on train, label every split; writes annotated.jsonl, stats, summary table and manifest."""
    cfg = _from_mapping(AnnotateConfig, config, "annotate config")
    corpus = require_file(corpus, "corpus file")
    with locked_dir(out) as out:
        splits, annotator, idf, paths = _fit(corpus, assets, cfg, seed)
        result = annotate_corpus(splits, annotator)
        write_jsonl([a.to_json() for a in result.all()], out / "annotated.jsonl")
        outputs = ["annotated.jsonl", *_write_assets(out, annotator, idf, paths)]
        (out / "summary.txt").write_text(format_distribution_table(result.summary), encoding="utf-8")
        dump_json(result.summary, out / "summary.json")
        outputs += ["summary.txt", "summary.json"]
        write_manifest(out, "annotate", _cfg_json(cfg), seed, {"corpus": corpus, **paths}, outputs)
    return out


def run_synth(out: str | Path, seed: int = 0, config: Mapping | None = None) -> Path:
    """Write corpus.jsonl (with construction counts) and the matching NRC-layout lexicon.tsv."""
    obj = dict(config or {})
    obj["seed"] = seed
    cfg = SynthConfig.from_json(obj)
    with locked_dir(out) as out:
        write_corpus(generate_corpus(cfg), out / "corpus.jsonl")
        write_lexicon(cfg, out / "lexicon.tsv")
        write_manifest(out, "synth", config_to_json(cfg), seed, {}, ["corpus.jsonl", "lexicon.tsv"])
    return out


def parse_train_config(obj: Mapping | None, seed: int) -> tuple[dict, dict, int, int]:
    obj = dict(obj or {})
    unknown = sorted(set(obj) - {"model", "train", "min_count", "threads"})
    if unknown:
        raise ConfigError(f"train config: unknown keys {unknown}")
    model = dict(obj.get("model", {}))
    if "vocab_size" in model:
        raise ConfigError("model.vocab_size comes from the training vocabulary; remove it")
    tr = dict(obj.get("train", {}))
    tr["seed"] = seed
    min_count = int(obj.get("min_count", 1))
    threads = int(obj.get("threads", 1))
    if min_count < 1 or threads < 1:
        raise ConfigError("min_count and threads must be >= 1")
    return model, tr, min_count, threads


def run_train(annotated: str | Path, out: str | Path, seed: int = 0, config: Mapping | None = None):
    """Train on the ``train`` split of an annotated corpus.

    Writes vocab.json, epoch-<k>.ckpt, report.json and the manifest into the run directory.
    """
    model_obj, train_obj, min_count, threads = parse_train_config(config, seed)
    train_cfg = _from_mapping(TrainConfig, train_obj, "train config")
    src = Path(annotated) / "annotated.jsonl" if Path(annotated).is_dir() else Path(annotated)
    stories = [a for a in load_annotated(src) if a.split in (None, "train")]
    if not stories:
        raise UsageError(f"{src}: no training stories")
    torch.set_num_threads(threads)
    try:
        vocab = build_vocab((a.story for a in stories), min_count)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    model_cfg = _from_mapping(ModelConfig, {**model_obj, "vocab_size": len(vocab)}, "model config")
    examples = examples_from_annotated(stories, vocab, model_cfg.max_len)
    with locked_dir(out) as out:
        vocab.save(out / "vocab.json")
        model, report = train(examples, model_cfg, train_cfg, run_dir=out, vocab=vocab)
        dump_json(report.to_json(), out / "report.json")
        resolved = {"model": asdict(model_cfg), "train": asdict(train_cfg), "min_count": min_count,
                    "threads": threads}
        write_manifest(out, "train", resolved, seed, {"annotated": src},
                       ["vocab.json", report.checkpoint, "report.json"])
    return out, model, report


@dataclass(frozen=True)
class GenerateConfig:
    split: str = "test"
    limit: int | None = None
    k: int = 50
    temperature: float = 0.8
    max_len: int = 120
    threads: int = 1

    def __post_init__(self) -> None:
        if self.limit is not None and self.limit < 0:
            raise ConfigError("limit must be >= 0")


def run_generate(checkpoint: str | Path, annotated: str | Path, out: str | Path, seed: int = 0,
                 config: Mapping | None = None) -> Path:
    """Sample both styles for every beginning of one split; writes generations.jsonl.

    Record ``i`` of the split uses ``record_rng(seed, i, style)`` so any single
    record can be regenerated in isolation.
    """
    cfg = _from_mapping(GenerateConfig, config, "generate config")
    try:
        sampler = SamplerConfig(cfg.k, cfg.temperature, cfg.max_len, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ckpt = require_file(checkpoint, "checkpoint")
    src = Path(annotated) / "annotated.jsonl" if Path(annotated).is_dir() else Path(annotated)
    stories = [a for a in load_annotated(src) if a.split == cfg.split or a.split is None]
    if cfg.limit is not None:
        stories = stories[: cfg.limit]
    torch.set_num_threads(cfg.threads)
    model, vocab, _ = load_checkpoint(ckpt)
    records = []
    for i, a in enumerate(stories):
        leading = vocab.encode(a.story.leading_tokens()[: model.cfg.max_len - 1])
        for style in GENERATION_STYLES:
            ids = generate(model, vocab, style, leading, sampler, record_rng(seed, i, style))
            records.append({"id": a.story.id, "style": style.value, "leading": a.story.leading,
                            "generated": detokenize(vocab.decode(ids)), "seed": seed})
    with locked_dir(out) as out:
        write_jsonl(records, out / "generations.jsonl")
        write_manifest(out, "generate", _cfg_json(cfg), seed, {"checkpoint": ckpt, "annotated": src},
                       ["generations.jsonl"])
    return out


@dataclass(frozen=True)
class EvaluateConfig:
    ssc: bool = False
    ssc_model: SscConfig = field(default_factory=SscConfig)
    threads: int = 1


def _evaluate_config(obj: Mapping | None, seed: int) -> EvaluateConfig:
    obj = dict(obj or {})
    unknown = sorted(set(obj) - {"ssc", "ssc_model", "threads"})
    if unknown:
        raise ConfigError(f"evaluate config: unknown keys {unknown}")
    ssc_cfg = _from_mapping(SscConfig, {**obj.get("ssc_model", {}), "seed": seed}, "ssc_model config")
    return EvaluateConfig(bool(obj.get("ssc", False)), ssc_cfg, int(obj.get("threads", 1)))


def load_generations(path: Path) -> dict[str, dict[StyleToken, list[str]]]:
    """Group generation records by beginning id, keeping file order of first appearance."""
    grouped: dict[str, dict[StyleToken, list[str]]] = {}
    for i, rec in enumerate(read_jsonl(path), start=1):
        try:
            style = StyleToken.parse(rec["style"])
            grouped.setdefault(str(rec["id"]), {})[style] = tokenize(rec["generated"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{i}: {exc}") from None
    return grouped


def _safe_distinct(stories, n):
    try:
        return distinct_n(stories, n)
    except NoNgrams:
        return None


def run_evaluate(generations: str | Path, annotation_dir: str | Path, out: str | Path, seed: int = 0,
                 checkpoint: str | Path | None = None, config: Mapping | None = None) -> Path:
    """Score a generation file; writes metrics.json and metrics.txt.

    References are the gold continuations in the annotation directory. PPL needs
    a checkpoint; SSC-lite trains its classifier on the annotated train split.
    """
    cfg = _evaluate_config(config, seed)
    gen_path = require_file(generations, "generation file")
    grouped = load_generations(gen_path)
    if not grouped:
        raise UsageError(f"{gen_path}: no generation records")
    annotator = load_annotator(annotation_dir)
    ann_path = Path(annotation_dir) / "annotated.jsonl"
    annotated = {a.story.id: a for a in load_annotated(ann_path)}
    missing = [i for i in grouped if i not in annotated]
    if missing:
        raise FormatError(f"{gen_path}: ids without a reference story: {missing[:5]}")
    torch.set_num_threads(cfg.threads)
    ids = list(grouped)
    refs = [annotated[i].story.continuation_tokens() for i in ids]
    b1, b2 = bleu_best_of_styles([(grouped[i].get(StyleToken.EMO), grouped[i].get(StyleToken.EVE)) for i in ids],
                                 refs)
    overall: dict[str, Any] = {"b1": b1, "b2": b2, "ppl": None, "n_beginnings": len(ids)}
    inputs = {"generations": gen_path, "annotated": ann_path}

    vocab = model = None
    if checkpoint is not None:
        ckpt = require_file(checkpoint, "checkpoint")
        inputs["checkpoint"] = ckpt
        model, vocab, _ = load_checkpoint(ckpt)
        examples = [make_example(i, annotated[i].label, annotated[i].story.leading_tokens(),
                                 annotated[i].story.continuation_tokens(), annotated[i].planning_keywords,
                                 vocab, model.cfg.max_len) for i in ids]
        overall["ppl"] = ppl_best_of_styles(model, vocab, examples)

    classifier = classifier_report = None
    if cfg.ssc:
        train_split = [a for a in annotated.values() if a.split == "train"]
        held_out = [a for a in annotated.values() if a.split == "valid"]
        if vocab is None:
            vocab = build_vocab(a.story for a in train_split)
        classifier, classifier_report = train_ssc_classifier(train_split, vocab, cfg.ssc_model, held_out)

    styles = {}
    for style in GENERATION_STYLES:
        stories = [grouped[i][style] for i in ids if style in grouped[i]]
        if not stories:
            continue
        rep = MetricReport(d1=_safe_distinct(stories, 1), d2=_safe_distinct(stories, 2),
                           number=number_metric(stories, style, annotator), lsc=lsc(stories, style, annotator))
        if classifier is not None:
            rep.ssc = ssc(classifier, [vocab.encode(s) for s in stories], style)
        styles[style.name.lower()] = {
            **rep.to_json(),
            "n": len(stories),
            "lsc_opposite": lsc(stories, style.opposite(), annotator),
            "number_opposite": number_metric(stories, style.opposite(), annotator),
        }
    metrics = {"overall": overall, "styles": styles,
               "ssc_classifier": classifier_report.to_json() if classifier_report else None}
    with locked_dir(out) as out:
        dump_json(metrics, out / "metrics.json")
        (out / "metrics.txt").write_text(format_metrics_table(metrics), encoding="utf-8")
        resolved = {"ssc": cfg.ssc, "ssc_model": asdict(cfg.ssc_model), "threads": cfg.threads}
        write_manifest(out, "evaluate", resolved, seed, inputs, ["metrics.json", "metrics.txt"])
    return out


def _fmt(v, pct=False):
    if v is None:
        return "-"
    return f"{100 * v:.1f}" if pct else f"{v:.3f}"


def format_metrics_table(metrics: Mapping) -> str:
    o = metrics["overall"]
    lines = [
        f"PPL   {'-' if o['ppl'] is None else format(o['ppl'], '.2f')}",
        f"B-1   {_fmt(o['b1'], True)}",
        f"B-2   {_fmt(o['b2'], True)}",
        f"beginnings  {o['n_beginnings']}",
        "",
        f"{'style':<6} {'D-1':>6} {'D-2':>6} {'Number':>7} {'LSC':>6} {'SSC':>6} {'LSC(opp)':>9}",
    ]
    for name, r in metrics["styles"].items():
        lines.append(f"{name:<6} {_fmt(r['d1']):>6} {_fmt(r['d2']):>6} {_fmt(r['number']):>7} "
                     f"{_fmt(r['lsc']):>6} {_fmt(r['ssc']):>6} {_fmt(r['lsc_opposite']):>9}")
    clf = metrics.get("ssc_classifier")
    if clf:
        f1 = "  ".join(f"{k} {v:.3f}" for k, v in clf["f1"].items())
        lines += ["", f"SSC classifier: acc {clf['accuracy']:.3f}  majority {clf['majority_baseline']:.3f}  F1 {f1}"]
    return "\n".join(lines) + "\n"


def _cfg_json(cfg) -> dict:
    obj = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in obj.items()}
