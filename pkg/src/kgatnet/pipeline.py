"""Config-driven orchestration of the end-to-end classification pipeline.

The six stages (preprocess, build, aggregate, embed, train, evaluate) each
read only upstream artifacts and write only their own outputs under the
configured output directory, so any stage can be rerun in isolation.
Existing outputs are skipped unless --force; every stage refreshes a
manifest.json recording the resolved config, input digests, and versions.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
import scipy.sparse as sp

from . import __version__
from .aggregator import (
    TRAITS,
    aggregate_graphs,
    attach_essay_nodes,
    build_feature_matrix,
    build_label_matrix,
    read_aggregated,
    read_labels_csv,
    write_aggregated,
    write_labels_csv,
)
from .errors import ConfigError, DuplicateDocumentId, MissingStageInput
from .evaluation import (
    aggregate_fold_rows,
    confusion_counts,
    k_fold_split,
    metric_row,
    trait_correlations,
    write_long_report,
    write_metric_report,
)
from .gat import (
    TrainConfig,
    load_model,
    predict,
    save_model,
    tensors_from_aggregated,
    train_trait,
    write_history,
)
from .kg_builder import (
    CachingSource,
    NTriplesSource,
    SparqlEndpointSource,
    TripleCache,
    build_document_graph,
    prune_graph,
    read_graph,
    resolve_concepts,
    write_graph,
)
from .preprocess import (
    Document,
    GazetteerRecognizer,
    extract_concepts,
    load_lemma_table,
    load_stopwords,
)
from .rdf2vec import EmbedConfig, read_embeddings, train_embeddings, write_embeddings

log = logging.getLogger(__name__)

STAGES = ("preprocess", "build", "aggregate", "embed", "train", "evaluate")

# doc ids become file names and embedding vocabulary entries, so keep them
# free of whitespace and path separators
_DOC_ID_RE = re.compile(r"[A-Za-z0-9_.-]+")

_CORPUS_HEADER = ["doc_id", "text", *TRAITS]


# --- configuration ---------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    corpus: Path
    dump: Path | None
    endpoint: str | None
    output_dir: Path
    cache_dir: Path
    stopwords: Path | None
    lemmas: Path | None
    gazetteer: Path | None
    seed: int
    protocol: str
    cv_folds: int
    test_fraction: float
    entity_features: str
    predicate_prefixes: tuple[str, ...]
    train: TrainConfig
    embed: EmbedConfig

    def __post_init__(self):
        if (self.dump is None) == (self.endpoint is None):
            raise ConfigError("exactly one of 'dump' and 'endpoint' is required")
        if self.protocol not in ("cv", "split80"):
            raise ConfigError(f"protocol must be 'cv' or 'split80', got {self.protocol!r}")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.entity_features not in ("self", "zero"):
            raise ConfigError("entity_features must be 'self' or 'zero'")

    @property
    def enriched(self) -> bool:
        return self.train.enriched


# key -> (kind, default); paths are resolved against the config file's
# directory, "" marks required keys
_PATH_KEYS = ("corpus", "dump", "output_dir", "cache_dir", "stopwords", "lemmas", "gazetteer")

_KEY_DEFAULTS: dict[str, str | None] = {
    "corpus": None,  # required
    "dump": None,
    "endpoint": None,
    "output_dir": "out",
    "cache_dir": None,  # defaults to <output_dir>/cache
    "stopwords": None,  # bundled list
    "lemmas": None,  # bundled table
    "gazetteer": None,  # no multi-word entities
    "seed": "42",
    "protocol": "cv",
    "cv_folds": "10",
    "test_fraction": "0.2",
    "entity_features": "self",
    "enriched": "false",
    "predicate_prefixes": "",
    "epochs": "50",
    "batch_size": "32",
    "learning_rate": "0.0003",
    "patience": "10",
    "validation_split": "0.1",
    "heads_per_layer": "8",
    "hidden_units": "128",
    "dense_units": "128",
    "attention_layers": "5",
    "weight_decay": "0.0",
    "embed_dim": "500",
    "walk_depth": "5",
    "walks_per_node": "5",
    "window": "5",
    "negatives": "5",
    "embed_epochs": "5",
    "embed_learning_rate": "0.025",
    "embed_min_learning_rate": "0.0001",
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _to_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _to_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _to_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected true/false, got {raw!r}") from None


def parse_config(text: str, base_dir: Path | str = ".") -> PipelineConfig:
    """Parse a flat ``key = value`` config (# comments, blank lines allowed)."""
    base = Path(base_dir)
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, value = key.strip(), value.strip()
        if key not in _KEY_DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    def get(key: str) -> str | None:
        return raw.get(key, _KEY_DEFAULTS[key])

    def path_of(key: str) -> Path | None:
        value = get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    corpus = path_of("corpus")
    if corpus is None:
        raise ConfigError("missing required key 'corpus'")
    output_dir = path_of("output_dir")
    cache_dir = path_of("cache_dir") or output_dir / "cache"
    seed = _to_int("seed", get("seed"))
    prefixes = tuple(p.strip() for p in get("predicate_prefixes").split(",") if p.strip())

    train = TrainConfig(
        epochs=_to_int("epochs", get("epochs")),
        batch_size=_to_int("batch_size", get("batch_size")),
        learning_rate=_to_float("learning_rate", get("learning_rate")),
        patience=_to_int("patience", get("patience")),
        validation_split=_to_float("validation_split", get("validation_split")),
        heads_per_layer=_to_int("heads_per_layer", get("heads_per_layer")),
        hidden_units=_to_int("hidden_units", get("hidden_units")),
        dense_units=_to_int("dense_units", get("dense_units")),
        attention_layers=_to_int("attention_layers", get("attention_layers")),
        weight_decay=_to_float("weight_decay", get("weight_decay")),
        seed=seed,
        enriched=_to_bool("enriched", get("enriched")),
    )
    embed = EmbedConfig(
        dim=_to_int("embed_dim", get("embed_dim")),
        max_depth=_to_int("walk_depth", get("walk_depth")),
        walks_per_node=_to_int("walks_per_node", get("walks_per_node")),
        window=_to_int("window", get("window")),
        negatives=_to_int("negatives", get("negatives")),
        epochs=_to_int("embed_epochs", get("embed_epochs")),
        learning_rate=_to_float("embed_learning_rate", get("embed_learning_rate")),
        min_learning_rate=_to_float("embed_min_learning_rate", get("embed_min_learning_rate")),
        seed=seed,
    )
    return PipelineConfig(
        corpus=corpus,
        dump=path_of("dump"),
        endpoint=get("endpoint"),
        output_dir=output_dir,
        cache_dir=cache_dir,
        stopwords=path_of("stopwords"),
        lemmas=path_of("lemmas"),
        gazetteer=path_of("gazetteer"),
        seed=seed,
        protocol=get("protocol"),
        cv_folds=_to_int("cv_folds", get("cv_folds")),
        test_fraction=_to_float("test_fraction", get("test_fraction")),
        entity_features=get("entity_features"),
        predicate_prefixes=prefixes,
        train=train,
        embed=embed,
    )


def load_config(path: Path | str) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), p.parent)


def with_overrides(cfg: PipelineConfig, seed: int | None = None,
                   enriched: bool | None = None) -> PipelineConfig:
    """Apply CLI overrides; a new seed propagates into train and embed."""
    train, embed = cfg.train, cfg.embed
    if seed is not None:
        train = dataclasses.replace(train, seed=seed)
        embed = dataclasses.replace(embed, seed=seed)
        cfg = dataclasses.replace(cfg, seed=seed)
    if enriched is not None:
        train = dataclasses.replace(train, enriched=enriched)
    return dataclasses.replace(cfg, train=train, embed=embed)


# --- corpus ----------------------------------------------------------------

def load_corpus(path: Path | str) -> list[Document]:
    """Read ``doc_id,text,O,C,E,A,N`` rows; ids must be unique file-safe names."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CORPUS_HEADER:
            raise ConfigError(f"corpus header must be {','.join(_CORPUS_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 7:
                raise ConfigError(f"corpus line {lineno}: expected 7 fields, got {len(row)}")
            doc_id, text = row[0], row[1]
            if not _DOC_ID_RE.fullmatch(doc_id):
                raise ConfigError(f"corpus line {lineno}: bad doc id {doc_id!r}")
            if doc_id in seen:
                raise DuplicateDocumentId(doc_id)
            seen.add(doc_id)
            try:
                bits = tuple(int(x) for x in row[2:7])
            except ValueError:
                raise ConfigError(f"corpus line {lineno}: labels must be 0/1") from None
            if any(b not in (0, 1) for b in bits):
                raise ConfigError(f"corpus line {lineno}: labels must be 0/1")
            docs.append(Document(doc_id, text, bits))
    if not docs:
        raise ConfigError(f"corpus has no documents: {path}")
    return docs


# --- artifact layout --------------------------------------------------------

class Artifacts:
    """Canonical locations of every stage output under one run directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.concepts_dir = self.root / "concepts"
        self.graphs_dir = self.root / "graphs"
        self.aggregate_dir = self.root / "aggregate"
        self.models_dir = self.root / "models"
        self.reports_dir = self.root / "reports"
        self.aggregated = self.aggregate_dir / "graph.txt"
        self.features = self.aggregate_dir / "features.npz"
        self.labels = self.aggregate_dir / "labels.csv"
        self.embeddings = self.root / "embeddings" / "vectors.txt"
        self.splits = self.models_dir / "splits.json"
        self.metrics = self.reports_dir / "metrics.csv"
        self.long = self.reports_dir / "long.csv"
        self.correlations = self.reports_dir / "correlations.csv"
        self.manifest = self.root / "manifest.json"

    def concept_path(self, doc_id: str) -> Path:
        return self.concepts_dir / f"{doc_id}.txt"

    def graph_path(self, doc_id: str) -> Path:
        return self.graphs_dir / f"{doc_id}.txt"

    def model_path(self, fold: int, trait: str) -> Path:
        return self.models_dir / f"fold{fold}_{trait}.npz"

    def history_path(self, fold: int, trait: str) -> Path:
        return self.models_dir / f"history_fold{fold}_{trait}.csv"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingStageInput(f"{path} (run the {produced_by} stage first)")
    return path


def _check_config_paths(cfg: PipelineConfig) -> None:
    for name in ("corpus", "dump", "stopwords", "lemmas", "gazetteer"):
        p = getattr(cfg, name)
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"{name} file not found: {p}")


def _run_jobs(fn, items, jobs: int) -> None:
    if jobs <= 1 or len(items) <= 1:
        for item in items:
            fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        # consume to re-raise the first worker exception
        list(ex.map(fn, items))


def read_concept_file(path: Path | str) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(line.strip() for line in lines if line.strip())


def make_source(cfg: PipelineConfig):
    if cfg.dump is not None:
        inner = NTriplesSource(cfg.dump, cfg.predicate_prefixes)
    else:
        inner = SparqlEndpointSource(cfg.endpoint, predicate_prefixes=cfg.predicate_prefixes)
    return CachingSource(inner, TripleCache(cfg.cache_dir, inner.source_id))


# --- stages ------------------------------------------------------------------

def stage_preprocess(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    corpus = load_corpus(cfg.corpus)
    art = Artifacts(cfg.output_dir)
    art.concepts_dir.mkdir(parents=True, exist_ok=True)
    stop = load_stopwords(cfg.stopwords)
    lemmas = load_lemma_table(cfg.lemmas)
    recognizer = (
        GazetteerRecognizer.from_file(cfg.gazetteer)
        if cfg.gazetteer is not None
        else GazetteerRecognizer(())
    )
    todo = [d for d in corpus if force or not art.concept_path(d.id).exists()]

    def work(doc: Document) -> None:
        concepts = extract_concepts(doc.text, stop, lemmas, recognizer)
        if not concepts:
            log.warning("document %s produced an empty concept set", doc.id)
        body = "\n".join(sorted(concepts))
        art.concept_path(doc.id).write_text(body + "\n" if body else "", encoding="utf-8")

    _run_jobs(work, todo, jobs)
    log.info("preprocess: %d concept sets written, %d already present",
             len(todo), len(corpus) - len(todo))
    return {"documents": len(corpus), "written": len(todo)}


def stage_build(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    corpus = load_corpus(cfg.corpus)
    art = Artifacts(cfg.output_dir)
    art.graphs_dir.mkdir(parents=True, exist_ok=True)
    todo = [d for d in corpus if force or not art.graph_path(d.id).exists()]
    for doc in todo:
        _require(art.concept_path(doc.id), "preprocess")
    source = make_source(cfg) if todo else None

    def work(doc: Document) -> None:
        concepts = resolve_concepts(read_concept_file(art.concept_path(doc.id)), source)
        graph = prune_graph(build_document_graph(concepts, source), concepts)
        write_graph(graph, art.graph_path(doc.id))

    _run_jobs(work, todo, jobs)
    log.info("build: %d graphs written, %d already present",
             len(todo), len(corpus) - len(todo))
    return {"documents": len(corpus), "written": len(todo)}


def stage_aggregate(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    art = Artifacts(cfg.output_dir)
    outputs = (art.aggregated, art.features, art.labels)
    if not force and all(p.exists() for p in outputs):
        log.info("aggregate: outputs present, skipping")
        return {"skipped": True}
    corpus = load_corpus(cfg.corpus)
    graphs = [read_graph(_require(art.graph_path(d.id), "build")) for d in corpus]
    # an essay is linked to every entity that survived into its pruned graph,
    # which carries the source's canonical spellings
    node_sets = [frozenset(g.nodes) for g in graphs]

    entities_only = aggregate_graphs(graphs)
    clash = set(d.id for d in corpus) & set(entities_only.entity_nodes)
    if clash:
        raise ConfigError(f"doc ids collide with entity names: {sorted(clash)[:5]}")
    agg = attach_essay_nodes(entities_only, list(zip(corpus, node_sets)))

    art.aggregate_dir.mkdir(parents=True, exist_ok=True)
    write_aggregated(agg, art.aggregated)
    X = build_feature_matrix(agg, node_sets, cfg.entity_features)
    sp.save_npz(art.features, X)
    labels = build_label_matrix(corpus)
    write_labels_csv([d.id for d in corpus], labels, art.labels)
    log.info("aggregate: %d entities, %d essays, %d features",
             len(agg.entity_nodes), len(agg.essay_nodes), X.shape[1])
    return {"entities": len(agg.entity_nodes), "essays": len(agg.essay_nodes)}


def stage_embed(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    art = Artifacts(cfg.output_dir)
    if not force and art.embeddings.exists():
        log.info("embed: output present, skipping")
        return {"skipped": True}
    agg = read_aggregated(_require(art.aggregated, "aggregate"))
    matrix = train_embeddings(agg, cfg.embed)
    art.embeddings.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(matrix, art.embeddings)
    log.info("embed: %d vectors of dim %d", len(matrix.node_ids), matrix.dim)
    return {"nodes": len(matrix.node_ids), "dim": matrix.dim}


def _make_folds(n_essays: int, cfg: PipelineConfig) -> list[np.ndarray]:
    """Held-out test index sets: k folds under cv, one split under split80."""
    if cfg.protocol == "cv":
        return k_fold_split(n_essays, cfg.cv_folds, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n_essays)
    n_test = max(1, int(round(n_essays * cfg.test_fraction)))
    if n_test >= n_essays:
        raise ConfigError("test_fraction leaves no training essays")
    return [np.sort(perm[:n_test])]


def _load_graph_inputs(cfg: PipelineConfig, art: Artifacts):
    agg = read_aggregated(_require(art.aggregated, "aggregate"))
    tensors = tensors_from_aggregated(agg)
    X = sp.load_npz(_require(art.features, "aggregate"))
    doc_ids, labels = read_labels_csv(_require(art.labels, "aggregate"))
    if tuple(doc_ids) != agg.essay_nodes:
        raise ConfigError("labels.csv order does not match the aggregated graph")
    essay_vecs = None
    if cfg.enriched:
        emb = read_embeddings(_require(art.embeddings, "embed"))
        essay_vecs = emb.rows_for(agg.essay_nodes)
        # unit rows: skip-gram norms drift with walk volume, and unscaled
        # vectors can swamp the attention blocks in the classifier input
        norms = np.linalg.norm(essay_vecs, axis=1, keepdims=True)
        essay_vecs = np.divide(essay_vecs, norms, out=np.zeros_like(essay_vecs),
                               where=norms > 0)
    return agg, tensors, X, labels, essay_vecs


def stage_train(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    art = Artifacts(cfg.output_dir)
    agg, tensors, X, labels, essay_vecs = _load_graph_inputs(cfg, art)
    folds = _make_folds(len(agg.essay_nodes), cfg)
    art.models_dir.mkdir(parents=True, exist_ok=True)

    trained = 0
    for i, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(agg.essay_nodes)), test_idx)
        for j, trait in enumerate(TRAITS):
            model_path = art.model_path(i, trait)
            if not force and model_path.exists():
                continue
            model, history = train_trait(
                tensors, X, labels[:, j], cfg.train,
                train_idx=train_idx, embeddings=essay_vecs,
                seed=[cfg.seed, i, j],
            )
            save_model(model, model_path)
            write_history(history, art.history_path(i, trait))
            trained += 1
    splits = {
        "protocol": cfg.protocol,
        "enriched": cfg.enriched,
        "seed": cfg.seed,
        "doc_ids": list(agg.essay_nodes),
        "folds": [f.tolist() for f in folds],
    }
    art.splits.write_text(json.dumps(splits, indent=2) + "\n", encoding="utf-8")
    log.info("train: %d models fitted, %d already present",
             trained, len(folds) * len(TRAITS) - trained)
    return {"folds": len(folds), "trained": trained}


def _write_correlations(matrix: np.ndarray, path: Path) -> None:
    lines = ["trait," + ",".join(TRAITS)]
    for trait, row in zip(TRAITS, matrix):
        cells = ("" if np.isnan(v) else f"{v:.6f}" for v in row)
        lines.append(trait + "," + ",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def stage_evaluate(cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> dict:
    art = Artifacts(cfg.output_dir)
    # flag consistency comes before the cache check: a skipped stage still
    # refreshes the manifest's config echo, which must not contradict the
    # models the existing reports came from
    splits = json.loads(_require(art.splits, "train").read_text(encoding="utf-8"))
    if splits["enriched"] != cfg.enriched:
        raise ConfigError(
            "models were trained with enriched="
            f"{splits['enriched']}; rerun train or match the flag"
        )
    outputs = (art.metrics, art.long, art.correlations)
    if not force and all(p.exists() for p in outputs):
        log.info("evaluate: reports present, skipping")
        return {"skipped": True}
    agg, tensors, X, labels, essay_vecs = _load_graph_inputs(cfg, art)

    fold_rows: dict[str, list[dict[str, float | None]]] = {t: [] for t in TRAITS}
    for i, test_idx in enumerate(splits["folds"]):
        test_idx = np.asarray(test_idx, dtype=np.int64)
        for j, trait in enumerate(TRAITS):
            model = load_model(_require(art.model_path(i, trait), "train"))
            predicted = predict(model, tensors, X, test_idx, essay_vecs)
            counts = confusion_counts(predicted.tolist(), labels[test_idx, j].tolist())
            fold_rows[trait].append(metric_row(counts))

    per_trait: dict[str, dict[str, float | None]] = {}
    for trait in TRAITS:
        rows = fold_rows[trait]
        if len(rows) == 1:
            per_trait[trait] = rows[0]
        else:
            means = aggregate_fold_rows(rows)
            per_trait[trait] = {m: (v[0] if v is not None else None) for m, v in means.items()}

    art.reports_dir.mkdir(parents=True, exist_ok=True)
    write_metric_report(per_trait, art.metrics)
    write_long_report(fold_rows, art.long)
    _write_correlations(trait_correlations(labels), art.correlations)
    acc = [per_trait[t]["accuracy"] for t in TRAITS]
    log.info("evaluate: accuracy %s", " ".join(
        f"{t}={a:.3f}" if a is not None else f"{t}=n/a" for t, a in zip(TRAITS, acc)))
    return {"folds": len(splits["folds"])}


# --- manifest and dispatch ---------------------------------------------------

def _digest(path: Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_echo(cfg: PipelineConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg), default=str))


def update_manifest(cfg: PipelineConfig, stage: str, info: dict) -> None:
    art = Artifacts(cfg.output_dir)
    data = {}
    if art.manifest.exists():
        data = json.loads(art.manifest.read_text(encoding="utf-8"))
    data["config"] = _config_echo(cfg)
    inputs = {}
    for name in ("corpus", "dump", "stopwords", "lemmas", "gazetteer"):
        p = getattr(cfg, name)
        if p is not None and Path(p).is_file():
            inputs[name] = _digest(p)
    data["inputs"] = inputs
    data["versions"] = {
        "kgatnet": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    entry = dict(info)
    entry["completed"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    data.setdefault("stages", {})[stage] = entry
    art.root.mkdir(parents=True, exist_ok=True)
    art.manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")


_STAGE_FUNCS = {
    "preprocess": stage_preprocess,
    "build": stage_build,
    "aggregate": stage_aggregate,
    "embed": stage_embed,
    "train": stage_train,
    "evaluate": stage_evaluate,
}


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False, jobs: int = 1) -> None:
    """Run one named stage (or 'run-all'), then refresh the manifest."""
    if stage == "run-all":
        for name in STAGES:
            run_stage(name, cfg, force=force, jobs=jobs)
        return
    if stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    _check_config_paths(cfg)
    info = _STAGE_FUNCS[stage](cfg, force=force, jobs=jobs)
    update_manifest(cfg, stage, info)
