"""Dataset variants, shared splits and every evaluation regime of the benchmark.

Artifacts live under one output directory (local path or `s3://` prefix):

    manifests/<variant>.json         dataset manifests
    models/unet_<filter>.pt          reconstruction checkpoints
    embeddings/<backbone>/<variant>.npz (+ .csv)
    tables/, curves/, tsne/          report outputs (see reports.py)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.manifold import TSNE

import config
import storage
from embedding import EmbeddingSet, MinMaxScaler, embed_manifest, fit_minmax, get_backbone, load_embeddings, save_embeddings, export_csv
from errors import BenchError, ContractViolation
from filters import RANDOM_ENHANCEMENT, build_filtered_dataset
from matchers import METRICS, Classifier, distance_matrix, rank1, train_classifier
from metrics import ScoreSet, closed_set_accuracy, compute_eer, gar_at, open_set_sweep, verification_sweep
from reconstructor import UNet, build_model, load_checkpoint, load_pairs, make_pairs, reconstruct_manifest, save_checkpoint, train
from schemas import VARIANT_NAMES, CorpusConfig, DatasetManifest, DETCurve, ExperimentConfig, ReconstructionConfig
from synthetic import generate_synthetic_corpus

logger = logging.getLogger(__name__)

OPEN_SET_HELD_OUT = 58
OPEN_SET_TOTAL = 158
OPEN_SET_OPERATING_POINTS = (0.10, 0.01)
SHADES_BASES = {"shades_recon_leak": "shades_leak", "shades_recon_no_leak": "shades_no_leak"}
AR_VARIANTS = ("dog", "glasses", "shades_leak", "shades_no_leak")


class CorpusLeakError(BenchError):
    """Raised when the reconstruction model was trained on the evaluation corpus."""


# --------------------------------------------------------------------------- #
# Manifests and corpora
# --------------------------------------------------------------------------- #


def manifest_uri(out_dir: str, name: str) -> str:
    return storage.join(out_dir, f"manifests/{name}.json")


def write_manifest(manifest: DatasetManifest, uri: str) -> None:
    storage.write_text(uri, manifest.model_dump_json(indent=2))


def read_manifest(uri: str) -> DatasetManifest:
    return DatasetManifest.model_validate_json(storage.read_text(uri))


def filter_min_images(manifest: DatasetManifest, min_images: int) -> DatasetManifest:
    """Drop identities with fewer than `min_images` records."""
    counts: Dict[str, int] = {}
    for record in manifest.records:
        counts[record.identity] = counts.get(record.identity, 0) + 1
    dropped = sorted(identity for identity, n in counts.items() if n < min_images)
    if dropped:
        logger.warning("identities_dropped", extra={"count": len(dropped), "min_images": min_images})
    records = [r for r in manifest.records if r.identity not in dropped]
    return manifest.model_copy(update={"records": records})


def prepare_corpus(corpus: CorpusConfig, out_dir: str, *, fmt: str = "png") -> DatasetManifest:
    """Synthesise or load the source corpus and apply the minimum-images rule."""
    if corpus.kind == "synthetic":
        manifest, _ = generate_synthetic_corpus(corpus.n_identities, corpus.images_per_identity, corpus.seed, out_dir, fmt=fmt)
    else:
        manifest = read_manifest(corpus.manifest)
    return filter_min_images(manifest, corpus.min_images).model_copy(update={"name": "benchmark"})


# --------------------------------------------------------------------------- #
# Reconstruction models
# --------------------------------------------------------------------------- #


def train_reconstruction_model(recon: ReconstructionConfig, filter_id: str, out_dir: str, seed: int) -> UNet:
    """Train one network on pairs drawn from the reconstruction corpus."""
    work_dir = storage.join(out_dir, f"reconstruction/{filter_id}")
    corpus = prepare_corpus(recon.corpus, work_dir)
    pairs = make_pairs(corpus, filter_id, work_dir)
    model = build_model(recon.unet, seed)
    report = train(model, load_pairs(pairs, recon.unet.input_size), recon.hyper.model_copy(update={"seed": seed}))
    model.trained_on = corpus.source
    logger.info(
        "reconstruction_trained",
        extra={"filter_id": filter_id, "corpus": corpus.source, "val_loss": report.final_val_loss, "steps": report.steps},
    )
    return model


def reconstruction_models(cfg: ExperimentConfig, out_dir: str) -> Dict[str, UNet]:
    """Models for each shades variant that needs one, loaded or trained."""
    models: Dict[str, UNet] = {}
    for recon_variant, base in SHADES_BASES.items():
        if recon_variant not in cfg.variants:
            continue
        if cfg.reconstruction.checkpoint:
            models[base] = load_checkpoint(cfg.reconstruction.checkpoint)
            continue
        uri = storage.join(out_dir, f"models/unet_{base}.pt")
        model = train_reconstruction_model(cfg.reconstruction, base, out_dir, cfg.seeds.train)
        save_checkpoint(model, uri)
        models[base] = model
    return models


def check_leak(source: DatasetManifest, models: Iterable[UNet]) -> None:
    for model in models:
        if model.trained_on and model.trained_on == source.source:
            logger.error("leak_guard_refused", extra={"corpus": source.source})
            raise CorpusLeakError(
                "reconstruction model was trained on the evaluation corpus",
                details={"corpus": source.source},
            )


# --------------------------------------------------------------------------- #
# Variants
# --------------------------------------------------------------------------- #


def build_all_variants(
    source: DatasetManifest,
    recon_models: UNet | Mapping[str, UNet] | None,
    seed: int,
    out_dir: str,
    *,
    names: Sequence[str] = VARIANT_NAMES,
    fmt: str = "png",
) -> Dict[str, DatasetManifest]:
    """Build the requested variants (benchmark first, in variant order) and write their manifests."""
    if isinstance(recon_models, UNet):
        recon_models = {base: recon_models for base in SHADES_BASES.values()}
    recon_models = dict(recon_models or {})
    check_leak(source, recon_models.values())

    variants: Dict[str, DatasetManifest] = {}
    for name in VARIANT_NAMES:
        if name not in names:
            continue
        if name == "benchmark":
            variant = source.model_copy(update={"name": "benchmark"})
        elif name == "instagram":
            variant = build_filtered_dataset(source, RANDOM_ENHANCEMENT, seed, out_dir, name=name, fmt=fmt)
        elif name in AR_VARIANTS:
            variant = build_filtered_dataset(source, name, seed, out_dir, fmt=fmt)
        else:
            base = SHADES_BASES[name]
            if base not in variants:
                variants[base] = build_filtered_dataset(source, base, seed, out_dir, fmt=fmt)
            if base not in recon_models:
                raise ContractViolation(f"variant {name} needs a reconstruction model for {base}")
            variant = reconstruct_manifest(recon_models[base], variants[base], name, out_dir, fmt=fmt)
            variant = variant.model_copy(update={"excluded": variants[base].excluded + variant.excluded})
        variants[name] = variant

    ordered = {name: variants[name] for name in VARIANT_NAMES if name in names}
    for name, manifest in ordered.items():
        write_manifest(manifest, manifest_uri(out_dir, name))
    return ordered


def load_variants(out_dir: str, names: Sequence[str]) -> Dict[str, DatasetManifest]:
    return {name: read_manifest(manifest_uri(out_dir, name)) for name in VARIANT_NAMES if name in names}


# --------------------------------------------------------------------------- #
# Splits and embeddings
# --------------------------------------------------------------------------- #


@dataclass
class Splits:
    """Train/test assignment keyed by image_id, shared by every variant."""

    assignment: Dict[str, str]
    excluded_identities: List[str] = field(default_factory=list)

    def is_train(self, image_id: str) -> bool:
        return self.assignment.get(image_id) == "train"

    def is_test(self, image_id: str) -> bool:
        return self.assignment.get(image_id) == "test"

    def counts(self) -> Tuple[int, int]:
        values = list(self.assignment.values())
        return values.count("train"), values.count("test")


def make_splits(manifest: DatasetManifest, ratio: float, seed: int) -> Splits:
    """Stratified per-identity split of the source images."""
    if not 0 < ratio < 1:
        raise ContractViolation(f"split ratio must lie in (0, 1), got {ratio}")
    by_identity: Dict[str, List[str]] = {}
    for record in manifest.records:
        by_identity.setdefault(record.identity, []).append(record.image_id)

    rng = np.random.default_rng(seed)
    assignment: Dict[str, str] = {}
    excluded: List[str] = []
    for identity in sorted(by_identity):
        image_ids = sorted(by_identity[identity])
        if len(image_ids) < 2:
            logger.warning("identity_excluded_from_split", extra={"identity": identity, "images": len(image_ids)})
            excluded.append(identity)
            continue
        n_train = min(max(int(round(len(image_ids) * ratio)), 1), len(image_ids) - 1)
        order = rng.permutation(len(image_ids))
        for rank, index in enumerate(order):
            assignment[image_ids[index]] = "train" if rank < n_train else "test"
    return Splits(assignment=assignment, excluded_identities=excluded)


def embeddings_uri(out_dir: str, backbone: str, name: str, suffix: str = "npz") -> str:
    return storage.join(out_dir, f"embeddings/{backbone}/{name}.{suffix}")


def embed_variants(
    variants: Mapping[str, DatasetManifest],
    backbone: str,
    out_dir: Optional[str] = None,
) -> Dict[str, EmbeddingSet]:
    embeddings = {}
    for name, manifest in variants.items():
        embeddings[name] = embed_manifest(manifest, backbone)
        if out_dir is not None:
            save_embeddings(embeddings[name], embeddings_uri(out_dir, backbone, name))
            export_csv(embeddings[name], embeddings_uri(out_dir, backbone, name, "csv"))
    return embeddings


def load_variant_embeddings(out_dir: str, backbone: str, names: Sequence[str]) -> Dict[str, EmbeddingSet]:
    return {name: load_embeddings(embeddings_uri(out_dir, backbone, name)) for name in names}


@dataclass
class EvaluationContext:
    config: ExperimentConfig
    source: DatasetManifest
    variants: Dict[str, DatasetManifest]
    embeddings: Dict[str, EmbeddingSet]
    splits: Splits

    @property
    def names(self) -> List[str]:
        return [name for name in VARIANT_NAMES if name in self.embeddings]

    def rows(self, name: str, part: str, identities: Optional[set] = None) -> Tuple[np.ndarray, List[str]]:
        """Vectors and labels of a variant's train or test split."""
        emb = self.embeddings[name]
        keep = [
            i for i, image_id in enumerate(emb.image_ids)
            if self.splits.assignment.get(image_id) == part
            and (identities is None or emb.identities[i] in identities)
        ]
        return take_rows(emb.vectors, keep), [emb.identities[i] for i in keep]


def take_rows(vectors: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Rows `keep` of an (N, D) matrix; an empty selection keeps the width D."""
    return np.asarray(vectors)[np.asarray(keep, dtype=np.intp)]


def build_context(cfg: ExperimentConfig, variants: Dict[str, DatasetManifest], embeddings: Dict[str, EmbeddingSet]) -> EvaluationContext:
    source = variants["benchmark"]
    return EvaluationContext(
        config=cfg,
        source=source,
        variants=variants,
        embeddings=embeddings,
        splits=make_splits(source, cfg.split_ratio, cfg.seeds.split),
    )


def load_context(cfg: ExperimentConfig, out_dir: str) -> EvaluationContext:
    """Context from the manifests and embeddings a previous run wrote."""
    variants = load_variants(out_dir, cfg.variants)
    return build_context(cfg, variants, load_variant_embeddings(out_dir, cfg.backbone, list(variants)))


# --------------------------------------------------------------------------- #
# Classifiers shared by the identification regimes
# --------------------------------------------------------------------------- #


@dataclass
class TrainedClassifier:
    classifier: Classifier
    scaler: MinMaxScaler
    rows: int

    def accuracy(self, vectors: np.ndarray, labels: Sequence[str]) -> float:
        if len(labels) == 0:
            return float("nan")
        predicted, _ = self.classifier.predict(self.scaler.transform(vectors))
        return closed_set_accuracy([p == t for p, t in zip(predicted, labels)]).gar


def accuracy_of(trained: Optional[TrainedClassifier], vectors: np.ndarray, labels: Sequence[str]) -> float:
    """GAR of a classifier from the bank; NaN for a key that could not be trained."""
    return float("nan") if trained is None else trained.accuracy(vectors, labels)


def regime_sources(regime: str, variant: str, names: Sequence[str]) -> Tuple[str, ...]:
    if regime == "benchmark":
        return ("benchmark",)
    if regime == "filter":
        return (variant,)
    return tuple(names)


def train_classifiers(
    ctx: EvaluationContext,
    keys: Iterable[Tuple[str, Tuple[str, ...]]],
    identities: Optional[set] = None,
) -> Dict[Tuple[str, Tuple[str, ...]], Optional[TrainedClassifier]]:
    """Fit one classifier per (kind, training variants) key, concurrently.

    A key whose training rows hold fewer than two identities (for example a
    variant where the detector rejected every image) maps to None.
    """
    keys = list(dict.fromkeys(keys))

    def fit(key):
        kind, sources = key
        parts = [ctx.rows(name, "train", identities) for name in sources]
        labels = [label for _, ls in parts for label in ls]
        if len(set(labels)) < 2:
            logger.warning("classifier_skipped", extra={"kind": kind, "sources": list(sources), "rows": len(labels)})
            return None
        vectors = np.vstack([v for v, ls in parts if ls])
        scaler = fit_minmax(vectors, fitted_on="+".join(sources) + ":train")
        clf = train_classifier(
            scaler.transform(vectors), labels, kind, ctx.config.classifier, ctx.config.seeds.train,
            fitted_on=scaler.fitted_on,
        )
        return TrainedClassifier(classifier=clf, scaler=scaler, rows=len(labels))

    with ThreadPoolExecutor(max_workers=config.get_settings().workers) as pool:
        return dict(zip(keys, pool.map(fit, keys)))


# --------------------------------------------------------------------------- #
# Distance-based matching
# --------------------------------------------------------------------------- #


@dataclass
class Enrolment:
    image_ids: Dict[str, str]
    vectors: np.ndarray
    identities: List[str]
    unenrolled: List[str]
    scaler: MinMaxScaler


def enrol(ctx: EvaluationContext) -> Enrolment:
    """First accepted unfiltered image per identity, scaled on the benchmark train split."""
    bench = ctx.embeddings["benchmark"]
    lookup = bench.index()
    chosen: Dict[str, str] = {}
    for record in ctx.source.records:
        if record.identity not in chosen and record.image_id in lookup:
            chosen[record.identity] = record.image_id
    unenrolled = [i for i in ctx.source.identities() if i not in chosen]
    if unenrolled:
        logger.warning("identities_not_enrolled", extra={"identities": unenrolled})

    train_vectors, _ = ctx.rows("benchmark", "train")
    scaler = fit_minmax(train_vectors, fitted_on="benchmark:train")
    identities = list(chosen)
    vectors = scaler.transform(bench.vectors[[lookup[chosen[i]] for i in identities]])
    return Enrolment(image_ids=chosen, vectors=vectors, identities=identities, unenrolled=unenrolled, scaler=scaler)


def probes_for(ctx: EvaluationContext, name: str, gallery: Enrolment, *, self_match: bool = False) -> Tuple[np.ndarray, List[str]]:
    if self_match:
        return gallery.vectors, list(gallery.identities)
    emb = ctx.embeddings[name]
    enrolled = set(gallery.image_ids.values())
    known = set(gallery.identities)
    keep = [i for i, image_id in enumerate(emb.image_ids) if image_id not in enrolled and emb.identities[i] in known]
    vectors = gallery.scaler.transform(take_rows(emb.vectors, keep))
    return vectors, [emb.identities[i] for i in keep]


def distance_gar(gallery: Enrolment, probes: np.ndarray, labels: Sequence[str], metric: str) -> float:
    if len(labels) == 0:
        return float("nan")
    predicted, _ = rank1(probes, gallery.vectors, gallery.identities, metric)
    return closed_set_accuracy([p == t for p, t in zip(predicted, labels)]).gar


# --------------------------------------------------------------------------- #
# Closed set and cross-filter
# --------------------------------------------------------------------------- #


@dataclass
class ClosedSetResult:
    table: pd.DataFrame
    training_rows: pd.DataFrame


def run_closed_set(ctx: EvaluationContext, *, self_match: bool = False) -> ClosedSetResult:
    """GAR per variant for each distance and each classifier kind x regime."""
    cfg = ctx.config
    names = ctx.names
    gallery = enrol(ctx)
    table = pd.DataFrame(index=pd.Index(names, name="variant"))
    for metric in METRICS:
        table[metric] = [distance_gar(gallery, *probes_for(ctx, name, gallery, self_match=self_match), metric) for name in names]

    keys = {
        (kind, regime, name): (kind, regime_sources(regime, name, names))
        for kind in cfg.classifier_kinds
        for regime in cfg.regimes
        for name in names
    }
    bank = train_classifiers(ctx, keys.values())
    rows = pd.DataFrame(index=pd.Index(names, name="variant"))
    for kind in cfg.classifier_kinds:
        for regime in cfg.regimes:
            column = f"{kind}:{regime}"
            cells, counts = [], []
            for name in names:
                trained = bank[keys[(kind, regime, name)]]
                cells.append(accuracy_of(trained, *ctx.rows(name, "test")))
                counts.append(trained.rows if trained else 0)
            table[column] = cells
            rows[column] = counts
    logger.info("closed_set_done", extra={"variants": len(names), "columns": len(table.columns)})
    return ClosedSetResult(table=table, training_rows=rows)


def run_cross_filter(ctx: EvaluationContext) -> Dict[str, pd.DataFrame]:
    """Train on variant i (plus an `all` row), test on variant j, per classifier kind."""
    names = ctx.names
    keys = [(kind, (name,)) for kind in ctx.config.classifier_kinds for name in names]
    keys += [(kind, tuple(names)) for kind in ctx.config.classifier_kinds]
    bank = train_classifiers(ctx, keys)
    tests = {name: ctx.rows(name, "test") for name in names}

    matrices = {}
    for kind in ctx.config.classifier_kinds:
        rows = {"all": [accuracy_of(bank[(kind, tuple(names))], *tests[j]) for j in names]}
        for i in names:
            rows[i] = [accuracy_of(bank[(kind, (i,))], *tests[j]) for j in names]
        frame = pd.DataFrame.from_dict(rows, orient="index", columns=names)
        frame.index.name = "train"
        matrices[kind] = frame
    return matrices


# --------------------------------------------------------------------------- #
# Open set
# --------------------------------------------------------------------------- #


def default_held_out(n_identities: int) -> int:
    return int(min(max(round(n_identities * OPEN_SET_HELD_OUT / OPEN_SET_TOTAL), 1), max(n_identities - 2, 1)))


@dataclass
class OpenSetResult:
    curve: DETCurve
    held_out: List[str]
    enrolled: List[str]
    closed_set_gar: float
    operating_points: Dict[float, float]
    mated: int
    nonmated: int

    @property
    def rightmost_gar(self) -> float:
        return 1.0 - self.curve.points[0].error_y


def run_open_set(ctx: EvaluationContext) -> OpenSetResult:
    """Margin-scored open-set identification with seeded held-out identities."""
    cfg = ctx.config
    identities = sorted(ctx.source.identities())
    n_held = cfg.open_set_holdout or default_held_out(len(identities))
    if n_held >= len(identities):
        raise ContractViolation(
            "held-out identity count must be below the identity count",
            details={"held_out": n_held, "identities": len(identities)},
        )
    if "one_vs_all_margin" not in cfg.classifier_kinds:
        logger.info("open_set_uses_margin_classifier")
    rng = np.random.default_rng(cfg.seeds.split)
    held_out = sorted(rng.choice(identities, size=n_held, replace=False).tolist())
    enrolled = [i for i in identities if i not in held_out]
    enrolled_set, held_set = set(enrolled), set(held_out)

    names = ctx.names
    key = ("one_vs_all_margin", tuple(names))
    trained = train_classifiers(ctx, [key], identities=enrolled_set)[key]
    if trained is None:
        raise ContractViolation("open-set training rows cover fewer than two enrolled identities")

    mated_parts = [ctx.rows(name, "test", enrolled_set) for name in names]
    mated_vectors = np.vstack([v for v, _ in mated_parts])
    mated_labels = [label for _, ls in mated_parts for label in ls]
    held_vectors, _ = _all_rows(ctx, names, held_set)

    predicted, confidence = trained.classifier.predict(trained.scaler.transform(mated_vectors))
    _, nonmated_conf = trained.classifier.predict(trained.scaler.transform(held_vectors))
    correct = [p == t for p, t in zip(predicted, mated_labels)]
    scores = ScoreSet(
        mated=[(float(s), c) for s, c in zip(confidence, correct)],
        nonmated=[float(s) for s in nonmated_conf],
        polarity="higher",
    )
    curve = open_set_sweep(scores)
    result = OpenSetResult(
        curve=curve,
        held_out=held_out,
        enrolled=enrolled,
        closed_set_gar=closed_set_accuracy(correct).gar,
        operating_points={fpir: gar_at(curve, fpir) for fpir in OPEN_SET_OPERATING_POINTS},
        mated=len(mated_labels),
        nonmated=len(held_vectors),
    )
    logger.info(
        "open_set_done",
        extra={"held_out": n_held, "mated": result.mated, "nonmated": result.nonmated, "rightmost_gar": result.rightmost_gar},
    )
    return result


def _all_rows(ctx: EvaluationContext, names: Sequence[str], identities: set) -> Tuple[np.ndarray, List[str]]:
    vectors, labels = [], []
    for name in names:
        emb = ctx.embeddings[name]
        keep = [i for i, ident in enumerate(emb.identities) if ident in identities]
        vectors.append(take_rows(emb.vectors, keep))
        labels.extend(emb.identities[i] for i in keep)
    return np.vstack(vectors), labels


# --------------------------------------------------------------------------- #
# Verification
# --------------------------------------------------------------------------- #


@dataclass
class VerificationResult:
    table: pd.DataFrame
    curves: Dict[Tuple[str, str], DETCurve]
    unenrolled: List[str]


def verification_scores(gallery: Enrolment, probes: np.ndarray, labels: Sequence[str], metric: str) -> Tuple[np.ndarray, np.ndarray]:
    """Genuine and impostor distances of every probe against every enrolment."""
    distances = distance_matrix(probes, gallery.vectors, metric)
    own = np.array([[g == label for g in gallery.identities] for label in labels], dtype=bool)
    return distances[own], distances[~own]


def run_verification(ctx: EvaluationContext, *, self_pairs: bool = False) -> VerificationResult:
    """EER per variant and metric against the enrolment templates, plus an average row."""
    gallery = enrol(ctx)
    names = ctx.names
    table = pd.DataFrame(index=pd.Index(names, name="variant"), columns=list(METRICS), dtype=float)
    curves: Dict[Tuple[str, str], DETCurve] = {}
    for name in names:
        probes, labels = probes_for(ctx, name, gallery, self_match=self_pairs)
        for metric in METRICS:
            if len(labels) == 0:
                table.loc[name, metric] = float("nan")
                continue
            genuine, impostor = verification_scores(gallery, probes, labels, metric)
            curve = verification_sweep(genuine, impostor, polarity="lower")
            curves[(name, metric)] = curve
            table.loc[name, metric] = compute_eer(curve).eer
    table.loc["average"] = table.mean(axis=0)
    return VerificationResult(table=table, curves=curves, unenrolled=gallery.unenrolled)


# --------------------------------------------------------------------------- #
# t-SNE
# --------------------------------------------------------------------------- #


def project_embeddings_2d(
    vectors: np.ndarray,
    labels: Sequence[str],
    perplexity: float = 30.0,
    seed: int = 0,
    *,
    top_k: int = 5,
) -> pd.DataFrame:
    """2-d t-SNE coordinates; the `top_k` most frequent classes get colour indices."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = len(vectors)
    if n < 5:
        raise ContractViolation("t-SNE needs at least 5 records", details={"records": n})
    if perplexity >= n:
        raise ContractViolation("perplexity must be below the record count", details={"perplexity": perplexity, "records": n})
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        random_state=seed,
        init="pca",
        learning_rate="auto",
        method="exact" if n <= 2000 else "barnes_hut",
    )
    coords = tsne.fit_transform(vectors)
    counts = pd.Series(list(labels)).value_counts()
    ranked = sorted(counts.index, key=lambda label: (-counts[label], label))[:top_k]
    colour = {label: i for i, label in enumerate(ranked)}
    return pd.DataFrame(
        {
            "label": list(labels),
            "x": coords[:, 0],
            "y": coords[:, 1],
            "color_index": [colour.get(label, -1) for label in labels],
        }
    )


# --------------------------------------------------------------------------- #
# Backbone comparison
# --------------------------------------------------------------------------- #


@dataclass
class BackboneComparison:
    table: pd.DataFrame
    open_set: Dict[str, OpenSetResult]


def run_backbone_comparison(
    cfg: ExperimentConfig,
    variants: Dict[str, DatasetManifest],
    *,
    cached: Optional[Dict[str, Dict[str, EmbeddingSet]]] = None,
    out_dir: Optional[str] = None,
) -> BackboneComparison:
    """Per backbone: Train=All one-vs-all GAR and cosine EER per variant, and the open-set run."""
    cached = cached or {}
    rows = []
    open_set: Dict[str, OpenSetResult] = {}
    for backbone in cfg.compare_backbones:
        embeddings = cached.get(backbone) or embed_variants(variants, backbone, out_dir)
        ctx = build_context(cfg, variants, embeddings)
        names = ctx.names
        key = ("one_vs_all_margin", tuple(names))
        trained = train_classifiers(ctx, [key])[key]
        gallery = enrol(ctx)
        info = get_backbone(backbone).info
        for name in names:
            probes, labels = probes_for(ctx, name, gallery)
            eer = float("nan")
            if labels:
                genuine, impostor = verification_scores(gallery, probes, labels, "cosine")
                eer = compute_eer(verification_sweep(genuine, impostor)).eer
            rows.append(
                {
                    "backbone": backbone,
                    "dim": info.dim,
                    "input_size": info.input_size,
                    "variant": name,
                    "gar_one_vs_all_all": accuracy_of(trained, *ctx.rows(name, "test")),
                    "eer_cosine": eer,
                }
            )
        open_set[backbone] = run_open_set(ctx)
    return BackboneComparison(table=pd.DataFrame(rows), open_set=open_set)
