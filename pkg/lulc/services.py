"""Pipeline stages behind the CLI subcommands; each returns a manifest of what it wrote."""
import json
import logging
import time
from contextlib import contextmanager
from datetime import date
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd

from lulc.cache import RasterCache
from lulc.change import (
    class_proportions,
    classify_map,
    read_class_map,
    render_map,
    replacement_map,
    transition_frame,
    transition_matrix,
    urban_expansion,
    write_class_map,
    write_expansion,
    write_replacement,
)
from lulc.classifiers import SUPERVISED, ForestLearner, make_learner, model_kind
from lulc.classifiers.forest import forest_grid_search
from lulc.classifiers.kmeans import kmeans_fit, map_clusters
from lulc.classifiers.persistence import load_model, save_model
from lulc.config import PipelineConfig, settings
from lulc.dataset import build_labeled_set, read_labels
from lulc.errors import ConfigError, InsufficientDataError, LulcError
from lulc.evaluate import comparison_table, cv_table, evaluate_model, kfold_cv, roc_table, sample_size_sweep
from lulc.indices import append_feature_bands, recipes_from_names
from lulc.plots import plot_confusion, plot_learning_curve
from lulc.preprocess import TimeStack, apply_qa_mask, median_composite, select_window, valid_fraction
from lulc.raster_core import Band, Raster, clip, window_from_bounds, write_geotiff
from lulc.schemas import BAND_ROLES, OLI_WAVELENGTHS, LabeledPoint
from lulc.seeding import config_hash, derive_seed, file_digest
from lulc.synth import generate

logger = logging.getLogger(__name__)

# Global raster cache shared by the stages of one process
raster_cache = RasterCache(maxsize=settings.raster_cache_size)


@contextmanager
def stage(name: str, **counts: Any) -> Iterator[Dict[str, Any]]:
    """
    Time a stage and log `stage=<name> status=ok duration=<s>` plus any
    counts the body adds to the yielded dict. Pipeline errors leaving the
    block are tagged with the stage name.
    """
    info: Dict[str, Any] = dict(counts)
    start = time.perf_counter()
    try:
        yield info
    except LulcError as exc:
        logger.error(f"stage={name} status=error error={type(exc).__name__}")
        raise exc.with_stage(name)
    fields = " ".join(f"{k}={v}" for k, v in info.items())
    logger.info(f"stage={name} status=ok duration={time.perf_counter() - start:.2f}s {fields}".rstrip())


def _write_manifest(directory: Path, name: str, manifest: Dict[str, Any]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")


# ---------------------------------------------------------------------------
# composite
# ---------------------------------------------------------------------------


def _scene_raster(config: PipelineConfig, path: Path) -> Tuple[Raster, Band]:
    """Spectral bands in role order (with OLI wavelengths) and the QA band of one scene."""
    raster = raster_cache.read(path)
    for role in (*BAND_ROLES, "qa"):
        name = config.bands.resolve(role)
        if name not in raster.band_names:
            raise ConfigError(f"band {name!r} not in {path} (bands: {raster.band_names})", field=f"bands.{role}")
    spectral = tuple(
        Band(name=name, values=raster.band(name).values, wavelength_range=OLI_WAVELENGTHS[role])
        for role, name in config.bands.spectral()
    )
    return Raster(bands=spectral, mask=raster.mask, geo=raster.geo), raster.band(config.bands.qa)


def cmd_composite(config: PipelineConfig, threads: int = 1) -> Dict[str, Any]:
    """QA-mask every scene, median-composite per year, append indices, write GeoTIFFs."""
    scenes = config.composite.scenes
    if not scenes:
        raise ConfigError("no scenes configured", field="composite.scenes")
    config.require_files([(f"composite.scenes[{i}].path", s.path) for i, s in enumerate(scenes)])
    recipes = recipes_from_names(config.features.indices)
    out_dir = config.output_dir / "composites"
    manifest: Dict[str, Any] = {"composites": {}, "valid_percent": {}}

    with stage("validate", scenes=len(scenes)):
        loaded = {id(s): _scene_raster(config, s.path) for s in scenes}

    for year in config.composite.years():
        with stage("composite", year=year) as info:
            epochs = []
            for scene in (s for s in scenes if s.year == year):
                spectral, qa = loaded[id(scene)]
                epochs.append((scene.date, apply_qa_mask(spectral, qa, config.composite.qa_spec)))
            stack = TimeStack.from_unordered(epochs)
            if config.composite.window_months is not None:
                stack = select_window(stack, date(year, 1, 1), config.composite.window_months)
                if len(stack) == 0:
                    raise InsufficientDataError(f"no scenes of {year} fall in the first {config.composite.window_months} months")
            composite = append_feature_bands(median_composite(stack), recipes, config.bands)
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / f"{year}.tif"
            write_geotiff(composite, path)
            percent = round(100 * valid_fraction(composite), 3)
            info.update(scenes=len(stack), bands=len(composite.bands), valid_percent=percent)
            manifest["composites"][year] = str(path)
            manifest["valid_percent"][year] = percent
    _write_manifest(config.output_dir, "composite", manifest)
    return manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _training_inputs(config: PipelineConfig) -> Tuple[int, Raster, List[LabeledPoint]]:
    config.require_files([("labels.path", config.labels.path)])
    train_year = config.labels.train_year
    if train_year is None:
        years = config.composite.years() or sorted(config.classify.composites)
        if not years:
            raise ConfigError("cannot tell which composite to train on; set labels.train_year", field="labels.train_year")
        train_year = years[-1]
    composite = config.composite_path(train_year)
    config.require_files([(f"classify.composites.{train_year}", composite)])
    raster = raster_cache.read(composite)
    points = read_labels(config.labels.path, raster.geo, config.scheme)
    return train_year, raster, points


def _write_table(frame: pd.DataFrame, path: Path, index: bool = False) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format="%.10g")
    return str(path)


def _train_kmeans(config: PipelineConfig, raster: Raster, train, model_dir: Path, seed: int) -> Dict[str, Any]:
    """k-means on the (optionally clipped) composite's pixel spectra, then a cluster map."""
    fit_raster = raster
    if config.train.kmeans_clip is not None:
        fit_raster = clip(raster, window_from_bounds(raster.geo, *config.train.kmeans_clip))
    vectors = fit_raster.stack()[fit_raster.mask]
    params = config.train.kmeans
    model = kmeans_fit(vectors, params.k, seed, params.max_iters, params.tol)
    # any k: each cluster takes the majority class of the labeled chips it holds
    model = map_clusters(model, train.center_pixels(), train.labels, len(config.scheme))
    save_model(model, model_dir / "model.lkm1")
    cluster_map = classify_map(raster, model, config.train.chip_size, scheme=config.scheme)
    write_class_map(cluster_map, model_dir / "cluster_map.tif")
    render_map(cluster_map, model_dir / "cluster_map.png")
    pd.DataFrame({"iteration": range(1, len(model.objective_history) + 1), "objective": model.objective_history}).to_csv(
        model_dir / "objective.csv", index=False, float_format="%.10g"
    )
    return {
        "model": str(model_dir / "model.lkm1"),
        "cluster_map": str(model_dir / "cluster_map.png"),
        "iterations": model.n_iter,
        "cluster_classes": model.cluster_classes.tolist(),
    }


def cmd_train(config: PipelineConfig, models: Optional[Sequence[str]] = None, threads: int = 1) -> Dict[str, Any]:
    """Build the labeled chip sets, train the requested models and write their reports."""
    models = list(models or config.train.models)
    scheme = config.scheme
    n_classes = len(scheme)
    with stage("load") as info:
        train_year, raster, points = _training_inputs(config)
        info.update(year=train_year, labels=len(points))
    with stage("dataset") as info:
        train, test = build_labeled_set(
            raster, points,
            per_class_train=config.labels.per_class_train,
            per_class_test=config.labels.per_class_test,
            seed=derive_seed(config.seed, "labels"),
            scheme=scheme,
            chip_size=config.train.chip_size,
            underfull=config.labels.underfull,
            year=train_year,
        )
        info.update(train=len(train), test=len(test))

    out_dir = config.output_dir / "train"
    manifest: Dict[str, Any] = {"year": train_year, "models": {}}
    cv_results = {}
    reports = {}
    for name in models:
        model_dir = out_dir / name
        model_dir.mkdir(parents=True, exist_ok=True)
        seed = derive_seed(config.seed, f"train/{name}")
        with stage(f"train.{name}") as info:
            if name == "kmeans":
                manifest["models"][name] = _train_kmeans(config, raster, train, model_dir, seed)
                info.update(iterations=manifest["models"][name]["iterations"])
                continue
            entry: Dict[str, Any] = {}
            if name == "forest":
                best, grid_table = forest_grid_search(
                    train.flattened(), train.labels, config.train.forest, config.train.folds, seed, threads
                )
                entry["grid"] = _write_table(grid_table, model_dir / "grid.csv")
                learner = ForestLearner(best, n_classes, threads)
            else:
                learner = make_learner(name, n_classes, train_config=config.train.nn, threads=threads)
            result = kfold_cv(train, learner, config.train.folds, seed, threads)
            cv_results[name] = result
            model = result.model
            save_model(model, model_dir / "model.lkm1")
            cm, report, scores = evaluate_model(learner, model, test, n_classes)
            reports[name] = report
            entry.update(
                model=str(model_dir / "model.lkm1"),
                cv=_write_table(cv_table({name: result}), model_dir / "cv.csv", index=True),
                metrics=_write_table(report.to_frame(scheme.names), model_dir / "metrics.csv", index=True),
                confusion_csv=_write_table(cm.to_frame(scheme.names), model_dir / "confusion.csv", index=True),
                confusion=str(plot_confusion(cm, scheme.names, model_dir / "confusion.png", title=name.upper())),
                roc=_write_table(roc_table(test.labels, scores, scheme.names), model_dir / "roc.csv"),
                accuracy=report.overall_accuracy,
            )
            if result.curve is not None:
                entry["curve"] = _write_table(pd.DataFrame(result.curve.rows()), model_dir / "curve.csv")
                entry["curve_png"] = str(plot_learning_curve(result.curve, model_dir / "curve.png", title=name.upper()))
            manifest["models"][name] = entry
            info.update(cv_mean=round(result.mean, 6), test_accuracy=round(report.overall_accuracy, 6))

    if cv_results:
        manifest["cv"] = _write_table(cv_table(cv_results), out_dir / "cv.csv", index=True)
        manifest["comparison"] = _write_table(comparison_table(reports), out_dir / "comparison.csv")
    manifest["stratified_folds"] = True
    _write_manifest(out_dir, "train", manifest)
    return manifest


# ---------------------------------------------------------------------------
# classify / change
# ---------------------------------------------------------------------------


def _years(config: PipelineConfig) -> List[int]:
    years = sorted(set(config.classify.composites) | set(config.composite.years()))
    if not years:
        raise ConfigError("no composite years configured", field="classify.composites")
    return years


def _default_model_path(config: PipelineConfig) -> Path:
    supervised = [m for m in config.train.models if m in SUPERVISED]
    name = supervised[0] if supervised else config.train.models[0]
    return config.output_dir / "train" / name / "model.lkm1"


def cmd_classify(config: PipelineConfig, model_path: Optional[Path] = None, threads: int = 1) -> Dict[str, Any]:
    """One class map per composite year, as GeoTIFF and PNG."""
    model_path = Path(model_path or config.classify.model_path or _default_model_path(config))
    years = _years(config)
    config.require_files([(f"classify.composites.{y}", config.composite_path(y)) for y in years])
    with stage("load_model") as info:
        model = load_model(model_path)
        provenance = {"model_id": file_digest(model_path), "config_hash": config_hash(config)}
        info.update(kind=model_kind(model), model_id=provenance["model_id"])

    out_dir = config.output_dir / "maps"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Any] = {"model": str(model_path), "provenance": provenance, "maps": {}}
    for year in years:
        with stage("classify", year=year) as info:
            raster = raster_cache.read(config.composite_path(year))
            class_map = classify_map(
                raster, model, config.train.chip_size, year=year,
                scheme=config.scheme, provenance=provenance, threads=threads,
            )
            write_class_map(class_map, out_dir / f"{year}.tif")
            render_map(class_map, out_dir / f"{year}.png")
            info.update(pixels=int(class_map.mask.sum()))
            manifest["maps"][year] = str(out_dir / f"{year}.tif")
    _write_manifest(out_dir, "classify", manifest)
    return manifest


def cmd_change(config: PipelineConfig) -> Dict[str, Any]:
    """Urban expansion map, class proportions and transitions from the yearly class maps."""
    maps_dir = config.output_dir / "maps"
    paths = sorted(maps_dir.glob("*.tif"), key=lambda p: p.stem) if maps_dir.is_dir() else []
    paths = [p for p in paths if p.stem.isdigit()]
    if len(paths) < 2:
        raise InsufficientDataError(f"change detection needs at least two class maps in {maps_dir}, found {len(paths)}")
    out_dir = config.output_dir / "change"
    out_dir.mkdir(parents=True, exist_ok=True)
    urban = config.classes.urban_class_id
    with stage("change", maps=len(paths)) as info:
        maps = [read_class_map(p, int(p.stem), config.scheme) for p in paths]
        expansion = urban_expansion(maps, urban)
        write_expansion(expansion, out_dir / "expansion.tif")
        render_map(expansion, out_dir / "expansion.png")
        proportions = class_proportions(maps)
        transitions = {(a.year, b.year): transition_matrix(a, b) for a, b in zip(maps[:-1], maps[1:])}
        replacements = {}
        for a, b in zip(maps[:-1], maps[1:]):
            path = out_dir / f"replacement_{a.year}_{b.year}.tif"
            write_replacement(replacement_map(a, b), a.geo, path)
            replacements[f"{a.year}-{b.year}"] = str(path)
        flickering = int((expansion.flicker > 0).sum())
        manifest = {
            "expansion": str(out_dir / "expansion.tif"),
            "expansion_png": str(out_dir / "expansion.png"),
            "proportions": _write_table(proportions, out_dir / "proportions.csv"),
            "transitions": _write_table(transition_frame(transitions, config.scheme.names), out_dir / "transitions.csv"),
            "expansion_summary": _write_table(expansion.area_by_year(), out_dir / "expansion_summary.csv"),
            "replacements": replacements,
            "urban_class_id": urban,
            "flickering_pixels": flickering,
        }
        info.update(final_urban=int(expansion.final_urban.sum()), flickering=flickering)
    _write_manifest(out_dir, "change", manifest)
    return manifest


# ---------------------------------------------------------------------------
# sweep / synth
# ---------------------------------------------------------------------------


def cmd_sweep(config: PipelineConfig, sizes: Optional[Sequence[int]] = None, threads: int = 1) -> Dict[str, Any]:
    """Sample-size sweep report (one row per size) with a land cover map per size."""
    sizes = list(sizes or config.sweep.sizes)
    with stage("load") as info:
        train_year, raster, points = _training_inputs(config)
        info.update(year=train_year, labels=len(points))
    learner = make_learner(
        config.sweep.model, len(config.scheme),
        train_config=config.train.nn, kmeans_params=config.train.kmeans, threads=threads,
    )
    out_dir = config.output_dir / "sweep"
    with stage("sweep", sizes=len(sizes), model=config.sweep.model):
        table = sample_size_sweep(
            raster, points, learner, sizes,
            seed=derive_seed(config.seed, "sweep"),
            scheme=config.scheme,
            chip_size=config.train.chip_size,
            test_fraction=config.sweep.test_fraction,
            map_dir=out_dir / "maps" if config.sweep.render_maps else None,
            threads=threads,
            year=train_year,
        )
    manifest = {"report": _write_table(table, out_dir / "sweep.csv"), "rows": len(table), "year": train_year}
    _write_manifest(out_dir, "sweep", manifest)
    return manifest


def cmd_synth(config: PipelineConfig, out_dir: Optional[Path] = None) -> Dict[str, Any]:
    """Synthetic scenes, labels, ground truth and a pipeline.toml for them."""
    target = Path(out_dir or config.output_dir)
    with stage("synth", years=len(config.synth.years)) as info:
        manifest = generate(config.synth, config.seed, target)
        info.update(scenes=len(manifest["scenes"]))
    _write_manifest(target, "synth", manifest)
    return manifest
