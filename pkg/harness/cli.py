# ==============================================================================
# CLI MASKFORGE - mask, trace, rotcheck, synth-attn, sweep
# ==============================================================================
#
# Codes de sortie : 0 succès, 1 entrée/sortie, 2 arguments, 3 format ou validation.

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from api.config import Settings
from engine.attention_io import render_selection, save_attention
from engine.curriculum import run_pipeline, visible_points
from engine.errors import ArgumentError, DataValidationError, FormatError
from engine.geometry import infer_cloud_format, load_cloud, save_cloud, synth_cloud
from harness.studies import (
    SCENARIOS,
    alpha_sweep,
    build_attention,
    build_patches,
    build_trace,
    first_error,
    pipeline_config,
    render_sweep_csv,
    render_trace_csv,
    rotate_cloud,
    rotation_study,
)
from models.schemas import CurriculumConfig, PipelineOptions, PointCloud

logger = logging.getLogger("maskforge")

EXIT_OK = 0
EXIT_IO = 1
EXIT_ARGUMENTS = 2
EXIT_FORMAT = 3


# ==============================================================================
# TYPES D'ARGUMENTS
# ==============================================================================

def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"liste de réels attendue : {text!r}") from None


def _grid(text: str) -> Tuple[int, int, int]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Gx,Gy,Gz attendu : {text!r}") from None
    if len(values) != 3 or min(values) < 1:
        raise argparse.ArgumentTypeError(f"trois entiers ≥ 1 attendus : {text!r}")
    return values


# ==============================================================================
# OUTILS COMMUNS
# ==============================================================================

def _options(args: argparse.Namespace) -> Tuple[PipelineOptions, CurriculumConfig]:
    """Options du pipeline depuis les drapeaux ; toute incohérence est une erreur d'argument"""
    try:
        options = PipelineOptions(
            patches=args.patches,
            knn=args.knn,
            grid=args.grid,
            ratio=args.ratio,
            gamma=args.gamma,
            c_max=args.cmax,
            c_min=args.cmin,
            q_start=args.qstart,
            q_end=args.qend,
            total_iters=args.total_iters,
            seed=args.seed if args.seed is not None else args.settings.SEED,
            synth_bandwidth=args.synth_bandwidth if args.synth_bandwidth is not None else args.settings.SYNTH_BANDWIDTH,
            noise=args.noise,
            strategy=args.strategy,
            cell_scheme=args.cells,
            cell_probs=args.cell_probs,
            em_features=args.em_features,
            em_max_iters=args.em_iters,
            em_tol=args.em_tol,
            variance_floor=args.variance_floor,
            warm_start=args.warm_start,
            rotation=getattr(args, "rotation", "a"),
        )
    except ValidationError as exc:
        raise ArgumentError(first_error(exc)) from None
    return options, pipeline_config(options)


def _input_cloud(args: argparse.Namespace, seed: int) -> PointCloud:
    if args.points is None:
        return synth_cloud(args.settings.SYNTH_POINTS, seed)
    return load_cloud(args.points, infer_cloud_format(args.points))


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="")


def _check_progress(t: int, options: PipelineOptions) -> None:
    if not 0 <= t <= options.total_iters:
        raise ArgumentError(f"--t doit être dans [0, {options.total_iters}], reçu {t}")


# ==============================================================================
# SOUS-COMMANDES
# ==============================================================================

def cmd_mask(args: argparse.Namespace) -> int:
    options, cfg = _options(args)
    _check_progress(args.t, options)
    cloud = rotate_cloud(_input_cloud(args, options.seed), options.rotation, cfg.seeds.rotation)
    patches = build_patches(cloud, options)
    attn = build_attention(patches, options, args.t, args.attention)
    selection = run_pipeline(patches, attn, args.t, cfg).selection
    _emit(render_selection(selection, args.format), args.out)
    if args.visible_out:
        save_cloud(visible_points(cloud, patches, selection), args.visible_out)
    logger.info("masque écrit : %d/%d patches masquées", selection.masked_count, selection.num_patches)
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    options, cfg = _options(args)
    cloud = rotate_cloud(_input_cloud(args, options.seed), options.rotation, cfg.seeds.rotation)
    patches = build_patches(cloud, options)
    attn = build_attention(patches, options, 0, args.attention)
    _emit(render_trace_csv(build_trace(patches, attn, options, args.steps)), args.out)
    return EXIT_OK


def cmd_rotcheck(args: argparse.Namespace) -> int:
    options, _ = _options(args)
    _check_progress(args.t, options)
    workers = args.workers if args.workers is not None else args.settings.MAX_WORKERS
    cloud = load_cloud(args.points, infer_cloud_format(args.points))
    report = rotation_study(cloud, options, args.scenario, args.trials, args.t, workers, args.attention)
    _emit(report.model_dump_json(indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_synth_attn(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else args.settings.SEED
    bandwidth = args.bandwidth if args.bandwidth is not None else args.settings.SYNTH_BANDWIDTH
    try:
        options = PipelineOptions(patches=args.patches, knn=args.knn, seed=seed, synth_bandwidth=bandwidth, noise=args.noise)
    except ValidationError as exc:
        raise ArgumentError(first_error(exc)) from None
    if args.t < 0:
        raise ArgumentError(f"--t doit être positif ou nul, reçu {args.t}")
    cloud = load_cloud(args.points, infer_cloud_format(args.points))
    attn = build_attention(build_patches(cloud, options), options, args.t)
    save_attention(attn, args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    options, cfg = _options(args)
    _check_progress(args.t, options)
    cloud = rotate_cloud(_input_cloud(args, options.seed), options.rotation, cfg.seeds.rotation)
    patches = build_patches(cloud, options)
    attn = build_attention(patches, options, args.t, args.attention)
    _emit(render_sweep_csv(alpha_sweep(patches, attn, options, args.t, args.alphas)), args.out)
    return EXIT_OK


# ==============================================================================
# PARSEUR
# ==============================================================================

def _add_pipeline_flags(parser: argparse.ArgumentParser, settings: Settings, rotation: bool = True) -> None:
    parser.add_argument("--patches", type=int, default=settings.PATCHES, help="Nombre de patches K")
    parser.add_argument("--knn", type=int, default=settings.KNN, help="Points par patch k")
    parser.add_argument("--grid", type=_grid, default=tuple(settings.GRID), help="Granularité Gx,Gy,Gz")
    parser.add_argument("--ratio", type=float, default=settings.RATIO, help="Fraction de patches masquées")
    parser.add_argument("--gamma", type=float, default=settings.GAMMA, help="Exposant du curriculum")
    parser.add_argument("--cmax", type=int, default=settings.C_MAX, help="Composantes EM au départ")
    parser.add_argument("--cmin", type=int, default=settings.C_MIN, help="Composantes EM en fin de curriculum")
    parser.add_argument("--qstart", type=float, default=settings.Q_START, help="Quantile de seuil initial")
    parser.add_argument("--qend", type=float, default=settings.Q_END, help="Quantile de seuil final")
    parser.add_argument("--T", dest="total_iters", type=int, default=settings.TOTAL_ITERS, help="Nombre total d'itérations")
    parser.add_argument("--seed", type=int, default=None, help="Graine maîtresse (défaut : MASKFORGE_SEED, sinon 0)")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--attention", default=None, help="Carte d'attention ATN1")
    source.add_argument("--synth-bandwidth", type=float, default=None, help="Largeur de bande de l'attention synthétique")
    parser.add_argument("--noise", type=float, default=0.0, help="Bruit log-normal de l'attention synthétique")
    parser.add_argument("--strategy", choices=["dual", "grid", "semantic", "random"], default="dual")
    parser.add_argument("--cells", choices=["checkerboard", "uniform-random", "explicit"], default="checkerboard")
    parser.add_argument("--cell-probs", type=_float_list, default=None, help="p0,..,p7 avec --cells explicit")
    parser.add_argument("--em-features", choices=["attention", "affinity"], default="attention")
    parser.add_argument("--em-iters", type=int, default=settings.EM_MAX_ITERS, help="Itérations EM maximales")
    parser.add_argument("--em-tol", type=float, default=settings.EM_TOL, help="Gain minimal de log-vraisemblance")
    parser.add_argument("--variance-floor", type=float, default=settings.VARIANCE_FLOOR, help="Plancher des variances EM")
    parser.add_argument("--warm-start", action="store_true", help="Reprend la partition EM précédente (trace)")
    if rotation:
        parser.add_argument("--rotation", choices=["a", "z", "r"], default="a", help="Pose du nuage avant masquage")
    parser.add_argument("--out", default=None, help="Fichier de sortie (défaut : sortie standard)")


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskforge",
        description="maskforge : masquage à double flux (grille spatiale + composantes sémantiques) de nuages de points",
    )
    parser.set_defaults(settings=settings)
    sub = parser.add_subparsers(dest="command", required=True)

    mask = sub.add_parser("mask", help="Calcule le masque d'une itération t.")
    mask.add_argument("--points", required=True, help="Nuage .xyz (texte) ou .pcf (binaire)")
    mask.add_argument("--t", type=int, default=0, help="Itération courante")
    mask.add_argument("--format", choices=["json", "csv"], default="json")
    mask.add_argument("--visible-out", default=None, help="Écrit le nuage non masqué (XYZ)")
    _add_pipeline_flags(mask, settings)
    mask.set_defaults(func=cmd_mask)

    trace = sub.add_parser("trace", help="Trace α, C, τ et le nombre de patches masquées le long du curriculum.")
    trace.add_argument("--points", default=None, help="Nuage (défaut : sphère synthétique)")
    trace.add_argument("--steps", type=int, default=5, help="Nombre de valeurs de t (≥ 2)")
    _add_pipeline_flags(trace, settings)
    trace.set_defaults(func=cmd_trace)

    rotcheck = sub.add_parser(
        "rotcheck",
        help="Compare les masques d'un nuage sous deux poses.",
        description="Scénarios X/Y : pose du passage de base / pose du passage tourné "
                    "(a = alignée, z = rotation autour de z, r = rotation quelconque). "
                    "Il s'agit de deux passages de masquage, pas d'un protocole d'entraînement/test.",
    )
    rotcheck.add_argument("--points", required=True, help="Nuage .xyz ou .pcf")
    rotcheck.add_argument("--scenario", choices=sorted(SCENARIOS), default="aa")
    rotcheck.add_argument("--trials", type=int, default=10, help="Nombre d'essais (≥ 1)")
    rotcheck.add_argument("--t", type=int, default=0, help="Itération des passages comparés")
    rotcheck.add_argument("--workers", type=int, default=None, help="Essais en parallèle (défaut : MASKFORGE_MAX_WORKERS)")
    _add_pipeline_flags(rotcheck, settings, rotation=False)
    rotcheck.set_defaults(func=cmd_rotcheck)

    synth = sub.add_parser("synth-attn", help="Synthétise une carte d'attention ATN1 depuis un nuage.")
    synth.add_argument("--points", required=True, help="Nuage .xyz ou .pcf")
    synth.add_argument("--patches", type=int, default=settings.PATCHES)
    synth.add_argument("--knn", type=int, default=settings.KNN)
    synth.add_argument("--bandwidth", type=float, default=None, help="Largeur de bande (défaut : MASKFORGE_SYNTH_BANDWIDTH)")
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--t", type=int, default=0, help="Itération inscrite dans l'en-tête")
    synth.add_argument("--out", required=True, help="Fichier ATN1 à écrire")
    synth.set_defaults(func=cmd_synth_attn)

    sweep = sub.add_parser("sweep", help="Scores par patch pour plusieurs α, partition sémantique figée.")
    sweep.add_argument("--points", default=None, help="Nuage (défaut : sphère synthétique)")
    sweep.add_argument("--alphas", type=_float_list, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    sweep.add_argument("--t", type=int, default=0, help="Itération de la partition sémantique")
    _add_pipeline_flags(sweep, settings)
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        settings = Settings()
    except ValidationError as exc:
        print(f"maskforge : configuration invalide : {first_error(exc)}", file=sys.stderr)
        return EXIT_ARGUMENTS
    logging.basicConfig(
        level=settings.LOG_LEVEL.upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s : %(message)s",
    )

    parser = build_parser(settings)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return int(args.func(args))
    except ArgumentError as exc:
        print(f"maskforge {args.command} : {exc}", file=sys.stderr)
        return EXIT_ARGUMENTS
    except (FormatError, DataValidationError, ValidationError) as exc:
        print(f"maskforge {args.command} : {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"maskforge {args.command} : {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
