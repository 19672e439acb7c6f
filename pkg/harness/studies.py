# ==============================================================================
# ÉTUDES - Traces de curriculum, cohérence sous rotation, balayages d'α
# ==============================================================================
#
# Partagé par le CLI et l'API : chaque étude part d'un nuage et d'un jeu
# d'options, et renvoie des modèles pydantic prêts à sérialiser.

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from engine.attention_io import load_attention
from engine.curriculum import curriculum_phase, mix_scores, run_pipeline, select_mask
from engine.errors import ArgumentError, DataValidationError
from engine.geometry import apply_rotation, patchify, sample_rotation
from engine.grid_mask import rank_coordinates
from engine.semantic_mask import synth_attention
from models.schemas import (
    AttentionMap,
    CurriculumConfig,
    CurriculumTrace,
    PatchSet,
    PipelineOptions,
    PointCloud,
    RotationMode,
    RotationStudyReport,
    RotationTrial,
    Scenario,
    SweepRow,
    TraceRow,
    round_half_up,
)
from utils.metrics import component_coherence, jaccard
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

ROTATION_CODES: Dict[str, RotationMode] = {"a": "aligned", "z": "z-axis", "r": "full"}

SCENARIOS: Dict[str, Tuple[Scenario, RotationMode, RotationMode]] = {
    "aa": ("A/A", "aligned", "aligned"),
    "ar": ("A/R", "aligned", "full"),
    "zz": ("Z/Z", "z-axis", "z-axis"),
    "zr": ("Z/R", "z-axis", "full"),
    "rr": ("R/R", "full", "full"),
}

TRACE_COLUMNS = ["t", "alpha", "C", "tau", "masked_count", "phase"]
SWEEP_COLUMNS = ["alpha", "index", "x", "y", "z", "spatial", "semantic", "mixed", "masked"]


# ==============================================================================
# PRÉPARATION
# ==============================================================================

def first_error(exc: ValidationError) -> str:
    """Premier message d'une erreur de validation, préfixé du champ fautif"""
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error.get("loc", ()))
    return f"{location} : {error['msg']}" if location else error["msg"]


def pipeline_config(options: PipelineOptions) -> CurriculumConfig:
    """Configuration du pipeline ; une combinaison d'options invalide est une erreur d'argument"""
    try:
        return options.to_config()
    except ValidationError as exc:
        raise ArgumentError(first_error(exc)) from None


def rotate_cloud(cloud: PointCloud, code: str, seed: int) -> PointCloud:
    """Applique la rotation a (identité), z (autour de z) ou r (SO(3)) tirée de `seed`"""
    if code not in ROTATION_CODES:
        raise ArgumentError(f"code de rotation inconnu : {code}")
    return apply_rotation(cloud, sample_rotation(ROTATION_CODES[code], seed))


def build_patches(cloud: PointCloud, options: PipelineOptions) -> PatchSet:
    return patchify(cloud, options.patches, options.knn)


def build_attention(
    patches: PatchSet,
    options: PipelineOptions,
    t: int = 0,
    attention_path: Optional[Union[str, Path]] = None,
) -> AttentionMap:
    """Attention lue depuis un fichier ATN1, sinon synthétisée depuis les centres"""
    if attention_path is not None:
        attn = load_attention(attention_path)
        if attn.num_patches != patches.num_patches:
            raise DataValidationError(
                f"le fichier d'attention décrit {attn.num_patches} patches, le nuage en donne {patches.num_patches}"
            )
        return attn
    return synth_attention(
        patches,
        options.synth_bandwidth,
        seed=derive_seed(options.seed, t),
        noise=options.noise,
        iteration=t,
    )


def trace_iterations(T: int, steps: int) -> List[int]:
    """steps valeurs de t régulièrement espacées de 0 à T (arrondi au demi supérieur)"""
    if steps < 2:
        raise ArgumentError(f"steps doit être au moins 2, reçu {steps}")
    if T < 1:
        raise ArgumentError(f"T doit être au moins 1, reçu {T}")
    return [(2 * i * T + (steps - 1)) // (2 * (steps - 1)) for i in range(steps)]


# ==============================================================================
# TRACE DU CURRICULUM
# ==============================================================================

def build_trace(patches: PatchSet, attn: AttentionMap, options: PipelineOptions, steps: int) -> CurriculumTrace:
    cfg = pipeline_config(options)
    rows = []
    previous = None
    for t in trace_iterations(cfg.total_iters, steps):
        result = run_pipeline(patches, attn, t, cfg, previous=previous)
        rows.append(TraceRow(
            t=t,
            alpha=result.alpha,
            components=result.components,
            tau=result.tau,
            masked_count=result.selection.masked_count,
            phase=curriculum_phase(result.alpha),
        ))
        previous = result
    return CurriculumTrace(rows=rows)


def render_trace_csv(trace: CurriculumTrace) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace.rows:
        writer.writerow([row.t, repr(row.alpha), row.components, repr(row.tau), row.masked_count, row.phase])
    return buffer.getvalue()


# ==============================================================================
# COHÉRENCE SOUS ROTATION
# ==============================================================================

def _masked_centers(patches: PatchSet, masked: np.ndarray) -> List[int]:
    # indices de points du nuage : comparables d'une pose à l'autre, contrairement à l'ordre FPS
    return sorted(int(i) for i in patches.centers[masked])


def _run_trial(
    cloud: PointCloud,
    options: PipelineOptions,
    modes: Tuple[RotationMode, RotationMode],
    t: int,
    trial: int,
    attention_path: Optional[Union[str, Path]],
) -> RotationTrial:
    cfg = pipeline_config(options)
    semantic_cfg = cfg.model_copy(update={"strategy": "dual"})
    T = cfg.total_iters
    poses = [
        apply_rotation(cloud, sample_rotation(mode, derive_seed(cfg.seeds.rotation, trial, side)))
        for side, mode in enumerate(modes)
    ]

    masked_sets = []
    counts = []
    coherence = []
    patch_sets = []
    for pose in poses:
        patches = build_patches(pose, options)
        attn = build_attention(patches, options, t, attention_path)
        selection = run_pipeline(patches, attn, t, cfg).selection
        masked_sets.append(_masked_centers(patches, selection.masked))
        counts.append(selection.masked_count)
        late = run_pipeline(patches, build_attention(patches, options, T, attention_path), T, semantic_cfg)
        coherence.append(component_coherence(late.clustering.assignment, late.selection.masked))
        patch_sets.append(patches)

    z_rank_stable = None
    if "full" not in modes:
        centers = patch_sets[0].centers
        z_ranks = [rank_coordinates(pose.points[centers]).pos[:, 2] for pose in poses]
        z_rank_stable = bool(np.array_equal(z_ranks[0], z_ranks[1]))

    return RotationTrial(
        trial=trial,
        overlap=jaccard(masked_sets[0], masked_sets[1]),
        coherence=float(np.mean(coherence)),
        base_count=counts[0],
        rotated_count=counts[1],
        z_rank_stable=z_rank_stable,
    )


def rotation_study(
    cloud: PointCloud,
    options: PipelineOptions,
    scenario: str,
    trials: int,
    t: int = 0,
    workers: int = 1,
    attention_path: Optional[Union[str, Path]] = None,
) -> RotationStudyReport:
    """
    Pour chaque essai, masque le nuage sous deux poses (base X, tournée Y)
    avec les mêmes graines de pipeline, puis compare les centres masqués.
    """
    if scenario not in SCENARIOS:
        raise ArgumentError(f"scénario inconnu : {scenario}")
    if trials < 1:
        raise ArgumentError(f"trials doit être au moins 1, reçu {trials}")
    if workers < 1:
        raise ArgumentError(f"workers doit être au moins 1, reçu {workers}")
    label, *modes = SCENARIOS[scenario]
    cfg = pipeline_config(options)

    def trial_runner(trial: int) -> RotationTrial:
        return _run_trial(cloud, options, tuple(modes), t, trial, attention_path)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        details = sorted(pool.map(trial_runner, range(trials)), key=lambda r: r.trial)

    overlaps = np.array([d.overlap for d in details])
    expected = round_half_up(cfg.ratio * options.patches)
    z_checks = [d.z_rank_stable for d in details if d.z_rank_stable is not None]
    logger.info("rotation %s : %d essai(s), recouvrement moyen %.4f", label, trials, overlaps.mean())

    return RotationStudyReport(
        scenario=label,
        trials=trials,
        overlap_mean=float(overlaps.mean()),
        overlap_std=float(overlaps.std()),
        coherence_mean=float(np.mean([d.coherence for d in details])),
        ratio_exact=all(d.base_count == expected and d.rotated_count == expected for d in details),
        z_rank_stable=all(z_checks) if z_checks else None,
        config_hash=cfg.config_hash(),
        details=details,
    )


# ==============================================================================
# BALAYAGE D'ALPHA
# ==============================================================================

def alpha_sweep(patches: PatchSet, attn: AttentionMap, options: PipelineOptions, t: int, alphas: Sequence[float]) -> List[SweepRow]:
    """
    Partition sémantique figée à l'itération t, puis mélange et sélection
    pour chaque α demandé.
    """
    if not alphas:
        raise ArgumentError("au moins une valeur d'alpha est requise")
    cfg = pipeline_config(options).model_copy(update={"strategy": "dual"})
    reference = run_pipeline(patches, attn, t, cfg, alpha_override=1.0)
    selection_seed = reference.selection.provenance.seeds["selection"]

    rows = []
    for a in alphas:
        mixed = mix_scores(reference.spatial, reference.semantic, a)
        selection = select_mask(mixed, cfg.ratio, selection_seed, alpha=a, t=t, total_iters=cfg.total_iters)
        for index, (x, y, z) in enumerate(patches.center_coords.tolist()):
            rows.append(SweepRow(
                alpha=a,
                index=index,
                x=x,
                y=y,
                z=z,
                spatial=float(reference.spatial.scores[index]),
                semantic=float(reference.semantic.scores[index]),
                mixed=float(mixed.scores[index]),
                masked=bool(selection.masked[index]),
            ))
    return rows


def render_sweep_csv(rows: Sequence[SweepRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([
            repr(row.alpha), row.index, repr(row.x), repr(row.y), repr(row.z),
            repr(row.spatial), repr(row.semantic), repr(row.mixed), int(row.masked),
        ])
    return buffer.getvalue()
