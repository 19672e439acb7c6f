# ==============================================================================
# CURRICULUM - Pondération dynamique des deux flux et sélection du masque
# ==============================================================================

import logging
from typing import Dict, Optional

import numpy as np

from engine.errors import ArgumentError, DegenerateSelectionError
from engine.grid_mask import grid_coordinates, grid_scores, make_cell_probs, rank_coordinates
from engine.semantic_mask import affinity_graph, component_count, em_cluster, semantic_scores, threshold_schedule
from models.schemas import (
    AttentionMap,
    CurriculumConfig,
    MaskScores,
    MaskSelection,
    Phase,
    PatchSet,
    PipelineResult,
    PointCloud,
    Provenance,
    SeedBundle,
    round_half_up,
)
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

# amplitude du bruit de départage : n'intervient qu'entre scores strictement égaux
TIE_JITTER = 1e-13

EARLY_PHASE_END = 0.25
LATE_PHASE_START = 0.75


def alpha(t: float, T: int, gamma: float = 2.0) -> float:
    """α(t) = (t/T)^γ"""
    if T < 1:
        raise ArgumentError(f"T doit être au moins 1, reçu {T}")
    if not 0 <= t <= T:
        raise ArgumentError(f"t doit être dans [0, {T}], reçu {t}")
    if not gamma > 0.0:
        raise ArgumentError(f"gamma doit être > 0, reçu {gamma}")
    return float((t / T) ** gamma)


def curriculum_phase(value: float) -> Phase:
    if value < EARLY_PHASE_END:
        return "early"
    if value > LATE_PHASE_START:
        return "late"
    return "transition"


def mix_scores(spatial: MaskScores, semantic: MaskScores, alpha: float) -> MaskScores:
    """P_i = (1 − α)·spatial_i + α·semantic_i"""
    if spatial.num_patches != semantic.num_patches:
        raise ArgumentError(f"flux de tailles différentes : {spatial.num_patches} et {semantic.num_patches}")
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha doit être dans [0, 1], reçu {alpha}")
    s, m = spatial.scores, semantic.scores
    mixed = (1.0 - alpha) * s + alpha * m
    # l'arrondi flottant ne doit pas sortir de l'intervalle [min, max] des deux flux
    mixed = np.clip(mixed, np.minimum(s, m), np.maximum(s, m))
    return MaskScores(scores=mixed, stream="mixed")


def random_scores(K: int, seed: int = 0) -> MaskScores:
    """Scores uniformes i.i.d. (masquage aléatoire de référence)"""
    if K < 1:
        raise ArgumentError("K doit être au moins 1")
    return MaskScores(scores=make_rng(seed).random(K), stream="random")


def select_mask(
    mixed: MaskScores,
    ratio: float,
    seed: int = 0,
    alpha: Optional[float] = None,
    t: Optional[int] = None,
    total_iters: Optional[int] = None,
    provenance: Optional[Provenance] = None,
) -> MaskSelection:
    """
    Masque les round(ratio·K) patches de plus haut score.

    Les égalités sont départagées par un bruit uniforme tiré de `seed`,
    puis par le plus petit indice. Les scores ne sont pas modifiés.
    """
    if not 0.0 < ratio < 1.0:
        raise ArgumentError(f"le ratio doit être dans ]0, 1[, reçu {ratio}")
    K = mixed.num_patches
    count = round_half_up(ratio * K)
    if count == 0 or count == K:
        raise DegenerateSelectionError(f"ratio {ratio} dégénéré pour K={K} : {count} patch(es) masquée(s)")

    jitter = make_rng(seed).random(K) * TIE_JITTER
    order = np.lexsort((np.arange(K), -jitter, -mixed.scores))
    masked = np.zeros(K, dtype=bool)
    masked[order[:count]] = True
    return MaskSelection(
        masked=masked,
        masked_count=count,
        ratio=ratio,
        scores=mixed.scores,
        alpha=alpha,
        t=t,
        total_iters=total_iters,
        provenance=provenance,
    )


def visible_points(cloud: PointCloud, patches: PatchSet, selection: MaskSelection) -> PointCloud:
    """Nuage non masqué : union des voisinages des patches visibles, indices croissants"""
    if cloud.size != patches.source_size:
        raise ArgumentError("le nuage ne correspond pas aux patches")
    if selection.num_patches != patches.num_patches:
        raise ArgumentError("la sélection ne correspond pas aux patches")
    kept = np.unique(patches.neighbors[~selection.masked].ravel())
    return PointCloud(points=cloud.points[kept])


# ==============================================================================
# PIPELINE À DOUBLE FLUX
# ==============================================================================

def iteration_seeds(seeds: SeedBundle, t: int) -> Dict[str, int]:
    """Graines effectives à l'itération t (δ est retiré à chaque itération)"""
    return {
        "cell_probs": seeds.cell_probs,
        "delta": derive_seed(seeds.delta, t),
        "em": derive_seed(seeds.em, t),
        "selection": derive_seed(seeds.selection, t),
        "rotation": seeds.rotation,
    }


def run_pipeline(
    patches: PatchSet,
    attn: AttentionMap,
    t: int,
    cfg: CurriculumConfig,
    previous: Optional[PipelineResult] = None,
    alpha_override: Optional[float] = None,
) -> PipelineResult:
    """
    Compose flux spatial, flux sémantique, α(t), mélange et sélection.

    `previous` sert au démarrage à chaud de l'EM si cfg.em_warm_start.
    `alpha_override` fixe α (balayages) sans toucher aux autres calendriers.
    """
    K = patches.num_patches
    if attn.num_patches != K:
        raise ArgumentError(f"attention {attn.num_patches}×{attn.num_patches} pour {K} patches")
    T = cfg.total_iters
    seeds = iteration_seeds(cfg.seeds, t)

    ranks = rank_coordinates(patches.center_coords)
    grid = grid_coordinates(ranks, cfg.granularity)
    cell_probs = make_cell_probs(cfg.cell_scheme, seeds["cell_probs"], cfg.cell_probs)
    spatial = grid_scores(grid, cell_probs)

    a = alpha(t, T, cfg.gamma)
    if alpha_override is not None:
        if not 0.0 <= alpha_override <= 1.0:
            raise ArgumentError(f"alpha doit être dans [0, 1], reçu {alpha_override}")
        a = float(alpha_override)
    if cfg.strategy == "grid":
        a = 0.0
    elif cfg.strategy == "semantic":
        a = 1.0

    tau = threshold_schedule(attn, t, T, cfg.q_start, cfg.q_end)
    components = component_count(t, T, cfg.c_max, cfg.c_min, K)
    clustering = None
    semantic = None

    if cfg.strategy == "random":
        mixed = random_scores(K, seeds["delta"])
    elif a == 0.0:
        mixed = MaskScores(scores=spatial.scores, stream="mixed")
    else:
        if cfg.em_features == "affinity":
            features = affinity_graph(attn, tau).w
        else:
            features = attn.a
        init = previous.clustering if cfg.em_warm_start and previous is not None else None
        clustering = em_cluster(
            features,
            components,
            seeds["em"],
            max_iters=cfg.em_max_iters,
            tol=cfg.em_tol,
            variance_floor=cfg.variance_floor,
            init=init,
        )
        semantic = semantic_scores(clustering, seeds["delta"])
        mixed = mix_scores(spatial, semantic, a)

    provenance = Provenance(seeds=seeds, config_hash=cfg.config_hash())
    selection = select_mask(mixed, cfg.ratio, seeds["selection"], alpha=a, t=t, total_iters=T, provenance=provenance)
    logger.debug("t=%d/%d alpha=%.4f C=%d tau=%.6g masquées=%d", t, T, a, components, tau, selection.masked_count)

    return PipelineResult(
        ranks=ranks,
        grid=grid,
        cell_probs=cell_probs,
        spatial=spatial,
        alpha=a,
        tau=tau,
        components=components,
        clustering=clustering,
        semantic=semantic,
        mixed=mixed,
        selection=selection,
    )


def run_dual_stream(patches: PatchSet, attn: AttentionMap, t: int, cfg: CurriculumConfig) -> MaskSelection:
    return run_pipeline(patches, attn, t, cfg).selection
