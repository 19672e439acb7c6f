# ==============================================================================
# MASQUAGE PAR GRILLE SPATIALE 3D
# ==============================================================================

from typing import Optional, Sequence, Tuple

import numpy as np

from engine.errors import ArgumentError
from models.schemas import AxisRanks, CellScheme, GridAssignment, GridCellProbs, MaskScores
from utils.seeding import make_rng

DEFAULT_GRANULARITY = (4, 4, 4)

# p_t selon la parité de popcount(t) : cellules adjacentes alternées haut/bas
CHECKERBOARD_HIGH = 0.9
CHECKERBOARD_LOW = 0.1


def rank_coordinates(centers: np.ndarray) -> AxisRanks:
    """Rang croissant (0-based) de chaque centre sur chaque axe, tri stable"""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 3 or centers.shape[0] < 1:
        raise ArgumentError("centres K×3 attendus avec K ≥ 1")
    K = centers.shape[0]
    pos = np.empty((K, 3), dtype=np.int64)
    for d in range(3):
        order = np.argsort(centers[:, d], kind="stable")
        pos[order, d] = np.arange(K)
    return AxisRanks(pos=pos)


def grid_coordinates(ranks: AxisRanks, granularity: Tuple[int, int, int] = DEFAULT_GRANULARITY) -> GridAssignment:
    """grid_d = floor(pos_d / G_d) mod 2, puis grid_type = x + 2y + 4z"""
    G = np.asarray(granularity, dtype=np.int64)
    if G.shape != (3,) or (G < 1).any():
        raise ArgumentError(f"granularité invalide : {tuple(granularity)}")
    coords = (ranks.pos // G) % 2
    grid_type = coords[:, 0] + 2 * coords[:, 1] + 4 * coords[:, 2]
    return GridAssignment(grid_coords=coords, grid_type=grid_type, granularity=tuple(int(g) for g in G))


def make_cell_probs(scheme: CellScheme = "checkerboard", seed: int = 0, explicit: Optional[Sequence[float]] = None) -> GridCellProbs:
    if (scheme == "explicit") != (explicit is not None):
        raise ArgumentError("des probabilités explicites sont requises si et seulement si scheme = explicit")
    if scheme == "checkerboard":
        parity = np.array([bin(t).count("1") % 2 for t in range(8)])
        p = np.where(parity == 0, CHECKERBOARD_HIGH, CHECKERBOARD_LOW)
    elif scheme == "uniform-random":
        p = make_rng(seed).random(8)
    elif scheme == "explicit":
        p = np.asarray(explicit, dtype=np.float64)
        if p.shape != (8,):
            raise ArgumentError(f"huit probabilités attendues, {p.size} reçue(s)")
        if not (np.isfinite(p).all() and (p >= 0.0).all() and (p <= 1.0).all()):
            raise ArgumentError("probabilités explicites hors de [0, 1]")
    else:
        raise ArgumentError(f"schéma de cellules inconnu : {scheme}")
    return GridCellProbs(p=p, scheme=scheme)


def grid_scores(assignment: GridAssignment, cell_probs: GridCellProbs) -> MaskScores:
    """Flux spatial : score[i] = p[grid_type[i]]"""
    return MaskScores(scores=cell_probs.p[assignment.grid_type], stream="spatial")
