# ==============================================================================
# MODÈLES PYDANTIC - Types du domaine et schémas d'échange
# ==============================================================================

import hashlib
import json
import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from utils.seeding import spawn_seeds

RotationMode = Literal["aligned", "z-axis", "full"]
CellScheme = Literal["checkerboard", "uniform-random", "explicit"]
ScoreStream = Literal["spatial", "semantic", "mixed", "random"]
Strategy = Literal["dual", "grid", "semantic", "random"]
EmFeatures = Literal["attention", "affinity"]
Phase = Literal["early", "transition", "late"]
Scenario = Literal["A/A", "A/R", "Z/Z", "Z/R", "R/R"]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _frozen_array(value, dtype) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class ArrayModel(BaseModel):
    """Base des types portant des tableaux numpy (immuables après construction)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ==============================================================================
# GÉOMÉTRIE
# ==============================================================================

class PointCloud(ArrayModel):
    points: np.ndarray

    @field_validator("points", mode="before")
    @classmethod
    def _check_points(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("les points doivent former un tableau N×3")
        if arr.shape[0] < 1:
            raise ValueError("un nuage doit contenir au moins un point")
        if not np.isfinite(arr).all():
            raise ValueError("coordonnée non finie dans le nuage")
        return arr

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


class Rotation(ArrayModel):
    matrix: np.ndarray
    mode: RotationMode = "full"

    @field_validator("matrix", mode="before")
    @classmethod
    def _check_matrix(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.shape != (3, 3) or not np.isfinite(arr).all():
            raise ValueError("une rotation est une matrice 3×3 finie")
        return arr

    @model_validator(mode="after")
    def _check_so3(self):
        m = self.matrix
        if np.abs(m @ m.T - np.eye(3)).max() > 1e-9:
            raise ValueError("matrice non orthonormale")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("déterminant différent de +1")
        if self.mode == "aligned" and not np.allclose(m, np.eye(3), rtol=0.0, atol=1e-12):
            raise ValueError("le mode aligned impose l'identité")
        if self.mode == "z-axis":
            e_z = np.array([0.0, 0.0, 1.0])
            if not (np.allclose(m[:, 2], e_z, rtol=0.0, atol=1e-12) and np.allclose(m[2, :], e_z, rtol=0.0, atol=1e-12)):
                raise ValueError("le mode z-axis doit fixer l'axe z")
        return self


class PatchSet(ArrayModel):
    centers: np.ndarray
    neighbors: np.ndarray
    center_coords: np.ndarray
    source_size: int = Field(ge=1)

    @field_validator("centers", "neighbors", mode="before")
    @classmethod
    def _as_indices(cls, value):
        return _frozen_array(value, np.int64)

    @field_validator("center_coords", mode="before")
    @classmethod
    def _as_coords(cls, value):
        return _frozen_array(value, np.float64)

    @model_validator(mode="after")
    def _check_patches(self):
        K = self.centers.shape[0]
        if self.centers.ndim != 1 or K < 1:
            raise ValueError("au moins un centre attendu")
        if self.neighbors.ndim != 2 or self.neighbors.shape[0] != K or self.neighbors.shape[1] < 1:
            raise ValueError("une liste de voisins de taille k par centre")
        if self.center_coords.shape != (K, 3):
            raise ValueError("coordonnées de centres incohérentes")
        for idx in (self.centers, self.neighbors):
            if idx.min() < 0 or idx.max() >= self.source_size:
                raise ValueError("indice hors du nuage source")
        if np.unique(self.centers).shape[0] != K:
            raise ValueError("centres dupliqués")
        if not (self.neighbors == self.centers[:, None]).any(axis=1).all():
            raise ValueError("chaque centre doit appartenir à sa propre patch")
        return self

    @property
    def num_patches(self) -> int:
        return int(self.centers.shape[0])

    @property
    def patch_size(self) -> int:
        return int(self.neighbors.shape[1])


# ==============================================================================
# GRILLE SPATIALE
# ==============================================================================

class AxisRanks(ArrayModel):
    pos: np.ndarray

    @field_validator("pos", mode="before")
    @classmethod
    def _check_ranks(cls, value):
        arr = _frozen_array(value, np.int64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("table de rangs K×3 attendue")
        expected = np.arange(arr.shape[0])
        for d in range(3):
            if not np.array_equal(np.sort(arr[:, d]), expected):
                raise ValueError(f"la colonne {d} n'est pas une permutation de 0..K-1")
        return arr


class GridAssignment(ArrayModel):
    grid_coords: np.ndarray
    grid_type: np.ndarray
    granularity: Tuple[PositiveInt, PositiveInt, PositiveInt]

    @field_validator("grid_coords", "grid_type", mode="before")
    @classmethod
    def _as_ints(cls, value):
        return _frozen_array(value, np.int64)

    @model_validator(mode="after")
    def _check_types(self):
        g = self.grid_coords
        if g.ndim != 2 or g.shape[1] != 3 or not np.isin(g, (0, 1)).all():
            raise ValueError("coordonnées de grille binaires K×3 attendues")
        if not np.array_equal(self.grid_type, g[:, 0] + 2 * g[:, 1] + 4 * g[:, 2]):
            raise ValueError("grid_type incohérent avec les coordonnées de grille")
        return self


class GridCellProbs(ArrayModel):
    p: np.ndarray
    scheme: CellScheme

    @field_validator("p", mode="before")
    @classmethod
    def _check_probs(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.shape != (8,):
            raise ValueError("huit probabilités attendues, une par type de cellule")
        if not (np.isfinite(arr).all() and (arr >= 0.0).all() and (arr <= 1.0).all()):
            raise ValueError("probabilités de cellule hors de [0, 1]")
        return arr


# ==============================================================================
# MASQUAGE SÉMANTIQUE
# ==============================================================================

ROW_SUM_TOLERANCE = 1e-6


class AttentionMap(ArrayModel):
    a: np.ndarray
    iteration: int = Field(default=0, ge=0)

    @field_validator("a", mode="before")
    @classmethod
    def _check_attention(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError("matrice d'attention K×K attendue")
        if not np.isfinite(arr).all() or (arr < 0.0).any():
            raise ValueError("attention négative ou non finie")
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
        if bad.size:
            raise ValueError(f"ligne {int(bad[0])} non stochastique (somme {sums[bad[0]]:.8f})")
        return arr

    @property
    def num_patches(self) -> int:
        return int(self.a.shape[0])


class AffinityGraph(ArrayModel):
    w: np.ndarray
    tau: float = Field(ge=0.0)

    @field_validator("w", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _frozen_array(value, np.float64)

    @model_validator(mode="after")
    def _check_threshold(self):
        kept = self.w[self.w != 0.0]
        # même tolérance que la somme des lignes d'une AttentionMap
        if (kept <= self.tau).any() or (kept > 1.0 + ROW_SUM_TOLERANCE).any():
            raise ValueError("poids conservé hors de (tau, 1]")
        return self


class Clustering(ArrayModel):
    assignment: np.ndarray
    responsibilities: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: List[float]
    variance_floor: float = Field(default=1e-6, gt=0.0)
    converged: bool = False

    @field_validator("assignment", mode="before")
    @classmethod
    def _as_labels(cls, value):
        return _frozen_array(value, np.int64)

    @field_validator("responsibilities", "weights", "means", "variances", mode="before")
    @classmethod
    def _as_reals(cls, value):
        return _frozen_array(value, np.float64)

    @model_validator(mode="after")
    def _check_mixture(self):
        r = self.responsibilities
        if np.abs(r.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("responsabilités non normalisées")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("poids du mélange non normalisés")
        if (self.variances < self.variance_floor).any():
            raise ValueError("variance sous le plancher")
        if not np.array_equal(self.assignment, np.argmax(r, axis=1)):
            raise ValueError("assignation différente de l'argmax des responsabilités")
        steps = np.diff(np.asarray(self.log_likelihood_trace, dtype=np.float64))
        if steps.size and steps.min() < -1e-7:
            raise ValueError("log-vraisemblance décroissante")
        return self

    @property
    def num_components(self) -> int:
        return int(self.weights.shape[0])


class MaskScores(ArrayModel):
    scores: np.ndarray
    stream: ScoreStream

    @field_validator("scores", mode="before")
    @classmethod
    def _check_scores(cls, value):
        arr = _frozen_array(value, np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValueError("un score par patch attendu")
        if not (np.isfinite(arr).all() and (arr >= 0.0).all() and (arr <= 1.0).all()):
            raise ValueError("score hors de [0, 1]")
        return arr

    @property
    def num_patches(self) -> int:
        return int(self.scores.shape[0])


# ==============================================================================
# CURRICULUM
# ==============================================================================

class SeedBundle(BaseModel):
    """Graines nommées d'une exécution"""
    model_config = ConfigDict(frozen=True)

    cell_probs: int
    delta: int
    em: int
    selection: int
    rotation: int

    @classmethod
    def from_master(cls, seed: int) -> "SeedBundle":
        cell_probs, delta, em, selection, rotation = spawn_seeds(seed, 5)
        return cls(cell_probs=cell_probs, delta=delta, em=em, selection=selection, rotation=rotation)


class CurriculumConfig(BaseModel):
    """Paramètres du pipeline à double flux"""
    model_config = ConfigDict(frozen=True)

    total_iters: int = Field(default=100, ge=1)
    gamma: float = Field(default=2.0, gt=0.0)
    ratio: float = Field(default=0.75, gt=0.0, lt=1.0)
    c_max: int = Field(default=40, ge=1)
    c_min: int = Field(default=10, ge=1)
    q_start: float = Field(default=0.5, ge=0.0, le=1.0)
    q_end: float = Field(default=0.9, ge=0.0, le=1.0)
    granularity: Tuple[PositiveInt, PositiveInt, PositiveInt] = (4, 4, 4)
    cell_scheme: CellScheme = "checkerboard"
    cell_probs: Optional[List[float]] = None
    em_features: EmFeatures = "attention"
    em_max_iters: int = Field(default=50, ge=1)
    em_tol: float = Field(default=1e-6, gt=0.0)
    variance_floor: float = Field(default=1e-6, gt=0.0)
    em_warm_start: bool = False
    strategy: Strategy = "dual"
    seeds: SeedBundle = Field(default_factory=lambda: SeedBundle.from_master(0))

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.c_min > self.c_max:
            raise ValueError("c_min doit être inférieur ou égal à c_max")
        if self.q_start > self.q_end:
            raise ValueError("q_start doit être inférieur ou égal à q_end")
        if (self.cell_scheme == "explicit") != (self.cell_probs is not None):
            raise ValueError("cell_probs requis si et seulement si cell_scheme = explicit")
        if self.cell_probs is not None and len(self.cell_probs) != 8:
            raise ValueError("huit probabilités de cellule attendues")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    seeds: Dict[str, int]
    config_hash: str


class MaskSelection(ArrayModel):
    masked: np.ndarray
    masked_count: int
    ratio: float
    scores: np.ndarray
    alpha: Optional[float] = None
    t: Optional[int] = None
    total_iters: Optional[int] = None
    provenance: Optional[Provenance] = None

    @field_validator("masked", mode="before")
    @classmethod
    def _as_mask(cls, value):
        return _frozen_array(value, np.bool_)

    @field_validator("scores", mode="before")
    @classmethod
    def _as_scores(cls, value):
        return _frozen_array(value, np.float64)

    @model_validator(mode="after")
    def _check_count(self):
        K = self.masked.shape[0]
        if self.scores.shape != (K,):
            raise ValueError("un score par patch attendu")
        if self.masked_count != round_half_up(self.ratio * K):
            raise ValueError("masked_count différent de round(ratio·K)")
        if self.masked_count != int(self.masked.sum()):
            raise ValueError("masked_count incohérent avec le masque")
        return self

    @property
    def num_patches(self) -> int:
        return int(self.masked.shape[0])

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


class PipelineResult(ArrayModel):
    """Toutes les étapes intermédiaires d'une exécution du pipeline"""
    ranks: AxisRanks
    grid: GridAssignment
    cell_probs: GridCellProbs
    spatial: MaskScores
    alpha: float
    tau: Optional[float] = None
    components: Optional[int] = None
    clustering: Optional[Clustering] = None
    semantic: Optional[MaskScores] = None
    mixed: MaskScores
    selection: MaskSelection


# ==============================================================================
# HARNAIS - Traces et études de rotation
# ==============================================================================

class TraceRow(BaseModel):
    t: int
    alpha: float
    components: int
    tau: float
    masked_count: int
    phase: Phase


class CurriculumTrace(BaseModel):
    rows: List[TraceRow]

    @model_validator(mode="after")
    def _check_monotone(self):
        for prev, row in zip(self.rows, self.rows[1:]):
            if row.alpha < prev.alpha:
                raise ValueError("alpha décroissant dans la trace")
            if row.components > prev.components:
                raise ValueError("nombre de composantes croissant dans la trace")
            if row.masked_count != prev.masked_count:
                raise ValueError("masked_count variable dans la trace")
        return self


class SweepRow(BaseModel):
    """Une patch pour une valeur d'α : données de tracé des probabilités de masquage"""
    alpha: float
    index: int
    x: float
    y: float
    z: float
    spatial: float
    semantic: float
    mixed: float
    masked: bool


class RotationTrial(BaseModel):
    trial: int
    overlap: float = Field(ge=0.0, le=1.0)
    coherence: float = Field(ge=0.0, le=1.0)
    base_count: int
    rotated_count: int
    z_rank_stable: Optional[bool] = None


class RotationStudyReport(BaseModel):
    scenario: Scenario
    trials: int = Field(ge=1)
    overlap_mean: float = Field(ge=0.0, le=1.0)
    overlap_std: float = Field(ge=0.0, le=1.0)
    coherence_mean: float = Field(ge=0.0, le=1.0)
    ratio_exact: bool
    z_rank_stable: Optional[bool] = None
    config_hash: str
    details: List[RotationTrial]


# ==============================================================================
# API - Requêtes et réponses
# ==============================================================================

class PipelineOptions(BaseModel):
    """Options communes au CLI et à l'API"""
    patches: int = Field(default=64, ge=1)
    knn: int = Field(default=32, ge=1)
    grid: Tuple[PositiveInt, PositiveInt, PositiveInt] = (4, 4, 4)
    ratio: float = 0.75
    gamma: float = 2.0
    c_max: int = 40
    c_min: int = 10
    q_start: float = 0.5
    q_end: float = 0.9
    total_iters: int = 100
    seed: int = 0
    synth_bandwidth: float = Field(default=0.3, gt=0.0)
    noise: float = Field(default=0.0, ge=0.0)
    strategy: Strategy = "dual"
    cell_scheme: CellScheme = "checkerboard"
    cell_probs: Optional[List[float]] = None
    em_features: EmFeatures = "attention"
    em_max_iters: int = 50
    em_tol: float = 1e-6
    variance_floor: float = Field(default=1e-6, gt=0.0)
    warm_start: bool = False
    rotation: Literal["a", "z", "r"] = "a"

    def to_config(self) -> CurriculumConfig:
        return CurriculumConfig(
            total_iters=self.total_iters,
            gamma=self.gamma,
            ratio=self.ratio,
            c_max=self.c_max,
            c_min=self.c_min,
            q_start=self.q_start,
            q_end=self.q_end,
            granularity=self.grid,
            cell_scheme=self.cell_scheme,
            cell_probs=self.cell_probs,
            em_features=self.em_features,
            em_max_iters=self.em_max_iters,
            em_tol=self.em_tol,
            variance_floor=self.variance_floor,
            em_warm_start=self.warm_start,
            strategy=self.strategy,
            seeds=SeedBundle.from_master(self.seed),
        )


class MaskRequest(PipelineOptions):
    points: List[Tuple[float, float, float]] = Field(..., min_length=1)
    t: int = Field(default=0, ge=0)


class TraceRequest(PipelineOptions):
    points: Optional[List[Tuple[float, float, float]]] = None
    steps: int = Field(default=5, ge=2)


class RotationCheckRequest(PipelineOptions):
    points: List[Tuple[float, float, float]] = Field(..., min_length=1)
    scenario: Literal["aa", "ar", "zz", "zr", "rr"] = "aa"
    trials: int = Field(default=10, ge=1, le=1000)
    t: int = Field(default=0, ge=0)


class SelectionResponse(BaseModel):
    num_patches: int
    ratio: float
    alpha: Optional[float] = None
    t: Optional[int] = None
    T: Optional[int] = None
    masked_indices: List[int]
    scores: List[float]
    seeds: Dict[str, int]
    config_hash: str
