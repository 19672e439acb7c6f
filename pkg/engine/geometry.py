# ==============================================================================
# GÉOMÉTRIE - Lecture des nuages, rotations, FPS et patches KNN
# ==============================================================================

import logging
import re
import struct
from pathlib import Path
from typing import Literal, Union

import numpy as np
from scipy.spatial.distance import cdist

from engine.errors import ArgumentError, DataValidationError, FormatError
from models.schemas import PatchSet, PointCloud, Rotation, RotationMode
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

CloudFormat = Literal["xyz-ascii", "pcf-binary"]

PCF_MAGIC = b"PCF1"
PCF_HEADER_SIZE = 8

# réel décimal simple ; nan et inf passent pour être rejetés comme non finis
XYZ_REAL = re.compile(r"[+-]?(?:(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|nan|inf|infinity)", re.IGNORECASE | re.ASCII)


# ==============================================================================
# LECTURE / ÉCRITURE
# ==============================================================================

def infer_cloud_format(path: Union[str, Path]) -> CloudFormat:
    """Format déduit de l'extension (.pcf -> binaire, sinon texte)"""
    return "pcf-binary" if Path(path).suffix.lower() == ".pcf" else "xyz-ascii"


def _validated_cloud(coords: np.ndarray) -> PointCloud:
    if coords.shape[0] == 0:
        raise DataValidationError("nuage vide : au moins un point est requis")
    bad = np.flatnonzero(~np.isfinite(coords).all(axis=1))
    if bad.size:
        raise DataValidationError(f"coordonnée non finie au point {int(bad[0])}")
    return PointCloud(points=coords)


def _parse_xyz(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise FormatError(f"trois réels attendus, {len(fields)} champ(s) trouvé(s)", line=lineno)
        bad = [f for f in fields if not XYZ_REAL.fullmatch(f)]
        if bad:
            raise FormatError(f"réel illisible : {bad[0]!r}", line=lineno)
        rows.append([float(f) for f in fields])
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _parse_pcf(data: bytes) -> np.ndarray:
    if len(data) < 4 or data[:4] != PCF_MAGIC:
        raise FormatError("signature PCF1 absente", offset=0)
    if len(data) < PCF_HEADER_SIZE:
        raise FormatError("en-tête tronqué", offset=len(data))
    (count,) = struct.unpack_from("<I", data, 4)
    expected = PCF_HEADER_SIZE + 12 * count
    if len(data) < expected:
        raise FormatError(f"charge utile tronquée ({count} points annoncés)", offset=len(data))
    if len(data) > expected:
        raise FormatError("octets excédentaires après la charge utile", offset=expected)
    payload = np.frombuffer(data, dtype="<f4", count=3 * count, offset=PCF_HEADER_SIZE)
    return payload.astype(np.float64).reshape(-1, 3)


def decode_cloud(data: bytes, format: CloudFormat = "xyz-ascii") -> PointCloud:
    """Décode le contenu brut d'un fichier de nuage"""
    if format == "pcf-binary":
        coords = _parse_pcf(data)
    elif format == "xyz-ascii":
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("texte non UTF-8", offset=exc.start) from None
        coords = _parse_xyz(text)
    else:
        raise ArgumentError(f"format de nuage inconnu : {format}")
    return _validated_cloud(coords)


def cloud_from_rows(rows) -> PointCloud:
    """Nuage depuis une liste de triplets (corps de requête JSON)"""
    return _validated_cloud(np.asarray(rows, dtype=np.float64).reshape(-1, 3))


def load_cloud(path: Union[str, Path], format: CloudFormat = "xyz-ascii") -> PointCloud:
    """Charge un nuage en conservant l'ordre du fichier"""
    path = Path(path)
    cloud = decode_cloud(path.read_bytes(), format)
    logger.debug("nuage %s chargé : %d points", path, cloud.size)
    return cloud


def save_cloud(cloud: PointCloud, path: Union[str, Path], format: CloudFormat = "xyz-ascii") -> None:
    path = Path(path)
    if format == "pcf-binary":
        header = PCF_MAGIC + struct.pack("<I", cloud.size)
        path.write_bytes(header + cloud.points.astype("<f4").tobytes())
    elif format == "xyz-ascii":
        lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ArgumentError(f"format de nuage inconnu : {format}")


def synth_cloud(n: int, seed: int) -> PointCloud:
    """n points uniformes sur la sphère unité"""
    if n < 1:
        raise ArgumentError("n doit être au moins 1")
    v = make_rng(seed).standard_normal((n, 3))
    return PointCloud(points=v / np.linalg.norm(v, axis=1, keepdims=True))


# ==============================================================================
# ROTATIONS
# ==============================================================================

def rotation_about_z(angle: float) -> Rotation:
    c, s = np.cos(angle), np.sin(angle)
    # zéros et 1 exacts sur la ligne et la colonne z : les cotes restent inchangées
    matrix = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Rotation(matrix=matrix, mode="z-axis")


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def sample_rotation(mode: RotationMode, seed: int) -> Rotation:
    """
    Tire une rotation déterministe pour (mode, seed).

    - aligned : identité
    - z-axis : angle uniforme dans [0, 2π) autour de z
    - full : uniforme sur SO(3) via un quaternion unitaire uniforme
    """
    if mode == "aligned":
        return Rotation(matrix=np.eye(3), mode="aligned")
    rng = make_rng(seed)
    if mode == "z-axis":
        return rotation_about_z(rng.uniform(0.0, 2.0 * np.pi))
    if mode == "full":
        u1, u2, u3 = rng.random(3)
        q = np.array([
            np.sqrt(u1) * np.cos(2 * np.pi * u3),
            np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
            np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
            np.sqrt(u1) * np.sin(2 * np.pi * u3),
        ])
        return Rotation(matrix=quaternion_to_matrix(q), mode="full")
    raise ArgumentError(f"mode de rotation inconnu : {mode}")


def apply_rotation(cloud: PointCloud, rot: Rotation) -> PointCloud:
    if np.array_equal(rot.matrix, np.eye(3)):
        return cloud
    return PointCloud(points=cloud.points @ rot.matrix.T)


# ==============================================================================
# ÉCHANTILLONNAGE ET PATCHES
# ==============================================================================

def farthest_point_sample(cloud: PointCloud, K: int, seed: int = 0, random_start: bool = False) -> np.ndarray:
    """
    Sélection gloutonne max-min de K centres.

    Départ : point le plus éloigné du barycentre (ou tiré de `seed` si
    random_start). Égalités départagées par le plus petit indice.
    """
    N = cloud.size
    if K < 1 or K > N:
        raise ArgumentError(f"K doit être dans [1, {N}], reçu {K}")
    pts = cloud.points
    if random_start:
        start = int(make_rng(seed).integers(N))
    else:
        start = int(np.argmax(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))

    chosen = np.empty(K, dtype=np.int64)
    chosen[0] = start
    min_d2 = ((pts - pts[start]) ** 2).sum(axis=1)
    min_d2[start] = -np.inf
    for i in range(1, K):
        nxt = int(np.argmax(min_d2))
        chosen[i] = nxt
        min_d2 = np.minimum(min_d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
        min_d2[nxt] = -np.inf
    return chosen


def knn_patchify(cloud: PointCloud, centers: np.ndarray, k: int) -> PatchSet:
    """Les k plus proches voisins de chaque centre, le centre en tête de sa liste"""
    N = cloud.size
    if k < 1 or k > N:
        raise ArgumentError(f"k doit être dans [1, {N}], reçu {k}")
    centers = np.asarray(centers, dtype=np.int64)
    center_coords = cloud.points[centers]
    d2 = cdist(center_coords, cloud.points, "sqeuclidean")
    d2[np.arange(centers.shape[0]), centers] = -1.0
    # tri stable : à distance égale, le plus petit indice passe devant
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return PatchSet(centers=centers, neighbors=order, center_coords=center_coords, source_size=N)


def patchify(cloud: PointCloud, K: int, k: int, seed: int = 0) -> PatchSet:
    return knn_patchify(cloud, farthest_point_sample(cloud, K, seed), k)
