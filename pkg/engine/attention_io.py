# ==============================================================================
# ENTRÉES / SORTIES - Cartes d'attention ATN1 et sélections de masque
# ==============================================================================
#
# ATN1 : "ATN1" | k (u32 LE) | itération (u32 LE) | k×k réels f32 LE, ligne par ligne

import csv
import io
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Literal, Union

import numpy as np

from engine.errors import ArgumentError, DataValidationError, FormatError
from models.schemas import AttentionMap, MaskSelection

logger = logging.getLogger(__name__)

ATN_MAGIC = b"ATN1"
ATN_HEADER = struct.Struct("<4sII")

NEGATIVE_TOLERANCE = 1e-6
ROW_SUM_WARNING = 1e-4
ROW_SUM_REJECT = 1e-2

SelectionFormat = Literal["json", "csv"]


def decode_attention(data: bytes) -> AttentionMap:
    """Décode un flux ATN1 complet (en-tête + charge utile)"""
    if len(data) < 4 or data[:4] != ATN_MAGIC:
        raise FormatError("signature ATN1 absente", offset=0)
    if len(data) < ATN_HEADER.size:
        raise FormatError("en-tête tronqué", offset=len(data))
    _, k, iteration = ATN_HEADER.unpack_from(data, 0)
    if k == 0:
        raise DataValidationError("k = 0 : au moins une patch est requise")
    expected = ATN_HEADER.size + 4 * k * k
    if len(data) < expected:
        raise FormatError(f"charge utile tronquée ({k}×{k} réels annoncés)", offset=len(data))
    if len(data) > expected:
        raise FormatError("octets excédentaires après la charge utile", offset=expected)

    a = np.frombuffer(data, dtype="<f4", count=k * k, offset=ATN_HEADER.size).astype(np.float64).reshape(k, k)
    if not np.isfinite(a).all():
        raise DataValidationError("attention non finie")
    if (a < -NEGATIVE_TOLERANCE).any():
        row = int(np.flatnonzero((a < -NEGATIVE_TOLERANCE).any(axis=1))[0])
        raise DataValidationError(f"attention négative à la ligne {row}")
    a = np.maximum(a, 0.0)

    deviation = np.abs(a.sum(axis=1) - 1.0)
    rejected = np.flatnonzero(deviation > ROW_SUM_REJECT)
    if rejected.size:
        row = int(rejected[0])
        raise DataValidationError(f"ligne {row} non stochastique (somme {a[row].sum():.6f})")
    drifting = np.flatnonzero(deviation > ROW_SUM_WARNING)
    if drifting.size:
        logger.warning("%d ligne(s) d'attention renormalisée(s), première : %d", drifting.size, int(drifting[0]))
    return AttentionMap(a=a / a.sum(axis=1, keepdims=True), iteration=iteration)


def encode_attention(attn: AttentionMap) -> bytes:
    header = ATN_HEADER.pack(ATN_MAGIC, attn.num_patches, attn.iteration)
    return header + attn.a.astype("<f4").tobytes()


def load_attention(path: Union[str, Path]) -> AttentionMap:
    attn = decode_attention(Path(path).read_bytes())
    logger.debug("attention %s chargée : K=%d, itération %d", path, attn.num_patches, attn.iteration)
    return attn


def save_attention(attn: AttentionMap, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_attention(attn))


# ==============================================================================
# SÉLECTIONS
# ==============================================================================

def selection_payload(sel: MaskSelection) -> Dict[str, Any]:
    """Dictionnaire à clés ordonnées commun au fichier JSON et à l'API"""
    provenance = sel.provenance
    return {
        "num_patches": sel.num_patches,
        "ratio": sel.ratio,
        "alpha": sel.alpha,
        "t": sel.t,
        "T": sel.total_iters,
        "masked_indices": [int(i) for i in sel.masked_indices],
        "scores": [float(s) for s in sel.scores],
        "seeds": dict(provenance.seeds) if provenance else {},
        "config_hash": provenance.config_hash if provenance else "",
    }


def render_selection(sel: MaskSelection, format: SelectionFormat = "json") -> str:
    if format == "json":
        return json.dumps(selection_payload(sel), indent=2) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["index", "score", "masked"])
        for index, (score, masked) in enumerate(zip(sel.scores.tolist(), sel.masked.tolist())):
            writer.writerow([index, repr(score), int(masked)])
        return buffer.getvalue()
    raise ArgumentError(f"format de sélection inconnu : {format}")


def save_selection(sel: MaskSelection, path: Union[str, Path], format: SelectionFormat = "json") -> None:
    Path(path).write_text(render_selection(sel, format), encoding="utf-8", newline="")
