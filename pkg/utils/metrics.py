# ==============================================================================
# MÉTRIQUES - Recouvrement et cohérence des masques
# ==============================================================================

from typing import Iterable

import numpy as np


def jaccard(first: Iterable[int], second: Iterable[int]) -> float:
    """Indice de Jaccard |A ∩ B| / |A ∪ B| (1.0 pour deux ensembles vides)"""
    a, b = set(int(i) for i in first), set(int(i) for i in second)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def split_components(assignment: np.ndarray, masked: np.ndarray) -> int:
    """Nombre de composantes coupées par la sélection (ni tout masquées, ni tout visibles)"""
    split = 0
    for label in np.unique(assignment):
        members = masked[assignment == label]
        if members.any() and not members.all():
            split += 1
    return split


def component_coherence(assignment: np.ndarray, masked: np.ndarray) -> float:
    """Fraction des composantes non vides que la sélection ne coupe pas"""
    labels = np.unique(assignment)
    return 1.0 - split_components(assignment, masked) / len(labels)
