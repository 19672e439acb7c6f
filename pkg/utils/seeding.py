# ==============================================================================
# GRAINES - Dérivation déterministe des générateurs aléatoires
# ==============================================================================

from typing import List

import numpy as np

_MASK64 = (1 << 64) - 1


def normalize_seed(seed: int) -> int:
    """Ramène une graine 64 bits (éventuellement négative) dans [0, 2^64)"""
    return int(seed) & _MASK64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(normalize_seed(seed))


def spawn_seeds(master: int, count: int) -> List[int]:
    """Dérive `count` graines indépendantes d'une graine maîtresse"""
    state = np.random.SeedSequence(normalize_seed(master)).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]


def derive_seed(base: int, *keys: int) -> int:
    """
    Graine fille de `base` pour une clé (itération t, indice d'essai...).

    Deux clés distinctes donnent des flux indépendants, une même clé
    redonne toujours la même graine.
    """
    entropy = [normalize_seed(base)] + [normalize_seed(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
