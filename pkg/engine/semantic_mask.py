# ==============================================================================
# MASQUAGE SÉMANTIQUE PROGRESSIF
# ==============================================================================
#
# Seuil adaptatif sur l'attention, graphe d'affinité, mélange gaussien
# diagonal ajusté par EM avec un nombre de composantes qui décroît
# linéairement, puis un score aléatoire commun à chaque composante.

import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp, softmax

from engine.errors import ArgumentError, DataValidationError
from models.schemas import AffinityGraph, AttentionMap, Clustering, MaskScores, PatchSet, round_half_up
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_C_MAX = 40
DEFAULT_C_MIN = 10
DEFAULT_Q_START = 0.5
DEFAULT_Q_END = 0.9
DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-6
DEFAULT_VARIANCE_FLOOR = 1e-6

_LOG_2PI = np.log(2.0 * np.pi)

MixtureParams = Tuple[np.ndarray, np.ndarray, np.ndarray]


def _check_progress(t: float, T: int) -> None:
    if T < 1:
        raise ArgumentError(f"T doit être au moins 1, reçu {T}")
    if not 0 <= t <= T:
        raise ArgumentError(f"t doit être dans [0, {T}], reçu {t}")


# ==============================================================================
# CALENDRIERS
# ==============================================================================

def component_count(t: float, T: int, c_max: int = DEFAULT_C_MAX, c_min: int = DEFAULT_C_MIN, K: Optional[int] = None) -> int:
    """
    C(t) = C_max − (t/T)(C_max − C_min), arrondi au demi supérieur.

    Borné à [C_min, C_max] puis par K (une composante ne peut pas être
    vide de patches au départ).
    """
    _check_progress(t, T)
    if not 1 <= c_min <= c_max:
        raise ArgumentError(f"il faut 1 ≤ c_min ≤ c_max, reçu c_min={c_min}, c_max={c_max}")
    count = min(max(round_half_up(c_max - (t / T) * (c_max - c_min)), c_min), c_max)
    if K is not None:
        if K < 1:
            raise ArgumentError("K doit être au moins 1")
        count = min(count, K)
    return count


def threshold_schedule(attn: AttentionMap, t: float, T: int, q_start: float = DEFAULT_Q_START, q_end: float = DEFAULT_Q_END) -> float:
    """τ(t) = quantile q(t) des attentions hors diagonale, q linéaire de q_start à q_end"""
    _check_progress(t, T)
    if not 0.0 <= q_start <= q_end <= 1.0:
        raise ArgumentError(f"il faut 0 ≤ q_start ≤ q_end ≤ 1, reçu {q_start}, {q_end}")
    K = attn.num_patches
    if K == 1:
        raise ArgumentError("aucune attention hors diagonale pour K = 1")
    q = min(q_start + (t / T) * (q_end - q_start), q_end)
    off_diagonal = attn.a[~np.eye(K, dtype=bool)]
    return float(np.quantile(off_diagonal, q))


def affinity_graph(attn: Union[AttentionMap, AffinityGraph], tau: float) -> AffinityGraph:
    """Ne garde que les poids strictement supérieurs à τ"""
    if not tau >= 0.0:
        raise ArgumentError(f"tau doit être positif ou nul, reçu {tau}")
    a = attn.w if isinstance(attn, AffinityGraph) else attn.a
    return AffinityGraph(w=np.where(a > tau, a, 0.0), tau=tau)


# ==============================================================================
# EM - MÉLANGE GAUSSIEN DIAGONAL
# ==============================================================================

def _seed_means(x: np.ndarray, count: int, rng: np.random.Generator, existing: Optional[np.ndarray] = None) -> np.ndarray:
    """Tirage pondéré par la distance au plus proche centre déjà choisi"""
    K = x.shape[0]
    chosen = []
    if existing is None or len(existing) == 0:
        first = int(rng.integers(K))
        chosen.append(first)
        d2 = ((x - x[first]) ** 2).sum(axis=1)
    else:
        d2 = cdist(x, existing, "sqeuclidean").min(axis=1)
    while len(chosen) < count:
        total = d2.sum()
        if total > 0.0:
            nxt = int(rng.choice(K, p=d2 / total))
        else:
            pool = np.setdiff1d(np.arange(K), chosen)
            nxt = int(rng.choice(pool if pool.size else np.arange(K)))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _warm_start(x: np.ndarray, init: Clustering, C: int, rng: np.random.Generator, base_var: np.ndarray, floor: float) -> MixtureParams:
    if init.means.shape[1] != x.shape[1]:
        raise ArgumentError("dimension des caractéristiques différente de la partition précédente")
    keep = np.argsort(-init.weights, kind="stable")[:C]
    means = init.means[keep]
    variances = np.maximum(init.variances[keep], floor)
    weights = init.weights[keep]
    missing = C - keep.size
    if missing:
        means = np.vstack([means, _seed_means(x, missing, rng, existing=means)])
        variances = np.vstack([variances, np.tile(base_var, (missing, 1))])
        weights = np.concatenate([weights, np.full(missing, 1.0 / C)])
    return weights / weights.sum(), means, variances


def _e_step(x: np.ndarray, params: MixtureParams) -> Tuple[np.ndarray, float]:
    """Log-responsabilités et log-vraisemblance totale"""
    weights, means, variances = params
    precision = 1.0 / variances
    # Σ_d (x_d − μ_d)² / σ²_d développé en produits matriciels
    maha = (x * x) @ precision.T - 2.0 * x @ (means * precision).T + (means * means * precision).sum(axis=1)[None, :]
    log_det = np.log(variances).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_prob = log_w[None, :] - 0.5 * (x.shape[1] * _LOG_2PI + log_det[None, :] + maha)
    lse = logsumexp(log_prob, axis=1, keepdims=True)
    return log_prob - lse, float(lse.sum())


def _responsibilities(log_resp: np.ndarray) -> np.ndarray:
    resp = np.exp(log_resp)
    return resp / resp.sum(axis=1, keepdims=True)


def _m_step(x: np.ndarray, resp: np.ndarray, floor: float) -> MixtureParams:
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    safe = np.where(nk > 0.0, nk, 1.0)
    means = (resp.T @ x) / safe[:, None]
    diff = x[:, None, :] - means[None, :, :]
    variances = (resp[:, :, None] * diff * diff).sum(axis=0) / safe[:, None]
    return weights, means, np.maximum(variances, floor)


def _empty_components(log_resp: np.ndarray) -> np.ndarray:
    counts = np.bincount(np.argmax(log_resp, axis=1), minlength=log_resp.shape[1])
    return np.flatnonzero(counts == 0)


def _reseed(x: np.ndarray, params: MixtureParams, log_resp: np.ndarray, empty: np.ndarray, base_var: np.ndarray) -> MixtureParams:
    """Recentre chaque composante vide sur la ligne la moins bien expliquée"""
    weights, means, variances = (p.copy() for p in params)
    worst_rows = np.argsort(log_resp.max(axis=1), kind="stable")
    for c, row in zip(empty, worst_rows):
        means[c] = x[row]
        variances[c] = base_var
        weights[c] = 1.0 / x.shape[0]
    return weights / weights.sum(), means, variances


def em_cluster(
    features: np.ndarray,
    C: int,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
    init: Optional[Clustering] = None,
) -> Clustering:
    """
    Ajuste un mélange de C gaussiennes à covariance diagonale sur les lignes
    de `features` (une ligne v_i par patch).

    Initialisation : moyennes tirées parmi les lignes avec pondération par la
    distance (ou reprise de `init` en démarrage à chaud). Arrêt après
    `max_iters` M-steps ou dès que le gain de log-vraisemblance passe sous
    `tol`. Une composante vide est recentrée seulement si la
    log-vraisemblance ne baisse pas.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ArgumentError("caractéristiques K×D attendues")
    if not np.isfinite(x).all():
        raise DataValidationError("caractéristiques non finies")
    K = x.shape[0]
    if not 1 <= C <= K:
        raise ArgumentError(f"C doit être dans [1, {K}], reçu {C}")
    if max_iters < 1 or not tol > 0.0 or not variance_floor > 0.0:
        raise ArgumentError("max_iters ≥ 1, tol > 0 et variance_floor > 0 requis")

    rng = make_rng(seed)
    base_var = x.var(axis=0) + variance_floor
    if init is not None:
        params = _warm_start(x, init, C, rng, base_var, variance_floor)
    else:
        params = (np.full(C, 1.0 / C), _seed_means(x, C, rng), np.tile(base_var, (C, 1)))

    log_resp, ll = _e_step(x, params)
    trace = [ll]
    converged = False
    for _ in range(max_iters):
        new_params = _m_step(x, _responsibilities(log_resp), variance_floor)
        new_log_resp, new_ll = _e_step(x, new_params)
        empty = _empty_components(new_log_resp)
        if empty.size:
            candidate = _reseed(x, new_params, new_log_resp, empty, base_var)
            cand_log_resp, cand_ll = _e_step(x, candidate)
            if cand_ll >= new_ll:
                logger.debug("EM : %d composante(s) vide(s) recentrée(s)", empty.size)
                new_params, new_log_resp, new_ll = candidate, cand_log_resp, cand_ll
        gain = new_ll - ll
        params, log_resp, ll = new_params, new_log_resp, new_ll
        trace.append(ll)
        if gain < tol:
            converged = True
            break

    logger.debug("EM : C=%d, %d itération(s), log-vraisemblance %.6f", C, len(trace) - 1, ll)
    resp = _responsibilities(log_resp)
    weights, means, variances = params
    return Clustering(
        assignment=np.argmax(resp, axis=1),
        responsibilities=resp,
        weights=weights / weights.sum(),
        means=means,
        variances=variances,
        log_likelihood_trace=trace,
        variance_floor=variance_floor,
        converged=converged,
    )


# ==============================================================================
# SCORES ET ATTENTION SYNTHÉTIQUE
# ==============================================================================

def semantic_scores(clustering: Clustering, seed: int = 0) -> MaskScores:
    """Un δ_c uniforme dans [0, 1) par composante, partagé par toutes ses patches"""
    delta = make_rng(seed).random(clustering.num_components)
    return MaskScores(scores=delta[clustering.assignment], stream="semantic")


def synth_attention(patches: PatchSet, bandwidth: float, seed: int = 0, noise: float = 0.0, iteration: int = 0) -> AttentionMap:
    """
    Attention de substitution : noyau gaussien sur les distances entre
    centres, bruit multiplicatif log-normal optionnel, lignes normalisées.
    """
    if not (np.isfinite(bandwidth) and bandwidth > 0.0):
        raise ArgumentError(f"la largeur de bande doit être > 0, reçu {bandwidth}")
    if not noise >= 0.0:
        raise ArgumentError(f"le bruit doit être ≥ 0, reçu {noise}")
    coords = patches.center_coords
    # deux divisions : bandwidth ** 2 peut sous-déborder vers 0
    with np.errstate(over="ignore"):
        logits = -(cdist(coords, coords, "sqeuclidean") / bandwidth / bandwidth)
    if noise > 0.0:
        logits = logits + np.log(make_rng(seed).lognormal(0.0, noise, size=logits.shape))
    return AttentionMap(a=softmax(logits, axis=1), iteration=iteration)
