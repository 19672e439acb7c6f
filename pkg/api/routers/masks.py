# ==============================================================================
# ROUTER: MASKS - Masque d'une itération et trace du curriculum
# ==============================================================================

from fastapi import APIRouter

from api.config import settings
from engine.attention_io import selection_payload
from engine.curriculum import run_pipeline
from engine.geometry import cloud_from_rows, synth_cloud
from harness.studies import build_attention, build_patches, build_trace, pipeline_config, rotate_cloud
from models.schemas import CurriculumTrace, MaskRequest, SelectionResponse, TraceRequest

router = APIRouter()

@router.post("", response_model=SelectionResponse)
def compute_mask(request: MaskRequest):
    """
    Masque à double flux de l'itération `t` pour le nuage fourni
    (attention synthétique calculée depuis les centres de patches)
    """
    cfg = pipeline_config(request)
    cloud = rotate_cloud(cloud_from_rows(request.points), request.rotation, cfg.seeds.rotation)
    patches = build_patches(cloud, request)
    attn = build_attention(patches, request, request.t)
    selection = run_pipeline(patches, attn, request.t, cfg).selection
    return SelectionResponse(**selection_payload(selection))

@router.post("/trace", response_model=CurriculumTrace)
def trace_curriculum(request: TraceRequest):
    """Évalue le pipeline à `steps` itérations régulièrement espacées de 0 à T"""
    cfg = pipeline_config(request)
    if request.points is None:
        cloud = synth_cloud(settings.SYNTH_POINTS, request.seed)
    else:
        cloud = cloud_from_rows(request.points)
    cloud = rotate_cloud(cloud, request.rotation, cfg.seeds.rotation)
    patches = build_patches(cloud, request)
    return build_trace(patches, build_attention(patches, request, 0), request, request.steps)
