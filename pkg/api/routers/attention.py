# ==============================================================================
# ROUTER: ATTENTION - Synthèse de cartes ATN1
# ==============================================================================

from fastapi import APIRouter, File, Form, HTTPException, UploadFile, status
from fastapi.responses import Response
from pydantic import ValidationError
from typing import Optional

from api.config import settings
from engine.attention_io import encode_attention
from engine.geometry import decode_cloud, infer_cloud_format
from harness.studies import build_attention, build_patches, first_error
from models.schemas import PipelineOptions

router = APIRouter()

@router.post("/synth")
async def synthesize_attention(
    file: UploadFile = File(..., description="Nuage .xyz (texte) ou .pcf (binaire)"),
    patches: int = Form(settings.PATCHES),
    knn: int = Form(settings.KNN),
    bandwidth: Optional[float] = Form(None),
    noise: float = Form(0.0),
    seed: Optional[int] = Form(None),
    t: int = Form(0, ge=0),
):
    """Patchifie le nuage envoyé et renvoie la carte d'attention synthétique au format ATN1"""
    try:
        options = PipelineOptions(
            patches=patches,
            knn=knn,
            seed=settings.SEED if seed is None else seed,
            synth_bandwidth=settings.SYNTH_BANDWIDTH if bandwidth is None else bandwidth,
            noise=noise,
        )
    except ValidationError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=first_error(exc))

    data = await file.read()
    cloud = decode_cloud(data, infer_cloud_format(file.filename or "cloud.xyz"))
    attn = build_attention(build_patches(cloud, options), options, t)
    return Response(
        content=encode_attention(attn),
        media_type="application/octet-stream",
        headers={"Content-Disposition": 'attachment; filename="attention.atn"'},
    )
