# ==============================================================================
# ROUTER: STUDIES - Cohérence du masquage sous rotation
# ==============================================================================

from fastapi import APIRouter, Request

from api.config import settings
from api.limiter import limiter
from engine.geometry import cloud_from_rows
from harness.studies import rotation_study
from models.schemas import RotationCheckRequest, RotationStudyReport

router = APIRouter()

@router.post("/rotation", response_model=RotationStudyReport)
@limiter.limit(settings.RATE_LIMIT_ROTCHECK)
def rotation_consistency(request: Request, payload: RotationCheckRequest):
    """
    Scénarios X/Y (aa, ar, zz, zr, rr) : pose du passage de base contre pose
    du passage tourné, mêmes graines de pipeline.
    """
    return rotation_study(
        cloud_from_rows(payload.points),
        payload,
        payload.scenario,
        payload.trials,
        payload.t,
        settings.MAX_WORKERS,
    )
