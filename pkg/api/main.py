# ==============================================================================
# MASKFORGE API - Point d'entrée principal
# ==============================================================================

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import ValidationError
from slowapi import _rate_limit_exceeded_handler
from slowapi.errors import RateLimitExceeded
import logging
import time

from api.config import settings
from api.limiter import limiter
from api.routers import attention, masks, studies
from engine.errors import ArgumentError, MaskForgeError
from harness.studies import first_error

logging.basicConfig(level=settings.LOG_LEVEL.upper())
logger = logging.getLogger(__name__)

# Créer l'application FastAPI
app = FastAPI(
    title=settings.APP_NAME,
    description="Masquage à double flux de nuages de points : grille spatiale, composantes sémantiques et curriculum",
    version=settings.APP_VERSION,
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json"
)

# Ajouter le rate limiter
app.state.limiter = limiter
app.add_exception_handler(RateLimitExceeded, _rate_limit_exceeded_handler)

# Configuration CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Middleware pour mesurer le temps de réponse
@app.middleware("http")
async def add_process_time_header(request: Request, call_next):
    start_time = time.time()
    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(process_time)
    return response

# Erreurs du moteur : 400 pour un paramètre hors domaine, 422 pour des données invalides
@app.exception_handler(MaskForgeError)
async def maskforge_error_handler(request: Request, exc: MaskForgeError):
    status_code = 400 if isinstance(exc, ArgumentError) else 422
    logger.info("%s %s -> %d : %s", request.method, request.url.path, status_code, exc)
    return JSONResponse(status_code=status_code, content={"detail": str(exc)})

# Invariant d'un type du domaine violé par les données : 422
@app.exception_handler(ValidationError)
async def domain_validation_handler(request: Request, exc: ValidationError):
    logger.info("%s %s -> 422 : %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=422, content={"detail": first_error(exc)})

# Inclure les routers
app.include_router(masks.router, prefix="/api/v1/masks", tags=["Masks"])
app.include_router(studies.router, prefix="/api/v1/studies", tags=["Studies"])
app.include_router(attention.router, prefix="/api/v1/attention", tags=["Attention"])

# Route racine
@app.get("/", tags=["Root"])
async def root():
    return {
        "name": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "status": "operational",
        "documentation": "/docs",
        "health": "/health",
        "endpoints": [
            "POST /api/v1/masks - Masque d'une itération",
            "POST /api/v1/masks/trace - Trace du curriculum",
            "POST /api/v1/studies/rotation - Cohérence sous rotation",
            "POST /api/v1/attention/synth - Attention synthétique ATN1",
        ]
    }

# Health check
@app.get("/health", tags=["Health"])
async def health_check():
    return {
        "status": "healthy",
        "timestamp": time.time()
    }

if __name__ == "__main__":
    import uvicorn
    uvicorn.run("api.main:app", host="0.0.0.0", port=8000, reload=True)
