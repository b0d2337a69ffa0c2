from fastapi import FastAPI
import uvicorn
from datetime import datetime
import logging

from config import Config
from job_routes import router as jobs_router

Config.setup_logging()
logger = logging.getLogger(__name__)

app = FastAPI(title="Motor de métricas pseudo-hiperkähler")

app.include_router(jobs_router)


# -------------------------------
# INICIALIZACIÓN
# -------------------------------
@app.on_event("startup")
async def startup_event():
    if not Config.validate():
        logger.warning("⚠️ Se arranca con configuración inválida")
    logger.info(f"✅ Servicio listo (orden {Config.ORDER}, backend {Config.BACKEND})")


# -------------------------------
# SALUD
# -------------------------------
@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "order": Config.ORDER,
        "backend": Config.BACKEND,
    }


# -------------------------------
# EJECUCIÓN LOCAL
# -------------------------------
if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=Config.HOST,
        port=Config.PORT,
        reload=Config.DEBUG
    )
