from fastapi import APIRouter, HTTPException, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
import logging

from errors import HKError
from pipeline import roundtrip, run_job, validate_prepotential
from schemas import JobSpec, parse_job

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/jobs", tags=["jobs"])


def http_status(exit_code: int) -> int:
    """Validación y esquema → 400; residuos y numérico → 422"""
    if exit_code in (1, 2):
        return 400
    return 422


async def _read_job(request: Request) -> JobSpec:
    body = await request.body()
    try:
        return parse_job(body.decode("utf-8"))
    except HKError as e:
        logger.error(f"❌ Trabajo rechazado: {str(e)}")
        raise HTTPException(status_code=http_status(e.exit_code), detail=str(e))
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail="El cuerpo no es UTF-8")


# ============= ENDPOINTS =============

@router.get("/schema")
async def job_schema():
    """JSON schema de JobSpec"""
    return JobSpec.model_json_schema()


@router.post("/validate")
async def validate_job(request: Request):
    """Valida el prepotencial sin construir el marco"""
    spec = await _read_job(request)
    try:
        P = validate_prepotential(spec.prepotential_series(), spec.dims.to_dimensions(), spec.order)
    except HKError as e:
        logger.error(f"❌ Validación: {str(e)}")
        raise HTTPException(status_code=http_status(e.exit_code), detail=f"{e.__class__.__name__}: {str(e)}")
    return {"status": "valid", "terms": len(P.L.poly), "n": P.n, "order": P.order}


@router.post("/build")
async def build_job(request: Request):
    """Receta completa; devuelve el informe con el código HTTP de su familia de error"""
    spec = await _read_job(request)
    report = await run_in_threadpool(run_job, spec)
    status = 200 if report.exit_code == 0 else http_status(report.exit_code)
    return JSONResponse(content=report.model_dump(mode="json"), status_code=status)


@router.post("/roundtrip")
async def roundtrip_job(request: Request):
    """L → marco → L′"""
    spec = await _read_job(request)
    try:
        P = validate_prepotential(spec.prepotential_series(), spec.dims.to_dimensions(), spec.order)
        _, mismatches = await run_in_threadpool(roundtrip, P)
    except HKError as e:
        logger.error(f"❌ Ida y vuelta: {str(e)}")
        raise HTTPException(status_code=http_status(e.exit_code), detail=f"{e.__class__.__name__}: {str(e)}")
    if mismatches:
        raise HTTPException(status_code=422, detail={"mismatches": mismatches})
    return {"status": "identical"}
