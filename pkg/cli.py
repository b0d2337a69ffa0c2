#!/usr/bin/env python3
"""
Línea de comandos del motor: validate, build, roundtrip, metric, flat-test, schema, serve

Códigos de salida: 0 éxito, 1 validación, 2 parseo/esquema, 3 residuos o ida y vuelta, 4 numérico.
"""
from functools import wraps
from typing import Annotated, List, Optional
import json
import logging

import numpy as np
import typer
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from config import Config
from errors import HKError, RoundTripMismatch
from pipeline import (build_Hpp, build_frame, integrate_manifold, metric_at, norm_matrix, roundtrip,
                      run_job, sample_chart_points, solve_bridge, validate_prepotential)
from schemas import JobSpec, MetricEntry, load_job, load_points, parse_job, round_float, round_matrix

app = typer.Typer(
    name="hk-engine",
    help="Métricas pseudo-hiperkähler a partir de un prepotencial",
    add_completion=False,
    rich_markup_mode="rich",
)

console = Console()
logger = logging.getLogger(__name__)


@app.callback()
def main_callback():
    Config.setup_logging()


def guarded(fn):
    """Traduce los errores del motor a códigos de salida"""
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except HKError as e:
            logger.error(f"❌ {e.__class__.__name__}: {str(e)}")
            console.print(f"[bold red]{e.__class__.__name__}[/bold red]: {str(e)}")
            raise typer.Exit(code=e.exit_code)
    return wrapper


def _with_overrides(spec: JobSpec, order: Optional[int], backend: Optional[str], seed: Optional[int]) -> JobSpec:
    updates = {k: v for k, v in (("order", order), ("backend", backend), ("seed", seed)) if v is not None}
    if not updates:
        return spec
    return parse_job(json.dumps({**spec.model_dump(mode="json"), **updates}))


def _residual_table(report) -> Table:
    table = Table(title="Residuos", box=box.SIMPLE)
    table.add_column("Familia")
    table.add_column("max |·|", justify="right")
    table.add_column("", justify="center")
    for r in report.residuals:
        table.add_row(r.family, f"{r.max_abs:.3e}", "✅" if r.passed else "❌")
    return table


def _stage_panel(report) -> Panel:
    lines = []
    for s in report.stages:
        mark = {"ok": "✅", "failed": "❌", "skipped": "·"}[s.status]
        timing = f" ({s.seconds:.2f} s)" if s.seconds is not None else ""
        lines.append(f"{mark} {s.stage}{timing} {s.detail}")
    for w in report.warnings:
        lines.append(f"⚠️ {w}")
    style = "green" if report.status == "ok" else "red"
    return Panel("\n".join(lines), title=f"Estado: {report.status}", border_style=style)


# ============= COMANDOS =============

@app.command()
@guarded
def validate(path: Annotated[str, typer.Argument(help="Archivo JobSpec (JSON)")]):
    """Valida el prepotencial de un trabajo"""
    spec = load_job(path)
    P = validate_prepotential(spec.prepotential_series(), spec.dims.to_dimensions(), spec.order)
    console.print(f"✅ Prepotencial válido: {len(P.L.poly)} términos, n={P.n}, orden {P.order}")


@app.command()
@guarded
def build(
    path: Annotated[str, typer.Argument(help="Archivo JobSpec (JSON)")],
    out: Annotated[Optional[str], typer.Option("--out", help="Ruta del informe JSON")] = None,
    order: Annotated[Optional[int], typer.Option("--order", help="Orden de truncamiento")] = None,
    backend: Annotated[Optional[str], typer.Option("--backend", help="exact | float")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Semilla")] = None,
    points: Annotated[Optional[str], typer.Option("--points", help="Archivo con puntos de la carta")] = None,
    timings: Annotated[bool, typer.Option("--timings", help="Incluir tiempos en el informe")] = False,
):
    """Ejecuta la receta completa y escribe el informe"""
    spec = _with_overrides(load_job(path), order, backend, seed)
    explicit = load_points(points, 4 * spec.dims.n) if points else None
    report = run_job(spec, points=explicit, timings=timings)
    if out:
        report.write(out)
    console.print(_stage_panel(report))
    console.print(_residual_table(report))
    if report.exit_code:
        raise typer.Exit(code=report.exit_code)


@app.command(name="roundtrip")
@guarded
def roundtrip_cmd(
    path: Annotated[str, typer.Argument(help="Archivo JobSpec (JSON)")],
    corrupt: Annotated[bool, typer.Option("--corrupt", hidden=True)] = False,
):
    """L → marco → L′ y comparación exacta de coeficientes"""
    spec = load_job(path)
    P = validate_prepotential(spec.prepotential_series(), spec.dims.to_dimensions(), spec.order)
    _, mismatches = roundtrip(P, corrupt=corrupt)
    if mismatches:
        for line in mismatches:
            console.print(f"  ❌ {line}")
        raise RoundTripMismatch(f"{len(mismatches)} términos distintos")
    console.print("✅ Ida y vuelta idéntica")


@app.command()
@guarded
def metric(
    path: Annotated[str, typer.Argument(help="Archivo JobSpec (JSON)")],
    points: Annotated[Optional[str], typer.Option("--points", help="Archivo con puntos de la carta")] = None,
    out: Annotated[Optional[str], typer.Option("--out", help="Ruta del resultado JSON")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Semilla")] = None,
):
    """Métrica, signatura y comprobaciones de realidad en puntos de la carta"""
    spec = _with_overrides(load_job(path), None, None, seed)
    dims = spec.dims.to_dimensions()
    rng = np.random.default_rng(spec.seed)
    P = validate_prepotential(spec.prepotential_series(), dims, spec.order)
    Hpp = build_Hpp(P)
    bridge = solve_bridge(P, Hpp)
    frame = build_frame(bridge, Hpp)
    chart = integrate_manifold(frame, bridge, dims, spec.chart.radius, spec.chart.steps, rng)
    xs = load_points(points, 4 * dims.n) if points else sample_chart_points(dims, spec.sample_points,
                                                                             spec.chart.radius, rng)
    entries: List[MetricEntry] = []
    table = Table(title="Métrica", box=box.SIMPLE)
    for column in ("Punto", "Signatura", "Rutas", "Secciones", "Im g"):
        table.add_column(column)
    for x in xs:
        s = metric_at(chart, x, rng)
        entries.append(MetricEntry(point=[round_float(v) for v in s.point], g=round_matrix(s.g),
                                   signature=s.signature, route_gap=round_float(s.route_gap),
                                   section_gap=round_float(s.section_gap),
                                   imag_metric=round_float(s.imag_metric),
                                   symmetric_gap=round_float(s.symmetric_gap)))
        table.add_row(np.array2string(np.asarray(s.point), precision=3), str(s.signature),
                      f"{s.route_gap:.1e}", f"{s.section_gap:.1e}", f"{s.imag_metric:.1e}")
    console.print(table)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            json.dump([e.model_dump(mode="json") for e in entries], f, indent=2, sort_keys=True,
                      ensure_ascii=False)


@app.command(name="flat-test")
@guarded
def flat_test(
    n: Annotated[int, typer.Option("--n", help="Dimensión cuaterniónica")] = 1,
    order: Annotated[int, typer.Option("--order", help="Orden de truncamiento")] = 6,
    samples: Annotated[int, typer.Option("--samples", help="Puntos de la carta")] = 20,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Semilla")] = None,
):
    """Regresión plana: L = 0 debe dar g = I₄⊗η en todos los puntos"""
    spec = JobSpec.model_validate({"dims": {"n": n, "p": n, "q": 0}, "order": order, "prepotential": [],
                                   "sample_points": samples, "ricci_points": 0,
                                   "seed": Config.SEED if seed is None else seed})
    report = run_job(spec)
    console.print(_stage_panel(report))
    if report.exit_code:
        raise typer.Exit(code=report.exit_code)
    target = norm_matrix(spec.dims.to_dimensions())
    worst = max(float(np.max(np.abs(np.array(m.g) - target))) for m in report.metric)
    console.print(f"max |g − I₄⊗η| = {worst:.3e} en {len(report.metric)} puntos")
    if worst > 1e-10:
        console.print("[bold red]❌ La métrica plana no coincide[/bold red]")
        raise typer.Exit(code=3)
    console.print("✅ Métrica plana reproducida")


@app.command()
def schema():
    """Imprime el JSON schema de JobSpec"""
    typer.echo(json.dumps(JobSpec.model_json_schema(), indent=2, sort_keys=True, ensure_ascii=False))


@app.command()
def serve(
    host: Annotated[Optional[str], typer.Option("--host")] = None,
    port: Annotated[Optional[int], typer.Option("--port")] = None,
):
    """Levanta el servicio HTTP"""
    import uvicorn

    Config.validate()
    Config.print_config()
    uvicorn.run("main:app", host=host or Config.HOST, port=port or Config.PORT, reload=Config.DEBUG)


if __name__ == "__main__":
    app()
