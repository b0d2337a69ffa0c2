"""
Pruebas de la receta completa: prepotencial, puente, marco, carta y métrica
"""
from dataclasses import replace

import numpy as np
import pytest
from sympy.polys.domains import QQ

from algebra import Dimensions, HPP, e
from config import Config
from errors import (DependsOnZPlus, NonzeroAtOrigin, NonzeroTorsion, NotCharge4, NotClosed, OutOfChart,
                    ShapeMismatch)
from frames import (FrameField, check_canonical, check_hk_axioms, curvature_symmetry, extract_curvature,
                    lie_bracket)
from jets import ChargedSeries, max_abs_coefficient, uvar, zvar
from pipeline import (build_frame, build_Hpp, chart_metric, extract_prepotential, integrate_manifold,
                      inverse_consistency, metric_at, norm_matrix, order_warnings, random_prepotential,
                      reality_report, ricci_check, roundtrip, run_job, sample_chart_points, solve_bridge,
                      validate_prepotential, zero_prepotential)
from schemas import JobSpec

DIMS = Dimensions(1, 1, 0)


def series(terms, order, n=1):
    return ChargedSeries.from_terms(terms, n, order, charge=None)


def quartic(order=4):
    """L = (z⁻⁰)²(z⁻¹)²/10"""
    return validate_prepotential(series({((0, 0, 0, 0), (0, 0), (2, 2)): QQ(1, 10)}, order), DIMS)


def quadratic(lam=3, order=4):
    """L = λ(u¹₊)²(z⁻⁰)²"""
    return validate_prepotential(series({((2, 0, 0, 0), (0, 0), (2, 0)): lam}, order), DIMS)


def flat_chart(dims=DIMS, order=4, twist=1.0):
    P = zero_prepotential(dims, order)
    Hpp = build_Hpp(P)
    bridge = solve_bridge(P, Hpp)
    frame = build_frame(bridge, Hpp)
    chart = integrate_manifold(frame, bridge, dims, radius=0.05, steps=8,
                               rng=np.random.default_rng(0), twist=twist)
    return chart, bridge


# ============= VALIDACIÓN =============

def test_wrong_charge():
    with pytest.raises(NotCharge4):
        validate_prepotential(series({((0, 0, 0, 0), (0, 0), (2, 0)): 1}, 4), DIMS)


def test_zplus_dependence():
    with pytest.raises(DependsOnZPlus):
        validate_prepotential(series({((3, 0, 0, 0), (1, 0), (2, 0)): 1}, 4), DIMS)


def test_constant_term():
    with pytest.raises(NonzeroAtOrigin):
        validate_prepotential(series({((4, 0, 0, 0), (0, 0), (0, 0)): 1}, 4), DIMS)


def test_linear_prepotential_is_flat():
    """L = (u¹₊)³z⁻⁰: el puente es una traslación y la curvatura se anula"""
    P = validate_prepotential(series({((3, 0, 0, 0), (0, 0), (1, 0)): 1}, 4), DIMS)
    Hpp = build_Hpp(P)
    bridge = solve_bridge(P, Hpp)
    assert max(bridge.residuals.values()) == 0.0
    frame = build_frame(bridge, Hpp)
    assert check_canonical(frame).is_canonical
    assert extract_curvature(frame).is_flat()
    _, mismatches = roundtrip(P)
    assert mismatches == []


def test_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        validate_prepotential(series({((0, 0, 0, 0), (0, 0), (2, 2)): 1}, 4), Dimensions(2, 2, 0))


def test_order_warnings():
    assert order_warnings(quartic(order=4)) == []
    dropped = order_warnings(zero_prepotential(DIMS, 3), supplied_degree=4)
    assert dropped == ["términos de grado 4 descartados al orden 3"]
    cubic = validate_prepotential(series({((1, 0, 0, 0), (0, 0), (3, 0)): 1}, 3), DIMS)
    assert order_warnings(cubic) == ["curvatura no resoluble a este orden"]


# ============= H₊₊ Y PUENTE =============

def test_Hpp_potential():
    Hpp = build_Hpp(quartic())
    z0, z1 = zvar(-1, 0, 1, 4), zvar(-1, 1, 1, 4)
    # v⁻ᵇ = ωᵇᶜ ∂L/∂z⁻ᶜ con ωᵘᵖ = [[0, −1], [1, 0]]
    assert Hpp.coefficient(e(-1, 0)) == z0 * z0 * z1 * QQ(-1, 5)
    assert Hpp.coefficient(e(-1, 1)) == z0 * z1 * z1 * QQ(1, 5)
    assert Hpp.coefficient(HPP) == ChargedSeries.constant(1, 1, 4)


def test_flat_bridge_is_identity():
    P = zero_prepotential(DIMS, 4)
    bridge = solve_bridge(P)
    for a in range(2):
        assert bridge.phi_plus[a] == zvar(+1, a, 1, 4)
        assert bridge.phi_minus[a] == zvar(-1, a, 1, 4)
    assert max(bridge.residuals.values()) == 0.0


def test_quadratic_bridge():
    bridge = solve_bridge(quadratic(lam=3))
    z0, z1 = zvar(-1, 0, 1, 4), zvar(-1, 1, 1, 4)
    u1p, u1m = uvar("u1p", 1, 4), uvar("u1m", 1, 4)
    assert bridge.phi_minus[0] == z0
    assert bridge.phi_minus[1] == z1 + u1p * u1m * z0 * 6
    assert bridge.phi_plus[0] == zvar(+1, 0, 1, 4)


def test_quartic_bridge_residuals():
    bridge = solve_bridge(quartic())
    assert bridge.residuals == {"phi_minus": 0.0, "phi_plus": 0.0, "phi_B": 0.0}


# ============= MARCO E IDA Y VUELTA =============

def test_quartic_frame_is_canonical():
    P = quartic()
    Hpp = build_Hpp(P)
    frame = build_frame(solve_bridge(P, Hpp), Hpp)
    report = check_canonical(frame)
    assert report.is_canonical, report.failures
    curvature = extract_curvature(frame)
    assert not curvature.is_flat()
    assert curvature_symmetry(curvature) == {"sp": 0.0, "ab": 0.0, "total": 0.0}


@pytest.mark.slow
def test_quartic_frame_axioms():
    P = quartic()
    Hpp = build_Hpp(P)
    frame = build_frame(solve_bridge(P, Hpp), Hpp)
    assert check_hk_axioms(frame).passed()


def outside_E(fld):
    return max((max_abs_coefficient(c) for lab, c in fld.coefficients.items() if lab.kind != "E"), default=0.0)


@pytest.mark.parametrize("order", [4, pytest.param(6, marks=pytest.mark.slow)])
def test_quartic_frame_has_no_torsion(order):
    P = quartic(order)
    Hpp = build_Hpp(P)
    frame = build_frame(solve_bridge(P, Hpp), Hpp)
    for a in range(2):
        for b in range(2):
            assert outside_E(lie_bracket(frame.e_plus[a], frame.e_minus[b])) == 0.0
    bracket = lie_bracket(frame.e_minus[0], frame.e_minus[1])
    assert all(max_abs_coefficient(c) == 0.0 for c in bracket.coefficients.values())


def flat_pipeline_frame(order=4):
    P = zero_prepotential(DIMS, order)
    Hpp = build_Hpp(P)
    return build_frame(solve_bridge(P, Hpp), Hpp)


def with_zplus_noise(frame):
    """e₋0 + z⁺⁰z⁺¹ e₊1: rompe [H₊₊, e₋0] = e₊0 y deja torsión en [e₊0, e₋0]"""
    noise = FrameField({e(+1, 1): zvar(+1, 0, 1, frame.order) * zvar(+1, 1, 1, frame.order)},
                       frame.e_minus[0].declared_charge, frame.n, frame.order)
    return replace(frame, e_minus=[frame.e_minus[0] + noise, frame.e_minus[1]])


def test_perturbed_frame_breaks_axioms():
    report = check_hk_axioms(with_zplus_noise(flat_pipeline_frame()))
    assert report.residuals["[Hpp,e-]"] > 0
    assert report.residuals["[e+,e-]"] > 0
    assert not report.passed()


def test_torsion_is_rejected():
    with pytest.raises(NonzeroTorsion):
        extract_curvature(with_zplus_noise(flat_pipeline_frame()))


def test_extract_rejects_non_closed_potential():
    frame = flat_pipeline_frame()
    u1p = uvar("u1p", 1, 4)
    coefficients = dict(frame.Hpp.coefficients)
    # ω_ab δv⁻ᵇ dz⁻ᵃ ∝ (u¹₊)² z⁻⁰ dz⁻¹ no es cerrada
    coefficients[e(-1, 0)] = frame.Hpp.coefficient(e(-1, 0)) + u1p * u1p * zvar(-1, 0, 1, 4)
    broken = replace(frame, Hpp=FrameField(coefficients, 2, 1, 4))
    with pytest.raises(NotClosed):
        extract_prepotential(broken, DIMS)


def test_roundtrip_is_exact():
    extracted, mismatches = roundtrip(quartic())
    assert mismatches == []
    assert extracted.L == quartic().L


def test_roundtrip_detects_corruption():
    _, mismatches = roundtrip(quartic(), corrupt=True)
    assert mismatches


def test_extract_from_flat_frame():
    P = zero_prepotential(DIMS, 4)
    Hpp = build_Hpp(P)
    frame = build_frame(solve_bridge(P, Hpp), Hpp)
    assert extract_prepotential(frame, DIMS).L.is_zero()


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_random_roundtrip(seed):
    P = random_prepotential(1, 4, np.random.default_rng(seed), order=4)
    _, mismatches = roundtrip(P)
    assert mismatches == []


# ============= CARTA Y MÉTRICA =============

@pytest.mark.parametrize("dims", [Dimensions(1, 1, 0), Dimensions(1, 0, 1)])
def test_flat_metric(dims):
    chart, _ = flat_chart(dims)
    rng = np.random.default_rng(4)
    samples = [metric_at(chart, x, rng) for x in sample_chart_points(dims, 4, chart.radius, rng)]
    for s in samples:
        assert np.allclose(s.g, norm_matrix(dims), atol=1e-10)
        assert s.signature == (4 * dims.p, 4 * dims.q)
    assert reality_report(chart, samples)["passed"]


def test_flat_chart_is_linear():
    chart, _ = flat_chart()
    x = np.array([0.01, -0.02, 0.0, 0.015])
    T = chart.tangent(x)
    assert np.allclose(T, chart.pairing, atol=1e-8)
    assert chart.closure_defect(0, 1) < 1e-8


def test_twisted_chart_fails_reality():
    chart, _ = flat_chart(twist=1j)
    rng = np.random.default_rng(4)
    samples = [metric_at(chart, x, rng) for x in sample_chart_points(DIMS, 3, chart.radius, rng)]
    report = reality_report(chart, samples)
    assert not report["passed"]
    assert not report["signature"]


def test_point_outside_chart():
    chart, _ = flat_chart()
    with pytest.raises(OutOfChart):
        metric_at(chart, np.full(4, 2 * chart.radius))
    with pytest.raises(OutOfChart):
        chart.embed(np.full(4, 2 * chart.radius))


def test_flat_ricci_and_inverse():
    chart, bridge = flat_chart()
    table = ricci_check(chart, np.zeros((1, 4)))
    assert table[0]["max_ricci"] < 1e-5
    assert inverse_consistency(bridge, count=3) < 1e-12


def test_chart_metric_matches_metric_at():
    chart, _ = flat_chart()
    xs = sample_chart_points(DIMS, 3, chart.radius, np.random.default_rng(3))
    batch = chart_metric(chart, xs)
    for x, g in zip(xs, batch):
        assert np.allclose(g, metric_at(chart, x).g, atol=1e-12)


@pytest.mark.slow
def test_quartic_ricci_flat():
    P = quartic(order=6)
    Hpp = build_Hpp(P)
    bridge = solve_bridge(P, Hpp)
    frame = build_frame(bridge, Hpp)
    chart = integrate_manifold(frame, bridge, DIMS, radius=0.05, steps=16, rng=np.random.default_rng(0))
    points = sample_chart_points(DIMS, 3, chart.radius, np.random.default_rng(2))
    table = ricci_check(chart, points, h=1e-3)
    assert len(table) == 3
    assert max(row["max_ricci"] for row in table) < 1e-3


def test_ricci_check_in_threads(monkeypatch):
    chart, _ = flat_chart()
    points = sample_chart_points(DIMS, 3, chart.radius, np.random.default_rng(1))
    serial = ricci_check(chart, points)
    monkeypatch.setattr(Config, "THREADS", 2)
    threaded = ricci_check(chart, points)
    assert [r["max_ricci"] for r in threaded] == [r["max_ricci"] for r in serial]


def test_sample_chart_points():
    points = sample_chart_points(DIMS, 5, 0.1, np.random.default_rng(0))
    assert points.shape == (5, 4)
    assert not points[0].any()
    assert np.all(np.abs(points) <= 0.05)


# ============= ORQUESTACIÓN =============

def job(**overrides):
    raw = {"dims": {"n": 1, "p": 1, "q": 0}, "order": 4, "prepotential": [],
           "chart": {"radius": 0.05, "steps": 8}, "sample_points": 3, "ricci_points": 1, "seed": 0}
    raw.update(overrides)
    return JobSpec.model_validate(raw)


def test_run_job_flat():
    report = run_job(job())
    assert report.status == "ok", report.stages
    assert report.exit_code == 0
    assert [s.stage for s in report.stages][-1] == "ricci"
    assert all(r.passed for r in report.residuals)
    for entry in report.metric:
        assert np.allclose(entry.g, norm_matrix(DIMS), atol=1e-10)


def test_run_job_wrong_charge():
    spec = job(prepotential=[{"coeff": [1, 1, 0, 1], "u_exponents": [0, 0, 0, 0], "zminus_exponents": [2, 0]}])
    report = run_job(spec)
    assert report.exit_code == 1
    assert report.stages[-1].stage == "validate"
    assert report.stages[-1].status == "failed"


QUARTIC_TERMS = [{"coeff": [1, 10, 0, 1], "u_exponents": [0, 0, 0, 0], "zminus_exponents": [2, 2]}]


def test_run_job_corrupt():
    report = run_job(job(prepotential=QUARTIC_TERMS), corrupt=True)
    stages = {s.stage: s.status for s in report.stages}
    assert stages["build_frame"] == "ok"
    assert report.stages[-1].stage == "extract_prepotential"
    assert report.stages[-1].status == "failed"
    assert report.exit_code == 3
    assert report.roundtrip_mismatches


@pytest.mark.parametrize("terms", [[], pytest.param(QUARTIC_TERMS, marks=pytest.mark.slow)])
def test_float_backend_matches_exact(terms):
    exact = run_job(job(prepotential=terms))
    floating = run_job(job(prepotential=terms, backend="float"))
    assert exact.status == "ok", exact.stages
    assert floating.status == "ok", floating.stages
    assert floating.roundtrip_mismatches == []
    assert [s.stage for s in floating.stages] == [s.stage for s in exact.stages]
    for a, b in zip(exact.metric, floating.metric):
        assert a.point == b.point
        assert np.allclose(a.g, b.g, atol=1e-8)
        assert a.signature == b.signature


@pytest.mark.slow
def test_run_job_quartic_order_6():
    spec = job(order=6, prepotential=QUARTIC_TERMS, ricci_points=2)
    report = run_job(spec, timings=True)
    assert report.status == "ok", report.stages
    assert report.roundtrip_mismatches == []
    assert report.reality["passed"]
    assert all(m.signature == (4, 0) for m in report.metric)
    assert report.curvature
    assert all(r.max_ricci < 1e-3 for r in report.ricci)
