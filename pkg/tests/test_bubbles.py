import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minnaert_control.bubbles import (
    BubbleEnsemble,
    GeometryViolation,
    ProbeTooClose,
    StepTooLarge,
    TransducerArray,
    build_ensemble,
    build_system,
    cluster_outputs,
    cluster_reduction_error,
    default_dt,
    effective_field_at,
    incident_traces,
    integrate_delayed,
    make_cluster_offsets,
    source_amplitudes,
    validate_geometry,
)
from minnaert_control.signals import Signal
from minnaert_control.spectral import BoxDomain


def pair_ensemble(d=1.0, cap=1.0, eps=0.1, wm=2.0, p=0.5):
    return BubbleEnsemble([[0, 0, 0], [d, 0, 0]], [0, 0], [[d / 2, 0, 0]], wm, cap, eps, p)


def test_offsets():
    for n in (2, 3, 4):
        off = make_cluster_offsets(n, "equidistant", 0.3)
        d = np.linalg.norm(off[:, None] - off[None], axis=-1)[np.triu_indices(n, 1)]
        assert np.allclose(d, 0.3)
        assert np.allclose(off.mean(axis=0), 0)
    chain = make_cluster_offsets(3, "chain", 0.5)
    assert np.allclose(np.diff(chain[:, 0]), 0.5)
    with pytest.raises(ValueError):
        make_cluster_offsets(5, "equidistant", 1.0)


def test_validate_geometry_examples():
    ens = build_ensemble([[0, 0, 0], [0, 1.0, 0]], 2, "equidistant", 0.1, [1.0, 2.0], 1.0, eps=0.01, p=0.5)
    rep = validate_geometry(ens)
    # intra distance 0.01 = 0.1 * eps^p
    assert rep.c1 == pytest.approx(0.1) and rep.c2 == pytest.approx(0.1)
    assert rep.d_min == pytest.approx(1.0) and rep.d_max == pytest.approx(np.hypot(1.0, 0.01))
    shared = build_ensemble([[0, 0, 0], [0, 1.0, 0]], 2, "equidistant", 0.1, 1.0, 1.0, eps=0.01, p=0.5)
    with pytest.raises(GeometryViolation, match="detuning"):
        validate_geometry(shared)
    single = BubbleEnsemble([[0.5, 0.5, 0.5]], [0], [[0.5, 0.5, 0.5]], 1.0, 1.0, 0.1, 0.5)
    rep1 = validate_geometry(single)
    assert np.isnan(rep1.c1) and np.isnan(rep1.d_min)


def test_validate_geometry_bounds_name_the_pair():
    ens = build_ensemble([[0, 0, 0], [0, 1.0, 0]], 2, "equidistant", 0.1, [1.0, 2.0], 1.0, eps=0.01, p=0.5)
    with pytest.raises(GeometryViolation, match=r"pair \(0, 1\)"):
        validate_geometry(ens, c_bounds=(0.2, 0.5))
    with pytest.raises(GeometryViolation, match="inter-cluster"):
        validate_geometry(ens, d_bounds=(2.0, 3.0))


def test_build_system_examples():
    one = build_system(BubbleEnsemble([[0, 0, 0]], [0], [[0, 0, 0]], 3.0, 1.0, 0.1, 0.5), 1.0)
    assert np.array_equal(one.q, [[0.0]]) and np.array_equal(one.tau, [[0.0]])
    sys2 = build_system(pair_ensemble(d=1.0, cap=1.0, eps=0.1), 1.0)
    assert sys2.q[0, 1] == pytest.approx(0.1 / (4 * np.pi)) and sys2.q[0, 1] == pytest.approx(0.0079577, abs=1e-7)
    assert sys2.q[1, 0] == sys2.q[0, 1] and sys2.tau[0, 1] == pytest.approx(1.0)
    doubled = build_system(pair_ensemble(eps=0.2), 1.0)
    assert np.allclose(doubled.q, 2 * sys2.q) and np.array_equal(doubled.tau, sys2.tau)


def test_default_dt():
    s = build_system(pair_ensemble(d=1.0, wm=2.0), 1.0)
    assert default_dt(s) == pytest.approx(min(1.0 / 8, 2 * np.pi / 128))
    s = build_system(pair_ensemble(d=0.01, wm=2.0), 1.0)
    assert default_dt(s) == pytest.approx(0.01 / 8)


def test_incident_traces_examples():
    arr = TransducerArray([[1.0, 0, 0]], rho_c=1.0)
    dt = 1e-3
    t = dt * np.arange(3001)
    lam = Signal(0.0, dt, t**2)
    u, udd = incident_traces(arr, lam, [[0, 0, 0]], 1.0, lam_dd=lam.with_values(np.full_like(t, 2.0)))
    want = np.where(t >= 1, (t - 1) ** 2, 0.0) / (4 * np.pi)
    assert np.max(np.abs(u.values[:, 0] - want)) < 1e-12
    assert np.allclose(udd.values[t > 1.01, 0], 2 / (4 * np.pi))

    zero, zdd = incident_traces(arr, lam * 0.0, [[0, 0, 0]], 1.0)
    assert np.all(zero.values == 0) and np.all(zdd.values == 0)

    two = TransducerArray([[1.0, 0, 0], [-1.0, 0, 0]])
    u2, _ = incident_traces(two, Signal(0.0, dt, np.column_stack([t**2, t**2])), [[0, 0, 0]], 1.0)
    assert np.allclose(u2.values, 2 * u.values)

    with pytest.raises(ValueError):
        incident_traces(arr, lam, [[1.0, 0, 0]], 1.0)


def test_clock_advance_shifts_traces():
    dt = 1e-3
    t = dt * np.arange(3001)
    lam = Signal(0.0, dt, np.sin(3 * t) ** 3)
    plain = TransducerArray([[1.0, 0, 0]])
    early = TransducerArray([[1.0, 0, 0]], clock_advance=[0.5])
    u0, _ = incident_traces(plain, lam, [[0, 0, 0]], 1.0)
    u1, _ = incident_traces(early, lam, [[0, 0, 0]], 1.0)
    assert np.allclose(u1.values[:-500], u0.values[500:], atol=1e-12)


def test_undelayed_oscillator():
    ens = BubbleEnsemble([[0, 0, 0]], [0], [[0, 0, 0]], 2.0, 1.0, 0.1, 0.5)
    s = build_system(ens, 1.0)
    dt = 1e-3
    F = Signal(0.0, dt, np.ones(5001))
    Y = integrate_delayed(s, F, dt=dt)
    assert np.max(np.abs(Y.values[:, 0] - (1 - np.cos(2.0 * Y.times)))) < 1e-10
    assert np.all(integrate_delayed(s, F * 0.0, dt=dt).values == 0)


def _smooth_forcing(t, phase=0.0):
    return np.sin(np.pi * np.clip(t / 2.0, 0, 1)) ** 4 * np.sin(7 * t + phase)


def test_exchange_symmetry():
    s = build_system(pair_ensemble(d=0.3, cap=0.5, eps=0.5, wm=6.0), 1.0)
    dt = 0.003
    t = dt * np.arange(2001)
    f = _smooth_forcing(t)
    Y = integrate_delayed(s, Signal(0.0, dt, np.column_stack([f, f])), dt=dt)
    assert np.max(np.abs(Y.values[:, 0] - Y.values[:, 1])) <= 1e-10 * max(1.0, np.max(np.abs(Y.values)))


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(a, b):
    s = build_system(pair_ensemble(d=0.3, cap=0.5, eps=0.5, wm=6.0), 1.0)
    dt = 0.005
    t = dt * np.arange(801)
    F1 = Signal(0.0, dt, np.column_stack([_smooth_forcing(t), _smooth_forcing(t, 1.0)]))
    F2 = Signal(0.0, dt, np.column_stack([_smooth_forcing(t, 2.0), 0 * t]))
    Y1, Y2 = integrate_delayed(s, F1, dt=dt), integrate_delayed(s, F2, dt=dt)
    Y12 = integrate_delayed(s, a * F1 + b * F2, dt=dt)
    assert np.allclose(Y12.values, a * Y1.values + b * Y2.values, atol=1e-11)


def test_delayed_convergence_order():
    s = build_system(pair_ensemble(d=0.3, cap=0.5, eps=0.5, wm=6.0), 1.0)
    base = 0.3 / 4 / 2  # below the method-of-steps limit
    T = 96 * base

    def run(h):
        t = np.arange(int(round(T / h)) + 1) * h
        F = Signal(0.0, h, np.column_stack([_smooth_forcing(t), _smooth_forcing(t, 0.5)]))
        return integrate_delayed(s, F, dt=h)

    ref = run(base / 16)
    errs = []
    for k in (1, 2, 4):
        Y = run(base / k)
        errs.append(np.max(np.abs(Y.values - ref.values[:: 16 // k])))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3)


def test_step_too_large_and_causality():
    s = build_system(pair_ensemble(d=0.3, cap=0.5, eps=0.5, wm=6.0), 1.0)
    F = Signal(0.0, 0.1, np.zeros((10, 2)))
    with pytest.raises(StepTooLarge):
        integrate_delayed(s, F, dt=0.1)
    dt = 0.005
    t = dt * np.arange(801)
    onset = 1.0
    f = np.where(t > onset, np.sin(3 * (t - onset)) ** 4, 0.0)
    Y = integrate_delayed(s, Signal(0.0, dt, np.column_stack([f, 0 * f])), dt=dt)
    # the cubic forcing stencil reaches two samples ahead
    assert np.all(Y.values[t <= onset - 2 * dt] == 0)
    # the second bubble only hears the first after the travel time
    assert np.all(Y.values[t <= onset + 0.3 - 2 * dt, 1] == 0)
    assert np.any(Y.values[:, 1] != 0)


def test_source_amplitudes_and_outputs():
    ens = pair_ensemble(cap=1.0, eps=0.1)
    t = np.linspace(0, 1, 11)
    Y = Signal(0.0, 0.1, np.column_stack([np.sin(t), 0 * t]))
    q = source_amplitudes(ens, Y)
    assert np.allclose(q.values[:, 0], -0.1 * np.sin(t))
    assert np.allclose(source_amplitudes(ens.with_eps(0.2), Y).values, 2 * q.values)
    assert np.all(source_amplitudes(ens, Y * 0.0).values == 0)

    tri = BubbleEnsemble(np.eye(3), [0, 0, 0], [[1 / 3] * 3], 1.0, 1.0, 0.1, 0.5)
    v = Signal(0.0, 0.1, np.column_stack([t] * 3))
    assert np.allclose(cluster_outputs(tri, v).values[:, 0], 3 * t)

    singles = BubbleEnsemble(np.eye(3), [0, 1, 2], np.eye(3), [1.0, 2.0, 3.0], 1.0, 0.1, 0.5)
    r = Signal(0.0, 0.1, np.random.default_rng(0).standard_normal((11, 3)))
    assert np.array_equal(cluster_outputs(singles, r).values, r.values)

    mixed = BubbleEnsemble(np.eye(3), [0, 1, 0], [[0.5, 0, 0.5], [0, 1, 0]], [1.0, 2.0, 1.0], 1.0, 0.1, 0.5)
    Q = cluster_outputs(mixed, r)
    assert np.allclose(Q.values.sum(axis=1), r.values.sum(axis=1), rtol=0, atol=1e-14)


def test_effective_field_examples():
    dt = 1e-3
    t = dt * np.arange(3001)
    Q = Signal(0.0, dt, t)
    p = effective_field_at([1.0, 0, 0], Q, [[0, 0, 0]], 1.0)
    assert np.max(np.abs(p.values[:, 0] - np.where(t >= 1, t - 1, 0) / (4 * np.pi))) < 1e-12
    assert np.all(effective_field_at([1.0, 0, 0], Q * 0.0, [[0, 0, 0]], 1.0).values == 0)
    Q2 = Signal(0.0, dt, np.column_stack([t, t**2]))
    both = effective_field_at([1.0, 0.5, 0], Q2, [[0, 0, 0], [0.2, 0, 0]], 1.0)
    a = effective_field_at([1.0, 0.5, 0], Q2.with_values(Q2.values[:, :1]), [[0, 0, 0]], 1.0)
    b = effective_field_at([1.0, 0.5, 0], Q2.with_values(Q2.values[:, 1:]), [[0.2, 0, 0]], 1.0)
    assert np.allclose(both.values, a.values + b.values, atol=1e-14)
    with pytest.raises(ValueError):
        effective_field_at([0.0, 0, 0], Q, [[0, 0, 0]], 1.0)


def _reduction(radius):
    y = np.array([0.5, 0.5, 0.5])
    off = make_cluster_offsets(3, "equidistant", radius)
    ens = BubbleEnsemble(y + off, [0, 0, 0], [y], 10.0, 1.0, 0.1, 0.5)
    dt = 1e-3
    t = dt * np.arange(2001)
    base = np.sin(np.pi * np.clip(t, 0, 1)) ** 4 * np.sin(15 * t)
    # unequal amplitudes, so the cluster dipole moment does not vanish
    q = Signal(0.0, dt, np.column_stack([base, 0.5 * base, -0.2 * base]))
    Q = cluster_outputs(ens, q)
    probes = [[1.5, 0.5, 0.5], [0.5, 1.3, 1.0]]
    return ens, q, Q, probes, cluster_reduction_error(ens, q, Q, probes, 1.0)


def test_cluster_reduction_first_order():
    e1 = _reduction(0.02)[-1]
    e2 = _reduction(0.01)[-1]
    assert e1 > 0 and e1 / e2 == pytest.approx(2.0, rel=0.05)


def test_cluster_reduction_trivial_cases():
    ens, q, Q, probes, _ = _reduction(0.01)
    assert cluster_reduction_error(ens, q * 0.0, Q * 0.0, probes, 1.0) == 0.0
    point = BubbleEnsemble([[0.5] * 3], [0], [[0.5] * 3], 10.0, 1.0, 0.1, 0.5)
    q1 = q.with_values(q.values[:, :1])
    assert cluster_reduction_error(point, q1, cluster_outputs(point, q1), probes, 1.0) == 0.0
    with pytest.raises(ProbeTooClose):
        cluster_reduction_error(ens, q, Q, [[0.52, 0.5, 0.5]], 1.0)


def test_transducers_outside_box():
    dom = BoxDomain((1, 1, 1), 1.0)
    TransducerArray([[2.0, 0.5, 0.5]]).check_outside(dom)
    with pytest.raises(GeometryViolation):
        TransducerArray([[1.0, 0.5, 0.5]]).check_outside(dom)
