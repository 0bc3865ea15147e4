import numpy as np
import pytest

from minnaert_control.bubbles import BubbleEnsemble, TransducerArray, build_ensemble
from minnaert_control.spectral import SpectralBand
from minnaert_control.transfer import (
    ContourTooClose,
    NoConvergence,
    NotSimple,
    SMatrixEvaluator,
    asymptotic_pole,
    cluster_poles,
    cluster_trace_matrix,
    count_poles_in_disk,
    eval_pencil,
    find_pole,
    gain_sweep,
    interaction_from_matrix,
    interaction_matrix,
    principal_pole,
    residue_at,
    toeplitz_bounds,
    toeplitz_matrix,
    transducer_accessibility,
    tune_cluster,
    write_gain_table,
    write_pole_table,
)

C0 = 5.0
WM = 5.0
CAP = 0.05


def cluster(n, eps=0.01, geometry="equidistant", wm=WM, cap=CAP, centre=(0.0, 0.0, 0.0)):
    return build_ensemble([centre], n, geometry, 1.0, wm, cap, eps, 0.5)


def single(wm=2 * np.pi, cap=1.0, eps=0.1):
    return BubbleEnsemble([[0, 0, 0]], [0], [[0, 0, 0]], wm, cap, eps, 0.5)


def test_pencil_examples():
    e = single(wm=3.0)
    s = 0.7 + 2.0j
    assert eval_pencil(e, 1.0, s)[0, 0] == pytest.approx(s**2 / 9 + 1)
    assert abs(eval_pencil(e, 1.0, 3j)[0, 0]) < 1e-15
    e3 = cluster(3)
    assert np.allclose(eval_pencil(e3, C0, 0.0), np.eye(3))
    P = eval_pencil(e3, C0, s)
    assert np.allclose(eval_pencil(e3, C0, np.conj(s)), P.conj())


def test_hb_conjugate_symmetry_and_scalar_form():
    ev = SMatrixEvaluator(cluster(3), C0)
    s = 0.3 + 4.1j
    assert np.allclose(ev.Hb(np.conj(s)), ev.Hb(s).conj())
    e1 = single(wm=3.0, cap=2.0, eps=0.1)
    h = SMatrixEvaluator(e1, 1.0).Hb(s)[0, 0]
    assert h == pytest.approx(-0.2 * s**2 / (s**2 / 9 + 1))


def test_find_pole_single_bubble():
    ev = SMatrixEvaluator(single(), 1.0)
    p = find_pole(ev, 6.0j)
    assert abs(p.s.real) < 1e-10 and p.s.imag == pytest.approx(2 * np.pi, rel=1e-12)
    assert p.newton_residual < 1e-10


def test_find_pole_pair_red_shift_and_conjugate():
    e = cluster(2)
    ev = SMatrixEvaluator(e, C0)
    p = find_pole(ev, 1j * WM)
    ap = asymptotic_pole(e, 0, C0)
    assert p.omega < WM
    assert WM - p.omega == pytest.approx(ap.shift, rel=0.05)
    q = find_pole(ev, np.conj(p.s))
    assert abs(q.s - np.conj(p.s)) < 1e-9


def test_find_pole_no_convergence():
    ev = SMatrixEvaluator(single(), 1.0)
    with pytest.raises(NoConvergence):
        find_pole(ev, 6.0j, max_iter=1, tol=1e-30)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_count_poles_in_cluster_disk(n):
    e = cluster(n)
    ev = SMatrixEvaluator(e, C0)
    ap = asymptotic_pole(e, 0, C0)
    radius = WM / 10 if n == 1 else 4 * ap.shift
    c = count_poles_in_disk(ev, 1j * WM, radius)
    assert c.count == n and c.rounding_distance < 1e-6


def test_count_poles_empty_and_too_close():
    ev = SMatrixEvaluator(single(), 1.0)
    assert count_poles_in_disk(ev, 20j, 1.0).count == 0
    with pytest.raises(ContourTooClose):
        count_poles_in_disk(ev, 2 * np.pi * 1j - 0.5, 0.5, n_quad=4)


def test_residue_single_bubble_closed_form():
    e = single(wm=3.0, cap=2.0, eps=0.1)
    ev = SMatrixEvaluator(e, 1.0)
    R = residue_at(ev, find_pole(ev, 3j))
    want = 0.1 * 2.0 * 27 / (2j)
    assert R[0, 0] == pytest.approx(want, rel=1e-10)
    Rc = residue_at(ev, find_pole(ev, -3j))
    assert Rc[0, 0] == pytest.approx(np.conj(want), rel=1e-10)


def test_residue_radius_independence_and_simplicity():
    e = cluster(2)
    ev = SMatrixEvaluator(e, C0)
    p = principal_pole(ev, 0)
    r = min(asymptotic_pole(e, 0, C0).gap / 4, p.eta / 2)
    R1 = residue_at(ev, p, radius=r)
    R2 = residue_at(ev, p, radius=r / 2)
    assert np.linalg.norm(R1 - R2) <= 1e-8 * np.linalg.norm(R1)
    assert np.linalg.norm(R1) > 0
    with pytest.raises(NotSimple):
        residue_at(ev, p, radius=4 * asymptotic_pole(e, 0, C0).shift)


def test_interaction_examples():
    tet = interaction_matrix(cluster(4), 0)
    assert tet.mu1 == pytest.approx(3.0, abs=1e-10) and tet.mu2 == pytest.approx(-1.0, abs=1e-8)
    assert tet.gap == pytest.approx(4.0, abs=1e-8)
    assert np.allclose(np.linalg.eigvalsh(tet.matrix), [-1, -1, -1, 3])

    chain = interaction_matrix(cluster(3, geometry="chain"), 0)
    roots = np.roots([1, 0, -2.25, -1])
    mu1 = roots.real[np.argmax(roots.real)]
    assert chain.mu1 == pytest.approx(mu1, abs=1e-10) and chain.mu1 == pytest.approx(1.686, abs=1e-3)
    lo, hi = toeplitz_bounds(3)
    assert lo <= chain.mu1 <= hi
    assert np.all(chain.v > 0) and np.all(chain.w > 0) and chain.mu1 > chain.mu2

    assert interaction_matrix(single(), 0).mu1 == 0.0


@pytest.mark.parametrize("n", [2, 3, 5, 6, 8])
def test_toeplitz_bounds(n):
    mu = np.linalg.eigvalsh(toeplitz_matrix(n))
    lo, hi = toeplitz_bounds(n)
    assert lo <= mu[-1] <= hi
    im = interaction_from_matrix(toeplitz_matrix(n))
    assert im.mu1 == pytest.approx(mu[-1], abs=1e-10)
    assert im.mu2 == pytest.approx(mu[-2], abs=1e-8)
    assert np.all(im.v > 0) and np.all(im.w > 0)


def test_toeplitz_bounds_examples():
    assert toeplitz_bounds(6) == pytest.approx((137 / 60, 2 * 11 / 6))
    assert toeplitz_bounds(2) == pytest.approx((1.0, 2.0))
    assert toeplitz_bounds(3) == pytest.approx((1.5, 2.0))
    with pytest.raises(ValueError):
        toeplitz_bounds(1)


def test_asymptotic_pole_examples():
    one = asymptotic_pole(single(wm=3.0), 0, 1.0)
    assert one.omega == 3.0 and one.eta == 0.0 and np.isinf(one.gap)
    eps = 0.01
    ap = asymptotic_pole(cluster(2, eps=eps), 0, C0)
    assert ap.omega == pytest.approx(WM - WM**3 * CAP * eps**0.5 / (8 * np.pi))
    ap2 = asymptotic_pole(cluster(2, eps=eps, cap=2 * CAP), 0, C0)
    assert ap2.shift == pytest.approx(2 * ap.shift) and ap2.gap == pytest.approx(2 * ap.gap)


def test_damping_positive_and_linear_in_eps():
    eps = np.array([5e-3, 1e-2, 2e-2, 4e-2])
    eta = []
    for e in eps:
        for n in (2, 3, 4):
            p = principal_pole(SMatrixEvaluator(cluster(n, eps=e), C0), 0)
            assert p.s.real < 0
        eta.append(principal_pole(SMatrixEvaluator(cluster(2, eps=e), C0), 0).eta)
    slope = np.polyfit(np.log(eps), np.log(eta), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_subradiant_pole_of_a_pair_grows():
    """With q_ii = 0 the antisymmetric pair mode sits in the right half plane.

    This is a property of the effective delayed model (no self-radiation
    term), recorded here so a change in sign is noticed.
    """
    e = cluster(2)
    ev = SMatrixEvaluator(e, C0)
    poles = cluster_poles(ev, 0)
    assert len(poles) == 2
    anti = max(poles, key=lambda p: p.omega)
    assert anti.s.real > 0
    assert anti.s.real == pytest.approx(principal_pole(ev, 0).eta, rel=0.5)


def test_pole_separation_and_count_conservation():
    y = [[0, 0, 0], [0, 0.3, 0]]
    ens = build_ensemble(y, [3, 2], "equidistant", 1.0, [WM, 1.2 * WM], CAP, 0.005, 0.5)
    ev = SMatrixEvaluator(ens, C0)
    total = 0
    principal = []
    for a in range(2):
        ap = asymptotic_pole(ens, a, C0)
        wm = ens.cluster_omega(a)
        total += count_poles_in_disk(ev, 1j * wm, 4 * ap.shift).count
        poles = cluster_poles(ev, a)
        p = principal_pole(ev, a)
        others = [abs(q.s - p.s) for q in poles if abs(q.s - p.s) > 1e-8]
        assert min(others) >= 0.5 * ap.gap
        principal.append(p)
    assert total == ens.M
    delta_omega = abs(ens.cluster_omega(1) - ens.cluster_omega(0))
    assert abs(principal[1].omega - principal[0].omega) >= 0.5 * delta_omega


def test_trace_perturbation_linear_in_radius():
    arr = TransducerArray([[3.0, 0.2, 0.1], [-2.0, 2.5, 0.4], [0.3, -2.8, 1.9]])

    def defect(eps):
        e = build_ensemble([[0, 0, 0], [0, 0.4, 0]], 3, "equidistant", 1.0, [WM, 1.2 * WM], CAP, eps, 0.5)
        ev = SMatrixEvaluator(e, C0, arr)
        s = 1j * WM
        lifted = ev.Gtr_cluster(s)[e.labels]
        return np.max(np.abs(ev.Gtr(s) - lifted))

    assert defect(0.04) / defect(0.01) == pytest.approx(2.0, abs=0.2)


def test_gain_sweep_off_band_linear_in_eps():
    band = SpectralBand([(1.0, 2.0)])
    g1 = gain_sweep(SMatrixEvaluator(single(wm=WM, eps=0.1), 1.0), band, 32)
    g2 = gain_sweep(SMatrixEvaluator(single(wm=WM, eps=0.2), 1.0), band, 32)
    r = max(g.norm_hb for g in g2) / max(g.norm_hb for g in g1)
    assert r == pytest.approx(2.0, abs=1e-6)
    assert gain_sweep(SMatrixEvaluator(single(), 1.0), [], 32) == []
    with pytest.raises(ValueError):
        gain_sweep(SMatrixEvaluator(single(), 1.0), band, 8)


def test_gain_peak_matches_lorentzian():
    e = cluster(2)
    ev = SMatrixEvaluator(e, C0)
    p = principal_pole(ev, 0)
    band = SpectralBand([(p.omega - 3 * p.eta, p.omega + 3 * p.eta)])
    peak = max(g.norm_hb for g in gain_sweep(ev, band, 257))
    lorentz = e.eps * CAP * WM**3 / (2 * p.eta)
    assert lorentz / 2 <= peak <= 2 * lorentz


def test_tune_cluster_examples():
    one = single(wm=5.0, cap=1.0, eps=0.01)
    assert tune_cluster(one, 0, 5.3, 1.0) == pytest.approx(5.3, rel=1e-9)
    e = cluster(2)
    target = 4.9
    wm = tune_cluster(e, 0, target, C0)
    tuned = e.with_cluster_omega(0, wm)
    assert principal_pole(SMatrixEvaluator(tuned, C0), 0).omega == pytest.approx(target, rel=1e-9)
    first_order = target + target**3 * CAP * e.eps**0.5 / (8 * np.pi)
    assert wm == pytest.approx(first_order, rel=0.01)
    with pytest.raises(NoConvergence):
        tune_cluster(e, 0, 2 * WM, C0)


def test_transducer_accessibility_examples():
    R = 4.0
    arr = TransducerArray([[R, 0, 0]], rho_c=1.3)
    band = SpectralBand([(4.0, 6.0)])
    assert transducer_accessibility(arr, [[0, 0, 0]], 1.0, band) == pytest.approx(1.3 / (4 * np.pi * R))

    # every transducer on the bisecting plane x = 0 of the two centres
    plane = TransducerArray([[0, 3.0, 0], [0, 0, 3.0], [0, -2.0, 2.0]])
    centres = [[-0.2, 0, 0], [0.2, 0, 0]]
    assert transducer_accessibility(plane, centres, 1.0, band) < 1e-12

    base = TransducerArray([[3, 0.3, 0], [0.2, 3, 0.1]])
    more = TransducerArray([[3, 0.3, 0], [0.2, 3, 0.1], [-1, -2, 2]])
    a = transducer_accessibility(base, centres, 1.0, band)
    b = transducer_accessibility(more, centres, 1.0, band)
    assert b >= a - 1e-15
    with pytest.raises(ValueError):
        transducer_accessibility(TransducerArray([[3, 0, 0]]), centres, 1.0, band)


def test_cluster_trace_matrix_matches_green_function():
    arr = TransducerArray([[2.0, 0, 0]], rho_c=1.0)
    s = 0.1 + 3j
    G = cluster_trace_matrix(arr, [[0, 0, 0]], 2.0, s)
    assert G[0, 0] == pytest.approx(np.exp(-s * 1.0) / (8 * np.pi))


def test_tables(tmp_path):
    ev = SMatrixEvaluator(cluster(2), C0, TransducerArray([[3, 0, 0], [0, 3, 0]]))
    p = principal_pole(ev, 0)
    path = write_pole_table([p], tmp_path / "poles.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "cluster,re_s,im_s,eta,omega,residue_norm,newton_residual"
    assert float(lines[1].split(",")[2]) == p.omega
    g = gain_sweep(ev, SpectralBand([(4.0, 5.0)]), 16)
    lines = write_gain_table(g, tmp_path / "gain.csv").read_text().splitlines()
    assert lines[0] == "omega,norm_Hb,smin_Hext,smax_Hext" and len(lines) == 17
