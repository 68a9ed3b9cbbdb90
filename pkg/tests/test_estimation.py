import math

import numpy as np
import pytest

from uavsense.errors import DegenerateElevation, NullInput, SingularScale
from uavsense.estimation import (
    GrqContext,
    SearchGrids,
    aoa_2d_oracle,
    aoa_grq,
    delay_range,
    doppler_velocity,
    estimate_targets,
    estimates_from_records,
    estimates_to_records,
    grids_from_beams,
    resolve_scaling_and_alpha,
)
from uavsense.scene import C0
from uavsense.tensorops import balanced_plan, decompose, smooth, unfold_mode1
from uavsense.waveform import (
    beam_signature,
    design_alignment_beams,
    doppler_phasor,
    steering_upa,
    synthesize_rx_tensor,
)
from conftest import make_bs, param_pair


def test_delay_range_zero_phase():
    tau, dist = delay_range(1.0 + 0.0j, 30e3)
    assert tau == 0.0 and dist == 0.0


def test_delay_range_forward_phase_oracle():
    scs = 30e3
    tau_true = 1e-6
    z = np.exp(-2j * math.pi * scs * tau_true)
    tau, dist = delay_range(complex(z), scs)
    assert tau == pytest.approx(tau_true, rel=1e-12)
    assert dist == pytest.approx(1e-6 * C0 / 2.0, rel=1e-12)
    assert dist == pytest.approx(149.896229, abs=1e-6)


def test_delay_range_wrap_behavior():
    scs = 30e3
    d_max = C0 / (2 * scs)
    for d_true, expected in [
        (d_max - 1.0, d_max - 1.0),       # just inside: recovered exactly
        (d_max + 1.0, 1.0),               # just outside: aliases by one interval
    ]:
        z = np.exp(-2j * math.pi * scs * 2 * d_true / C0)
        _, dist = delay_range(complex(z), scs)
        assert dist == pytest.approx(expected, abs=1e-6)


def test_doppler_all_ones_is_zero(desk_bs):
    grid = np.linspace(-1000.0, 1000.0, 201)
    f, v = doppler_velocity(np.ones(desk_bs.n, dtype=complex), grid,
                            desk_bs.symbol_period, desk_bs.wavelength)
    assert f == 0.0 and v == 0.0


def test_doppler_on_grid_exact(desk_bs):
    grid = np.arange(-1000.0, 1001.0, 10.0)
    o = doppler_phasor(500.0, desk_bs.n, desk_bs.symbol_period)
    f, v = doppler_velocity(o, grid, desk_bs.symbol_period, desk_bs.wavelength)
    assert f == 500.0
    assert v == pytest.approx(500.0 * desk_bs.wavelength / 2.0, rel=1e-12)


def test_doppler_global_phase_invariance(desk_bs, rng):
    grid = np.linspace(-1200.0, 1200.0, 241)
    o = doppler_phasor(337.0, desk_bs.n, desk_bs.symbol_period)
    f0, _ = doppler_velocity(o, grid, desk_bs.symbol_period, desk_bs.wavelength)
    f1, _ = doppler_velocity(np.exp(1.3j) * o, grid, desk_bs.symbol_period,
                             desk_bs.wavelength)
    assert f0 == f1


def _grids(n_psi=128, n_vt=128):
    return SearchGrids(
        doppler=np.linspace(-1000, 1000, 101),
        psi=np.linspace(-0.8, 0.8, n_psi),
        vartheta=np.linspace(-0.8, 0.8, n_vt),
    )


def test_grq_full_digital_on_grid_matches_oracle(rng):
    # full-digital: combiner is the identity over all antennas
    p = q = 4
    f_rx = np.eye(p * q, dtype=complex)
    f_tx = np.ones(p * q, dtype=complex)
    grids = _grids()
    for _ in range(20):
        gi = int(rng.integers(1, grids.psi.size - 1))
        vi = int(rng.integers(1, grids.vartheta.size - 1))
        b = steering_upa(grids.vartheta[vi], grids.psi[gi], p, q) * (2.0 - 1.0j)
        est = aoa_grq(b, f_rx, p, q, grids)
        oracle = aoa_2d_oracle(b, f_rx, f_tx, p, q, grids)
        assert est.psi_index == gi and est.vartheta_index == vi
        assert (oracle.psi_index, oracle.vartheta_index) == (gi, vi)


def test_grq_hbf_on_grid_matches_oracle(desk_bs, rng):
    grids = _grids()
    for _ in range(10):
        gi = int(rng.integers(1, grids.psi.size - 1))
        vi = int(rng.integers(1, grids.vartheta.size - 1))
        vt, ps = grids.vartheta[vi], grids.psi[gi]
        beams = design_alignment_beams([(vt, ps)], desk_bs, rng)
        b = beam_signature((vt, ps), beams[1].matrix, beams[0].equivalent_vector,
                           desk_bs.p, desk_bs.q)
        est = aoa_grq(b, beams[1].matrix, desk_bs.p, desk_bs.q, grids)
        oracle = aoa_2d_oracle(b, beams[1].matrix, beams[0].equivalent_vector,
                               desk_bs.p, desk_bs.q, grids)
        assert (est.psi_index, est.vartheta_index) == (gi, vi)
        assert (oracle.psi_index, oracle.vartheta_index) == (gi, vi)


def test_grq_trace_fast_path_matches_full_matrix(desk_bs, rng):
    grids = _grids(n_psi=32)
    beams = design_alignment_beams([(0.2, 0.3)], desk_bs, rng)
    f_rx = beams[1].matrix
    b = rng.normal(size=desk_bs.r) + 1j * rng.normal(size=desk_bs.r)
    ctx = GrqContext(f_rx, desk_bs.p, desk_bs.q, grids.psi)
    fast = ctx.trace_curve(b)
    p = desk_bs.p
    for gi in range(grids.psi.size):
        a_q = np.exp(1j * math.pi * grids.psi[gi] * np.arange(desk_bs.q))
        sel = np.kron(a_q[:, None], np.eye(p))  # a_q kron I_p
        q1 = sel.conj().T @ f_rx @ np.outer(b, b.conj()) @ f_rx.conj().T @ sel
        q2 = sel.conj().T @ f_rx @ f_rx.conj().T @ sel
        phi = np.linalg.pinv(q2, rcond=1e-10, hermitian=True) @ q1
        assert abs(np.trace(phi).real - fast[gi]) <= 1e-10 * max(1.0, fast[gi])
        # rank-1 structure and trace = max eigenvalue (both real, nonnegative)
        eigs = np.linalg.eigvals(phi)
        assert np.sort(np.abs(eigs))[-2] < 1e-8 * max(1.0, np.abs(eigs).max())
        assert abs(np.trace(phi).real - np.max(eigs.real)) < 1e-9 * max(1.0, fast[gi])


def test_grq_scale_invariance(desk_bs, rng):
    grids = _grids()
    beams = design_alignment_beams([(0.2, 0.3)], desk_bs, rng)
    b = beam_signature((0.2, 0.3), beams[1].matrix, beams[0].equivalent_vector,
                       desk_bs.p, desk_bs.q)
    est1 = aoa_grq(b, beams[1].matrix, desk_bs.p, desk_bs.q, grids)
    est2 = aoa_grq((0.01 - 3.7j) * b, beams[1].matrix, desk_bs.p, desk_bs.q, grids)
    assert (est1.psi_index, est1.vartheta_index) == (est2.psi_index, est2.vartheta_index)


def test_grq_null_input(desk_bs, rng):
    beams = design_alignment_beams([(0.2, 0.3)], desk_bs, rng)
    with pytest.raises(NullInput):
        aoa_grq(np.zeros(desk_bs.r, dtype=complex), beams[1].matrix,
                desk_bs.p, desk_bs.q, _grids())
    with pytest.raises(NullInput):
        aoa_2d_oracle(np.zeros(desk_bs.r, dtype=complex), beams[1].matrix,
                      beams[0].equivalent_vector, desk_bs.p, desk_bs.q, _grids())


def test_grq_degenerate_elevation(rng):
    p = q = 4
    f_rx = np.eye(p * q, dtype=complex)
    grids = SearchGrids(
        doppler=np.linspace(-100, 100, 11),
        psi=np.array([0.9, 0.95, 1.0]),
        vartheta=np.array([-0.05, 0.0, 0.05]),
    )
    b = steering_upa(0.0, 1.0, p, q)
    with pytest.raises(DegenerateElevation):
        aoa_grq(b, f_rx, p, q, grids)


def test_oracle_conjugate_symmetry(rng):
    p = q = 4
    f_rx = np.eye(p * q, dtype=complex)
    f_tx = np.ones(p * q, dtype=complex)
    grids = _grids(65, 65)  # symmetric grids including 0
    b = steering_upa(0.3, 0.4, p, q)
    e1 = aoa_2d_oracle(b, f_rx, f_tx, p, q, grids)
    e2 = aoa_2d_oracle(b.conj(), f_rx, f_tx, p, q, grids)
    assert e2.psi == pytest.approx(-e1.psi, abs=1e-12)
    assert e2.vartheta == pytest.approx(-e1.vartheta, abs=1e-12)


def _noiseless_factors(bs, pairs, rng, k=None):
    beams = design_alignment_beams([(p.vartheta, p.psi) for p in pairs], bs, rng)
    rx = synthesize_rx_tensor(bs, pairs, beams, 0.0, rng)
    plan = balanced_plan(bs.m)
    fac = decompose(smooth(unfold_mode1(rx), plan), k or len(pairs), plan)
    return fac, beams


def _on_grid_pairs(bs, grids, rng, k=3, alphas=None):
    pairs = []
    used = set()
    while len(pairs) < k:
        gi = int(rng.integers(5, grids.psi.size - 5))
        vi = int(rng.integers(5, grids.vartheta.size - 5))
        di = int(rng.integers(1, grids.doppler.size - 1))
        dist = float(rng.uniform(150, 900))
        if any(abs(dist - p.range_m) < 40 for p in pairs) or (gi, vi) in used:
            continue
        used.add((gi, vi))
        vt, ps = float(grids.vartheta[vi]), float(grids.psi[gi])
        if vt**2 + ps**2 >= 0.95:
            continue
        alpha = (alphas[len(pairs)] if alphas is not None
                 else complex(rng.normal(), rng.normal()))
        pairs.append(param_pair(
            bs, vt, ps, dist,
            float(grids.doppler[di]) * bs.wavelength / 2.0, alpha=alpha,
        ))
    return pairs


def test_resolve_scaling_recovers_alpha(desk_bs, rng):
    grids = SearchGrids(
        doppler=np.linspace(-1500, 1500, 601),
        psi=np.linspace(0.05, 0.65, 256),
        vartheta=np.linspace(-0.5, 0.5, 256),
    )
    alphas = [1.0 + 0.0j, -0.5 + 1.2j, 0.3 - 0.8j]
    pairs = _on_grid_pairs(desk_bs, grids, rng, k=3, alphas=alphas)
    fac, beams = _noiseless_factors(desk_bs, pairs, rng)
    est = estimate_targets(fac, desk_bs, beams[1].matrix,
                           beams[0].equivalent_vector, grids)
    got = sorted((round(t.range_m, 3), t.alpha) for t in est)
    want = sorted((round(p.range_m, 3), p.alpha) for p in pairs)
    for (rg, ag), (rw, aw) in zip(got, want):
        assert rg == pytest.approx(rw, abs=1e-3)
        assert abs(ag - aw) / abs(aw) < 1e-6
        # single-target phase accuracy implied by the complex ratio
        assert abs(np.angle(ag / aw)) < 1e-6


def test_resolve_scaling_cancellation(desk_bs, rng):
    grids = SearchGrids(
        doppler=np.linspace(-1500, 1500, 601),
        psi=np.linspace(0.05, 0.65, 256),
        vartheta=np.linspace(-0.5, 0.5, 256),
    )
    pairs = _on_grid_pairs(desk_bs, grids, rng, k=2)
    fac, beams = _noiseless_factors(desk_bs, pairs, rng)
    import dataclasses

    c = 0.7 - 1.9j
    scaled = dataclasses.replace(fac, a2=fac.a2 * c, a1=fac.a1 / c)
    est0 = estimate_targets(fac, desk_bs, beams[1].matrix,
                            beams[0].equivalent_vector, grids)
    est1 = estimate_targets(scaled, desk_bs, beams[1].matrix,
                            beams[0].equivalent_vector, grids)
    for t0, t1 in zip(est0, est1):
        assert abs(t0.alpha - t1.alpha) < 1e-9 * abs(t0.alpha)


def test_resolve_scaling_singular_guard(desk_bs, rng):
    grids = _grids()
    pairs = [param_pair(desk_bs, 0.2, 0.3, 300.0, 5.0)]
    fac, beams = _noiseless_factors(desk_bs, pairs, rng)
    import dataclasses

    broken = dataclasses.replace(fac, a2=fac.a2 * 0.0)
    with pytest.raises(SingularScale):
        estimate_targets(broken, desk_bs, beams[1].matrix,
                         beams[0].equivalent_vector, grids)


def test_estimate_set_invariant_definitions(desk_bs, rng):
    grids = SearchGrids(
        doppler=np.linspace(-1500, 1500, 601),
        psi=np.linspace(0.05, 0.65, 256),
        vartheta=np.linspace(-0.5, 0.5, 256),
    )
    pairs = _on_grid_pairs(desk_bs, grids, rng, k=2)
    fac, beams = _noiseless_factors(desk_bs, pairs, rng)
    est = estimate_targets(fac, desk_bs, beams[1].matrix,
                           beams[0].equivalent_vector, grids)
    for t in est:
        assert t.range_m == pytest.approx(t.delay_s * C0 / 2.0, rel=1e-12)
        assert t.radial_velocity == pytest.approx(
            t.doppler_hz * desk_bs.wavelength / 2.0, rel=1e-12)
        assert t.elevation == pytest.approx(math.acos(t.psi), rel=1e-12)
        assert t.azimuth == pytest.approx(
            math.acos(t.vartheta / math.sin(t.elevation)), rel=1e-12)


def test_grids_from_beams_footprint(desk_bs):
    grids = grids_from_beams([(0.1, 0.3), (0.2, 0.4)], desk_bs, max_speed=28.0)
    assert grids.psi.min() == pytest.approx(0.3 - 2 * 2 / desk_bs.q)
    assert grids.psi.max() == pytest.approx(0.4 + 2 * 2 / desk_bs.q)
    assert grids.vartheta.min() == pytest.approx(0.1 - 2 * 2 / desk_bs.p)
    assert grids.doppler.max() == pytest.approx(1.5 * 2 * 28.0 / desk_bs.wavelength)


def test_wire_records_round_trip(desk_bs, rng):
    grids = SearchGrids(
        doppler=np.linspace(-1500, 1500, 601),
        psi=np.linspace(0.05, 0.65, 256),
        vartheta=np.linspace(-0.5, 0.5, 256),
    )
    pairs = _on_grid_pairs(desk_bs, grids, rng, k=2)
    fac, beams = _noiseless_factors(desk_bs, pairs, rng)
    est = estimate_targets(fac, desk_bs, beams[1].matrix,
                           beams[0].equivalent_vector, grids)
    records = estimates_to_records(3, est)
    assert all(r["version"] == 1 and r["bs_id"] == 3 for r in records)
    assert [r["target_idx"] for r in records] == [0, 1]
    grouped = estimates_from_records(records)
    assert list(grouped) == [3]
    assert grouped[3][0]["range"] == est.targets[0].range_m
    bad = dict(records[0])
    bad["version"] = 99
    with pytest.raises(ValueError):
        estimates_from_records([bad])
