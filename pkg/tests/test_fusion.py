import itertools
import math

import numpy as np
import pytest

from uavsense.errors import EmptyGraph, RankDeficientGeometry
from uavsense.fusion import (
    FusionConfig,
    SensingReading,
    associate,
    back_project,
    calibrate_estimates,
    fuse_position,
    fuse_tracks,
    fuse_velocity_residual,
    fuse_velocity_wls,
    mean_fusion,
    pareto_mask,
    reading_from_estimate,
    tracks_to_records,
)
from uavsense.scene import UavTruth, boresight_panel_azimuth, pair_truth, transform_matrix
from conftest import make_bs


# -- helpers -------------------------------------------------------------------

def ring_bs(num, radius=450.0, height=30.0):
    sites = []
    for j in range(num):
        chi = 2 * math.pi * j / num
        pos = np.array([radius * math.cos(chi), radius * math.sin(chi), height])
        sites.append(make_bs(position=pos,
                             panel_azimuth=boresight_panel_azimuth(-pos[:2])))
    return sites


def reading_for(bs, bs_id, position, velocity=np.zeros(3)):
    """Exact reading of a target at ``position`` as seen from ``bs``."""
    pt = pair_truth(bs, UavTruth(position=np.asarray(position, float),
                                 velocity=np.asarray(velocity, float), rcs=0.01))
    return SensingReading(bs_id=bs_id, bs_position=bs.position,
                          panel_azimuth=bs.panel_azimuth, theta=pt.elevation,
                          phi=pt.azimuth, range_m=pt.range_m,
                          radial_velocity=pt.radial_velocity)


def exhaustive_association_oracle(positions_per_bs):
    """Min-total-distance matching over all per-BS permutations.

    Pairwise permutation costs are tabulated once, so the product over per-BS
    permutations (BS 0 pinned to identity) reduces to a broadcast sum.
    """
    k = len(positions_per_bs[0])
    j = len(positions_per_bs)
    pos = [np.asarray(p, dtype=float) for p in positions_per_bs]
    dist = {
        (a, b): np.linalg.norm(pos[a][:, None, :] - pos[b][None, :, :], axis=2)
        for a in range(j) for b in range(a + 1, j)
    }
    perms = np.array(list(itertools.permutations(range(k))))  # (P, k)
    ident = np.arange(k)
    shape = (len(perms),) * (j - 1)
    total = np.zeros(shape)
    for b in range(1, j):
        cost = dist[(0, b)][ident[None, :], perms].sum(axis=1)  # (P,)
        sh = [1] * (j - 1)
        sh[b - 1] = -1
        total += cost.reshape(sh)
    for a in range(1, j):
        for b in range(a + 1, j):
            cost = dist[(a, b)][perms[:, None, :], perms[None, :, :]].sum(axis=2)
            sh = [1] * (j - 1)
            sh[a - 1], sh[b - 1] = cost.shape
            total += cost.reshape(sh)
    idx = np.unravel_index(int(np.argmin(total)), shape)
    full = [tuple(ident)] + [tuple(perms[i]) for i in idx]
    groups = []
    for t in range(k):
        groups.append(tuple(sorted((jj, full[jj][t]) for jj in range(j))))
    return set(groups)


# -- back projection -----------------------------------------------------------

def test_back_project_vertical_invariant_to_panel():
    for az in (0.0, 0.7, -2.0):
        p = back_project(0.0, 0.0, 80.0, np.array([10.0, 20.0, 30.0]), az)
        assert np.allclose(p, [10.0, 20.0, 110.0], atol=1e-12)


def test_back_project_inverts_pair_truth(rng):
    for _ in range(30):
        bs = make_bs(position=rng.uniform(-200, 200, 3) + [0, 0, 230],
                     panel_azimuth=rng.uniform(-math.pi, math.pi))
        target = rng.uniform(-300, 300, 3) + [0, 0, 400]
        rd = reading_for(bs, 0, target)
        assert np.linalg.norm(rd.position - target) < 1e-9


def test_back_project_range_perturbation_moves_along_direction():
    bs = make_bs(position=(100.0, 0.0, 30.0), panel_azimuth=2.1)
    rd = reading_for(bs, 0, [0.0, 50.0, 120.0])
    p0 = back_project(rd.theta, rd.phi, rd.range_m, bs.position, bs.panel_azimuth)
    p1 = back_project(rd.theta, rd.phi, rd.range_m + 5.0, bs.position, bs.panel_azimuth)
    assert np.linalg.norm(p1 - p0) == pytest.approx(5.0, rel=1e-12)
    assert np.allclose((p1 - p0) / 5.0, rd.direction, atol=1e-12)


# -- association ----------------------------------------------------------------

def test_associate_two_bs_two_targets_matches_oracle(rng):
    truths = [np.array([0.0, 0.0, 50.0]), np.array([200.0, 0.0, 50.0])]
    positions = [
        [t + rng.uniform(-1, 1, 3) for t in truths],
        [t + rng.uniform(-1, 1, 3) for t in reversed(truths)],
    ]
    res = associate(positions, threshold=10.0, expected_tracks=2)
    got = {tuple(sorted(g)) for g in res.groups}
    assert got == exhaustive_association_oracle(positions)
    assert res.removed == ()


def test_associate_removes_displaced_false_detection(rng):
    truths = [np.array([0.0, 0.0, 50.0]), np.array([200.0, 0.0, 50.0])]
    positions = [
        [truths[0] + rng.uniform(-1, 1, 3), truths[1] + rng.uniform(-1, 1, 3)],
        [truths[0] + rng.uniform(-1, 1, 3), truths[1] + rng.uniform(-1, 1, 3)],
        [truths[0] + rng.uniform(-1, 1, 3), truths[1] + np.array([500.0, 0, 0])],
    ]
    res = associate(positions, threshold=10.0, expected_tracks=2)
    assert res.removed == ((2, 1),)
    assert any(set(g) == {(0, 0), (1, 0), (2, 0)} for g in res.groups)
    assert any(set(g) == {(0, 1), (1, 1)} for g in res.groups)


def test_associate_cascade_keeps_genuine_pair_together(rng):
    # a false detection at one of two BSs also isolates its true partner;
    # the cut must not then split the surviving genuine pair
    truths = [np.array([0.0, 0.0, 50.0]), np.array([200.0, 0.0, 50.0])]
    positions = [
        [truths[0] + rng.uniform(-1, 1, 3), truths[1] + rng.uniform(-1, 1, 3)],
        [truths[0] + rng.uniform(-1, 1, 3), truths[1] + np.array([500.0, 0, 0])],
    ]
    res = associate(positions, threshold=10.0, expected_tracks=2)
    assert (1, 1) in res.removed
    assert any(set(g) == {(0, 0), (1, 0)} for g in res.groups)


def test_associate_single_track_three_bs():
    pos = np.array([5.0, 6.0, 70.0])
    positions = [[pos], [pos], [pos]]
    res = associate(positions, threshold=10.0, expected_tracks=1)
    assert len(res.groups) == 1 and len(res.groups[0]) == 3


def test_associate_empty_graph():
    positions = [[np.zeros(3)], [np.array([1e4, 0, 0])]]
    with pytest.raises(EmptyGraph):
        associate(positions, threshold=10.0, expected_tracks=1)


def test_associate_oracle_agreement_sweep(rng):
    threshold = 10.0
    for j in (2, 3, 4):
        for k in (1, 2, 3, 5):
            truths = []
            while len(truths) < k:
                cand = np.append(rng.uniform(-300, 300, 2), rng.uniform(40, 200))
                if all(np.linalg.norm(cand - t) > 2 * threshold for t in truths):
                    truths.append(cand)
            positions = []
            for _ in range(j):
                order = rng.permutation(k)
                positions.append([
                    truths[i] + rng.uniform(-1, 1, 3) * threshold / 4 / math.sqrt(3)
                    for i in order
                ])
            res = associate(positions, threshold, expected_tracks=k)
            got = {tuple(sorted(g)) for g in res.groups}
            assert got == exhaustive_association_oracle(positions), (j, k)


def test_associate_infers_track_count_standalone(rng):
    truths = [np.array([0.0, 0.0, 50.0]), np.array([300.0, 0.0, 80.0])]
    positions = [
        [t + rng.uniform(-1, 1, 3) for t in truths],
        [t + rng.uniform(-1, 1, 3) for t in truths],
        [t + rng.uniform(-1, 1, 3) for t in truths],
    ]
    res = associate(positions, threshold=10.0, expected_tracks=None)
    assert len([g for g in res.groups if len(g) >= 2]) == 2


# -- position fusion -------------------------------------------------------------

def test_fuse_position_zero_loss_center_selected():
    sites = ring_bs(3)
    target = np.array([20.0, -40.0, 120.0])
    readings = [reading_for(bs, j, target) for j, bs in enumerate(sites)]
    cfg = FusionConfig(lattice_points_per_axis=11, lattice_half_width=15.0)
    out = fuse_position(readings, cfg)
    # exact readings: the seed equals the target and has zero losses
    assert np.allclose(out.seed, target, atol=1e-9)
    assert np.allclose(out.position, target, atol=1e-9)
    assert out.range_loss == pytest.approx(0.0, abs=1e-9)
    assert out.direction_loss == pytest.approx(0.0, abs=1e-9)


def test_fuse_position_pareto_properties(rng):
    sites = ring_bs(4)
    target = np.array([50.0, 10.0, 90.0])
    readings = []
    for j, bs in enumerate(sites):
        rd = reading_for(bs, j, target)
        readings.append(SensingReading(
            bs_id=j, bs_position=rd.bs_position, panel_azimuth=rd.panel_azimuth,
            theta=rd.theta + rng.normal(0, 0.01),
            phi=rd.phi + rng.normal(0, 0.01),
            range_m=rd.range_m + rng.normal(0, 1.0),
            radial_velocity=0.0,
        ))
    cfg = FusionConfig(lattice_points_per_axis=7, lattice_half_width=12.0)
    out = fuse_position(readings, cfg)
    f_r, f_d = out.lattice_losses
    mask = pareto_mask(f_r, f_d)
    pareto = np.flatnonzero(mask)
    assert np.array_equal(np.sort(out.pareto_indices), np.sort(pareto))
    # the global minimizers of each objective always survive
    assert mask[int(np.argmin(f_r))] and mask[int(np.argmin(f_d))]
    # a strictly dominated point is never selected; range-dominant pick is the
    # f_r argmin over the Pareto set, verified brute force
    brute = ~np.any((f_r[None, :] < f_r[:, None]) & (f_d[None, :] < f_d[:, None]), axis=1)
    assert np.array_equal(mask, brute)
    chosen = pareto[np.argmin(f_r[pareto])]
    assert out.range_loss == f_r[chosen]
    assert all(f_r[chosen] <= f_r[i] for i in pareto)


def test_fuse_position_direction_dominant_rule(rng):
    sites = ring_bs(3)
    target = np.array([0.0, 0.0, 150.0])
    readings = [reading_for(bs, j, target + rng.normal(0, 2.0, 3))
                for j, bs in enumerate(sites)]
    cfg = FusionConfig(lattice_points_per_axis=7, lattice_half_width=10.0,
                       selection_rule="direction_dominant")
    out = fuse_position(readings, cfg)
    f_r, f_d = out.lattice_losses
    pareto = np.flatnonzero(pareto_mask(f_r, f_d))
    assert out.direction_loss == f_d[pareto].min()


def test_fuse_position_single_member_degenerates():
    bs = ring_bs(1)[0]
    rd = reading_for(bs, 0, [10.0, 5.0, 60.0])
    out = fuse_position([rd], FusionConfig())
    assert np.allclose(out.position, rd.position, atol=1e-9)


def test_mean_fusion_is_member_average():
    sites = ring_bs(4)
    target = np.array([0.0, 20.0, 100.0])
    readings = [reading_for(bs, j, target) for j, bs in enumerate(sites)]
    assert np.allclose(mean_fusion(readings), target, atol=1e-9)


# -- calibration ------------------------------------------------------------------

def test_calibrate_exact_and_idempotent(rng):
    sites = ring_bs(3)
    target = np.array([-30.0, 60.0, 140.0])
    readings = [reading_for(bs, j, target + rng.normal(0, 3.0, 3))
                for j, bs in enumerate(sites)]
    cal1 = calibrate_estimates(readings, target)
    for rd in cal1:
        assert np.linalg.norm(rd.position - target) < 1e-9
        assert abs(np.linalg.norm(rd.direction) - 1.0) < 1e-12
    cal2 = calibrate_estimates(cal1, target)
    for a, b in zip(cal1, cal2):
        assert a.theta == pytest.approx(b.theta, abs=1e-15)
        assert a.phi == pytest.approx(b.phi, abs=1e-15)
        assert a.range_m == pytest.approx(b.range_m, rel=1e-15)
    # radial velocities untouched
    for a, b in zip(readings, cal1):
        assert a.radial_velocity == b.radial_velocity


# -- velocity ---------------------------------------------------------------------

def _velocity_scene(j, v_true, rng, noise=0.0, heights=None):
    sites = ring_bs(j)
    target = np.array([40.0, -20.0, 160.0])
    readings = []
    for jj, bs in enumerate(sites):
        rd = reading_for(bs, jj, target, velocity=v_true)
        vr = rd.radial_velocity + (rng.normal(0, noise) if noise else 0.0)
        readings.append(SensingReading(
            bs_id=jj, bs_position=rd.bs_position, panel_azimuth=rd.panel_azimuth,
            theta=rd.theta, phi=rd.phi, range_m=rd.range_m, radial_velocity=vr))
    return readings


def test_wls_exact_recovery(rng):
    v_true = np.array([7.0, -2.0, 3.0])
    readings = _velocity_scene(3, v_true, rng)
    for beta2 in (0.3, 0.5, 2.0):
        out = fuse_velocity_wls(readings, beta2)
        assert np.linalg.norm(out.velocity - v_true) < 1e-9


def test_wls_zero_velocity(rng):
    readings = _velocity_scene(4, np.zeros(3), rng)
    out = fuse_velocity_wls(readings, 0.5)
    assert np.linalg.norm(out.velocity) < 1e-12


def test_wls_too_few_members(rng):
    readings = _velocity_scene(4, np.zeros(3), rng)[:2]
    with pytest.raises(RankDeficientGeometry):
        fuse_velocity_wls(readings, 0.5)
    with pytest.raises(RankDeficientGeometry):
        fuse_velocity_residual(readings, 0.5)


def test_residual_subset_count(rng):
    readings = _velocity_scene(4, np.array([1.0, 2.0, 0.5]), rng, noise=0.2)
    out = fuse_velocity_residual(readings, 0.5)
    if len(out.residuals) > 1:  # not short-circuited by an exact fit
        assert len(out.residuals) == 5  # C(4,3) + C(4,4)
        assert out.subset_sizes == (3, 3, 3, 3, 4)


def test_residual_noiseless_equals_wls(rng):
    v_true = np.array([-4.0, 1.0, 2.0])
    readings = _velocity_scene(4, v_true, rng)
    wls = fuse_velocity_wls(readings, 0.5)
    res = fuse_velocity_residual(readings, 0.5)
    assert np.linalg.norm(res.velocity - wls.velocity) < 1e-9
    assert np.linalg.norm(res.velocity - v_true) < 1e-9


def test_residual_weights_self_consistency(rng):
    # identical subset estimates combine to themselves regardless of weights
    readings = _velocity_scene(5, np.array([2.0, -1.0, 0.3]), rng)
    res = fuse_velocity_residual(readings, 0.5)
    assert np.linalg.norm(res.velocity - np.array([2.0, -1.0, 0.3])) < 1e-9


def test_residual_equals_wls_identity_at_four_members(rng):
    """Leave-one-out inverse-residual weights are the subset-representation
    weights of WLS, so with <= 4 members the two estimators coincide even on
    noisy and corrupted inputs."""
    for seed in range(20):
        r = np.random.default_rng(seed)
        readings = _velocity_scene(4, np.array([3.0, 1.0, -2.0]), r, noise=0.5)
        wls = fuse_velocity_wls(readings, 0.5)
        res = fuse_velocity_residual(readings, 0.5)
        assert np.linalg.norm(res.velocity - wls.velocity) < 1e-8


def test_residual_beats_wls_with_corrupted_radial_five_bs(rng):
    """With one corrupted radial the residual weighting dominates plain WLS
    once the member count exceeds the degenerate-identity regime."""
    v_true = np.array([6.0, -4.0, 2.0])
    wins = 0
    trials = 500
    for t in range(trials):
        r = np.random.default_rng(1000 + t)
        readings = _velocity_scene(5, v_true, r, noise=0.1)
        bad = readings[int(r.integers(5))]
        corrupted = [
            rd if rd is not bad else SensingReading(
                bs_id=rd.bs_id, bs_position=rd.bs_position,
                panel_azimuth=rd.panel_azimuth, theta=rd.theta, phi=rd.phi,
                range_m=rd.range_m, radial_velocity=rd.radial_velocity + 5.0)
            for rd in readings
        ]
        e_wls = np.linalg.norm(fuse_velocity_wls(corrupted, 0.5).velocity - v_true)
        e_res = np.linalg.norm(fuse_velocity_residual(corrupted, 0.5).velocity - v_true)
        wins += e_res <= e_wls
    assert wins >= 0.8 * trials


# -- end-to-end track fusion -------------------------------------------------------

def test_fuse_tracks_end_to_end(rng):
    sites = ring_bs(4)
    targets = [np.array([0.0, 0.0, 80.0]), np.array([150.0, -100.0, 200.0])]
    velocities = [np.array([4.0, 1.0, -0.5]), np.array([-2.0, 3.0, 1.0])]
    readings_per_bs = []
    for j, bs in enumerate(sites):
        rds = [reading_for(bs, j, t, v) for t, v in zip(targets, velocities)]
        readings_per_bs.append(rds)
    tracks, assoc = fuse_tracks(readings_per_bs, FusionConfig(), expected_tracks=2)
    assert len(tracks) == 2
    order = np.argsort([t.position[0] for t in tracks])
    for ti, (pos, vel) in zip(order, zip(targets, velocities)):
        assert np.linalg.norm(tracks[ti].position - pos) < 1e-6
        assert np.linalg.norm(tracks[ti].velocity - vel) < 1e-6
    recs = tracks_to_records(tracks)
    assert all(r["version"] == 1 for r in recs)
    assert all(len(r["members"]) == 4 for r in recs)


def test_reading_from_estimate_dict_and_dataclass(desk_bs):
    rec = {"theta": 1.2, "phi": 0.8, "range": 240.0, "radial_velocity": -3.0}
    rd = reading_from_estimate(2, desk_bs, rec)
    assert rd.bs_id == 2 and rd.range_m == 240.0
    from uavsense.estimation import TargetEstimate

    te = TargetEstimate(elevation=1.2, azimuth=0.8, psi=math.cos(1.2),
                        vartheta=math.sin(1.2) * math.cos(0.8), delay_s=1e-6,
                        range_m=240.0, doppler_hz=10.0, radial_velocity=-3.0,
                        alpha=1j)
    rd2 = reading_from_estimate(2, desk_bs, te)
    assert np.allclose(rd.position, rd2.position)
