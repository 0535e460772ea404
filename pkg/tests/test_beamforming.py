"""Beamforming stage tests.

Oracles: closed-form SVD capacity for the digital stage, KKT conditions
for the water filling, brute-force subset search for the path selection,
and a hand-built two-beam reflection pattern (exactly unit modulus, gains
M/2 each) for the passive optimizer on an orthogonal pair.
"""

import numpy as np
import pytest

from riscade.beamforming import (
    BeamformingConfig,
    design_beamforming,
    digital_precoders,
    effective_channel,
    effective_channel_stack,
    hybrid_factorize,
    load_solution,
    optimize_ris_phases,
    passive_gain_matrix,
    passive_gains,
    save_solution,
    select_paths,
    spectral_efficiency,
    water_filling,
)
from riscade.channel import (
    ArrayGeometry,
    ChannelRealization,
    CompositePaths,
    OfdmConfig,
    bs_ris_channel,
    composite_paths,
    random_realization,
    ris_ue_channel,
    steering_irs,
)

GEOM = ArrayGeometry(8, 8, 8, 8)
OFDM = OfdmConfig(128, 8, 0.32e9)
LOOSE = dict(bs_corr_max=1 - 1e-12, ue_corr_max=1 - 1e-12)


def _rand_stack(rng, n_p, n_r, n_t):
    return rng.standard_normal((n_p, n_r, n_t)) + 1j * rng.standard_normal((n_p, n_r, n_t))


def test_se_matches_svd_capacity():
    rng = np.random.default_rng(0)
    cfg = BeamformingConfig(n_streams=2, noise_var=0.05, tx_power=2.0)
    h = _rand_stack(rng, 3, 4, 5)
    f, w = digital_precoders(h, cfg)
    got = spectral_efficiency(h, f, w, cfg.noise_var)
    want = 0.0
    for p in range(3):
        s = np.linalg.svd(h[p], compute_uv=False)[:2]
        alloc = water_filling(s, cfg.tx_power, cfg.noise_var)
        want += np.sum(np.log2(1.0 + s**2 * alloc / cfg.noise_var))
    assert got == pytest.approx(want / 3, rel=1e-10)


def test_se_scalar_channel():
    h = np.array([[[0.3 - 0.4j]]])
    f = np.array([[[np.sqrt(2.0)]]])
    w = np.array([[[1.0 + 0j]]])
    want = np.log2(1 + 2.0 * 0.25 / 0.1)
    assert spectral_efficiency(h, f, w, 0.1) == pytest.approx(want, rel=1e-12)


def test_se_invariant_to_combiner_scaling():
    # the combiner enters through its pseudoinverse: scale cancels
    rng = np.random.default_rng(1)
    h = _rand_stack(rng, 2, 4, 4)
    cfg = BeamformingConfig(n_streams=2)
    f, w = digital_precoders(h, cfg)
    a = spectral_efficiency(h, f, w, 0.1)
    b = spectral_efficiency(h, f, 3.7 * w, 0.1)
    assert a == pytest.approx(b, rel=1e-10)


def test_se_warns_on_rank_deficient_combiner():
    rng = np.random.default_rng(2)
    h = _rand_stack(rng, 1, 4, 4)
    f = _rand_stack(rng, 1, 4, 2)
    w = np.zeros((1, 4, 2), dtype=complex)
    w[0, :, 0] = rng.standard_normal(4)
    w[0, :, 1] = w[0, :, 0]  # duplicated column
    with pytest.warns(UserWarning, match="rank-deficient"):
        spectral_efficiency(h, f, w, 0.1)


def test_water_filling_kkt():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = rng.uniform(0.05, 3.0, size=4)
        power = rng.uniform(0.2, 5.0)
        nv = rng.uniform(0.01, 1.0)
        alloc = water_filling(s, power, nv)
        assert alloc.min() >= 0
        assert alloc.sum() == pytest.approx(power, rel=1e-10)
        inv = nv / s**2
        active = alloc > 0
        levels = alloc[active] + inv[active]
        np.testing.assert_allclose(levels, levels[0], rtol=1e-10)
        if (~active).any():
            assert inv[~active].min() >= levels[0] - 1e-10


def test_water_filling_zero_singular_values():
    alloc = water_filling([2.0, 0.0, 1.0], 1.0, 0.1)
    assert alloc[1] == 0.0
    assert alloc.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        water_filling([0.0, 0.0], 1.0, 0.1)
    with pytest.raises(ValueError):
        water_filling([1.0], -1.0, 0.1)


def test_water_filling_single_stream_takes_everything():
    alloc = water_filling([1.3], 2.5, 0.7)
    assert alloc[0] == pytest.approx(2.5)


def test_digital_precoder_power_budget():
    rng = np.random.default_rng(4)
    h = _rand_stack(rng, 4, 5, 6)
    for mode in ("waterfill", "equal"):
        cfg = BeamformingConfig(n_streams=3, power_mode=mode, tx_power=1.7)
        f, w = digital_precoders(h, cfg)
        for p in range(4):
            assert np.linalg.norm(f[p]) ** 2 == pytest.approx(1.7, rel=1e-9)
            wtw = w[p].conj().T @ w[p]
            np.testing.assert_allclose(wtw, np.eye(3), atol=1e-10)


def test_waterfill_never_below_equal_power():
    rng = np.random.default_rng(5)
    for seed in range(5):
        h = _rand_stack(rng, 3, 4, 4)
        se = {}
        for mode in ("waterfill", "equal"):
            cfg = BeamformingConfig(n_streams=2, power_mode=mode, noise_var=0.3)
            f, w = digital_precoders(h, cfg)
            se[mode] = spectral_efficiency(h, f, w, 0.3)
        assert se["waterfill"] >= se["equal"] - 1e-10


def _paths_with(bs_aod, ue_aoa, gains, ris_az=None, ris_el=None):
    u = len(gains)
    return CompositePaths(
        gain=np.asarray(gains, dtype=complex),
        delay=np.zeros(u),
        ris_az=np.zeros(u) if ris_az is None else np.asarray(ris_az, float),
        ris_el=np.zeros(u) if ris_el is None else np.asarray(ris_el, float),
        bs_aod=np.asarray(bs_aod, float),
        ue_aoa=np.asarray(ue_aoa, float),
        n_bs_paths=u,
        n_ue_paths=1,
    )


def brute_force_select(paths, geom, n_s, thr_bs, thr_ue):
    import itertools

    def corr(angles, n):
        cols = np.exp(1j * np.outer(np.arange(n), angles)) / np.sqrt(n)
        return np.abs(cols.conj().T @ cols)

    cb = corr(paths.bs_aod, geom.n_bs)
    cu = corr(paths.ue_aoa, geom.n_ue)
    best, best_p = None, -1.0
    for combo in itertools.combinations(range(paths.count), n_s):
        if all(
            cb[i, j] < thr_bs and cu[i, j] < thr_ue
            for i, j in itertools.combinations(combo, 2)
        ):
            p = float(np.sum(np.abs(paths.gain[list(combo)]) ** 2))
            if p > best_p:
                best, best_p = combo, p
    return best, best_p


def test_select_paths_matches_brute_force():
    rng = np.random.default_rng(6)
    cfg = BeamformingConfig(n_streams=2)
    hits = 0
    for seed in range(40):
        u = int(rng.integers(3, 8))
        paths = _paths_with(
            rng.uniform(-np.pi, np.pi, u),
            rng.uniform(-np.pi, np.pi, u),
            rng.standard_normal(u) + 1j * rng.standard_normal(u),
        )
        want, want_p = brute_force_select(paths, GEOM, 2, cfg.bs_corr_max, cfg.ue_corr_max)
        if want is None:
            with pytest.raises(ValueError, match="largest feasible size"):
                select_paths(paths, GEOM, cfg)
            continue
        hits += 1
        got = select_paths(paths, GEOM, cfg)
        assert sorted(got) != [] and len(got) == 2
        got_p = float(np.sum(np.abs(paths.gain[got]) ** 2))
        assert got_p == pytest.approx(want_p, rel=1e-12)
        # strongest first
        assert np.abs(paths.gain[got[0]]) >= np.abs(paths.gain[got[1]])
    assert hits > 10  # the draw should produce plenty of feasible cases


def test_select_paths_infeasible_reports_largest():
    paths = _paths_with([0.2, 0.2, 0.2], [1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    cfg = BeamformingConfig(n_streams=2)
    with pytest.raises(ValueError, match="largest feasible size is 1"):
        select_paths(paths, GEOM, cfg)


def test_select_paths_too_few():
    paths = _paths_with([0.2], [1.0], [1.0])
    with pytest.raises(ValueError):
        select_paths(paths, GEOM, BeamformingConfig(n_streams=2))


def test_single_path_alignment_hits_full_gain():
    rng = np.random.default_rng(7)
    cfg = BeamformingConfig(n_streams=1, **LOOSE)
    for _ in range(3):
        paths = _paths_with(
            [rng.uniform(-np.pi, np.pi)],
            [rng.uniform(-np.pi, np.pi)],
            [1.0 + 0.5j],
            ris_az=[rng.uniform(-np.pi, np.pi)],
            ris_el=[rng.uniform(-np.pi, np.pi)],
        )
        v = optimize_ris_phases(paths, [0], GEOM, cfg)
        np.testing.assert_allclose(np.abs(v), 1.0, atol=1e-12)
        gain = passive_gains(v, paths, GEOM)[0]
        assert gain >= 0.99 * GEOM.m


def _orthogonal_pair():
    # hop construction: composite az in {0, pi/2, pi/2, pi}, all el equal;
    # the three distinct az values are Dirichlet zeros of the 8-element axis
    return composite_paths(
        ChannelRealization(
            bs_gain=[1.0, 1.0], bs_aod=[0.4, 2.0],
            ris_aoa_az=[0.0, np.pi / 2], ris_aoa_el=[0.5, 0.5],
            bs_delay=[0.0, 0.0],
            ue_gain=[1.0, 1.0], ue_aoa=[-0.9, 1.3],
            ris_aod_az=[0.0, -np.pi / 2], ris_aod_el=[0.0, 0.0],
            ue_delay=[0.0, 0.0],
        )
    )


def test_orthogonal_pair_balanced_gains():
    cp = _orthogonal_pair()
    sel = [0, 3]  # composite az 0 and pi (orthogonal columns)
    a0 = steering_irs(cp.ris_az[sel[0]], cp.ris_el[sel[0]], GEOM)
    a1 = steering_irs(cp.ris_az[sel[1]], cp.ris_el[sel[1]], GEOM)
    assert abs(a0 @ a1.conj()) < 1e-12

    # hand-built pattern: v = sqrt(M/2) (conj a0 + i conj a1) is exactly
    # unit modulus here and splits the surface gain M/2 / M/2
    m = GEOM.m
    v_ref = np.sqrt(m / 2.0) * (a0.conj() + 1j * a1.conj())
    np.testing.assert_allclose(np.abs(v_ref), 1.0, atol=1e-12)
    g_ref = passive_gains(v_ref, cp, GEOM, sel)
    np.testing.assert_allclose(g_ref, [m / 2, m / 2], rtol=1e-10)

    cfg = BeamformingConfig(n_streams=2, **LOOSE)
    v = optimize_ris_phases(paths=cp, selected=sel, geom=GEOM, cfg=cfg)
    g = passive_gains(v, cp, GEOM, sel)
    assert g.min() >= 0.45 * m

    # the optimizer must do at least as well as the reference pattern
    c = cfg.tx_power * np.abs(cp.gain[sel]) ** 2 / (cfg.n_streams * cfg.noise_var)
    obj = lambda gg: np.sum(np.log2(1 + c * gg))
    assert obj(g) >= obj(g_ref) - 1e-6


def test_passive_gain_matrix_diagonal_and_cross():
    cp = _orthogonal_pair()
    sel = [0, 3]
    cfg = BeamformingConfig(n_streams=2, **LOOSE)
    v = optimize_ris_phases(cp, sel, GEOM, cfg)
    d = passive_gain_matrix(v, cp, sel, GEOM)
    g = passive_gains(v, cp, GEOM, sel)
    np.testing.assert_allclose(np.abs(np.diag(d)) ** 2, g, rtol=1e-10)
    off = max(abs(d[0, 1]), abs(d[1, 0]))
    assert off <= 0.2 * np.abs(np.diag(d)).min()


def test_objective_global_phase_invariance():
    cp = _orthogonal_pair()
    rng = np.random.default_rng(8)
    v = np.exp(1j * rng.uniform(0, 2 * np.pi, GEOM.m))
    g1 = passive_gains(v, cp, GEOM)
    g2 = passive_gains(v * np.exp(1j * 0.83), cp, GEOM)
    np.testing.assert_allclose(g1, g2, rtol=1e-12)


def test_effective_channel_matches_hop_product():
    rng = np.random.default_rng(9)
    for seed in range(5):
        ch = random_realization(2, 2, 5e-8, rng)
        cp = composite_paths(ch)
        v = np.exp(1j * rng.uniform(0, 2 * np.pi, GEOM.m))
        for p in (1, 5):
            want = ris_ue_channel(ch, GEOM, OFDM, p) @ np.diag(v) @ bs_ris_channel(ch, GEOM, OFDM, p)
            got = effective_channel(cp, v, GEOM, OFDM, p)
            assert np.abs(got - want).max() < 1e-12


def test_hybrid_square_rf_is_exact():
    rng = np.random.default_rng(10)
    targets = _rand_stack(rng, 3, 6, 2)
    cfg = BeamformingConfig(n_streams=2)
    rf, bb, trace = hybrid_factorize(targets, 6, cfg)
    np.testing.assert_allclose(np.abs(rf), 1.0, atol=1e-12)
    recon = np.einsum("ij,pjk->pik", rf, bb)
    assert np.abs(recon - targets).max() < 1e-8
    assert trace[-1] < 1e-16


def test_hybrid_residual_never_increases():
    rng = np.random.default_rng(11)
    cfg = BeamformingConfig(n_streams=2, hybrid_rounds=30)
    for seed in range(4):
        targets = _rand_stack(rng, 4, 8, 2)
        rf, bb, trace = hybrid_factorize(targets, 3, cfg)
        assert rf.shape == (8, 3) and bb.shape == (4, 3, 2)
        assert np.all(np.diff(trace) <= 1e-9 * np.maximum(trace[:-1], 1e-300))


def test_hybrid_power_rescale():
    rng = np.random.default_rng(12)
    targets = 5.0 * _rand_stack(rng, 3, 6, 2)
    cfg = BeamformingConfig(n_streams=2)
    rf, bb, _ = hybrid_factorize(targets, 4, cfg, power=1.0)
    for p in range(3):
        assert np.linalg.norm(rf @ bb[p]) ** 2 <= 1.0 + 1e-9


def test_hybrid_rf_bounds():
    rng = np.random.default_rng(13)
    targets = _rand_stack(rng, 2, 4, 2)
    cfg = BeamformingConfig(n_streams=2)
    with pytest.raises(ValueError):
        hybrid_factorize(targets, 1, cfg)
    with pytest.raises(ValueError):
        hybrid_factorize(targets, 5, cfg)


def test_design_beamforming_end_to_end():
    rng = np.random.default_rng(14)
    cp = composite_paths(random_realization(2, 2, 1e-7, rng))
    cfg = BeamformingConfig(n_streams=2, **LOOSE)
    sol = design_beamforming(cp, GEOM, OFDM, cfg)
    assert sol.selected.size == 2
    assert sol.se_digital > 0
    assert sol.se_hybrid is None
    assert sol.spectral_efficiency == sol.se_digital
    # the reported SE is reproducible from the parts
    h = effective_channel_stack(cp, sol.v, GEOM, OFDM)
    se = spectral_efficiency(h, sol.f_digital, sol.w_digital, cfg.noise_var)
    assert se == pytest.approx(sol.se_digital, rel=1e-12)


def test_design_beamforming_hybrid_close_to_digital():
    rng = np.random.default_rng(15)
    cp = composite_paths(random_realization(2, 2, 1e-7, rng))
    cfg = BeamformingConfig(n_streams=2, n_rf_tx=4, n_rf_rx=4, **LOOSE)
    sol = design_beamforming(cp, GEOM, OFDM, cfg)
    assert sol.se_hybrid is not None
    assert sol.se_hybrid >= 0.9 * sol.se_digital
    assert sol.spectral_efficiency == sol.se_hybrid
    np.testing.assert_allclose(np.abs(sol.f_rf), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(sol.w_rf), 1.0, atol=1e-12)


def test_save_load_solution_roundtrip(tmp_path):
    rng = np.random.default_rng(16)
    cp = composite_paths(random_realization(2, 2, 1e-7, rng))
    cfg = BeamformingConfig(n_streams=2, n_rf_tx=3, n_rf_rx=3, **LOOSE)
    sol = design_beamforming(cp, GEOM, OFDM, cfg)
    path = tmp_path / "sol.npz"
    save_solution(sol, path)
    back = load_solution(path)
    np.testing.assert_array_equal(back.v, sol.v)
    np.testing.assert_array_equal(back.f_bb, sol.f_bb)
    assert back.se_hybrid == pytest.approx(sol.se_hybrid)

    plain = design_beamforming(cp, GEOM, OFDM, BeamformingConfig(n_streams=2, **LOOSE))
    p2 = tmp_path / "plain.npz"
    save_solution(plain, p2)
    back2 = load_solution(p2)
    assert back2.se_hybrid is None and back2.f_rf is None


def test_config_validation():
    with pytest.raises(ValueError):
        BeamformingConfig(tx_power=0.0)
    with pytest.raises(ValueError):
        BeamformingConfig(n_rf_tx=1, n_streams=2)
    with pytest.raises(ValueError):
        BeamformingConfig(bs_corr_max=0.0)
    with pytest.raises(ValueError):
        BeamformingConfig(power_mode="max")
    with pytest.raises(ValueError):
        BeamformingConfig(armijo_contract=1.0)
