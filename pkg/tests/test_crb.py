"""Information matrix and bound tests.

fim_numeric is the oracle for fim_analytic: it differentiates the full
vectorized tensor by central differences and forms (2/sigma^2) Re{J^H J}
with none of the block structure the analytic path exploits.
"""

import numpy as np
import pytest

from riscade.channel import ArrayGeometry, CompositePaths, OfdmConfig, composite_paths, random_realization
from riscade.crb import PARAM_CLASSES, FimResult, crb_diag, fim_analytic, fim_numeric
from riscade.training import random_training

GEOM = ArrayGeometry(8, 8, 8, 8)
OFDM = OfdmConfig(128, 8, 0.32e9)


def _instance(seed):
    rng = np.random.default_rng(seed)
    cp = composite_paths(random_realization(2, 2, 1e-7, rng))
    tc = random_training(GEOM, 8, 8, 2, rng)
    return cp, tc


def test_analytic_matches_numeric():
    for seed in range(3):
        cp, tc = _instance(seed)
        fa = fim_analytic(cp, tc, GEOM, OFDM, 0.02)
        fn = fim_numeric(cp, tc, GEOM, OFDM, 0.02)
        rel = np.linalg.norm(fa.matrix - fn.matrix) / np.linalg.norm(fn.matrix)
        assert rel < 1e-3, f"seed {seed}: rel {rel}"


def test_noise_var_scaling_exact():
    cp, tc = _instance(5)
    f1 = fim_analytic(cp, tc, GEOM, OFDM, 0.01)
    f2 = fim_analytic(cp, tc, GEOM, OFDM, 0.04)
    rel = np.linalg.norm(f1.matrix - 4.0 * f2.matrix) / np.linalg.norm(f1.matrix)
    assert rel < 1e-10


def test_fim_symmetric_and_psd():
    cp, tc = _instance(6)
    f = fim_analytic(cp, tc, GEOM, OFDM, 0.05)
    np.testing.assert_array_equal(f.matrix, f.matrix.T)
    w = np.linalg.eigvalsh(f.matrix)
    assert w.min() >= -1e-8 * max(w.max(), 1.0)


def test_layout_and_labels():
    cp, tc = _instance(7)
    f = fim_analytic(cp, tc, GEOM, OFDM, 0.05)
    u = cp.count
    assert f.matrix.shape == (7 * u, 7 * u)
    assert f.class_slice("ris_az") == slice(0, u)
    assert f.class_slice("delay") == slice(6 * u, 7 * u)
    labels = f.labels()
    assert labels[0] == "ris_az[0]"
    assert labels[-1] == f"delay[{u - 1}]"


def test_crb_diag_inverts_diagonal_fim():
    d = np.array([4.0, 9.0, 16.0, 25.0])
    rep = crb_diag(FimResult(np.diag(np.tile(d, 7)[: 7 * 4]), 0.1, 4))
    np.testing.assert_allclose(rep.values, 1.0 / np.tile(d, 7)[: 7 * 4], rtol=1e-12)
    assert not rep.unidentifiable.any()
    # the condition is measured after diagonal equilibration, so any
    # positive diagonal matrix is perfectly conditioned
    assert rep.condition == pytest.approx(1.0, rel=1e-12)


def test_crb_bound_scales_with_noise():
    cp, tc = _instance(8)
    r1 = crb_diag(fim_analytic(cp, tc, GEOM, OFDM, 0.01))
    r2 = crb_diag(fim_analytic(cp, tc, GEOM, OFDM, 0.04))
    np.testing.assert_allclose(r2.values, 4.0 * r1.values, rtol=1e-6)


def test_zero_gain_component_flagged_unidentifiable():
    cp, tc = _instance(9)
    gains = cp.gain.copy()
    gains[2] = 0.0
    dead = CompositePaths(
        gain=gains, delay=cp.delay, ris_az=cp.ris_az, ris_el=cp.ris_el,
        bs_aod=cp.bs_aod, ue_aoa=cp.ue_aoa,
        n_bs_paths=cp.n_bs_paths, n_ue_paths=cp.n_ue_paths,
    )
    rep = crb_diag(fim_analytic(dead, tc, GEOM, OFDM, 0.02))
    u = cp.count
    flags = rep.unidentifiable.reshape(7, u)
    # angle and delay derivatives all carry the gain factor; the gain
    # derivatives themselves do not
    for k, name in enumerate(PARAM_CLASSES):
        if name in ("gain_re", "gain_im"):
            assert not flags[k, 2], name
        else:
            assert flags[k, 2], name
    # the healthy components stay identifiable
    keep = np.ones(u, dtype=bool)
    keep[2] = False
    assert not flags[:, keep].any()


def test_class_values_shape():
    cp, tc = _instance(10)
    rep = crb_diag(fim_analytic(cp, tc, GEOM, OFDM, 0.05))
    for name in PARAM_CLASSES:
        vals = rep.class_values(name)
        assert vals.shape == (cp.count,)
        assert np.all(vals >= 0)


def test_fim_numeric_custom_step():
    cp, tc = _instance(11)
    a = fim_numeric(cp, tc, GEOM, OFDM, 0.02, step=1e-6)
    b = fim_numeric(cp, tc, GEOM, OFDM, 0.02, step=1e-7)
    rel = np.linalg.norm(a.matrix - b.matrix) / np.linalg.norm(a.matrix)
    assert rel < 1e-3


def test_model_jacobian_matches_information_matrix():
    from riscade.crb import model_jacobian

    rng = np.random.default_rng(5)
    cp = composite_paths(random_realization(2, 2, 1e-7, rng))
    tc = random_training(GEOM, 8, 4, 2, rng)
    nv = 0.05
    jac = model_jacobian(cp, tc, GEOM, OFDM)
    fim = fim_analytic(cp, tc, GEOM, OFDM, nv)
    gram = (2.0 / nv) * (jac.conj().T @ jac).real
    np.testing.assert_allclose(gram, fim.matrix, rtol=1e-10, atol=1e-8)
    assert jac.shape == (8 * 8 * 8, 7 * cp.count)

    sub = model_jacobian(cp, tc, GEOM, OFDM, classes=("ris_az", "delay"))
    assert sub.shape == (8 * 8 * 8, 2 * cp.count)
    np.testing.assert_array_equal(sub[:, : cp.count], jac[:, : cp.count])
    np.testing.assert_array_equal(sub[:, cp.count :], jac[:, 6 * cp.count :])
    with pytest.raises(ValueError):
        model_jacobian(cp, tc, GEOM, OFDM, classes=("bogus",))
