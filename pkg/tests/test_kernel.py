import dataclasses
import os
import subprocess
import sys

import numpy as np
import pytest

from twoscale import kernel
from twoscale.plants import pmsm_equilibrium, pmsm_plant
from twoscale.senscond import Mode
from twoscale.simkit import integrate_plant

needs_compiled = pytest.mark.skipif(not kernel.compiled_available(), reason="compiled kernel not built")


def scenario_arrays(p, n, step_at=None, i_after=24.2):
    v_ref = np.full(n + 1, p.v_dc_ref)
    i_load = np.full(n + 1, p.i_load)
    if step_at is not None:
        i_load[step_at:] = i_after
    return v_ref, i_load


def test_pack_params_follows_layout(pmsm_ref):
    packed = kernel.pack_params(pmsm_ref)
    assert len(packed) == len(kernel.PARAM_LAYOUT)
    assert packed[kernel.PARAM_LAYOUT.index("omega_r")] == pytest.approx(pmsm_ref.omega_r)
    assert packed[kernel.PARAM_LAYOUT.index("iq_ref_sign")] == 1.0


@needs_compiled
@pytest.mark.parametrize("asc", [False, True])
def test_compiled_and_python_kernels_agree(pmsm_ref, asc):
    s0 = pmsm_equilibrium(pmsm_ref)
    v_ref, i_load = scenario_arrays(pmsm_ref, 2000, step_at=500)
    prm = kernel.pack_params(pmsm_ref)
    a = kernel.pmsm_run_python(prm, s0, 1e-6, v_ref, i_load, asc)
    b = kernel.compiled_run()(prm, s0, 1e-6, v_ref, i_load, asc)
    assert a[:2] == b[:2] == (kernel.OK, 2000)
    for left, right in zip(a[2:], b[2:]):
        np.testing.assert_allclose(left, right, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("asc", [False, True])
def test_kernel_matches_generic_dense_path(pmsm_ref, asc):
    s0 = pmsm_equilibrium(pmsm_ref)
    n = 200
    p_after = dataclasses.replace(pmsm_ref, i_load=24.2)
    v_ref, i_load = scenario_arrays(pmsm_ref, n, step_at=0)
    status, _, states, inj, res, fn = kernel.pmsm_run(kernel.pack_params(pmsm_ref), s0, 1e-6, v_ref, i_load, asc)
    assert status == kernel.OK
    mode = Mode.APPROXIMATE if asc else Mode.NONE
    ref = integrate_plant(pmsm_plant(p_after), s0, 1e-6, n, mode=mode)
    np.testing.assert_allclose(states, ref.states, rtol=1e-9, atol=1e-7)
    np.testing.assert_allclose(inj, ref.injections, rtol=1e-6, atol=1e-10)
    np.testing.assert_allclose(fn, ref.slow_deriv_norms, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(res, ref.residual_norms, rtol=1e-5, atol=1e-6)


def test_kernel_reports_nonphysical_bus(pmsm_ref):
    s0 = pmsm_equilibrium(pmsm_ref)
    s0[0] = -1.0
    v_ref, i_load = scenario_arrays(pmsm_ref, 10)
    status, step, states, *_ = kernel.pmsm_run(kernel.pack_params(pmsm_ref), s0, 1e-6, v_ref, i_load, False)
    assert status == kernel.NONPHYSICAL
    assert step == 0 and len(states) == 0


def test_kernel_reports_divergence(pmsm_ref):
    s0 = pmsm_equilibrium(pmsm_ref)
    s0[4] += 5.0
    v_ref, i_load = scenario_arrays(pmsm_ref, 50)
    # a step far beyond the fast time constants makes RK4 blow up
    status, step, states, *_ = kernel.pmsm_run(kernel.pack_params(pmsm_ref), s0, 1e-2, v_ref, i_load, False)
    assert status in (kernel.NONFINITE, kernel.NONPHYSICAL)
    assert len(states) == step < 50


def test_pure_python_switch_selects_fallback():
    env = dict(os.environ, TWOSCALE_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from twoscale import kernel; print(kernel.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@needs_compiled
def test_compiled_backend_is_default():
    assert kernel.BACKEND == "cython"
