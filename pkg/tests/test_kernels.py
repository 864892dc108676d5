import os
import subprocess
import sys

import numpy as np
import pytest

from streamrx import _backend
from streamrx.belief import SsmHyper, as_covariance
from streamrx.learners import make_updater
from streamrx.network import MlpSpec

from conftest import deepsic_input

needs_ext = pytest.mark.skipif(_backend.ext is None, reason="compiled kernels not built")

ROSTER = [("cm-ekf", {}), ("vd-ekf", {}), ("lo-fi", {"rank": 4}), ("bong-ef", {"kind": "diag"}),
          ("bong-ef", {"kind": "dlr", "rank": 4}), ("bong-ef", {"kind": "full"}), ("bbb", {}),
          ("gd", {})]


def _trajectory(name, kw, steps=15):
    spec = MlpSpec((10, 12, 2))
    rng = np.random.default_rng(0)
    u = make_updater(name, SsmHyper(0.99, 1e-3, 0.5), **kw)
    state = u.init_state(spec.init_params(rng))
    step_rng = np.random.default_rng(1)
    out = []
    for _ in range(steps):
        x = deepsic_input(rng, 6, 4)
        bits = rng.integers(0, 2, 2).astype(float)
        state = u.step(state, spec, x, bits, step_rng)
        if hasattr(state, "cov"):
            out.append((state.mean.copy(), as_covariance(state)))
        else:
            out.append((state.copy(), None))
    return out


@needs_ext
@pytest.mark.parametrize("name,kw", ROSTER, ids=lambda v: v if isinstance(v, str) else None)
def test_backends_give_the_same_trajectory(name, kw, monkeypatch):
    fast = _trajectory(name, kw)
    monkeypatch.setattr(_backend, "ext", None)
    slow = _trajectory(name, kw)
    for (m1, c1), (m2, c2) in zip(fast, slow):
        assert np.allclose(m1, m2, atol=1e-10, rtol=1e-10)
        if c1 is not None:
            assert np.allclose(c1, c2, atol=1e-10, rtol=1e-10)


def _run(code, **env):
    return subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                          env={**os.environ, **env}, timeout=300)


def test_environment_switch_selects_numpy_backend():
    res = _run("from streamrx import _backend; print(_backend.BACKEND, _backend.ext)",
               STREAMRX_PURE_PYTHON="1")
    assert res.returncode == 0, res.stderr
    assert res.stdout.split() == ["python", "None"]


def test_selftest_passes_on_numpy_backend():
    res = _run("from streamrx.harness.cli import main; raise SystemExit(main(['selftest']))",
               STREAMRX_PURE_PYTHON="1")
    assert res.returncode == 0, res.stdout + res.stderr
    assert "python" in res.stdout and "FAIL" not in res.stdout
