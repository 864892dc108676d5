"""Fast invariant checks runnable from the CLI without the test suite."""

from __future__ import annotations

import io
import tempfile
from typing import Callable

import numpy as np

from .. import _backend
from ..belief import (
    GaussianBelief,
    FullCov,
    SsmHyper,
    as_covariance,
    dump_belief,
    load_belief,
    min_eigenvalue,
    predict,
    prior_belief,
)
from ..learners import (
    CmEkf,
    LoFi,
    VdEkf,
    bong_lin_update,
    cmekf_update,
    lofi_update,
    vdekf_update,
)
from ..network import MlpSpec, jacobian, forward
from ..receiver import DeepSic, Pipeline
from .csvio import SnrRow, Tables, TimeRow, emit_csv, read_table

__all__ = ["CHECKS", "run_selftest"]


def _rand_full(rng, P, scale=1.0):
    A = rng.standard_normal((P, P))
    return A @ A.T / P * scale + 0.1 * np.eye(P)


def check_jacobian() -> str:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        spec = MlpSpec((4, 6, 2))
        th = spec.init_params(rng)
        x = rng.standard_normal(4)
        H = jacobian(spec, th, x)
        fd = np.empty_like(H)
        for p in range(spec.n_params):
            e = np.zeros(spec.n_params)
            e[p] = 1e-5
            fd[:, p] = (forward(spec, th + e, x) - forward(spec, th - e, x)) / 2e-5
        worst = max(worst, np.abs(H - fd).max() / max(np.abs(fd).max(), 1e-12))
    assert worst < 1e-5, f"relative error {worst:.2e}"
    return f"max relative error {worst:.1e}"


def check_bong_equivalence() -> str:
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        spec = MlpSpec((3, 4, 2))
        b = GaussianBelief(spec.init_params(rng), FullCov(_rand_full(rng, spec.n_params)))
        x, bits = rng.standard_normal(3), rng.integers(0, 2, 2).astype(float)
        a, c = cmekf_update(b, spec, x, bits), bong_lin_update(b, spec, x, bits)
        worst = max(worst, np.abs(a.mean - c.mean).max(), np.abs(a.cov.sigma - c.cov.sigma).max())
    assert worst < 1e-8, f"max difference {worst:.2e}"
    return f"max difference {worst:.1e}"


def check_predict_example() -> str:
    h = SsmHyper(0.9, 0.01)
    b = predict(prior_belief([1.0, 2.0], SsmHyper(prior_var=1.0)), h)
    assert np.allclose(b.mean, [0.9, 1.8]) and np.allclose(b.cov.sigma, 0.82 * np.eye(2))
    return "mean (0.9, 1.8), covariance 0.82 I"


def check_rank_collapse() -> str:
    rng = np.random.default_rng(3)
    spec = MlpSpec((3, 4, 2))
    h = SsmHyper(0.99, 1e-3, 0.5)
    th = spec.init_params(rng)
    lo, vd = LoFi(h, rank=0).init_state(th), VdEkf(h).init_state(th)
    worst = 0.0
    for _ in range(50):
        x, bits = rng.standard_normal(3), rng.integers(0, 2, 2).astype(float)
        lo = lofi_update(predict(lo, h), spec, x, bits)
        vd = vdekf_update(predict(vd, h), spec, x, bits)
        worst = max(worst, np.abs(lo.mean - vd.mean).max(),
                    np.abs(1.0 / lo.cov.prec_diag - vd.cov.var).max())
    assert worst < 1e-10, f"max difference {worst:.2e}"
    full = CmEkf(h).init_state(th)
    dlr = LoFi(h, rank=4).init_state(th)
    x, bits = rng.standard_normal(3), np.array([1.0, 0.0])
    a = cmekf_update(predict(full, h), spec, x, bits)
    b = lofi_update(predict(dlr, h), spec, x, bits)
    d2 = max(np.abs(a.mean - b.mean).max(), np.abs(a.cov.sigma - as_covariance(b)).max())
    assert d2 < 1e-8, f"rank >= B differs by {d2:.2e}"
    return f"R=0 vs diagonal {worst:.1e}; R>=B vs full {d2:.1e}"


def check_psd() -> str:
    rng = np.random.default_rng(4)
    spec = MlpSpec((4, 5, 2))
    worst = np.inf
    for up in (CmEkf(SsmHyper()), VdEkf(SsmHyper()), LoFi(SsmHyper(), rank=3)):
        st = up.init_state(spec.init_params(rng))
        for _ in range(200):
            st = up.step(st, spec, rng.standard_normal(4), rng.integers(0, 2, 2), rng)
        assert st.is_finite(), f"{up.name} produced non-finite values"
        worst = min(worst, min_eigenvalue(st))
    assert worst >= -1e-9, f"min eigenvalue {worst:.2e}"
    return f"smallest eigenvalue {worst:.2e}"


def check_pipeline() -> str:
    rng = np.random.default_rng(5)
    rx = DeepSic(2, 2, 2, CmEkf(SsmHyper()), n_iters=3, hidden=4, seed=1)
    pipe = Pipeline(rx, train=False)
    R = rng.standard_normal((40, 4))
    got = [pipe.step(r) for r in R] + [o for o in pipe.flush()]
    got = [g for g in got if g is not None]
    ok = all(i == k and np.array_equal(ell, rx.forward(R[k]))
             for k, (i, ell) in enumerate(got))
    assert ok and len(got) == len(R), "pipelined output differs from sequential"
    return f"{len(R)} samples bit-exact"


def check_checkpoint() -> str:
    rng = np.random.default_rng(6)
    b = LoFi(SsmHyper(), rank=2).init_state(rng.standard_normal(5))
    b.cov.W[:] = rng.standard_normal((5, 2))
    buf = io.StringIO()
    dump_belief(b, buf)
    buf.seek(0)
    c = load_belief(buf)
    assert np.array_equal(b.mean, c.mean) and np.array_equal(b.cov.W, c.cov.W)
    return "DLR belief round-trips exactly"


def check_csv_roundtrip() -> str:
    t = Tables([SnrRow("cm-ekf", 10.0, 0.1 / 3, 0.0)], [TimeRow("cm-ekf", 10.0, 0, 2 / 7)], [], [])
    with tempfile.TemporaryDirectory() as d:
        emit_csv(t, d)
        assert read_table(f"{d}/ber_vs_snr.csv") == t.ber_vs_snr
        assert read_table(f"{d}/ber_vs_time.csv") == t.ber_vs_time
    return "parse-back reproduces rows"


CHECKS: dict = {
    "jacobian-vs-finite-differences": check_jacobian,
    "cmekf-equals-linearized-natural-gradient": check_bong_equivalence,
    "predict-arithmetic": check_predict_example,
    "low-rank-collapses": check_rank_collapse,
    "covariance-stays-psd": check_psd,
    "pipeline-matches-sequential": check_pipeline,
    "belief-checkpoint-roundtrip": check_checkpoint,
    "csv-roundtrip": check_csv_roundtrip,
}


def run_selftest(report: Callable[[str], None] = print) -> bool:
    report(f"backend: {_backend.BACKEND}")
    ok = True
    for name, fn in CHECKS.items():
        try:
            detail = fn()
            report(f"PASS {name}: {detail}")
        except Exception as exc:  # report every failure, keep going
            ok = False
            report(f"FAIL {name}: {exc}")
    return ok
