import math

import numpy as np
import pytest

from streamrx.baselines import (
    NlmsState,
    map_decode,
    mmse_detect,
    mmse_equalize,
    nlms_decode,
    nlms_step,
    rotation_matrix,
)
from streamrx.channel import qam16, qpsk, to_real
from streamrx.errors import ConfigurationError, NumericalError

QPSK = qpsk()


def qpsk_real():
    return to_real(QPSK.points[:, None])      # (4, 2)


class TestMap:
    def test_identity_rotation_quadrant(self):
        idx = map_decode(np.array([0.3, -0.4]), 0.0, QPSK)
        p = QPSK.points[idx]
        assert p.real > 0 and p.imag < 0

    def test_exact_points(self):
        pts = qpsk_real() @ rotation_matrix(0.7).T
        assert np.array_equal(map_decode(pts, 0.7, QPSK), np.arange(4))

    def test_quarter_pi_boundaries_are_rotated_axes(self, rng):
        phi = math.pi / 4
        r = rng.uniform(-1.5, 1.5, (2000, 2))
        idx = map_decode(r, phi, QPSK)
        # un-rotating puts each sample in the quadrant of its decoded point
        back = r @ rotation_matrix(-phi).T
        pts = qpsk_real()[idx]
        assert np.all(np.sign(back) == np.sign(pts))

    def test_joint_rotation_invariance(self, rng):
        r = rng.standard_normal((500, 2))
        for phi, delta in [(0.1, 0.9), (2.0, -1.3)]:
            rot = r @ rotation_matrix(delta).T
            assert np.array_equal(map_decode(r, phi, qam16()), map_decode(rot, phi + delta, qam16()))

    def test_tie_goes_to_lowest_index(self):
        assert map_decode(np.zeros(2), 0.0, QPSK) == 0


class TestNlms:
    def test_no_update_on_zero_error(self, rng):
        H = rng.standard_normal((2, 2))
        s = rng.standard_normal(2)
        st = nlms_step(NlmsState(H), s, H @ s)
        assert np.array_equal(st.H, H)

    def test_zero_step(self, rng):
        st = NlmsState(np.eye(2), step=0.0)
        assert np.array_equal(nlms_step(st, [1.0, 0.0], [5.0, 5.0]).H, np.eye(2))

    def test_formula(self):
        st = nlms_step(NlmsState(np.zeros((2, 2)), step=1.0, delta=1e-6), [1.0, 0.0], [2.0, 3.0])
        assert np.allclose(st.H, [[2 / (1 + 1e-6), 0], [3 / (1 + 1e-6), 0]])

    def test_converges_on_static_channel(self):
        H = rotation_matrix(0.6)
        st = NlmsState()
        pilots = qpsk_real()
        for t in range(200):
            s = pilots[t % 4]
            st = nlms_step(st, s, H @ s)
        assert np.abs(st.H - H).max() < 1e-3

    def test_expected_error_is_non_increasing(self):
        rng = np.random.default_rng(0)
        runs, steps = 1000, 30
        pilots = qpsk_real()
        err = np.zeros(steps)
        for _ in range(runs):
            H = rng.standard_normal((2, 2))
            st = NlmsState(step=float(rng.uniform(0.1, 1.9)))
            for t in range(steps):
                # expectation over the pilot draw, taken exactly over the four points
                err[t] += np.mean(np.sum(((H - st.H) @ pilots.T) ** 2, axis=0))
                s = pilots[rng.integers(4)]
                st = nlms_step(st, s, H @ s)
        err /= runs
        assert np.all(np.diff(err) <= 1e-12)
        assert err[-1] < 1e-2 * err[0]

    def test_decode_with_known_channel(self, rng):
        H = rotation_matrix(1.1)
        r = qpsk_real() @ H.T
        assert np.array_equal(nlms_decode(NlmsState(H), r, QPSK), np.arange(4))

    def test_validation(self):
        for kw in (dict(step=2.0), dict(step=-0.1), dict(delta=0.0)):
            with pytest.raises(ConfigurationError):
                NlmsState(**kw)


class TestMmse:
    def test_identity_channel(self):
        s = QPSK.points[[0, 1, 2, 3]]
        idx, bits = mmse_detect(to_real(s), np.eye(4), 1e-12, QPSK)
        assert np.array_equal(idx, [0, 1, 2, 3])
        assert np.array_equal(bits, QPSK.bit_table[[0, 1, 2, 3]])

    def test_random_channel_noiseless_recovery(self, rng):
        K, N = 3, 5
        H = (rng.standard_normal((N, K)) + 1j * rng.standard_normal((N, K))) / math.sqrt(2 * K)
        idx = rng.integers(0, 16, (50, K))
        s = qam16().points[idx]
        r = to_real(s @ H.T)
        got, _ = mmse_detect(r, H, 0.0, qam16())
        assert np.array_equal(got, idx)
        assert np.allclose(mmse_equalize(r, H, 0.0), s, atol=1e-10)

    def test_zero_forcing_limit(self, rng):
        H = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        y = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        zf = np.linalg.lstsq(H, y, rcond=None)[0]
        assert np.allclose(mmse_equalize(y, H, 1e-12), zf, atol=1e-8, rtol=0)

    def test_heavy_regularisation(self, rng):
        s = QPSK.points[[3, 1]]
        H = rng.standard_normal((3, 2)) + 0j
        s_hat = mmse_equalize(H @ s, H, 1e12)
        assert np.all(np.abs(s_hat) < 1e-10)
        assert QPSK.nearest(0.0) == 0
        idx, _ = mmse_detect(np.zeros(6), H, 1e12, QPSK)   # the limit point
        assert np.array_equal(idx, [0, 0])

    def test_singular_normal_matrix(self):
        H = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(NumericalError):
            mmse_equalize(np.zeros(4), H, 0.0)
