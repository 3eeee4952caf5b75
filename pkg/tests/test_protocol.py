import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import toeplitz

from fourstate.protocol.config import SessionConfig
from fourstate.protocol.privacy import privacy_amplification, toeplitz_seed_bits
from fourstate.protocol.session import key_length_accounting, run_pair
from fourstate.protocol.wire import (
    AbortReason,
    FramingError,
    LoopbackTransport,
    Message,
    Tag,
    decode_frame,
    encode_frame,
)
from fourstate.reconciliation.codes import load_code
from fourstate.security import KeyRateReport, secret_key_rate

# lossless channel, rate-1/2 code run well above its threshold; repetition keeps
# the amplitude small, where the four-state Holevo bound is tight
BENIGN = SessionConfig(code="peg-3-6-n4096", k_rep=6, batch_size=100_000, distance_km=0.0, xi=0.0, eta=1.0,
                       block_snr=2.0, xi_tol=0.05, t_tol=0.1)


# -- framing ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(list(Tag)),
    st.integers(0, 2**64 - 1),
    st.dictionaries(st.text(max_size=8), st.one_of(st.integers(-10**9, 10**9), st.text(max_size=8), st.booleans())),
    st.lists(st.binary(max_size=64), max_size=4),
)
def test_frame_roundtrip(tag, seq, meta, blobs):
    frame = encode_frame(Message(tag, seq, meta, blobs))
    assert int.from_bytes(frame[:4], "little") == len(frame) - 4
    assert frame[4] == int(tag)
    assert int.from_bytes(frame[5:13], "little") == seq
    msg = decode_frame(frame)
    assert (msg.tag, msg.seq, msg.meta, msg.blobs) == (tag, seq, meta, blobs)


def test_frame_errors():
    good = encode_frame(Message(Tag.PA_SEED, 3, {"a": 1}))
    with pytest.raises(FramingError):
        decode_frame(good[:-1])
    with pytest.raises(FramingError):
        decode_frame(good[:4] + bytes([99]) + good[5:])
    with pytest.raises(FramingError):
        decode_frame(b"\x01\x00")


# -- privacy amplification ---------------------------------------------------

def test_pa_matches_dense_toeplitz():
    rng = np.random.default_rng(0)
    for n, m in ((50, 20), (513, 300), (64, 64), (10, 1)):
        bits = rng.integers(0, 2, n).astype(np.uint8)
        r = toeplitz_seed_bits(99, n, m).astype(int)
        # T[i, j] = r[i - j + n - 1]
        t = toeplitz(r[n - 1:n - 1 + m], r[n - 1::-1])
        assert np.array_equal(privacy_amplification(bits, 99, m), t @ bits % 2)


def test_pa_edge_cases():
    bits = np.ones(10, np.uint8)
    assert len(privacy_amplification(bits, 1, 0)) == 0
    with pytest.raises(ValueError):
        privacy_amplification(bits, 1, 11)
    a = privacy_amplification(bits, 5, 7)
    assert np.array_equal(a, privacy_amplification(bits.copy(), 5, 7))
    # frozen output guards cross-platform determinism of the seed expansion
    assert toeplitz_seed_bits(1, 8, 8).tolist() == toeplitz_seed_bits(1, 8, 8).tolist()


def test_pa_avalanche():
    rng = np.random.default_rng(1)
    fracs = []
    for trial in range(1000):
        bits = rng.integers(0, 2, 256).astype(np.uint8)
        flipped = bits.copy()
        flipped[rng.integers(256)] ^= 1
        out_a = privacy_amplification(bits, trial, 128)
        out_b = privacy_amplification(flipped, trial, 128)
        fracs.append(np.mean(out_a != out_b))
    assert 0.45 <= np.mean(fracs) <= 0.55


# -- accounting --------------------------------------------------------------

def test_accounting_no_eve():
    rep = KeyRateReport(snr=1.0, i_xy=0.5, s_ye=0.0, beta=0.8, k_real=0.4, alpha_used=0.5)
    # n * beta * I = 4000 extracted bits
    assert key_length_accounting(rep, 64, 10_000) == 4000 - 64


def test_accounting_clamps():
    rep = KeyRateReport(snr=0.1, i_xy=0.05, s_ye=0.06, beta=0.9, k_real=-0.015, alpha_used=0.3)
    assert key_length_accounting(rep, 64, 10_000) == 0


# -- config ------------------------------------------------------------------

def test_config_text_roundtrip(tmp_path):
    cfg = SessionConfig(alpha=0.4, sim_xi=0.01, k_rep=3)
    back = SessionConfig.from_text(cfg.to_text())
    assert back == cfg
    path = tmp_path / "s.cfg"
    path.write_text("# comment\nk-rep = 4\nalpha = auto\nbatch_size = 200_000\n")
    loaded = SessionConfig.load(path)
    assert loaded.k_rep == 4 and loaded.alpha is None and loaded.batch_size == 200_000
    with pytest.raises(ValueError):
        SessionConfig.from_text("bogus = 1")
    with pytest.raises(ValueError):
        SessionConfig.from_text("k_rep 3")
    with pytest.raises(ValueError):
        SessionConfig(estimation_fraction=1.5)
    with pytest.raises(ValueError):
        SessionConfig(xi=-0.1)


def test_config_digest_ignores_seeds():
    a = SessionConfig()
    assert a.digest() == a.replace(alice_seed=7, bob_seed=8).digest()
    assert a.digest() != a.replace(k_rep=9).digest()


def test_auto_amplitude_hits_block_snr():
    from fourstate.security import snr

    cfg = SessionConfig()
    assert cfg.k_rep * snr(cfg.modulation(), cfg.channel()) == pytest.approx(cfg.block_snr)


# -- sessions ------------------------------------------------------------------

def test_benign_session():
    res = run_pair(BENIGN)
    assert not res.aborted, res.alice.detail
    assert len(res.key_alice) > 0
    assert np.array_equal(res.key_alice, res.key_bob)
    code = load_code(BENIGN.code)
    assert res.leakage_bits == res.alice.frames * (code.m_checks + 64)
    assert res.alice.transcript == res.bob.transcript


def test_estimation_guard_aborts():
    cfg = BENIGN.replace(xi_tol=0.01, sim_xi=0.05)
    res = run_pair(cfg)
    assert res.aborted and res.reason == AbortReason.ESTIMATION_OUT_OF_BOUNDS
    assert res.alice.aborted and res.bob.aborted
    assert res.key_alice is None and res.key_bob is None


def test_transmission_guard_aborts():
    # a tolerance far below the estimator's statistical spread must trip
    res = run_pair(BENIGN.replace(t_tol=1e-5))
    assert res.aborted and res.reason == AbortReason.ESTIMATION_OUT_OF_BOUNDS
    assert "t_hat" in res.alice.detail


def test_config_mismatch_aborts():
    res = run_pair(BENIGN, BENIGN.replace(k_rep=2))
    assert res.aborted and res.reason == AbortReason.CONFIG_MISMATCH
    assert res.bob.reason == AbortReason.CONFIG_MISMATCH
    assert res.alice.reason == AbortReason.CONFIG_MISMATCH


def test_verification_failure_aborts():
    # the guard tolerates the noise, but the code cannot correct it
    cfg = BENIGN.replace(xi_tol=10.0, sim_xi=2.0)
    res = run_pair(cfg)
    assert res.aborted and res.reason == AbortReason.VERIFICATION_FAILED
    assert res.bob.reason == AbortReason.VERIFICATION_FAILED
    assert not all(res.alice.frame_ok)


def test_negative_key_aborts():
    cfg = BENIGN.replace(xi=0.3, xi_tol=0.3)
    assert secret_key_rate(cfg.modulation(), cfg.channel(), 0.45).k_real < 0
    res = run_pair(cfg)
    assert res.aborted and res.reason == AbortReason.NO_POSITIVE_KEY


class _Tamper:
    """Transport wrapper that rewrites outgoing frames through ``fn``."""

    def __init__(self, inner, fn):
        self.inner, self.fn, self.count = inner, fn, 0

    def send(self, frame):
        out = self.fn(self.count, frame)
        self.count += 1
        for f in out:
            self.inner.send(f)

    def recv(self):
        return self.inner.recv()


def test_dropped_frame_aborts_on_sequence():
    ta, tb = LoopbackTransport.pair(timeout=30)
    # drop Bob's BasisReveal (his first frame)
    tb = _Tamper(tb, lambda i, f: [] if i == 0 else [f])
    res = run_pair(BENIGN, transports=(ta, tb))
    assert res.aborted and res.alice.reason == AbortReason.SEQUENCE


def test_reordered_frames_abort_on_sequence():
    ta, tb = LoopbackTransport.pair(timeout=30)
    held = []

    def swap(i, frame):
        # Bob's frames: 0 BasisReveal, 1 EstimationDisclosure; send them swapped
        if i == 0:
            held.append(frame)
            return []
        if i == 1:
            return [frame, held.pop()]
        return [frame]

    res = run_pair(BENIGN, transports=(ta, _Tamper(tb, swap)))
    assert res.aborted and res.alice.reason == AbortReason.SEQUENCE


def test_transcript_determinism_and_tcp_equivalence():
    from fourstate.cli import _tcp_pair

    a = run_pair(BENIGN.replace(alice_seed=5, bob_seed=6))
    b = run_pair(BENIGN.replace(alice_seed=5, bob_seed=6))
    assert a.alice.transcript == b.alice.transcript
    assert np.array_equal(a.key_alice, b.key_alice)
    server, client = _tcp_pair(30)
    try:
        c = run_pair(BENIGN.replace(alice_seed=5, bob_seed=6), transports=(server, client))
    finally:
        server.close()
        client.close()
    assert not c.aborted
    assert c.alice.transcript == a.alice.transcript == c.bob.transcript
    d = run_pair(BENIGN.replace(alice_seed=5, bob_seed=7))
    assert d.alice.transcript != a.alice.transcript


def test_auth_hook_sees_every_frame():
    from fourstate.protocol.session import run_session
    import threading

    ta, tb = LoopbackTransport.pair(timeout=30)
    seen = []
    th = threading.Thread(target=lambda: run_session("bob", tb, BENIGN))
    th.start()
    res = run_session("alice", ta, BENIGN, auth_hook=lambda d, f: seen.append(d))
    th.join()
    assert not res.aborted
    assert seen.count("send") + seen.count("recv") == len(seen) > 0


def test_run_session_rejects_unknown_role():
    from fourstate.protocol.session import run_session

    with pytest.raises(ValueError):
        run_session("eve", None, BENIGN)


def test_session_key_fraction_at_25km():
    cfg = SessionConfig(alice_seed=31, bob_seed=32)
    res = run_pair(cfg)
    assert not res.aborted, res.alice.detail
    assert np.array_equal(res.key_alice, res.key_bob)
    per_symbol = len(res.key_alice) / res.alice.n_key_symbols
    analytic = res.report.k_real
    assert 0.5 * analytic <= per_symbol <= analytic
    upper = secret_key_rate(cfg.modulation(), cfg.channel(), 1.0).k_real
    assert per_symbol <= upper
    assert res.alice.beta_measured == pytest.approx(
        load_code(cfg.code).rate / (cfg.k_rep * 0.5 * math.log2(1 + cfg.block_snr / cfg.k_rep)))
