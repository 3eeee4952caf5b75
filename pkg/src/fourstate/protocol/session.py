"""Alice and Bob endpoints of a full four-state QKD session.

Message order (sequence numbers count every frame of the session):

    A->B SessionStart, A->B QuantumBatch, B->A BasisReveal,
    B->A EstimationDisclosure, B->A SideInfo (one per frame),
    A->B VerifyResult, A->B PaSeed

Either side may send Abort at any point; it is honoured regardless of its
sequence number. The quantum exchange is simulated by Alice's endpoint,
which ships Bob's basis choices and homodyne outcomes in QuantumBatch.
"""
from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from ..channel import estimate_channel, simulate_batch
from ..reconciliation.codes import load_code
from ..reconciliation.ldpc import LdpcCode
from ..reconciliation.scheme import TAG_BITS, SideInfo, alice_decode, efficiency, make_side_info
from ..security import KeyRateReport, secret_key_rate, snr
from .config import SessionConfig
from .privacy import privacy_amplification
from .wire import (
    AbortReason,
    FramingError,
    LoopbackTransport,
    Message,
    Tag,
    TransportClosed,
    decode_frame,
    encode_frame,
)

ROLES = ("alice", "bob")


class SessionAbort(Exception):
    def __init__(self, reason: AbortReason, detail: str = "", remote: bool = False, notified: bool = False):
        super().__init__(f"{reason.name}: {detail}")
        self.reason, self.detail, self.remote, self.notified = reason, detail, remote, notified


@dataclass
class EndpointResult:
    role: str
    key: np.ndarray | None = None
    report: KeyRateReport | None = None
    leakage_bits: int = 0
    aborted: bool = False
    reason: AbortReason | None = None
    detail: str = ""
    transcript: bytes = b""
    frames: int = 0
    frame_ok: list[bool] = field(default_factory=list)
    n_key_symbols: int = 0
    beta_measured: float = float("nan")
    estimate: object = None

    @property
    def key_empty(self) -> bool:
        return not self.aborted and self.key is not None and len(self.key) == 0

    @property
    def transcript_digest(self) -> str:
        return hashlib.sha256(self.transcript).hexdigest()


@dataclass
class SessionResult:
    key_alice: np.ndarray | None
    key_bob: np.ndarray | None
    report: KeyRateReport | None
    leakage_bits: int
    aborted: bool
    reason: AbortReason | None
    alice: EndpointResult
    bob: EndpointResult


def key_length_accounting(report: KeyRateReport, leakage_bits: int, n_key_symbols: int) -> int:
    """floor(N beta I(x:y) - N S(y:E)) - leakage_bits, clamped at zero.

    ``leakage_bits`` is the disclosure not already charged through beta
    (the verification tags).
    """
    raw = math.floor(n_key_symbols * report.beta * report.i_xy - n_key_symbols * report.s_ye)
    return max(raw - leakage_bits, 0)


def _seed_commitment(seed: int) -> str:
    return hashlib.sha256(b"fourstate-commit" + seed.to_bytes(8, "little")).hexdigest()


def _pa_seed(seed: int) -> int:
    return int.from_bytes(hashlib.sha256(b"fourstate-pa" + seed.to_bytes(8, "little")).digest()[:8], "little")


class _Endpoint:
    def __init__(self, transport, auth_hook=None):
        self.transport = transport
        self.seq = 0
        self.transcript = bytearray()
        self.auth_hook = auth_hook

    def send(self, tag: Tag, meta=None, blobs=()):
        frame = encode_frame(Message(tag, self.seq, meta or {}, list(blobs)))
        if self.auth_hook is not None:
            self.auth_hook("send", frame)
        self.transport.send(frame)
        self.transcript += frame
        self.seq += 1

    def recv(self, *expected: Tag) -> Message:
        frame = self.transport.recv()
        if self.auth_hook is not None:
            self.auth_hook("recv", frame)
        try:
            msg = decode_frame(frame)
        except (FramingError, ValueError) as exc:
            raise SessionAbort(AbortReason.PROTOCOL, f"undecodable frame: {exc}") from None
        if msg.tag == Tag.ABORT:
            reason = AbortReason(msg.meta.get("reason", AbortReason.PROTOCOL))
            raise SessionAbort(reason, msg.meta.get("detail", ""), remote=True)
        if msg.seq != self.seq:
            raise SessionAbort(AbortReason.SEQUENCE, f"expected sequence {self.seq}, got {msg.seq}")
        self.transcript += frame
        self.seq += 1
        if msg.tag not in expected:
            raise SessionAbort(AbortReason.PROTOCOL, f"unexpected {msg.tag.name}")
        return msg


def _frame_plan(cfg: SessionConfig, code: LdpcCode, n_key: int) -> int:
    frames = n_key // (cfg.k_rep * code.n)
    if cfg.max_frames:
        frames = min(frames, cfg.max_frames)
    return frames


def _estimation_indices(cfg: SessionConfig, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(cfg.bob_seed))
    n_est = int(round(cfg.estimation_fraction * n))
    return np.sort(rng.choice(n, size=n_est, replace=False))


def _complement(n: int, idx: np.ndarray) -> np.ndarray:
    mask = np.ones(n, bool)
    mask[idx] = False
    return np.flatnonzero(mask)


def _account(cfg: SessionConfig, code: LdpcCode, frames: int):
    """Shared key-length computation; both endpoints run it independently."""
    mod, ch = cfg.modulation(), cfg.channel()
    beta_m = efficiency(code.rate, snr(mod, ch), cfg.k_rep)
    report = secret_key_rate(mod, ch, min(beta_m, 1.0))
    n_key = frames * cfg.k_rep * code.n
    return report, beta_m, n_key, key_length_accounting(report, TAG_BITS * frames, n_key)


def _alice(ep: _Endpoint, cfg: SessionConfig, res: EndpointResult):
    code = load_code(cfg.code)
    mod = cfg.modulation()
    ep.send(Tag.SESSION_START, {"config": cfg.digest(), "commitment": _seed_commitment(cfg.alice_seed)})

    batch = simulate_batch(cfg.batch_size, mod, cfg.sim_channel(), cfg.alice_seed)
    ep.send(Tag.QUANTUM_BATCH, {"n": len(batch)}, [batch.bases.tobytes(), batch.bob_y.astype("<f8").tobytes()])

    msg = ep.recv(Tag.BASIS_REVEAL)
    if msg.blobs[0] != batch.bases.tobytes():
        raise SessionAbort(AbortReason.PROTOCOL, "basis reveal disagrees with the measured bases")

    msg = ep.recv(Tag.ESTIMATION_DISCLOSURE)
    idx = np.frombuffer(msg.blobs[0], "<u8").astype(np.int64)
    values = np.frombuffer(msg.blobs[1], "<f8")
    if len(idx) != len(values) or (len(idx) and (idx.max() >= len(batch) or np.any(np.diff(idx) <= 0))):
        raise SessionAbort(AbortReason.PROTOCOL, "malformed estimation disclosure")
    try:
        est = estimate_channel(batch.alice_quad[idx], values, cfg.noise_reference)
    except ValueError as exc:
        raise SessionAbort(AbortReason.ESTIMATION_OUT_OF_BOUNDS, str(exc)) from None
    res.estimate = est
    ch = cfg.channel()
    if abs(est.t_hat - ch.t) > cfg.t_tol * ch.t or est.xi_hat > cfg.xi + cfg.xi_tol:
        raise SessionAbort(
            AbortReason.ESTIMATION_OUT_OF_BOUNDS,
            f"t_hat={est.t_hat:.5g} (expected {ch.t:.5g}), xi_hat={est.xi_hat:.5g} (bound {cfg.xi + cfg.xi_tol:.5g})",
        )

    key_idx = _complement(len(batch), idx)
    frames = _frame_plan(cfg, code, len(key_idx))
    if frames == 0:
        raise SessionAbort(AbortReason.NO_POSITIVE_KEY, "batch too small for one reconciliation frame")
    per = cfg.k_rep * code.n
    decoded = []
    for f in range(frames):
        msg = ep.recv(Tag.SIDE_INFO)
        try:
            side = SideInfo.from_bytes(msg.blobs[0])
        except ValueError as exc:
            raise SessionAbort(AbortReason.PROTOCOL, str(exc)) from None
        if msg.meta.get("frame") != f or side.k_rep != cfg.k_rep or side.n_blocks != code.n:
            raise SessionAbort(AbortReason.PROTOCOL, "side information does not match the agreed frame layout")
        sl = key_idx[f * per:(f + 1) * per]
        bits, ok, _ = alice_decode(code, batch.alice_quad[sl], side, est.t_hat, est.xi_bob_hat, cfg.max_iters)
        decoded.append(bits)
        res.frame_ok.append(bool(ok))
    res.frames = frames
    res.leakage_bits = frames * (code.m_checks + TAG_BITS)
    all_ok = all(res.frame_ok)
    ep.send(Tag.VERIFY_RESULT, {"ok": all_ok, "frames": res.frame_ok})
    if not all_ok:
        raise SessionAbort(AbortReason.VERIFICATION_FAILED, f"{res.frame_ok.count(False)} frame(s) failed", notified=True)

    report, beta_m, n_key, out_len = _account(cfg, code, frames)
    res.report, res.beta_measured, res.n_key_symbols = report, beta_m, n_key
    if report.k_real < 0:
        raise SessionAbort(AbortReason.NO_POSITIVE_KEY, f"k_real={report.k_real:.4g} at beta={report.beta:.4g}")
    seed = _pa_seed(cfg.alice_seed)
    ep.send(Tag.PA_SEED, {"seed": seed, "out_len": out_len})
    res.key = privacy_amplification(np.concatenate(decoded), seed, out_len)


def _bob(ep: _Endpoint, cfg: SessionConfig, res: EndpointResult):
    code = load_code(cfg.code)
    msg = ep.recv(Tag.SESSION_START)
    if msg.meta.get("config") != cfg.digest():
        raise SessionAbort(AbortReason.CONFIG_MISMATCH, "peer runs a different session configuration")

    msg = ep.recv(Tag.QUANTUM_BATCH)
    bases = np.frombuffer(msg.blobs[0], np.uint8)
    y = np.frombuffer(msg.blobs[1], "<f8").astype(float)
    if len(bases) != len(y) or len(y) != msg.meta.get("n"):
        raise SessionAbort(AbortReason.PROTOCOL, "malformed quantum batch")
    ep.send(Tag.BASIS_REVEAL, {"n": len(bases)}, [bases.tobytes()])

    idx = _estimation_indices(cfg, len(y))
    ep.send(Tag.ESTIMATION_DISCLOSURE, {"n": len(idx)}, [idx.astype("<u8").tobytes(), y[idx].astype("<f8").tobytes()])

    key_idx = _complement(len(y), idx)
    frames = _frame_plan(cfg, code, len(key_idx))
    per = cfg.k_rep * code.n
    key_bits = []
    for f in range(frames):
        bits, side = make_side_info(y[key_idx[f * per:(f + 1) * per]], code, cfg.k_rep)
        key_bits.append(bits)
        ep.send(Tag.SIDE_INFO, {"frame": f}, [side.to_bytes()])
    res.frames = frames
    res.leakage_bits = frames * (code.m_checks + TAG_BITS)

    msg = ep.recv(Tag.VERIFY_RESULT)
    res.frame_ok = [bool(v) for v in msg.meta.get("frames", [])]
    if not msg.meta.get("ok"):
        raise SessionAbort(AbortReason.VERIFICATION_FAILED, "Alice reported a verification failure", remote=True)

    report, beta_m, n_key, out_len = _account(cfg, code, frames)
    res.report, res.beta_measured, res.n_key_symbols = report, beta_m, n_key
    msg = ep.recv(Tag.PA_SEED)
    if msg.meta.get("out_len") != out_len:
        raise SessionAbort(AbortReason.PROTOCOL, "peer's key length disagrees with the shared accounting")
    res.key = privacy_amplification(np.concatenate(key_bits), int(msg.meta["seed"]), out_len)


def run_session(role: str, transport, config: SessionConfig, auth_hook=None) -> EndpointResult:
    """Run one endpoint to completion; never raises for protocol-level failures."""
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    ep = _Endpoint(transport, auth_hook)
    res = EndpointResult(role)
    try:
        (_alice if role == "alice" else _bob)(ep, config, res)
    except SessionAbort as exc:
        res.aborted, res.reason, res.detail = True, exc.reason, exc.detail
        res.key = None
        if not exc.remote and not exc.notified:
            try:
                ep.send(Tag.ABORT, {"reason": int(exc.reason), "detail": exc.detail})
            except (TransportClosed, OSError):
                pass
    except (TransportClosed, OSError) as exc:
        res.aborted, res.reason, res.detail, res.key = True, AbortReason.TRANSPORT, str(exc), None
    res.transcript = bytes(ep.transcript)
    return res


def run_pair(config: SessionConfig, bob_config: SessionConfig | None = None, transports=None) -> SessionResult:
    """Run Alice and Bob in two threads over a loopback (or given) transport pair."""
    ta, tb = transports if transports is not None else LoopbackTransport.pair()
    results = {}

    def bob():
        results["bob"] = run_session("bob", tb, bob_config or config)

    th = threading.Thread(target=bob, name="bob", daemon=True)
    th.start()
    results["alice"] = run_session("alice", ta, config)
    th.join()
    a, b = results["alice"], results["bob"]
    return SessionResult(
        key_alice=a.key,
        key_bob=b.key,
        report=a.report,
        leakage_bits=a.leakage_bits,
        aborted=a.aborted or b.aborted,
        reason=a.reason or b.reason,
        alice=a,
        bob=b,
    )
