"""Block-level simulation of the three-phase retrospective scheme.

One run uses n blocks of n symbols per phase.  Phase 1 carries user 1's
grid, phase 2 user 2's, and phase 3 forwards a dithered quantization of
the overheard mixtures s21 + s12 that the transmitter can only form
after the fact (delayed CSI).  Each receiver subtracts its own phase
observation from the delivered mixture, leaving its partner's overheard
signal plus noise of variance 1 + D, and ends up with a 2x2 effective
channel for its own codeword.

Messages are represented by their i.i.d. Gaussian symbol grids; there
are no explicit codebooks.  Decodability is certified by accounting:
per-symbol mutual information of the effective channels (checked
against the capacity module) together with the noise variance and
independence statistics of the reconstructed observations.  Phase-3
delivery is modeled error-free at its analytic symbol budget, which
enters the rate accounting only.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import capacity, core, quantizer
from .capacity import MCConfig, MonteCarloEstimate
from .core import DomainError

# Stream tags under the run seed; capacity uses 1-2 and the quantizer 3.
_SIGNAL_TAG = 4
_CHANNEL_TAG = 5
_NOISE_TAG = 6

MAX_BLOCKS = 512

_DUMP_MAGIC = b"MBT1"
_DUMP_HEADER = struct.Struct("<4sI")


@dataclass(frozen=True)
class SchemeConfig:
    """Run parameters: n blocks per phase, transmit power, quantizer distortion,
    rate backoff epsilon, phase-3 margin delta, and the master seed."""

    n: int
    power: float
    distortion: float = 4.0
    epsilon: float = 0.0
    delta: float = 0.1
    seed: int = capacity.DEFAULT_SEED

    def __post_init__(self):
        if not (1 <= int(self.n) <= MAX_BLOCKS):
            raise ValueError(f"n must be between 1 and {MAX_BLOCKS}")
        if not math.isfinite(self.power) or self.power <= 0.0:
            raise ValueError("power must be finite and positive")
        if not math.isfinite(self.distortion) or self.distortion <= 0.0:
            raise ValueError("distortion must be finite and positive")
        if not math.isfinite(self.epsilon) or self.epsilon < 0.0:
            raise ValueError("epsilon must be finite and nonnegative")
        if not math.isfinite(self.delta) or self.delta <= 0.0:
            raise ValueError("delta must be finite and positive")


@dataclass(frozen=True)
class CausalityAudit:
    """Log of the channel coefficients the transmitter reads.

    coeff_slots[j, b, t] is the global symbol slot during which the
    phase-(j+1) coefficient of block b, time t was on the air, and
    read_slots[b] is the slot at which the phase-3 encoder of block b
    reads it.  Delayed CSI demands coeff < read everywhere.
    """

    coeff_slots: np.ndarray
    read_slots: np.ndarray

    def ok(self) -> bool:
        return bool(np.all(self.coeff_slots < self.read_slots[None, :, None]))

    def min_margin(self) -> int:
        return int(np.min(self.read_slots[None, :, None] - self.coeff_slots))


@dataclass(frozen=True)
class SchemeStats:
    """Empirical noise and independence statistics of one run."""

    noise_var_user1: float
    noise_var_user2: float
    autocorr_user1: float
    autocorr_user2: float
    signal_corr_user1: float
    signal_corr_user2: float
    noise_cross_corr_user1: float
    noise_cross_corr_user2: float
    quant_error_var: float


@dataclass(frozen=True)
class MIReport:
    user1: MonteCarloEstimate
    user2: MonteCarloEstimate


@dataclass
class SchemeTranscript:
    """Everything one simulated run produces, filled in phase order."""

    config: SchemeConfig
    # message-domain and transmit-domain signal grids, (n, n, 2)
    u1: np.ndarray = None
    u2: np.ndarray = None
    x1: np.ndarray = None
    x2: np.ndarray = None
    # channel rows per receiver and phase, (n, n, 2);  h -> receiver 1, g -> receiver 2
    h1: np.ndarray = None
    g1: np.ndarray = None
    h2: np.ndarray = None
    g2: np.ndarray = None
    # receiver noises and observations, (n, n);  index [receiver, phase]
    z11: np.ndarray = None
    z21: np.ndarray = None
    z12: np.ndarray = None
    z22: np.ndarray = None
    y11: np.ndarray = None
    y21: np.ndarray = None
    y12: np.ndarray = None
    y22: np.ndarray = None
    # noiseless overheard sums
    s21: np.ndarray = None
    s12: np.ndarray = None
    # phase 3
    audit: CausalityAudit = None
    phase3_budget: int = None
    quant_step: float = None
    quant_indices: np.ndarray = None
    delivered: np.ndarray = None
    quant_error: np.ndarray = None
    reference: dict = field(default_factory=dict)
    # reconstruction
    ytilde21: np.ndarray = None
    ytilde12: np.ndarray = None
    stats: SchemeStats = None
    mi: MIReport = None


def interleave(u: np.ndarray) -> np.ndarray:
    """Swap block and time axes: out[b][t] = u[t][b].  Its own inverse."""
    u = np.asarray(u)
    if u.ndim < 2 or u.shape[0] != u.shape[1]:
        raise ValueError("grid must be square in its first two axes")
    return np.swapaxes(u, 0, 1).copy()


def _receive(rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    # y[b, t] = <rows[b, t], x[b, t]> without conjugation
    return np.einsum("bta,bta->bt", rows, x)


def run_phases_1_2(cfg: SchemeConfig) -> SchemeTranscript:
    """Draw signals, channels and noises; transmit phases 1 and 2.

    The transmitter keeps the noiseless overheard mixtures s21 = g1.x1
    and s12 = h2.x2 for phase 3; receivers record their direct (unit
    noise variance) observations of both phases.
    """
    n = cfg.n
    scale = math.sqrt(cfg.power / 2.0)
    t = SchemeTranscript(config=cfg)

    t.u1 = scale * core.sample_cn01(core.stream(cfg.seed, _SIGNAL_TAG, 1), (n, n, 2))
    t.u2 = scale * core.sample_cn01(core.stream(cfg.seed, _SIGNAL_TAG, 2), (n, n, 2))
    t.x1 = interleave(t.u1)
    t.x2 = interleave(t.u2)

    t.h1 = core.sample_cn01(core.stream(cfg.seed, _CHANNEL_TAG, 1), (n, n, 2))
    t.g1 = core.sample_cn01(core.stream(cfg.seed, _CHANNEL_TAG, 2), (n, n, 2))
    t.h2 = core.sample_cn01(core.stream(cfg.seed, _CHANNEL_TAG, 3), (n, n, 2))
    t.g2 = core.sample_cn01(core.stream(cfg.seed, _CHANNEL_TAG, 4), (n, n, 2))

    t.z11 = core.sample_cn01(core.stream(cfg.seed, _NOISE_TAG, 1), (n, n))
    t.z21 = core.sample_cn01(core.stream(cfg.seed, _NOISE_TAG, 2), (n, n))
    t.z12 = core.sample_cn01(core.stream(cfg.seed, _NOISE_TAG, 3), (n, n))
    t.z22 = core.sample_cn01(core.stream(cfg.seed, _NOISE_TAG, 4), (n, n))

    t.s21 = _receive(t.g1, t.x1)
    t.s12 = _receive(t.h2, t.x2)
    t.y11 = _receive(t.h1, t.x1) + t.z11
    t.y21 = t.s21 + t.z21
    t.y12 = t.s12 + t.z12
    t.y22 = _receive(t.g2, t.x2) + t.z22
    return t


def phase3_budget(n: int, rq_value: float, c21_value: float, delta: float) -> int:
    """Symbols per block needed to forward the quantized mixture.

    The n overheard samples per block cost n rq bits, carried by a link
    of rate c21 - delta; the budget is the ceiling of their quotient.
    Requires rq < c21 - delta, otherwise forwarding cannot keep up.
    """
    margin = float(c21_value) - float(delta)
    if margin <= 0.0 or float(rq_value) >= margin:
        raise DomainError(
            f"phase-3 forwarding needs rq < c21 - delta, got rq = {rq_value:.6g}, "
            f"c21 - delta = {margin:.6g}"
        )
    return math.ceil(n * float(rq_value) / margin)


def run_phase_3(
    transcript: SchemeTranscript,
    cfg: SchemeConfig,
    ref_mc: MCConfig | None = None,
) -> SchemeTranscript:
    """Quantize the overheard mixtures and deliver them error-free.

    The phase-3 symbol budget per block is ceil(n rq / (c21 - delta)),
    with rq and c21 taken from the capacity module at the configured
    power and distortion.  If rq does not clear c21 - delta, the
    forwarding link cannot keep up and the run aborts.
    """
    if transcript.s21 is None or transcript.s12 is None:
        raise ValueError("phases 1 and 2 must run first")
    n = cfg.n
    mc = ref_mc or MCConfig(seed=cfg.seed)
    c21e = capacity.c21(cfg.power, mc)
    c22de = capacity.c22d(cfg.power, cfg.distortion, mc)
    rqe = capacity.rq(cfg.power, cfg.distortion, mc)
    transcript.reference = {"c21": c21e, "c22d": c22de, "rq": rqe}

    try:
        transcript.phase3_budget = phase3_budget(n, rqe.value, c21e.value, cfg.delta)
    except DomainError as err:
        raise DomainError(f"{err} at P = {cfg.power:g}, D = {cfg.distortion:g}") from err

    # The encoder reads the phase-1/2 coefficients of block b when its
    # phase 3 starts; log the symbol slots to make causality auditable.
    base = 3 * n * np.arange(n, dtype=np.int64)
    tt = np.arange(n, dtype=np.int64)
    coeff_slots = np.stack((base[:, None] + tt[None, :], base[:, None] + n + tt[None, :]))
    read_slots = base + 2 * n
    transcript.audit = CausalityAudit(coeff_slots, read_slots)

    mixture = transcript.s21 + transcript.s12
    step = quantizer.step_for_distortion(cfg.distortion)
    encoder = quantizer.DitheredQuantizer(step, dither_seed=cfg.seed)
    indices, recon = encoder.quantize(mixture.ravel())
    transcript.quant_step = step
    transcript.quant_indices = indices
    transcript.delivered = recon.reshape(n, n)
    transcript.quant_error = transcript.delivered - mixture
    return transcript


def _complex_corr(a: np.ndarray, b: np.ndarray) -> float:
    """Magnitude of the Pearson correlation of two complex sequences."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    ma = a.mean()
    mb = b.mean()
    num = np.mean(a * np.conj(b)) - ma * np.conj(mb)
    va = float(np.mean(a.real**2 + a.imag**2) - (ma.real**2 + ma.imag**2))
    vb = float(np.mean(b.real**2 + b.imag**2) - (mb.real**2 + mb.imag**2))
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float(abs(num) / math.sqrt(va * vb))


def deinterleave_and_reconstruct(
    transcript: SchemeTranscript, cfg: SchemeConfig
) -> SchemeTranscript:
    """Each receiver strips its own phase observation from the delivery.

    Receiver 1 forms ytilde21 = delivered - y12 = s21 + (quantization
    error - z12), a view of the overheard phase-1 signal through noise
    of variance 1 + D; receiver 2 symmetrically.  The residuals are then
    de-interleaved and summarized: variances, lag-1 autocorrelation in
    the message domain, correlation against the transmit-signal
    coordinates and against the direct observation noises.
    """
    if transcript.delivered is None:
        raise ValueError("phase 3 must run first")
    t = transcript
    t.ytilde21 = t.delivered - t.y12
    t.ytilde12 = t.delivered - t.y21

    resid1 = t.ytilde21 - t.s21
    resid2 = t.ytilde12 - t.s12
    msg1 = interleave(resid1)
    msg2 = interleave(resid2)

    def var(z):
        return float(np.mean(z.real**2 + z.imag**2))

    def lag1(msg):
        if cfg.n < 2:
            return 0.0
        return _complex_corr(msg[:, 1:], msg[:, :-1])

    def against_signals(resid, own_s):
        refs = [t.x1[..., 0], t.x1[..., 1], t.x2[..., 0], t.x2[..., 1], own_s]
        return max(_complex_corr(resid, ref) for ref in refs)

    t.stats = SchemeStats(
        noise_var_user1=var(resid1),
        noise_var_user2=var(resid2),
        autocorr_user1=lag1(msg1),
        autocorr_user2=lag1(msg2),
        signal_corr_user1=against_signals(resid1, t.s21),
        signal_corr_user2=against_signals(resid2, t.s12),
        noise_cross_corr_user1=_complex_corr(resid1, t.z11),
        noise_cross_corr_user2=_complex_corr(resid2, t.z22),
        quant_error_var=var(t.quant_error),
    )
    return transcript


def mi_accounting(transcript: SchemeTranscript, cfg: SchemeConfig) -> MIReport:
    """Per-symbol mutual information of each user's effective 2x2 channel.

    For user 1 the rows are (h1, g1) with noise variances (1, 1 + D);
    the grid average estimates the per-symbol rate and must agree with
    capacity.c22d at the same power and distortion.
    """
    if transcript.ytilde21 is None:
        raise ValueError("reconstruction must run first")
    t = transcript
    noise = (1.0, 1.0 + cfg.distortion)
    count = cfg.n * cfg.n

    def report(rows_direct, rows_overheard):
        eff = np.stack((rows_direct, rows_overheard), axis=2).reshape(-1, 2, 2)
        vals = core.logdet_capacity_term(eff, cfg.power, noise)
        stderr = float(np.std(vals, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
        return MonteCarloEstimate(float(np.mean(vals)), stderr, count, cfg.seed)

    mi = MIReport(user1=report(t.h1, t.g1), user2=report(t.g2, t.h2))
    transcript.mi = mi
    return mi


def achieved_rate_pair(c22d_value: float, rq_value: float, c21_value: float):
    """Symmetric rate point c22d / (2 + rq/c21) per user.

    Spending n rq / c21 extra symbols on forwarding stretches 2n data
    slots to (2 + rq/c21) n, so each user keeps a 1/(2 + rq/c21) share
    of its per-symbol rate.  When rq <= c21 this is at least c22d / 3.
    """
    c22dv = float(c22d_value)
    rqv = float(rq_value)
    c21v = float(c21_value)
    if not math.isfinite(c22dv) or c22dv < 0.0:
        raise ValueError("c22d must be finite and nonnegative")
    if not math.isfinite(rqv) or rqv < 0.0:
        raise ValueError("rq must be finite and nonnegative")
    if not math.isfinite(c21v) or c21v <= 0.0:
        raise ValueError("c21 must be finite and positive")
    r = c22dv / (2.0 + rqv / c21v)
    return (r, r)


def rate_floor(c22d_value: float, rq_value: float, c21_value: float):
    """The guaranteed symmetric rate c22d/3, available whenever rq <= c21."""
    if rq_value / c21_value <= 1.0:
        return float(c22d_value) / 3.0
    return None


def run_scheme(cfg: SchemeConfig, ref_mc: MCConfig | None = None) -> SchemeTranscript:
    """Full pipeline: phases 1-2, phase 3, reconstruction, accounting."""
    t = run_phases_1_2(cfg)
    run_phase_3(t, cfg, ref_mc=ref_mc)
    deinterleave_and_reconstruct(t, cfg)
    mi_accounting(t, cfg)
    return t


def _estimate_dict(e: MonteCarloEstimate) -> dict:
    return {
        "value": capacity._round12(e.value),
        "stderr": capacity._round12(e.stderr),
        "samples": e.samples,
        "seed": e.seed,
    }


def summary(transcript: SchemeTranscript) -> dict:
    """Machine-readable run report (floats rounded to 12 significant digits)."""
    t = transcript
    if t.stats is None or t.mi is None:
        raise ValueError("run the full pipeline before summarizing")
    ref = t.reference
    pair = achieved_rate_pair(ref["c22d"].value, ref["rq"].value, ref["c21"].value)
    floor = rate_floor(ref["c22d"].value, ref["rq"].value, ref["c21"].value)
    r12 = capacity._round12
    return {
        "config": asdict(t.config),
        "phase3_budget": t.phase3_budget,
        "noise_var_user1": r12(t.stats.noise_var_user1),
        "noise_var_user2": r12(t.stats.noise_var_user2),
        "residual_autocorr": {
            "user1": r12(t.stats.autocorr_user1),
            "user2": r12(t.stats.autocorr_user2),
        },
        "mi_user1": _estimate_dict(t.mi.user1),
        "mi_user2": _estimate_dict(t.mi.user2),
        "achieved_rate_pair": [r12(pair[0]), r12(pair[1])],
        "reference": {name: _estimate_dict(est) for name, est in ref.items()},
        "diagnostics": {
            "quant_error_var": r12(t.stats.quant_error_var),
            "residual_signal_corr": {
                "user1": r12(t.stats.signal_corr_user1),
                "user2": r12(t.stats.signal_corr_user2),
            },
            "noise_cross_corr": {
                "user1": r12(t.stats.noise_cross_corr_user1),
                "user2": r12(t.stats.noise_cross_corr_user2),
            },
            "rate_floor": None if floor is None else r12(floor),
            "causality_ok": t.audit.ok(),
            "causality_min_margin": t.audit.min_margin(),
        },
    }


def check_stats(transcript: SchemeTranscript) -> list[str]:
    """Return human-readable violations of the run's statistical invariants.

    Checks, at the configured distortion D: residual variance within 5%
    of 1 + D for both users, quantization error variance within 5% of D,
    and every tracked correlation magnitude below 0.02.  An empty list
    means the run is clean.
    """
    t = transcript
    if t.stats is None:
        raise ValueError("run the pipeline before checking statistics")
    d = t.config.distortion
    out = []

    def within(label, value, target, frac):
        if abs(value - target) > frac * target:
            out.append(f"{label} = {value:.6g}, expected {target:.6g} within {frac:.0%}")

    within("noise_var_user1", t.stats.noise_var_user1, 1.0 + d, 0.05)
    within("noise_var_user2", t.stats.noise_var_user2, 1.0 + d, 0.05)
    within("quant_error_var", t.stats.quant_error_var, d, 0.05)
    for label, value in (
        ("residual_autocorr_user1", t.stats.autocorr_user1),
        ("residual_autocorr_user2", t.stats.autocorr_user2),
        ("residual_signal_corr_user1", t.stats.signal_corr_user1),
        ("residual_signal_corr_user2", t.stats.signal_corr_user2),
        ("noise_cross_corr_user1", t.stats.noise_cross_corr_user1),
        ("noise_cross_corr_user2", t.stats.noise_cross_corr_user2),
    ):
        if value >= 0.02:
            out.append(f"{label} = {value:.6g}, expected below 0.02")
    if not t.audit.ok():
        out.append("causality audit failed: a channel coefficient was read early")
    return out


def dump_transcript(transcript: SchemeTranscript, fp) -> None:
    """Binary dump: signal grids as raw little-endian doubles, then the
    quantizer index stream in its own framed format."""
    t = transcript
    if t.quant_indices is None:
        raise ValueError("phase 3 must run before dumping")
    fp.write(_DUMP_HEADER.pack(_DUMP_MAGIC, t.config.n))
    for grid in (t.u1, t.u2, t.x1, t.x2):
        fp.write(np.ascontiguousarray(grid, dtype="<c16").tobytes())
    quantizer.write_indices(fp, t.quant_step, t.quant_indices)


def read_transcript_dump(fp) -> dict:
    """Inverse of dump_transcript; returns grids plus (step, indices)."""
    head = fp.read(_DUMP_HEADER.size)
    if len(head) != _DUMP_HEADER.size:
        raise ValueError("truncated header")
    magic, n = _DUMP_HEADER.unpack(head)
    if magic != _DUMP_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    grids = {}
    for name in ("u1", "u2", "x1", "x2"):
        raw = fp.read(16 * n * n * 2)
        if len(raw) != 16 * n * n * 2:
            raise ValueError("truncated signal grid")
        grids[name] = np.frombuffer(raw, dtype="<c16").reshape(n, n, 2)
    step, indices = quantizer.read_indices(fp)
    grids["quant_step"] = step
    grids["quant_indices"] = indices
    return grids
