"""Ergodic rate curves for the two-user broadcast setting.

Three Monte Carlo quantities share one channel ensemble:

* ``c21``  : ergodic capacity of a 2x1 Rayleigh channel with isotropic
  inputs, E log2(1 + (P/2) |h|^2).
* ``c22d`` : ergodic log-det rate of a 2x2 channel whose second row is
  observed through additive noise of variance 1 + D, i.e. the rate of
  the effective channel diag(1, 1+D)^(-1/2) H with white inputs.
* ``rq``   : rate needed to forward a quantized overheard mixture,
  E log2(1 + (P/(2D)) (|g|^2 + |h|^2)).

All three are evaluated on the same matrix draws (common random
numbers), so ratios and differences of estimates are far tighter than
their individual error bars.  ``paired_sweep`` exposes the covariance
of the paired sample means for exactly that purpose.

The module also carries the scalar rate-distortion helpers used by the
quantizer sizing arguments: exact reverse waterfilling, the one-level
suboptimal rate, and the ergodic conditional rate with decoder side
information.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad

from . import core
from .core import LN2, DomainError

DEFAULT_SEED = 0xC517
DEFAULT_SAMPLES = 10**6

QUANTITIES = ("c21", "c22d", "rq")

_CHANNEL_TAG = 1
_GAIN_TAG = 2


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _round12(x: float) -> float:
    return float(_fmt(x))


@dataclass(frozen=True)
class MCConfig:
    """Sample count, master seed and worker count for one estimator run."""

    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    workers: int = 1

    def __post_init__(self):
        if int(self.samples) < 1:
            raise ValueError("samples must be at least 1")
        if int(self.workers) < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class MonteCarloEstimate:
    """A sample mean with its standard error and provenance."""

    value: float
    stderr: float
    samples: int
    seed: int


@dataclass(frozen=True)
class PowerGrid:
    """Strictly increasing nonnegative transmit power points (linear scale)."""

    points: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) == 0:
            raise ValueError("grid must contain at least one point")
        if any(not math.isfinite(p) or p < 0.0 for p in pts):
            raise ValueError("grid points must be finite and nonnegative")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @staticmethod
    def default(num: int = 50, lo: float = 1e-2, hi: float = 1e4) -> "PowerGrid":
        return PowerGrid(tuple(np.logspace(math.log10(lo), math.log10(hi), num)))

    @staticmethod
    def single(power: float) -> "PowerGrid":
        return PowerGrid((float(power),))


class ChannelMoments(NamedTuple):
    """Sufficient statistics for one batch of 2x2 Rayleigh draws."""

    norm1: np.ndarray  # squared norm of row 1
    norm2: np.ndarray  # squared norm of row 2
    det2: np.ndarray  # squared magnitude of the 2x2 determinant


def _draw_moments(rng: np.random.Generator, count: int) -> ChannelMoments:
    h = core.sample_cn01(rng, (count, 2, 2))
    norm1 = h[:, 0, 0].real**2 + h[:, 0, 0].imag**2 + h[:, 0, 1].real**2 + h[:, 0, 1].imag**2
    norm2 = h[:, 1, 0].real**2 + h[:, 1, 0].imag**2 + h[:, 1, 1].real**2 + h[:, 1, 1].imag**2
    det = h[:, 0, 0] * h[:, 1, 1] - h[:, 0, 1] * h[:, 1, 0]
    return ChannelMoments(norm1, norm2, det.real**2 + det.imag**2)


def _kernel(quantity: str, distortion) -> Callable[[ChannelMoments, float], np.ndarray]:
    """Map a quantity name to its per-draw bit-rate evaluator."""
    if quantity == "c21":
        if distortion is not None:
            raise ValueError("c21 takes no distortion parameter")

        def values(st: ChannelMoments, power: float) -> np.ndarray:
            return np.log1p((power / 2.0) * st.norm1) / LN2

        return values
    if quantity == "c22d":
        d = float(distortion)
        if not math.isfinite(d) or d < 0.0:
            raise ValueError("distortion must be finite and nonnegative for c22d")
        s2 = 1.0 + d

        def values(st: ChannelMoments, power: float) -> np.ndarray:
            c = power / 2.0
            return np.log1p(c * (st.norm1 + st.norm2 / s2) + (c * c) * st.det2 / s2) / LN2

        return values
    if quantity == "rq":
        d = float(distortion)
        if not math.isfinite(d) or d <= 0.0:
            raise ValueError("distortion must be finite and positive for rq")

        def values(st: ChannelMoments, power: float) -> np.ndarray:
            return np.log1p((power / (2.0 * d)) * (st.norm1 + st.norm2)) / LN2

        return values
    raise ValueError(f"unknown quantity {quantity!r}, expected one of {QUANTITIES}")


def _chunk_sizes(total: int, workers: int) -> list[int]:
    base, extra = divmod(total, workers)
    sizes = [base + (1 if i < extra else 0) for i in range(workers)]
    return [s for s in sizes if s > 0]


def _run(grid_points, mc: MCConfig, kernels, want_cross: bool):
    """Accumulate per-power sums for every kernel over a shared ensemble.

    Returns (values, stderrs, mean_cov) where values and stderrs have
    shape (len(kernels), len(grid_points)) and mean_cov is either None
    or the per-power covariance of the two kernel sample means
    (requires exactly two kernels).
    """
    if want_cross and len(kernels) != 2:
        raise ValueError("cross moments need exactly two kernels")
    npow = len(grid_points)
    nker = len(kernels)
    sizes = _chunk_sizes(mc.samples, mc.workers)

    def worker(args):
        index, count = args
        rng = core.stream(mc.seed, _CHANNEL_TAG, index)
        st = _draw_moments(rng, count)
        s1 = np.empty((nker, npow))
        s2 = np.empty((nker, npow))
        s12 = np.empty(npow) if want_cross else None
        for j, power in enumerate(grid_points):
            vals = [kern(st, power) for kern in kernels]
            for i, v in enumerate(vals):
                s1[i, j] = v.sum()
                s2[i, j] = (v * v).sum()
            if want_cross:
                s12[j] = (vals[0] * vals[1]).sum()
        return s1, s2, s12

    jobs = list(enumerate(sizes))
    if mc.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            parts = list(pool.map(worker, jobs))
    else:
        parts = [worker(job) for job in jobs]

    S1 = np.zeros((nker, npow))
    S2 = np.zeros((nker, npow))
    S12 = np.zeros(npow) if want_cross else None
    for s1, s2, s12 in parts:
        S1 += s1
        S2 += s2
        if want_cross:
            S12 += s12

    n = mc.samples
    values = S1 / n
    if n > 1:
        var = np.maximum(S2 - S1 * S1 / n, 0.0) / (n - 1)
        stderrs = np.sqrt(var / n)
    else:
        stderrs = np.zeros_like(values)
    mean_cov = None
    if want_cross:
        if n > 1:
            mean_cov = (S12 - S1[0] * S1[1] / n) / (n - 1) / n
        else:
            mean_cov = np.zeros(npow)
    return values, stderrs, mean_cov


def _point(quantity: str, power: float, distortion, mc: MCConfig) -> MonteCarloEstimate:
    p = float(power)
    if not math.isfinite(p) or p < 0.0:
        raise ValueError("power must be finite and nonnegative")
    values, stderrs, _ = _run((p,), mc, [_kernel(quantity, distortion)], want_cross=False)
    return MonteCarloEstimate(float(values[0, 0]), float(stderrs[0, 0]), mc.samples, mc.seed)


def c21(power: float, mc: MCConfig | None = None) -> MonteCarloEstimate:
    """Ergodic 2x1 capacity E log2(1 + (power/2) |h|^2), |h|^2 ~ Gamma(2, 1)."""
    return _point("c21", power, None, mc or MCConfig())


def c22d(power: float, distortion: float, mc: MCConfig | None = None) -> MonteCarloEstimate:
    """Ergodic 2x2 log-det rate with the second row noised up to 1 + distortion.

    distortion = 0 recovers the classical 2x2 ergodic capacity.
    """
    return _point("c22d", power, distortion, mc or MCConfig())


def rq(power: float, distortion: float, mc: MCConfig | None = None) -> MonteCarloEstimate:
    """Forwarding rate E log2(1 + (power/(2 distortion)) (|g|^2 + |h|^2)).

    The argument sums two independent row norms, so the fading gain is
    Gamma(4, 1) distributed.
    """
    return _point("rq", power, distortion, mc or MCConfig())


def c21_oracle(power: float) -> float:
    """Adaptive-quadrature value of c21, independent of the sampling path.

    Integrates log2(1 + (power/2) x) against the Gamma(2, 1) density
    x e^(-x) on [0, inf).  Absolute accuracy is driven well below 1e-10,
    suitable as a fixed reference for estimator fidelity checks.
    """
    p = float(power)
    if not math.isfinite(p) or p < 0.0:
        raise ValueError("power must be finite and nonnegative")
    if p == 0.0:
        return 0.0
    a = p / 2.0

    def integrand(x):
        return math.log1p(a * x) * x * math.exp(-x) / LN2

    # Split at the density mode to help the adaptive rule at extreme powers.
    head, _ = quad(integrand, 0.0, 2.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    tail, _ = quad(integrand, 2.0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
    return head + tail


@dataclass(frozen=True)
class SweepRow:
    power: float
    estimate: MonteCarloEstimate


@dataclass(frozen=True)
class SweepTable:
    """One quantity evaluated over a power grid with shared draws."""

    quantity: str
    distortion: float | None
    rows: tuple[SweepRow, ...]

    def to_csv(self, fp) -> None:
        fp.write("P,value,stderr,samples,seed\n")
        for row in self.rows:
            e = row.estimate
            fp.write(
                f"{_fmt(row.power)},{_fmt(e.value)},{_fmt(e.stderr)},{e.samples},{e.seed}\n"
            )

    def to_json(self) -> list[dict]:
        return [
            {
                "P": _round12(row.power),
                "value": _round12(row.estimate.value),
                "stderr": _round12(row.estimate.stderr),
                "samples": row.estimate.samples,
                "seed": row.estimate.seed,
            }
            for row in self.rows
        ]

    def write_json(self, fp) -> None:
        json.dump(self.to_json(), fp, indent=2)
        fp.write("\n")


def sweep(
    quantity: str,
    grid: PowerGrid | None = None,
    mc: MCConfig | None = None,
    distortion: float | None = None,
) -> SweepTable:
    """Evaluate one quantity across a power grid on common channel draws."""
    grid = grid or PowerGrid.default()
    mc = mc or MCConfig()
    kern = _kernel(quantity, distortion)
    values, stderrs, _ = _run(grid.points, mc, [kern], want_cross=False)
    rows = tuple(
        SweepRow(p, MonteCarloEstimate(float(values[0, j]), float(stderrs[0, j]), mc.samples, mc.seed))
        for j, p in enumerate(grid.points)
    )
    return SweepTable(quantity, None if distortion is None else float(distortion), rows)


@dataclass(frozen=True)
class PairedPoint:
    """Two estimates from identical draws plus the covariance of their means."""

    power: float
    first: MonteCarloEstimate
    second: MonteCarloEstimate
    mean_cov: float


def paired_sweep(
    quantity_a: str,
    quantity_b: str,
    grid: PowerGrid | None = None,
    mc: MCConfig | None = None,
    distortion: float | None = None,
) -> tuple[PairedPoint, ...]:
    """Sweep two quantities on the same draws, tracking paired covariance.

    The covariance refers to the two sample means, already divided by
    the sample count, ready for delta-method error propagation.
    """
    grid = grid or PowerGrid.default()
    mc = mc or MCConfig()
    kerns = [
        _kernel(quantity_a, distortion if quantity_a != "c21" else None),
        _kernel(quantity_b, distortion if quantity_b != "c21" else None),
    ]
    values, stderrs, cov = _run(grid.points, mc, kerns, want_cross=True)
    out = []
    for j, p in enumerate(grid.points):
        first = MonteCarloEstimate(float(values[0, j]), float(stderrs[0, j]), mc.samples, mc.seed)
        second = MonteCarloEstimate(float(values[1, j]), float(stderrs[1, j]), mc.samples, mc.seed)
        out.append(PairedPoint(p, first, second, float(cov[j])))
    return tuple(out)


@dataclass(frozen=True)
class RatioRow:
    power: float
    rq: MonteCarloEstimate
    c21: MonteCarloEstimate
    ratio: float
    ratio_stderr: float


@dataclass(frozen=True)
class RatioTable:
    """rq / c21 over a grid, with delta-method error bars on the ratio."""

    distortion: float
    rows: tuple[RatioRow, ...]

    def max_row(self) -> RatioRow:
        return max(self.rows, key=lambda r: r.ratio)

    def to_csv(self, fp) -> None:
        fp.write("P,rq,c21,ratio,ratio_stderr\n")
        for r in self.rows:
            fp.write(
                f"{_fmt(r.power)},{_fmt(r.rq.value)},{_fmt(r.c21.value)},"
                f"{_fmt(r.ratio)},{_fmt(r.ratio_stderr)}\n"
            )

    def to_json(self) -> list[dict]:
        return [
            {
                "P": _round12(r.power),
                "rq": _round12(r.rq.value),
                "c21": _round12(r.c21.value),
                "ratio": _round12(r.ratio),
                "ratio_stderr": _round12(r.ratio_stderr),
            }
            for r in self.rows
        ]


def ratio_sweep(
    distortion: float,
    grid: PowerGrid | None = None,
    mc: MCConfig | None = None,
) -> RatioTable:
    """Sweep rq(distortion) / c21 with paired draws.

    Paired sampling makes the ratio error bars much smaller than the
    quotient of the individual ones; the stderr combines both variances
    and their covariance by the delta method.
    """
    grid = grid or PowerGrid.default()
    if any(p <= 0.0 for p in grid.points):
        raise ValueError("ratio is undefined at zero power, use positive grid points")
    pairs = paired_sweep("rq", "c21", grid, mc, distortion=distortion)
    rows = []
    for pt in pairs:
        a, b = pt.first.value, pt.second.value
        va, vb = pt.first.stderr**2, pt.second.stderr**2
        ratio = a / b
        var = va / b**2 + (a * a) * vb / b**4 - 2.0 * a * pt.mean_cov / b**3
        rows.append(RatioRow(pt.power, pt.first, pt.second, ratio, math.sqrt(max(var, 0.0))))
    return RatioTable(float(distortion), tuple(rows))


# ---------------------------------------------------------------------------
# Scalar rate-distortion helpers


def rd_reverse_waterfill(variance_samples, distortion_budget: float) -> float:
    """Exact parallel-Gaussian rate at an average distortion budget, in bits.

    Solves for the water level L with (1/n) sum_i min(v_i, L) = budget,
    then returns (1/n) sum_i max(log2(v_i / L), 0).  The level is found
    exactly on the sorted-prefix segment containing it, no iteration.
    """
    v = np.asarray(variance_samples, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("need at least one variance sample")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise ValueError("variances must be finite and nonnegative")
    budget = float(distortion_budget)
    if not math.isfinite(budget) or budget <= 0.0:
        raise ValueError("distortion budget must be finite and positive")

    n = v.size
    if float(np.mean(v)) <= budget:
        return 0.0
    s = np.sort(v)
    prefix = np.concatenate(([0.0], np.cumsum(s)))[:n]
    k = np.arange(n)
    level = (n * budget - prefix) / (n - k)
    lower = np.concatenate(([0.0], s[:-1]))
    slack = 1e-12 * max(1.0, float(s[-1]))
    valid = (level >= lower - slack) & (level <= s + slack)
    # mean(min(v, L)) is continuous and increasing in L, so a segment match
    # exists whenever the budget sits below the mean variance.
    idx = int(np.argmax(valid))
    if not valid[idx]:
        raise ValueError("no consistent water level found, inputs out of range")
    level_star = float(level[idx])
    active = s[s > level_star]
    if active.size == 0:
        return 0.0
    return float(np.sum(np.log2(active / level_star)) / n)


def rd_suboptimal(variance_samples, distortion_budget: float) -> float:
    """Rate of one fixed-step quantizer run at distortion budget everywhere.

    Charges every sample log2(1 + v_i / budget) bits, ignoring the
    per-sample variance structure.  Always at least the waterfilling
    rate, sample by sample.
    """
    v = np.asarray(variance_samples, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("need at least one variance sample")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise ValueError("variances must be finite and nonnegative")
    budget = float(distortion_budget)
    if not math.isfinite(budget) or budget <= 0.0:
        raise ValueError("distortion budget must be finite and positive")
    return float(np.mean(np.log1p(v / budget)) / LN2)


def constant_gain(value: float) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Gain sampler that always returns ``value`` (degenerate distribution)."""
    v = float(value)
    if not math.isfinite(v) or v < 0.0:
        raise ValueError("gain must be finite and nonnegative")

    def sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        return np.full(count, v)

    return sampler


def rayleigh_gain() -> Callable[[np.random.Generator, int], np.ndarray]:
    """Gain sampler |z| with z ~ CN(0, 1)."""

    def sampler(rng: np.random.Generator, count: int) -> np.ndarray:
        return np.abs(core.sample_cn01(rng, count))

    return sampler


def ergodic_wyner_rate(
    signal_var: float,
    noise_var: float,
    distortion: float,
    gain_sampler: Callable[[np.random.Generator, int], np.ndarray],
    mc: MCConfig | None = None,
) -> float:
    """Average rate to describe X at distortion D given Y = a X + U at the decoder.

    X ~ N(0, signal_var), U ~ N(0, noise_var), and the gain a is drawn per
    realization from ``gain_sampler(rng, count)``.  Each realization has
    conditional variance cv = signal_var noise_var / (a^2 signal_var +
    noise_var) and contributes log2(cv / D) bits; the distortion must
    satisfy 0 < D <= cv for every realization, otherwise the quantity is
    outside its validity domain.
    """
    sv = float(signal_var)
    nv = float(noise_var)
    d = float(distortion)
    if not math.isfinite(sv) or sv <= 0.0:
        raise ValueError("signal_var must be finite and positive")
    if not math.isfinite(nv) or nv <= 0.0:
        raise ValueError("noise_var must be finite and positive")
    if not math.isfinite(d) or d <= 0.0:
        raise DomainError("distortion must satisfy 0 < D <= conditional variance")
    mc = mc or MCConfig()

    total = 0.0
    for index, count in enumerate(_chunk_sizes(mc.samples, mc.workers)):
        rng = core.stream(mc.seed, _GAIN_TAG, index)
        a = np.asarray(gain_sampler(rng, count), dtype=float)
        if a.shape != (count,):
            raise ValueError("gain_sampler must return a 1-D array of the requested length")
        if not np.all(np.isfinite(a)) or np.any(a < 0.0):
            raise ValueError("gains must be finite and nonnegative")
        cond_var = sv * nv / (a * a * sv + nv)
        if np.any(cond_var < d):
            raise DomainError(
                "distortion exceeds the conditional variance for some gain draw, "
                "need 0 < D <= signal_var*noise_var/(a^2 signal_var + noise_var)"
            )
        total += float(np.sum(np.log2(cond_var / d)))
    return total / mc.samples
