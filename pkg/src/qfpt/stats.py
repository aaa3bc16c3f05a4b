"""Empirical statistics over hitting records and goodness-of-fit tests.

Everything here is pure aggregation: records in, numbers out.  Summaries are
built on streaming-mergeable central moments, so summarizing a union of
record batches and merging per-batch summaries commute.  Kolmogorov-Smirnov
statistics are reported raw (no p-values); compare them against the usual
reference thresholds ``1.36/sqrt(n)`` / ``1.63/sqrt(n)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import analytic
from .errors import CensoringError, ModelError

__all__ = [
    "HittingRecord",
    "RunningMoments",
    "EnsembleSummary",
    "KsResult",
    "summarize",
    "merge_summaries",
    "EmpiricalCdf",
    "ecdf",
    "ks_one_sample",
    "ks_two_sample",
    "histogram",
]

log = logging.getLogger(__name__)

UPPER_SIDE = 1
LOWER_SIDE = 2


@dataclass(frozen=True)
class HittingRecord:
    """Outcome of one trajectory: which threshold was crossed, and when.

    ``side`` is 1 for the upper threshold (``x >= 1-eps``) and 2 for the lower
    one (``x <= eps``).  Censored records carry ``hit_time = t_max`` of the
    run that produced them.
    """

    trajectory_id: int
    side: int
    hit_time: float
    censored: bool = False


@dataclass(frozen=True)
class RunningMoments:
    """Streaming central moments up to order four (parallel-mergeable)."""

    n: int
    mean: float
    m2: float
    m3: float
    m4: float

    @classmethod
    def from_samples(cls, xs):
        xs = np.asarray(xs, dtype=float)
        n = xs.size
        if n == 0:
            return cls(0, 0.0, 0.0, 0.0, 0.0)
        mu = float(xs.mean())
        d = xs - mu
        return cls(n, mu, float(np.sum(d**2)), float(np.sum(d**3)), float(np.sum(d**4)))

    def merge(self, other):
        """Combine two disjoint sample sets (Pebay's update formulas)."""
        a, b = self, other
        if a.n == 0:
            return b
        if b.n == 0:
            return a
        n = a.n + b.n
        delta = b.mean - a.mean
        mean = a.mean + delta * b.n / n
        m2 = a.m2 + b.m2 + delta**2 * a.n * b.n / n
        m3 = (
            a.m3
            + b.m3
            + delta**3 * a.n * b.n * (a.n - b.n) / n**2
            + 3.0 * delta * (a.n * b.m2 - b.n * a.m2) / n
        )
        m4 = (
            a.m4
            + b.m4
            + delta**4 * a.n * b.n * (a.n**2 - a.n * b.n + b.n**2) / n**3
            + 6.0 * delta**2 * (a.n**2 * b.m2 + b.n**2 * a.m2) / n**2
            + 4.0 * delta * (a.n * b.m3 - b.n * a.m3) / n
        )
        return RunningMoments(n, mean, m2, m3, m4)

    @property
    def variance(self):
        """Unbiased sample variance."""
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0


@dataclass(frozen=True)
class EnsembleSummary:
    """Moments with standard errors, splitting fraction, censoring diagnostics."""

    n: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    splitting_upper: float
    splitting_se: float
    censored_fraction: float
    n_upper: int
    n_lower: int
    n_censored: int
    moments: RunningMoments

    def to_dict(self):
        return {
            "n": self.n,
            "mean": self.mean,
            "mean_se": self.mean_se,
            "variance": self.variance,
            "variance_se": self.variance_se,
            "splitting_upper": self.splitting_upper,
            "splitting_se": self.splitting_se,
            "censored_fraction": self.censored_fraction,
        }


def _summary_from_parts(moments, n_upper, n_lower, n_censored):
    n_total = moments.n + n_censored
    n = moments.n
    if n < 2:
        raise ModelError("need at least 2 uncensored records to summarize")
    var = moments.variance
    mean_se = math.sqrt(var / n)
    # se of the unbiased variance via the fourth central moment
    m4 = moments.m4 / n
    var_var = max(m4 - (n - 3) / (n - 1) * var**2, 0.0) / n
    p = n_upper / n_total
    return EnsembleSummary(
        n=n_total,
        mean=moments.mean,
        mean_se=mean_se,
        variance=var,
        variance_se=math.sqrt(var_var),
        splitting_upper=p,
        splitting_se=math.sqrt(p * (1.0 - p) / n_total),
        censored_fraction=n_censored / n_total,
        n_upper=n_upper,
        n_lower=n_lower,
        n_censored=n_censored,
        moments=moments,
    )


def summarize(records, max_censored_fraction=0.01):
    """Summarize an ensemble of hitting records.

    Moments are computed over the uncensored exit times of both sides.  Fails
    loudly if the censored fraction reaches ``max_censored_fraction``.
    """
    records = list(records)
    if len(records) < 2:
        raise ModelError("need at least 2 records to summarize")
    n_censored = sum(r.censored for r in records)
    frac = n_censored / len(records)
    if frac >= max_censored_fraction and n_censored > 0:
        raise CensoringError(
            f"censored fraction {frac:.4f} reaches the limit {max_censored_fraction}; "
            "raise t_max or refuse the run"
        )
    times = np.array([r.hit_time for r in records if not r.censored])
    n_upper = sum(1 for r in records if not r.censored and r.side == UPPER_SIDE)
    n_lower = sum(1 for r in records if not r.censored and r.side == LOWER_SIDE)
    return _summary_from_parts(RunningMoments.from_samples(times), n_upper, n_lower, n_censored)


def merge_summaries(a, b):
    """Merge summaries of disjoint record sets; commutes with :func:`summarize`."""
    return _summary_from_parts(
        a.moments.merge(b.moments),
        a.n_upper + b.n_upper,
        a.n_lower + b.n_lower,
        a.n_censored + b.n_censored,
    )


class EmpiricalCdf:
    """Right-continuous empirical distribution step function.

    Jumps at the (side-filtered) uncensored exit times, normalized by the
    *total* number of records, so a side-filtered ECDF plateaus at that side's
    empirical probability mass.
    """

    def __init__(self, jump_times, n_total):
        if n_total <= 0:
            raise ModelError("empirical CDF needs at least one record")
        t = np.sort(np.asarray(jump_times, dtype=float))
        if t.size == 0:
            raise ModelError("no records after filtering; empirical CDF is empty")
        self.times = t
        self.n_total = int(n_total)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.searchsorted(self.times, t, side="right") / self.n_total
        return float(out) if out.ndim == 0 else out

    @property
    def plateau(self):
        """Terminal value: filtered mass over total records."""
        return self.times.size / self.n_total


def _filter_times(records, side):
    if side in (None, "both"):
        return [r.hit_time for r in records if not r.censored]
    return [r.hit_time for r in records if not r.censored and r.side == side]


def ecdf(records, side=None):
    """Empirical CDF of the exit times, optionally filtered to one side."""
    records = list(records)
    times = _filter_times(records, side)
    return EmpiricalCdf(times, n_total=len(records))


@dataclass(frozen=True)
class KsResult:
    """Raw Kolmogorov-Smirnov statistic and the effective sample size."""

    statistic: float
    n: int

    def threshold(self, coefficient=1.36):
        """Reference threshold ``coefficient / sqrt(n)``."""
        return coefficient / math.sqrt(self.n)


def ks_one_sample(records, side, sol):
    """Sup-distance between the empirical and analytic exit-time laws.

    For a one-sided test the side-filtered ECDF (normalized by total count) is
    divided by the *analytic* splitting probability and compared against the
    conditional analytic CDF, keeping any splitting mismatch visible in the
    statistic.  Records must all be uncensored.  The analytic CDF is extended
    by 0 below its truncation floor; records falling there are included (with
    the caveat logged by the CDF itself).
    """
    records = list(records)
    if any(r.censored for r in records):
        raise ModelError("ks_one_sample requires uncensored records")
    if not records:
        raise ModelError("no records")
    n_total = len(records)
    if side == "both":
        times = np.sort(np.array(_filter_times(records, "both")))
        mass = 1.0
        model_cdf = analytic.fpt_cdf(times, sol, "both")
    else:
        side_name = {UPPER_SIDE: "upper", LOWER_SIDE: "lower"}[side]
        times = np.sort(np.array(_filter_times(records, side)))
        if times.size == 0:
            raise ModelError(f"no records on side {side}")
        mass = analytic._side_mass(sol.params, side_name)
        model_cdf = analytic.fpt_cdf(times, sol, side_name)
    k = times.size
    steps_hi = np.arange(1, k + 1) / n_total
    steps_lo = np.arange(0, k) / n_total
    d = np.max(np.maximum(np.abs(steps_hi - model_cdf), np.abs(steps_lo - model_cdf)))
    # plateau vs terminal analytic mass
    d = max(float(d), abs(k / n_total - mass))
    return KsResult(statistic=d / mass, n=k)


def ks_two_sample(records_a, records_b, side=None):
    """Two-sample KS statistic between exit-time samples (uncensored only)."""
    ta = np.sort(np.array(_filter_times(records_a, side)))
    tb = np.sort(np.array(_filter_times(records_b, side)))
    if ta.size == 0 or tb.size == 0:
        raise ModelError("both record sets must be nonempty after filtering")
    allt = np.concatenate([ta, tb])
    fa = np.searchsorted(ta, allt, side="right") / ta.size
    fb = np.searchsorted(tb, allt, side="right") / tb.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = int(round(ta.size * tb.size / (ta.size + tb.size)))
    return KsResult(statistic=d, n=max(n_eff, 1))


def histogram(records, bins, side=None):
    """Density histogram whose integral equals the side's empirical mass.

    Returns ``(edges, densities)``; censored records count toward the
    normalizing total but contribute no mass.
    """
    records = list(records)
    if bins < 1:
        raise ModelError("bins must be >= 1")
    times = np.array(_filter_times(records, side))
    if times.size == 0:
        raise ModelError("no records after filtering")
    counts, edges = np.histogram(times, bins=bins)
    widths = np.diff(edges)
    densities = counts / (len(records) * widths)
    return edges, densities
