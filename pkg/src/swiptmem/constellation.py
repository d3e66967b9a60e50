"""Real-valued signal constellations and probability mass functions.

Amplitudes are stored in volts at the transmitter (1-ohm reference);
channel gains are applied at the point of use, never baked into the
constellation. Pmfs are plain 1-D float arrays handled by the helpers
below.
"""

from dataclasses import dataclass, field

import numpy as np

# Construction is tighter than validation: SQP steps accumulate rounding,
# so vectors we build must be cleaner than vectors we accept.
PMF_BUILD_TOL = 1e-12
PMF_VALIDATE_TOL = 1e-9


@dataclass(frozen=True)
class Constellation:
    """An ordered set of real symbol amplitudes with a peak bound.

    Attributes
    ----------
    amplitudes : np.ndarray
        Strictly increasing symbol values in volts, all within ``[-peak, peak]``.
    peak : float
        Peak amplitude bound (volts).
    """

    amplitudes: np.ndarray
    peak: float

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        object.__setattr__(self, "amplitudes", amps)
        amps.setflags(write=False)
        if amps.ndim != 1 or amps.size < 2:
            raise ValueError("constellation needs at least 2 amplitudes")
        if not np.all(np.diff(amps) > 0):
            raise ValueError("amplitudes must be strictly increasing")
        if self.peak < 0:
            raise ValueError("peak must be nonnegative")
        if np.any(np.abs(amps) > self.peak * (1 + 1e-15)):
            raise ValueError("amplitudes exceed the peak bound")

    @property
    def size(self):
        return self.amplitudes.size


def build_uniform_pam(size: int, peak: float) -> Constellation:
    """Uniformly spaced PAM levels ``2*peak*k/(size-1) - peak``, k = 0..size-1.

    Levels are computed as ``peak*(2k - (size-1))/(size-1)`` so the set is
    exactly symmetric in floating point: ``amplitudes[k] == -amplitudes[size-1-k]``.
    """
    if size < 2:
        raise ValueError(f"size must be >= 2, got {size}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    k = np.arange(size, dtype=float)
    levels = peak * ((2.0 * k - (size - 1)) / (size - 1))
    return Constellation(amplitudes=levels, peak=float(peak))


def validate_pmf(theta) -> bool:
    """True iff all entries lie in [0, 1] and the sum is 1 within 1e-9."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        return False
    if not np.all(np.isfinite(theta)):
        return False
    if np.any(theta < -PMF_VALIDATE_TOL) or np.any(theta > 1 + PMF_VALIDATE_TOL):
        return False
    return abs(theta.sum() - 1.0) <= PMF_VALIDATE_TOL


def clean_pmf(theta) -> np.ndarray:
    """Clamp slightly negative entries to 0 and renormalize.

    Entries in ``[-1e-9, 0)`` are rounding debris from optimizer steps and are
    clamped; anything more negative, or a sum further than 1e-9 from 1, is a
    genuine error.
    """
    theta = np.asarray(theta, dtype=float).copy()
    if not validate_pmf(theta):
        raise ValueError("not a valid pmf within tolerance 1e-9")
    np.clip(theta, 0.0, None, out=theta)
    theta /= theta.sum()
    assert abs(theta.sum() - 1.0) <= PMF_BUILD_TOL
    return theta


def uniform_pmf(size: int) -> np.ndarray:
    return np.full(size, 1.0 / size)


def second_moment(c: Constellation, theta) -> float:
    """Average symbol power ``sum_i theta_i * x_i**2`` in volts^2."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != c.amplitudes.shape:
        raise ValueError(
            f"pmf size {theta.size} does not match constellation size {c.size}"
        )
    return float(theta @ (c.amplitudes**2))


def sample_symbol(theta, rng: np.random.Generator) -> int:
    """Draw one symbol index distributed according to ``theta``.

    Deterministic for a given generator state; uses inverse-cdf sampling so a
    zero-probability entry is never drawn.
    """
    theta = np.asarray(theta, dtype=float)
    if not validate_pmf(theta):
        raise ValueError("not a valid pmf")
    cdf = np.cumsum(theta)
    cdf[-1] = 1.0
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    # Guard against landing on a trailing zero-probability cell.
    while theta[idx] == 0.0:
        idx -= 1
    return idx


def sample_symbols(theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vector version of :func:`sample_symbol` for n independent draws."""
    theta = np.asarray(theta, dtype=float)
    if not validate_pmf(theta):
        raise ValueError("not a valid pmf")
    cdf = np.cumsum(theta)
    cdf[-1] = 1.0
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="right")
    if np.any(theta[idx] == 0.0):
        bad = theta[idx] == 0.0
        for i in np.nonzero(bad)[0]:
            j = idx[i]
            while theta[j] == 0.0:
                j -= 1
            idx[i] = j
    return idx.astype(np.int64)


def entropy_tilted_pmf(c: Constellation, power_budget: float) -> np.ndarray:
    """Maximum-entropy pmf whose second moment meets ``power_budget``.

    Returns the uniform pmf when it already fits the budget; otherwise the
    exponential tilt ``theta_i ~ exp(-beta * x_i**2)`` with beta chosen by
    bisection so the budget holds with a hair of slack.
    """
    amps2 = c.amplitudes**2
    if power_budget < amps2.min():
        raise ValueError(
            "power budget %.6g V^2 is below the smallest symbol power %.6g V^2; "
            "no pmf can satisfy it" % (power_budget, amps2.min())
        )
    target = power_budget * (1.0 - 1e-9)
    uniform = uniform_pmf(c.size)
    if uniform @ amps2 <= target:
        return uniform

    def moment(beta):
        w = np.exp(-beta * (amps2 - amps2.min()))
        w /= w.sum()
        return w @ amps2

    lo, hi = 0.0, 1.0
    while moment(hi) > target:
        hi *= 2.0
        if hi > 1e30:
            raise ValueError("failed to bracket the tilt parameter")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if moment(mid) > target:
            lo = mid
        else:
            hi = mid
    w = np.exp(-hi * (amps2 - amps2.min()))
    return clean_pmf(w / w.sum())
