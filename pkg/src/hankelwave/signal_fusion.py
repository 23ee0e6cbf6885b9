"""Orientation features from raw gyro/accelerometer samples.

The complementary filter is the PI-corrected gyro integrator

    angle_f = (1/s) rate + (Kp/s + Ki/s^2) (angle_a - angle_f)

which rearranges to two branches sharing the denominator s^2 + Kp s + Ki:
``s / den`` applied to the gyro rate and ``(Kp s + Ki) / den`` applied to
the accelerometer angle. Both are discretized with the bilinear map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import signal

from .errors import DegenerateInputError, ParameterError, PropagationError

GRAVITY = 9.81

# Gains tuned for the handle-bar mounted tablet.
DEFAULT_KP = 7.5924
DEFAULT_KI = 20.7015

# Reference difference equation quoted for those gains. It does not follow from
# a bilinear transform at 20 Hz; see ``reference_denominator_rate``.
REFERENCE_DENOMINATOR = (1.0, -1.8091, 0.8188)
REFERENCE_GYRO_NUMERATOR = (0.0, 0.907, -1.814, 0.819)
REFERENCE_ACCEL_NUMERATOR = (0.0, 0.093, 0.0048, -0.0882)


@dataclass(frozen=True)
class FilterGains:
    Kp: float = DEFAULT_KP
    Ki: float = DEFAULT_KI
    fs: float = 20.0

    def __post_init__(self):
        for name in ("Kp", "Ki", "fs"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive and finite, got {value}")
        # Kp, Ki > 0 already puts both roots of s^2 + Kp s + Ki in the open LHP.


@dataclass(frozen=True)
class DigitalFilterCoefficients:
    """Discrete complementary filter, coefficients in powers of the unit delay.

    ``gyro`` acts on the angular rate, ``accel`` on the accelerometer angle,
    ``den`` is shared and normalized so ``den[0] == 1``.
    """

    gyro: tuple[float, ...]
    accel: tuple[float, ...]
    den: tuple[float, ...]
    fs: float

    @property
    def order(self) -> int:
        return len(self.den) - 1

    def poles(self) -> NDArray[np.complex128]:
        return np.roots(self.den)

    def gyro_as_angle(self) -> tuple[float, ...]:
        """Gyro-branch numerator re-expressed as acting on an angle.

        Feeding the branch with the exact bilinear derivative of an angle,
        ``2 fs (1 - d) / (1 + d)``, multiplies the numerator by that factor.
        """
        K = 2.0 * self.fs
        g = np.asarray(self.gyro) / K
        # gyro = K (1 - d^2) / a0 -> angle form K^2 (1 - d)^2 / a0
        q, r = np.polydiv(g[::-1], np.array([1.0, 1.0]))  # divide by (1 + d)
        if np.max(np.abs(r)) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise ValueError("gyro numerator not divisible by (1 + d)")
        q = q[::-1]
        return tuple(np.convolve(q, [K * K, -K * K]).tolist())


def accel_to_angles(accel) -> tuple[float, float]:
    """Roll and pitch (rad) of the gravity vector seen by the accelerometer."""
    ax, ay, az = (float(v) for v in accel)
    if not all(math.isfinite(v) for v in (ax, ay, az)):
        raise DegenerateInputError("non-finite acceleration")
    if math.sqrt(ax * ax + ay * ay + az * az) < 0.1:
        raise DegenerateInputError("acceleration norm below 0.1 m/s^2; angles unobservable")
    return math.atan2(ay, az), math.atan2(-ax, math.sqrt(ay * ay + az * az))


def accel_to_angles_array(accel: NDArray[np.floating]) -> tuple[NDArray, NDArray]:
    accel = np.asarray(accel, dtype=float)
    norm = np.linalg.norm(accel, axis=1)
    bad = ~(norm >= 0.1)
    if bad.any():
        raise DegenerateInputError(
            f"acceleration norm below 0.1 m/s^2 at sample {int(np.argmax(bad))}")
    ax, ay, az = accel.T
    return np.arctan2(ay, az), np.arctan2(-ax, np.hypot(ay, az))


def discretize(gains: FilterGains) -> DigitalFilterCoefficients:
    """Bilinear transform of both complementary branches.

    With K = 2 fs and s = K (1 - d) / (1 + d), multiplying through by
    (1 + d)^2 gives

        den   = (K^2 + Kp K + Ki) + (2 Ki - 2 K^2) d + (K^2 - Kp K + Ki) d^2
        gyro  = K - K d^2
        accel = (Kp K + Ki) + 2 Ki d + (Ki - Kp K) d^2
    """
    K = 2.0 * gains.fs
    Kp, Ki = gains.Kp, gains.Ki
    den = np.array([K * K + Kp * K + Ki, 2.0 * Ki - 2.0 * K * K, K * K - Kp * K + Ki])
    gyro = np.array([K, 0.0, -K])
    accel = np.array([Kp * K + Ki, 2.0 * Ki, Ki - Kp * K])
    a0 = den[0]
    return DigitalFilterCoefficients(
        gyro=tuple((gyro / a0).tolist()),
        accel=tuple((accel / a0).tolist()),
        den=tuple((den / a0).tolist()),
        fs=gains.fs,
    )


def reference_denominator_rate(gains: FilterGains | None = None) -> tuple[float, float]:
    """Sampling rates at which the bilinear denominator hits the reference values.

    Returns ``(fs_for_d1, fs_for_d2)``: the rate matching the reference ``d``
    coefficient and the rate matching the reference ``d^2`` coefficient. They
    differ (about 38.6 Hz vs 38.0 Hz), so no single rate reproduces the
    reference equation and neither is the nominal 20 Hz.
    """
    from scipy.optimize import brentq

    gains = gains or FilterGains()

    def coeff(fs, i):
        return discretize(FilterGains(gains.Kp, gains.Ki, fs)).den[i]

    f1 = brentq(lambda fs: coeff(fs, 1) - REFERENCE_DENOMINATOR[1], 1.0, 1000.0)
    f2 = brentq(lambda fs: coeff(fs, 2) - REFERENCE_DENOMINATOR[2], 1.0, 1000.0)
    return f1, f2


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class FilterState:
    """Delay lines of one angle channel, most recent sample first.

    ``rates`` and ``angles`` hold the past ``order`` inputs, ``outputs`` the
    past ``order`` unwrapped outputs.
    """

    rates: tuple[float, ...]
    angles: tuple[float, ...]
    outputs: tuple[float, ...]

    @classmethod
    def warm(cls, coeffs: DigitalFilterCoefficients, angle: float, rate: float = 0.0):
        """Start in steady state at the first accelerometer angle.

        The gyro-branch DC gain is zero, so holding ``rate`` in the gyro delay
        line and ``angle`` everywhere else is an exact fixed point.
        """
        n = coeffs.order
        return cls((rate,) * n, (angle,) * n, (angle,) * n)

    @classmethod
    def zero(cls, coeffs: DigitalFilterCoefficients):
        n = coeffs.order
        return cls((0.0,) * n, (0.0,) * n, (0.0,) * n)


def filter_step(state: FilterState, coeffs: DigitalFilterCoefficients,
                gyro_rate: float, accel_angle: float) -> tuple[FilterState, float]:
    if not (math.isfinite(gyro_rate) and math.isfinite(accel_angle)):
        raise PropagationError(f"non-finite filter input ({gyro_rate}, {accel_angle})")
    if len(state.outputs) != coeffs.order:
        raise ValueError("filter state does not match coefficient order")
    bg, ba, a = coeffs.gyro, coeffs.accel, coeffs.den
    y = bg[0] * gyro_rate + ba[0] * accel_angle
    for k in range(coeffs.order):
        y += bg[k + 1] * state.rates[k] + ba[k + 1] * state.angles[k] - a[k + 1] * state.outputs[k]
    new = FilterState(
        (gyro_rate,) + state.rates[:-1],
        (accel_angle,) + state.angles[:-1],
        (y,) + state.outputs[:-1],
    )
    return new, wrap_angle(y)


class OrientationFilter:
    """Streaming roll/pitch complementary filter for one sensor stream."""

    def __init__(self, gains: FilterGains | None = None):
        self.gains = gains or FilterGains()
        self.coeffs = discretize(self.gains)
        self.roll_state: FilterState | None = None
        self.pitch_state: FilterState | None = None

    def update(self, gyro, accel) -> tuple[float, float]:
        """Advance one sample; returns fused ``(roll, pitch)`` in radians."""
        roll_a, pitch_a = accel_to_angles(accel)
        # Euler-rate approximation valid for the small roll of a handle bar.
        roll_rate, pitch_rate = float(gyro[0]), float(gyro[1])
        if self.roll_state is None:
            self.roll_state = FilterState.warm(self.coeffs, roll_a, roll_rate)
            self.pitch_state = FilterState.warm(self.coeffs, pitch_a, pitch_rate)
        roll_state, roll = filter_step(self.roll_state, self.coeffs, roll_rate, roll_a)
        pitch_state, pitch = filter_step(self.pitch_state, self.coeffs, pitch_rate, pitch_a)
        self.roll_state, self.pitch_state = roll_state, pitch_state
        return roll, pitch


def fuse(gyro: NDArray, accel: NDArray, gains: FilterGains | None = None) -> NDArray:
    """Fused ``(N, 2)`` array of roll, pitch for a whole recording."""
    f = OrientationFilter(gains)
    out = np.empty((len(gyro), 2))
    for i, (g, a) in enumerate(zip(np.asarray(gyro, float), np.asarray(accel, float))):
        out[i] = f.update(g, a)
    return out


def integrate_gyro(rate: NDArray, fs: float, initial: float = 0.0) -> NDArray:
    """Pure trapezoidal integration of a rate signal; drifts with any bias."""
    rate = np.asarray(rate, dtype=float)
    out = np.empty_like(rate)
    out[0] = initial
    out[1:] = initial + np.cumsum(0.5 * (rate[1:] + rate[:-1])) / fs
    return out


class ButterworthLowpass:
    """Causal third-order Butterworth low-pass, one sample at a time.

    The first sample primes the internal state to its steady state so a
    constant input passes through unchanged from the start.
    """

    def __init__(self, cutoff: float, fs: float, channels: int = 1, order: int = 3):
        if not (0.0 < cutoff < fs / 2.0):
            raise ParameterError(f"cutoff {cutoff} Hz outside (0, {fs / 2}) Hz")
        self.cutoff, self.fs, self.channels = cutoff, fs, channels
        self.b, self.a = signal.butter(order, cutoff, btype="low", fs=fs)
        self._zi_unit = signal.lfilter_zi(self.b, self.a)
        self.zi: NDArray | None = None

    def update(self, x) -> NDArray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.zi is None:
            self.zi = np.outer(self._zi_unit, x)
        b, a, zi = self.b, self.a, self.zi
        y = b[0] * x + zi[0]
        # transposed direct form II
        for k in range(1, len(zi)):
            zi[k - 1] = b[k] * x + zi[k] - a[k] * y
        zi[-1] = b[-1] * x - a[-1] * y
        return y

    def apply(self, data: NDArray) -> NDArray:
        data = np.asarray(data, dtype=float)
        squeeze = data.ndim == 1
        data2 = data[:, None] if squeeze else data
        zi = self.zi if self.zi is not None else np.outer(self._zi_unit, data2[0])
        y, self.zi = signal.lfilter(self.b, self.a, data2, axis=0, zi=zi)
        return y[:, 0] if squeeze else y


def butterworth_lowpass(trace, cutoff: float = 3.0, fs: float = 20.0) -> NDArray:
    """Filter each column of ``trace`` with a causal 3rd-order Butterworth."""
    return ButterworthLowpass(cutoff, fs).apply(trace)


def rotation_matrix(roll: float, pitch: float) -> NDArray:
    """Device-to-motion-frame rotation: undo roll about x, then pitch about y."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return ry @ rx


def rotate_to_body(accel, roll: float, pitch: float) -> NDArray:
    """Gravity-compensated acceleration in the vehicle motion frame."""
    accel = np.asarray(accel, dtype=float)
    if not (np.all(np.isfinite(accel)) and math.isfinite(roll) and math.isfinite(pitch)):
        raise DegenerateInputError("non-finite input to rotate_to_body")
    return rotation_matrix(roll, pitch) @ accel - np.array([0.0, 0.0, GRAVITY])


def rotate_to_body_array(accel: NDArray, roll: NDArray, pitch: NDArray) -> NDArray:
    accel = np.asarray(accel, dtype=float)
    cr, sr, cp, sp = np.cos(roll), np.sin(roll), np.cos(pitch), np.sin(pitch)
    ax, ay, az = accel.T
    # rx @ a
    y1 = cr * ay - sr * az
    z1 = sr * ay + cr * az
    # ry @ (ax, y1, z1)
    out = np.column_stack([cp * ax + sp * z1, y1, -sp * ax + cp * z1])
    out[:, 2] -= GRAVITY
    return out
