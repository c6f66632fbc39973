"""Identification of the scaled effectiveness matrix from flight logs.

Rotor-speed increments ``x = 2 diag(w_f) dw_f`` are regressed against
increments of filtered angular acceleration and upward specific force,
``y = [dOmega_dot_f; -da_z,f]``, one output axis per row of ``scaled_G``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import butter, sosfilt, sosfilt_zi

from .vehicle import AXES

DEFAULT_CUTOFF_HZ = 25.0
DEFAULT_RATE_HZ = 500.0
MAX_LOST_SAMPLES = 4
COND_LIMIT = 1e8
COLD_START_P = 1e4
DIVERGENCE_FACTOR = 1e6
DIAGONAL_RATIO = 10.0


class IllConditionedError(ValueError):
    """The regressors do not excite every rotor independently."""


# --- filtering and resampling ---------------------------------------------------

def butterworth_sos(cutoff_hz: float, sample_rate_hz: float, order: int = 4) -> np.ndarray:
    if not 0.0 < cutoff_hz < sample_rate_hz / 2.0:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({sample_rate_hz / 2} Hz)")
    return butter(order, cutoff_hz, btype="low", fs=sample_rate_hz, output="sos")


def butterworth_lowpass(signal, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                        sample_rate_hz: float = DEFAULT_RATE_HZ, order: int = 4) -> np.ndarray:
    """Causal 4th-order low-pass along axis 0, started in steady state.

    Every column goes through the same filter, so the phase lag is identical
    across channels and cancels in the regression.
    """
    sos = butterworth_sos(cutoff_hz, sample_rate_hz, order)
    x = np.asarray(signal, dtype=float)
    if len(x) == 0:
        return x.copy()
    zi = sosfilt_zi(sos)
    zi = zi.reshape(zi.shape + (1,) * (x.ndim - 1)) * x[0]
    y, _ = sosfilt(sos, x, axis=0, zi=zi)
    return y


def resample_log(time, data, rate_hz: float = DEFAULT_RATE_HZ,
                 max_lost: int = MAX_LOST_SAMPLES):
    """Linear interpolation onto a uniform grid, masking long gaps.

    A gap counts as lost data when more than ``max_lost`` nominal samples are
    missing; grid points inside or touching such a gap get ``valid=False``.
    Returns ``(t_new, data_new, valid)``.
    """
    t = np.asarray(time, dtype=float)
    d = np.asarray(data, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("need at least two timestamps")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    dt_nom = float(np.median(np.diff(t)))
    step = 1.0 / rate_hz
    t_new = np.arange(t[0], t[-1] + 0.5 * step, step)
    t_new = t_new[t_new <= t[-1] + 1e-12]
    flat = d.reshape(len(t), -1)
    out = np.column_stack([np.interp(t_new, t, flat[:, j]) for j in range(flat.shape[1])])
    out = out.reshape((len(t_new),) + d.shape[1:])
    valid = np.ones(len(t_new), dtype=bool)
    lost = np.round(np.diff(t) / dt_nom).astype(int) - 1
    for k in np.flatnonzero(lost > max_lost):
        lo, hi = t[k] - dt_nom, t[k + 1] + dt_nom
        valid &= ~((t_new >= lo) & (t_new <= hi))
    return t_new, out, valid


def gap_mask(time, max_lost: int = MAX_LOST_SAMPLES) -> np.ndarray:
    """Per-sample validity on the original grid (False next to long gaps)."""
    t = np.asarray(time, dtype=float)
    dt_nom = float(np.median(np.diff(t)))
    lost = np.round(np.diff(t) / dt_nom).astype(int) - 1
    valid = np.ones(len(t), dtype=bool)
    for k in np.flatnonzero(lost > max_lost):
        valid[k] = valid[k + 1] = False
    return valid


# --- dataset --------------------------------------------------------------------

@dataclass
class IdentDataset:
    x: np.ndarray            # normalized regressors, N x n
    y: np.ndarray            # normalized measurements, N x 4
    x_scale: np.ndarray
    y_scale: np.ndarray
    gap_mask: np.ndarray     # True where the sample was dropped
    time: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_rotors(self) -> int:
        return self.x.shape[1]

    def to_physical(self, coef_normalized: np.ndarray, axis=None) -> np.ndarray:
        """Map normalized coefficients (n x m, columns per ``axis``) to physical units."""
        c = np.asarray(coef_normalized, dtype=float).reshape(self.n_rotors, -1)
        ys = self.y_scale[_resolve_axes(axis)]
        return c * ys[None, :] / self.x_scale[:, None]

    def split(self, holdout: float = 0.2):
        """Chronological split: the last ``holdout`` fraction is held out."""
        if not 0.0 <= holdout < 1.0:
            raise ValueError("holdout must lie in [0, 1)")
        cut = int(round(len(self.x) * (1.0 - holdout)))
        def part(sl):
            return IdentDataset(self.x[sl], self.y[sl], self.x_scale, self.y_scale,
                                self.gap_mask, self.time[sl] if len(self.time) else self.time)
        return part(slice(0, cut)), part(slice(cut, None))

    @staticmethod
    def concatenate(parts) -> "IdentDataset":
        parts = list(parts)
        first = parts[0]
        for p in parts[1:]:
            if not (np.allclose(p.x_scale, first.x_scale) and np.allclose(p.y_scale, first.y_scale)):
                raise ValueError("datasets use different normalizations")
        return IdentDataset(np.vstack([p.x for p in parts]), np.vstack([p.y for p in parts]),
                            first.x_scale, first.y_scale,
                            np.concatenate([p.gap_mask for p in parts]),
                            np.concatenate([p.time for p in parts]))


def _scale(a: np.ndarray) -> np.ndarray:
    s = np.max(np.abs(a), axis=0)
    return np.where(s > 0, s, 1.0)


def build_dataset(time, rotor_speed, gyro, accel, cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                  rate_hz: float = DEFAULT_RATE_HZ, scale: Optional[tuple] = None,
                  resample: bool = True) -> IdentDataset:
    """Filtered increment regressors and measurements from raw log columns.

    ``scale`` fixes ``(x_scale, y_scale)``, e.g. to continue an earlier fit;
    values may then fall outside [-1, 1].
    """
    t = np.asarray(time, dtype=float)
    raw = np.column_stack([np.asarray(rotor_speed, dtype=float),
                           np.asarray(gyro, dtype=float),
                           np.asarray(accel, dtype=float)[:, 2]])
    n = raw.shape[1] - 4
    if resample:
        t, raw, valid = resample_log(t, raw, rate_hz)
    else:
        valid = gap_mask(t)
        rate_hz = 1.0 / float(np.median(np.diff(t)))
    filt = butterworth_lowpass(raw, cutoff_hz, rate_hz)
    w_f = filt[:, :n]
    omega_dot = np.gradient(filt[:, n:n + 3], t, axis=0)
    specific_up = -filt[:, n + 3]
    dw = np.diff(w_f, axis=0)
    x = 2.0 * w_f[1:] * dw
    y = np.column_stack([np.diff(omega_dot, axis=0), np.diff(specific_up)])
    # an increment is usable only if both ends (and the gradient stencil) are valid
    ok = valid[1:] & valid[:-1]
    ok[:-1] &= valid[2:]
    ok[1:] &= valid[:-2]
    if scale is None:
        xs, ys = _scale(x[ok]), _scale(y[ok])
    else:
        xs, ys = (np.asarray(s, dtype=float) for s in scale)
    return IdentDataset(x[ok] / xs, y[ok] / ys, xs, ys, ~ok, t[1:][ok])


# --- batch least squares ---------------------------------------------------------

@dataclass(frozen=True)
class OlsResult:
    coef: np.ndarray          # normalized, n x m
    P_unscaled: np.ndarray    # (X^T X)^-1
    noise_var: np.ndarray     # per output residual variance
    condition: float

    @property
    def P(self) -> np.ndarray:
        """Parameter covariance ``(X^T X)^-1 var(eps)``, one n x n block per output."""
        return self.P_unscaled[None, :, :] * self.noise_var[:, None, None]


def _resolve_axes(axis):
    if axis is None:
        return list(range(4))
    items = [axis] if isinstance(axis, (int, str)) else list(axis)
    return [AXES.index(a) if isinstance(a, str) else int(a) for a in items]


def ols_fit(dataset: IdentDataset, axis=None) -> OlsResult:
    """Least-squares fit of one or more output axes (default all four)."""
    cols = _resolve_axes(axis)
    X = dataset.x
    Y = dataset.y[:, cols]
    n = X.shape[1]
    if len(X) < n:
        raise IllConditionedError(f"need at least {n} samples, got {len(X)}")
    XtX = X.T @ X
    cond = float(np.linalg.cond(XtX))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        energy = np.sqrt(np.sum(X**2, axis=0))
        weak = [int(i) for i in np.flatnonzero(energy < 1e-3 * max(energy.max(), 1e-300))]
        detail = f"; rotors with no excitation: {weak}" if weak else ""
        raise IllConditionedError(f"regressor matrix ill-conditioned (cond {cond:.3g}){detail}")
    P0 = np.linalg.inv(XtX)
    P0 = 0.5 * (P0 + P0.T)
    coef = P0 @ (X.T @ Y)
    resid = Y - X @ coef
    dof = max(len(X) - n, 1)
    noise_var = np.sum(resid**2, axis=0) / dof
    return OlsResult(coef, P0, noise_var, cond)


# --- recursive least squares -------------------------------------------------------

@dataclass
class RlsState:
    """Recursive estimate shared by all outputs that use the same regressor.

    ``P`` is the unscaled covariance, so with ``lambda_ = 1`` the recursion
    reproduces batch least squares exactly.
    """
    A_hat: np.ndarray         # n x m
    P: np.ndarray             # n x n
    lambda_: float = 1.0
    residual_history: list = field(default_factory=list)
    initial_trace: float = 0.0
    diverged: bool = False
    updates: int = 0

    def __post_init__(self):
        if not 0.0 < self.lambda_ <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")
        self.A_hat = np.array(self.A_hat, dtype=float)
        if self.A_hat.ndim == 1:
            self.A_hat = self.A_hat[:, None]
        self.P = np.array(self.P, dtype=float)
        if not self.initial_trace:
            self.initial_trace = float(np.trace(self.P))

    @classmethod
    def cold_start(cls, n: int, m: int = 4, lambda_: float = 1.0) -> "RlsState":
        return cls(np.zeros((n, m)), COLD_START_P * np.eye(n), lambda_)

    @classmethod
    def from_ols(cls, fit: OlsResult, lambda_: float = 1.0) -> "RlsState":
        return cls(fit.coef.copy(), fit.P_unscaled.copy(), lambda_)

    def copy(self) -> "RlsState":
        return RlsState(self.A_hat.copy(), self.P.copy(), self.lambda_,
                        list(self.residual_history), self.initial_trace, self.diverged, self.updates)


def rls_update(state: RlsState, x_t, y_t, lambda_: Optional[float] = None,
               record: bool = True) -> RlsState:
    """One recursive least-squares step, applied to ``state`` in place.

    Order: predict, form the error, compute the gain, update the estimate,
    then the covariance (symmetrized). A zero regressor leaves the state alone.
    """
    x = np.asarray(x_t, dtype=float).reshape(-1)
    y = np.asarray(y_t, dtype=float).reshape(-1)
    lam = state.lambda_ if lambda_ is None else float(lambda_)
    if not 0.0 < lam <= 1.0:
        raise ValueError("forgetting factor must lie in (0, 1]")
    if not np.any(x):
        return state
    y_hat = x @ state.A_hat
    err = y - y_hat
    Px = state.P @ x
    denom = lam + x @ Px
    gain = Px / denom
    state.A_hat += np.outer(gain, err)
    P = (state.P - np.outer(Px, Px) / denom) / lam
    state.P = 0.5 * (P + P.T)
    state.updates += 1
    if record:
        state.residual_history.append(err)
    if np.trace(state.P) > DIVERGENCE_FACTOR * state.initial_trace:
        state.diverged = True
    return state


def rls_run(state: RlsState, dataset: IdentDataset, axis=None, record: bool = False) -> RlsState:
    cols = _resolve_axes(axis)
    for x, y in zip(dataset.x, dataset.y[:, cols]):
        rls_update(state, x, y, record=record)
    return state


# --- diagnostics ---------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    r_squared: dict
    residual_mean: dict
    histograms: dict
    diagonality_ratio: float
    diagonal: bool
    samples: int

    def to_dict(self) -> dict:
        return {
            "r_squared": self.r_squared,
            "residual_mean": self.residual_mean,
            "histograms": {k: {"counts": c.tolist(), "edges": e.tolist()}
                           for k, (c, e) in self.histograms.items()},
            "diagonality_ratio": self.diagonality_ratio,
            "diagonal": self.diagonal,
            "samples": self.samples,
        }


def diagonality_ratio(P: np.ndarray) -> float:
    """min |diagonal| / max |off-diagonal|; infinite for a diagonal matrix."""
    P = np.asarray(P, dtype=float)
    diag = np.abs(np.diag(P))
    off = np.abs(P - np.diag(np.diag(P)))
    worst = float(off.max()) if P.size > 1 else 0.0
    return float("inf") if worst == 0.0 else float(diag.min() / worst)


def residual_report(dataset: IdentDataset, A_hat, holdout: float = 0.2, bins: int = 20,
                    P: Optional[np.ndarray] = None) -> ResidualReport:
    """Held-out fit quality per axis. ``A_hat`` is normalized, n x 4."""
    A = np.asarray(A_hat, dtype=float)
    train, test = dataset.split(holdout) if holdout > 0 else (dataset, dataset)
    if len(test.x) == 0:
        test = dataset
    pred = test.x @ A
    r2, means, hists = {}, {}, {}
    for j in range(A.shape[1]):
        name = AXES[j]
        err = test.y[:, j] - pred[:, j]
        var_sig = float(np.var(test.y[:, j]))
        r2[name] = 1.0 - float(np.var(err)) / var_sig if var_sig > 0 else float("nan")
        means[name] = float(np.mean(err))
        hists[name] = np.histogram(err, bins=bins)
    if P is None:
        P = np.linalg.pinv(train.x.T @ train.x)
    ratio = diagonality_ratio(P)
    return ResidualReport(r2, means, hists, ratio, ratio >= DIAGONAL_RATIO, len(test.x))
