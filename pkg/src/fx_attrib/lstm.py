"""Single-layer LSTM regressor written directly in numpy.

The network reads a window of min-max scaled rates one scalar per step and
maps the final hidden state through an affine layer to the scaled next-day
rate. Gradients come from backpropagation through time; training is
full-batch Adam with global-norm clipping.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericError, TrainingError
from .market_data import WindowSample

# gate blocks inside the stacked 4H weight matrices
GATES = ("input", "forget", "output", "candidate")
PARAM_NAMES = ("Wx", "Wh", "b", "V", "c")


@dataclass
class TrainConfig:
    hidden_size: int = 16
    epochs: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    window: int = 5
    clip_norm: float = 1.0

    def __post_init__(self):
        for name in ("hidden_size", "epochs", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")


@dataclass
class LstmParameters:
    """Weights for a scalar-input, scalar-output LSTM.

    ``Wx`` is (4H, 1), ``Wh`` is (4H, H) and ``b`` is (4H,), stacked in the
    order input, forget, output, candidate. ``V`` (1, H) and ``c`` (1,) form
    the output layer.
    """

    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    V: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        h = self.hidden_size
        shapes = {"Wx": (4 * h, 1), "Wh": (4 * h, h), "b": (4 * h,), "V": (1, h), "c": (1,)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def hidden_size(self) -> int:
        return np.shape(self.Wh)[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "LstmParameters":
        return LstmParameters(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmParameters":
        h = hidden_size
        return cls(np.zeros((4 * h, 1)), np.zeros((4 * h, h)), np.zeros(4 * h),
                   np.zeros((1, h)), np.zeros(1))


@dataclass(frozen=True)
class Scaler:
    min_rate: float
    max_rate: float

    def __post_init__(self):
        if not self.max_rate > self.min_rate:
            raise DataError(f"degenerate scaler range [{self.min_rate}, {self.max_rate}]")

    @classmethod
    def fit(cls, rates: Sequence[float]) -> "Scaler":
        rates = np.asarray(rates, dtype=np.float64)
        return cls(float(rates.min()), float(rates.max()))

    def scale(self, rates):
        return (np.asarray(rates, dtype=np.float64) - self.min_rate) / (self.max_rate - self.min_rate)

    def descale(self, scaled):
        return np.asarray(scaled, dtype=np.float64) * (self.max_rate - self.min_rate) + self.min_rate


@dataclass(frozen=True)
class ForecastPoint:
    target_date: dt.date | None
    predicted_rate: float
    predicted_return: float


@dataclass
class TrainResult:
    params: LstmParameters
    losses: list[float] = field(default_factory=list)


def init_parameters(config: TrainConfig) -> LstmParameters:
    h = config.hidden_size
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / math.sqrt(h)
    draw = lambda *shape: rng.uniform(-bound, bound, size=shape)  # noqa: E731
    params = LstmParameters(draw(4 * h, 1), draw(4 * h, h), draw(4 * h), draw(1, h), draw(1))
    params.b[h:2 * h] = 1.0
    return params


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward_cache(params: LstmParameters, windows: np.ndarray):
    """Run the recurrence over a (batch, n) array and keep what backprop needs."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    batch, n = windows.shape
    h_size = params.hidden_size
    h = np.zeros((batch, h_size))
    c = np.zeros((batch, h_size))
    steps = []
    for t in range(n):
        x = windows[:, t:t + 1]
        z = x @ params.Wx.T + h @ params.Wh.T + params.b
        i = _sigmoid(z[:, :h_size])
        f = _sigmoid(z[:, h_size:2 * h_size])
        o = _sigmoid(z[:, 2 * h_size:3 * h_size])
        g = np.tanh(z[:, 3 * h_size:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        steps.append((x, h_prev, c_prev, i, f, o, g, tc))
    out = h @ params.V.T + params.c
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite LSTM output")
    return out[:, 0], h, steps


def forward(params: LstmParameters, window) -> float | np.ndarray:
    """Scaled prediction for one window (1-D input) or a batch (2-D input)."""
    window = np.asarray(window, dtype=np.float64)
    out, _, _ = _forward_cache(params, window)
    return float(out[0]) if window.ndim == 1 else out


def loss_and_gradients(params: LstmParameters, windows, targets):
    """Mean squared error over the batch and its gradient for every parameter."""
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    batch = windows.shape[0]
    pred, h_last, steps = _forward_cache(params, windows)
    err = pred - targets
    loss = float(np.mean(err ** 2))

    dout = (2.0 / batch) * err[:, None]
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["V"] = dout.T @ h_last
    grads["c"] = dout.sum(axis=0)
    dh = dout @ params.V
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, i, f, o, g, tc in reversed(steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate((
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g ** 2),
        ), axis=1)
        grads["Wx"] += dz.T @ x
        grads["Wh"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh = dz @ params.Wh
        dc = dc * f
    return loss, grads


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def train(
    params: LstmParameters,
    samples: Sequence[WindowSample] | tuple[np.ndarray, np.ndarray],
    scaler: Scaler | None,
    config: TrainConfig,
) -> TrainResult:
    """Full-batch Adam on the mean squared error of scaled predictions.

    ``samples`` is either a sequence of :class:`WindowSample` (scaled with
    ``scaler``) or a ready ``(windows, targets)`` pair already in scaled units.
    Returns the parameters with the lowest training loss seen, so the final
    loss never exceeds the initial one.
    """
    if isinstance(samples, tuple):
        windows, targets = (np.asarray(a, dtype=np.float64) for a in samples)
    else:
        if not samples:
            raise DataError("no training samples")
        windows = scaler.scale(np.stack([s.window for s in samples]))
        targets = scaler.scale(np.array([s.target for s in samples]))
    if len(windows) == 0:
        raise DataError("no training samples")

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    current = params.copy()
    m = {k: np.zeros_like(v) for k, v in current.arrays().items()}
    v = {k: np.zeros_like(a) for k, a in current.arrays().items()}
    losses = []
    best, best_loss = current.copy(), math.inf
    for epoch in range(1, config.epochs + 1):
        loss, grads = loss_and_gradients(current, windows, targets)
        if not math.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}", epoch=epoch)
        losses.append(loss)
        if loss < best_loss:
            best, best_loss = current.copy(), loss
        grads = _clip(grads, config.clip_norm)
        for name, g in grads.items():
            m[name] = beta1 * m[name] + (1 - beta1) * g
            v[name] = beta2 * v[name] + (1 - beta2) * g * g
            m_hat = m[name] / (1 - beta1 ** epoch)
            v_hat = v[name] / (1 - beta2 ** epoch)
            arr = getattr(current, name)
            arr -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    final_loss, _ = loss_and_gradients(current, windows, targets)
    if not math.isfinite(final_loss):
        raise TrainingError(f"training diverged at epoch {config.epochs}", epoch=config.epochs)
    losses.append(final_loss)
    if final_loss < best_loss:
        best = current
    return TrainResult(best, losses)


def gradient_check(
    params: LstmParameters,
    window,
    target: float,
    step: float = 1e-5,
) -> float:
    """Largest relative gap between analytic and central-difference gradients."""
    _, grads = loss_and_gradients(params, window, target)
    worst = 0.0
    probe = params.copy()
    for name in PARAM_NAMES:
        arr = getattr(probe, name)
        flat = arr.reshape(-1)
        analytic = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up, _ = loss_and_gradients(probe, window, target)
            flat[k] = orig - step
            down, _ = loss_and_gradients(probe, window, target)
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            denom = max(abs(analytic[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[k] - numeric) / denom)
    return worst


def predict_rate(
    params: LstmParameters,
    scaler: Scaler,
    window,
    last_rate: float,
    target_date: dt.date | None = None,
) -> ForecastPoint:
    scaled = np.clip(scaler.scale(window), 0.0, 1.0)
    rate = float(scaler.descale(forward(params, scaled)))
    if not rate > 0 or not math.isfinite(rate):
        raise NumericError(f"non-positive predicted rate {rate!r}")
    return ForecastPoint(target_date, rate, math.log(rate / last_rate))


def save(path: str | Path, params: LstmParameters, scaler: Scaler | None = None,
         window: int | None = None) -> None:
    """Write the model as text: a header, then each matrix as ``name rows cols``
    followed by one line of space-separated values per row."""
    lines = ["# fx_attrib lstm v1", f"hidden_size {params.hidden_size}"]
    if window is not None:
        lines.append(f"window {window}")
    if scaler is not None:
        lines.append(f"scaler {scaler.min_rate!r} {scaler.max_rate!r}")
    for name, arr in params.arrays().items():
        mat = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr.reshape(1, -1)
        lines.append(f"{name} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(" ".join(repr(float(x)) for x in row) for row in mat)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path: str | Path) -> tuple[LstmParameters, Scaler | None, int | None]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# fx_attrib lstm"):
        raise DataError(f"{path}: not an LSTM model file")
    scaler, window, arrays = None, None, {}
    it = iter(lines[1:])
    for line in it:
        key, *rest = line.split()
        if key == "hidden_size":
            continue
        if key == "window":
            window = int(rest[0])
        elif key == "scaler":
            scaler = Scaler(float(rest[0]), float(rest[1]))
        elif key in PARAM_NAMES:
            rows, cols = int(rest[0]), int(rest[1])
            mat = np.array([[float(x) for x in next(it).split()] for _ in range(rows)])
            if mat.shape != (rows, cols):
                raise DataError(f"{path}: bad shape for {key}")
            arrays[key] = mat if key in ("Wx", "Wh", "V") else mat.reshape(-1)
        else:
            raise DataError(f"{path}: unknown entry {key!r}")
    return LstmParameters(**arrays), scaler, window
