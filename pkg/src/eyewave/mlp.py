"""9-6-2 sigmoid network, MSE backpropagation and Fletcher-Reeves CG training."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

N_INPUT, N_HIDDEN, N_OUTPUT = 9, 6, 2
N_PARAMS = N_HIDDEN * N_INPUT + N_HIDDEN + N_OUTPUT * N_HIDDEN + N_OUTPUT  # 74

EYE_TARGET = (0.0, 1.0)
NON_EYE_TARGET = (1.0, 0.0)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class Mlp:
    W1: np.ndarray  # (6, 9)
    b1: np.ndarray  # (6,)
    W2: np.ndarray  # (2, 6)
    b2: np.ndarray  # (2,)

    def __post_init__(self):
        shapes = {
            "W1": (N_HIDDEN, N_INPUT),
            "b1": (N_HIDDEN,),
            "W2": (N_OUTPUT, N_HIDDEN),
            "b2": (N_OUTPUT,),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def flatten(self) -> np.ndarray:
        """Parameters as one vector: W1 row-major, b1, W2 row-major, b2."""
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, theta) -> "Mlp":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got {theta.shape}")
        i = 0
        parts = []
        for shape in ((N_HIDDEN, N_INPUT), (N_HIDDEN,), (N_OUTPUT, N_HIDDEN), (N_OUTPUT,)):
            size = int(np.prod(shape))
            parts.append(theta[i : i + size].reshape(shape))
            i += size
        return cls(*parts)

    @classmethod
    def zeros(cls) -> "Mlp":
        return cls.from_flat(np.zeros(N_PARAMS))


class TrainingSample(NamedTuple):
    input: np.ndarray
    target: Tuple[float, float]


class Dataset(NamedTuple):
    inputs: np.ndarray  # (N, 9)
    targets: np.ndarray  # (N, 2)


def as_dataset(samples) -> Dataset:
    if isinstance(samples, Dataset):
        return samples
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    inputs = np.array([s.input for s in samples], dtype=np.float64).reshape(len(samples), N_INPUT)
    targets = np.array([s.target for s in samples], dtype=np.float64).reshape(len(samples), N_OUTPUT)
    return Dataset(inputs, targets)


def init(seed: int) -> Mlp:
    """Uniform weights in +-1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    lim1, lim2 = 1.0 / np.sqrt(N_INPUT), 1.0 / np.sqrt(N_HIDDEN)
    return Mlp(
        rng.uniform(-lim1, lim1, (N_HIDDEN, N_INPUT)),
        np.zeros(N_HIDDEN),
        rng.uniform(-lim2, lim2, (N_OUTPUT, N_HIDDEN)),
        np.zeros(N_OUTPUT),
    )


def sigmoid(t):
    # split by sign so exp never overflows
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def forward(net: Mlp, x) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(output, hidden)``; ``x`` may be one 9-vector or an (N, 9) batch."""
    x = np.asarray(x, dtype=np.float64)
    hidden = sigmoid(x @ net.W1.T + net.b1)
    output = sigmoid(hidden @ net.W2.T + net.b2)
    return output, hidden


def mse(net: Mlp, samples) -> float:
    data = as_dataset(samples)
    out, _ = forward(net, data.inputs)
    return float(np.mean((out - data.targets) ** 2))


def _loss_and_grad(theta: np.ndarray, data: Dataset) -> Tuple[float, np.ndarray]:
    net = Mlp.from_flat(theta)
    x, t = data.inputs, data.targets
    out, hidden = forward(net, x)
    err = out - t
    loss = float(np.mean(err**2))
    # d(loss)/d(out) = 2 * err / (N * 2)
    delta2 = err / x.shape[0] * out * (1.0 - out)
    gW2 = delta2.T @ hidden
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ net.W2) * hidden * (1.0 - hidden)
    gW1 = delta1.T @ x
    gb1 = delta1.sum(axis=0)
    return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def gradient(net: Mlp, samples) -> np.ndarray:
    """Analytic MSE gradient in :meth:`Mlp.flatten` order."""
    return _loss_and_grad(net.flatten(), as_dataset(samples))[1]


# -- Fletcher-Reeves conjugate gradient ------------------------------------

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class LineSearchFailed(RuntimeError):
    pass


class CGState(NamedTuple):
    iteration: int
    x: np.ndarray
    f: float
    g: np.ndarray
    restarted: bool


def backtracking(initial_step: float = 0.5, c1: float = 1e-4, max_halvings: int = 40, max_doublings: int = 0):
    """Armijo backtracking: halve from ``initial_step`` until sufficient decrease.

    With ``max_doublings > 0`` an accepted first trial is followed by doubling
    the step while the Armijo condition holds and the loss keeps falling.
    """

    def search(fun: Objective, x, f, g, d):
        slope = float(g @ d)

        def trial(step):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            ok = bool(np.isfinite(f_new) and f_new <= f + c1 * step * slope and f_new < f)
            return ok, (x_new, f_new, g_new)

        step = initial_step
        for halving in range(max_halvings + 1):
            ok, best = trial(step)
            if ok:
                break
            step *= 0.5
        else:
            raise LineSearchFailed(f"no sufficient decrease after {max_halvings} halvings")
        if halving == 0:
            for _ in range(max_doublings):
                step *= 2.0
                ok, cand = trial(step)
                if not (ok and cand[1] < best[1]):
                    break
                best = cand
        return best

    return search


def fletcher_reeves(
    fun: Objective,
    x0,
    line_search,
    restart_interval: Optional[int] = None,
) -> Iterator[CGState]:
    """Yield successive iterates of Fletcher-Reeves nonlinear CG.

    The direction is reset to steepest descent every ``restart_interval``
    iterations and whenever it stops being a descent direction.  The caller
    decides when to stop consuming the generator; a failed line search raises
    :class:`LineSearchFailed`.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    d = -g
    k = 0
    restarted = True
    while True:
        yield CGState(k, x, f, g, restarted)
        x, f_new, g_new = line_search(fun, x, f, g, d)
        beta = float(g_new @ g_new) / float(g @ g)
        d = -g_new + beta * d
        k += 1
        restarted = bool((restart_interval and k % restart_interval == 0) or d @ g_new >= 0)
        if restarted:
            d = -g_new
        f, g = f_new, g_new


# -- training --------------------------------------------------------------


class StopReason(str, enum.Enum):
    GOAL_MET = "GoalMet"
    GRADIENT_VANISHED = "GradientVanished"
    MAX_EPOCHS = "MaxEpochs"
    STALLED = "Stalled"


@dataclass
class TrainingConfig:
    mse_goal: float = 1e-3
    max_epochs: int = 1000
    min_gradient: float = 1e-6
    initial_step: float = 0.5
    armijo_c1: float = 1e-4
    max_step_doublings: int = 20
    restart_interval: int = N_PARAMS
    seed: int = 0
    normalize_patches: bool = True
    restarts: int = 1  # independent initializations tried by train_detector

    def __post_init__(self):
        for name in ("mse_goal", "min_gradient", "initial_step", "armijo_c1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_step_doublings < 0:
            raise ValueError("max_step_doublings must be >= 0")
        for name in ("max_epochs", "restart_interval", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


class EpochRecord(NamedTuple):
    epoch: int
    mse: float
    gradient_norm: float


@dataclass
class TrainingReport:
    records: List[EpochRecord] = field(default_factory=list)
    stop_reason: Optional[StopReason] = None
    net: Optional[Mlp] = None

    @property
    def final_mse(self) -> float:
        return self.records[-1].mse

    @property
    def epochs(self) -> int:
        return self.records[-1].epoch

    def to_text(self) -> str:
        """Tab-separated ``epoch mse gradient_norm`` lines."""
        return "".join(f"{r.epoch}\t{r.mse!r}\t{r.gradient_norm!r}\n" for r in self.records)


def train(net: Mlp, samples, cfg: TrainingConfig | None = None) -> Tuple[Mlp, TrainingReport]:
    """Batch Fletcher-Reeves CG on the MSE; one epoch is one CG iteration."""
    cfg = cfg or TrainingConfig()
    data = as_dataset(samples)
    labels = data.targets.argmax(axis=1)
    if not (np.any(labels == 0) and np.any(labels == 1)):
        log.warning("training set contains a single class (%d samples)", len(labels))

    def objective(theta):
        return _loss_and_grad(theta, data)

    report = TrainingReport()
    search = backtracking(cfg.initial_step, cfg.armijo_c1, max_doublings=cfg.max_step_doublings)
    states = fletcher_reeves(objective, net.flatten(), search, cfg.restart_interval)
    state = None
    try:
        for state in states:
            gnorm = float(np.linalg.norm(state.g))
            if not (np.isfinite(state.f) and np.isfinite(gnorm)):
                raise TrainingError("non-finite loss or gradient", state.iteration)
            report.records.append(EpochRecord(state.iteration, state.f, gnorm))
            if state.f <= cfg.mse_goal:
                report.stop_reason = StopReason.GOAL_MET
            elif gnorm <= cfg.min_gradient:
                report.stop_reason = StopReason.GRADIENT_VANISHED
            elif state.iteration >= cfg.max_epochs:
                report.stop_reason = StopReason.MAX_EPOCHS
            if report.stop_reason is not None:
                break
    except LineSearchFailed:
        report.stop_reason = StopReason.STALLED
    finally:
        states.close()
    report.net = Mlp.from_flat(state.x)
    log.info(
        "training stopped: %s after %d epochs, mse %.6g",
        report.stop_reason.value,
        report.epochs,
        report.final_mse,
    )
    return report.net, report


def train_best(samples, cfg: TrainingConfig | None = None) -> Tuple[Mlp, TrainingReport]:
    """Train ``cfg.restarts`` networks from seeds ``seed, seed+1, ...`` and keep
    the one with the lowest final MSE (the earliest wins ties)."""
    cfg = cfg or TrainingConfig()
    data = as_dataset(samples)
    best = None
    for k in range(cfg.restarts):
        net, report = train(init(cfg.seed + k), data, cfg)
        if best is None or report.final_mse < best[1].final_mse:
            best = (net, report)
    return best


class Label(str, enum.Enum):
    EYE = "Eye"
    NON_EYE = "NonEye"


def classify(net: Mlp, patch) -> Tuple[Label, float]:
    """Eye iff the second output exceeds the first; ties count as non-eye."""
    values = getattr(patch, "values", patch)
    out, _ = forward(net, values)
    score = float(out[1] - out[0])
    return (Label.EYE if out[1] > out[0] else Label.NON_EYE), score


def classify_batch(net: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Scores ``output[1] - output[0]`` for an (N, 9) batch."""
    out, _ = forward(net, np.asarray(inputs, dtype=np.float64).reshape(-1, N_INPUT))
    return out[:, 1] - out[:, 0]


def quadratic_exact_step(A):
    """Exact minimizing step along ``d`` for ``0.5 x'Ax - b'x``."""
    A = np.asarray(A, dtype=np.float64)

    def search(fun, x, f, g, d):
        step = -float(g @ d) / float(d @ A @ d)
        x_new = x + step * d
        f_new, g_new = fun(x_new)
        return x_new, f_new, g_new

    return search


def samples_from_arrays(inputs: Sequence, labels: Sequence[bool]) -> Dataset:
    """Build a dataset from patch rows and eye/non-eye flags."""
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, N_INPUT)
    targets = np.array([EYE_TARGET if y else NON_EYE_TARGET for y in labels], dtype=np.float64)
    return Dataset(inputs, targets.reshape(-1, N_OUTPUT))


def balanced(data: Dataset) -> Dataset:
    """Replicate the minority class a whole number of times so both classes
    carry roughly equal weight in the MSE."""
    eye = data.targets[:, 1] > data.targets[:, 0]
    n_eye, n_other = int(eye.sum()), int((~eye).sum())
    if n_eye == 0 or n_other == 0:
        return data
    minority = eye if n_eye < n_other else ~eye
    copies = int(round(max(n_eye, n_other) / min(n_eye, n_other))) - 1
    if copies < 1:
        return data
    extra_in = np.repeat(data.inputs[minority][None], copies, axis=0).reshape(-1, N_INPUT)
    extra_t = np.repeat(data.targets[minority][None], copies, axis=0).reshape(-1, N_OUTPUT)
    return Dataset(np.vstack([data.inputs, extra_in]), np.vstack([data.targets, extra_t]))
