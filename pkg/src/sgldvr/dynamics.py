"""Decay schedules, gradient estimators and the SGD / SGLD / SGLD-VR steppers.

One trajectory owns one random stream, consumed in fixed blocks of steps
(minibatches first, Gaussian perturbations second). Every variant consumes the
stream identically, so variants that differ only in the noise magnitude see
identical random numbers, and a trajectory is the same whether it runs alone
or inside a lockstep ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Literal

import numpy as np

from .errors import ConfigError, DivergenceError, InvalidBatchError
from .objectives import FiniteSumObjective
from .trace import RunTrace, provenance

Variant = Literal["sgd", "sgld", "sgld-vr"]
SamplingMode = Literal["with_replacement", "without_replacement"]
VARIANTS: tuple[str, ...] = ("sgd", "sgld", "sgld-vr")


@dataclass(frozen=True)
class DecaySchedule:
    """eta_t = eta0 / (t + offset)^nu and rho_t = rho0 / (t + offset)^(nu/2)."""

    eta0: float
    rho0: float = 0.0
    nu: float = 1.0
    index_offset: int = 1

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ConfigError(f"eta0 must be positive, got {self.eta0}")
        if self.rho0 < 0:
            raise ConfigError(f"rho0 must be nonnegative, got {self.rho0}")
        if self.nu < 1:
            raise ConfigError(f"decay exponent nu must be >= 1, got {self.nu}")
        if self.index_offset < 1:
            raise ConfigError(f"index_offset must be a positive integer, got {self.index_offset}")

    def eta(self, t: int) -> float:
        return self.eta0 / (t + self.index_offset) ** self.nu

    def rho(self, t: int) -> float:
        if self.rho0 == 0.0:
            return 0.0
        # rho_t = rho0 sqrt(eta_t / eta0) keeps rho_t^2 / eta_t constant
        return self.rho0 * math.sqrt(self.eta(t) / self.eta0)

    def __call__(self, t: int) -> tuple[float, float]:
        return self.eta(t), self.rho(t)

    def etas(self, t_max: int) -> np.ndarray:
        """eta_0 .. eta_{t_max - 1} as an array."""
        return self.eta0 / (np.arange(t_max, dtype=float) + self.index_offset) ** self.nu

    def to_dict(self) -> dict[str, Any]:
        return {"eta0": self.eta0, "rho0": self.rho0, "nu": self.nu, "index_offset": self.index_offset}


def schedule_eval(sch: DecaySchedule, t: int) -> tuple[float, float]:
    return sch(t)


@dataclass(frozen=True)
class SgldVrConfig:
    batch_size: int
    epoch_length: int
    horizon: int
    schedule: DecaySchedule
    sampling_mode: SamplingMode = "with_replacement"

    def validate(self, n: int | None = None) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if n is not None and self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds component count n={n}")
        if self.epoch_length < 1:
            raise ConfigError(f"epoch_length must be >= 1, got {self.epoch_length}")
        if self.horizon < 0 or self.horizon % self.epoch_length:
            raise ConfigError(f"horizon {self.horizon} is not a multiple of epoch_length {self.epoch_length}")
        if self.sampling_mode not in ("with_replacement", "without_replacement"):
            raise ConfigError(f"unknown sampling_mode {self.sampling_mode!r}")

    def with_horizon(self, horizon: int) -> "SgldVrConfig":
        return replace(self, horizon=horizon)

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_size": self.batch_size,
            "epoch_length": self.epoch_length,
            "horizon": self.horizon,
            "schedule": self.schedule.to_dict(),
            "sampling_mode": self.sampling_mode,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SgldVrConfig":
        try:
            sch = DecaySchedule(**d["schedule"])
            return cls(
                batch_size=int(d["batch_size"]),
                epoch_length=int(d["epoch_length"]),
                horizon=int(d["horizon"]),
                schedule=sch,
                sampling_mode=d.get("sampling_mode", "with_replacement"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad algorithm config: {exc}") from exc


def trajectory_rng(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by (master seed, trial index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))


# steps drawn per refill of a trajectory's random stream
BLOCK = 256


class TrajectoryStream:
    """Minibatch indices and Gaussian perturbations for one trajectory.

    Draws are made in blocks of ``BLOCK`` steps (all batches of the block, then
    all perturbations), so the draw for step t is a fixed function of
    (seed, trial, t) whether the trajectory runs alone or inside an ensemble.
    """

    def __init__(self, seed: int, trial: int, n: int, d: int, batch_size: int, mode: SamplingMode):
        self.rng = trajectory_rng(seed, trial)
        self.n, self.d, self.batch_size, self.mode = n, d, batch_size, mode
        self._start = None
        self._batches = self._noise = None

    def _refill(self, start: int) -> None:
        self._batches = draw_batches(self.rng, self.n, self.batch_size, BLOCK, self.mode)
        self._noise = self.rng.standard_normal((BLOCK, self.d))
        self._start = start

    def draws(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        if self._start is None or not self._start <= t < self._start + BLOCK:
            if t % BLOCK or (self._start is not None and t != self._start + BLOCK):
                raise ValueError(f"stream must be consumed in order; got t={t}")
            self._refill(t)
        k = t - self._start
        return self._batches[k], self._noise[k]


@dataclass
class SgldVrState:
    x: np.ndarray
    snapshot: np.ndarray
    snapshot_grad: np.ndarray
    t: int
    epoch: int
    rng: TrajectoryStream
    # draws from the most recent step, kept for diagnostics
    last_batch: np.ndarray | None = field(default=None, repr=False)
    last_noise: np.ndarray | None = field(default=None, repr=False)
    last_estimate: np.ndarray | None = field(default=None, repr=False)


def init_state(obj: FiniteSumObjective, config: SgldVrConfig, x0, seed: int, trial: int = 0) -> SgldVrState:
    x0 = np.array(x0, dtype=float)
    if x0.shape != (obj.d,):
        raise ConfigError(f"x0 has shape {x0.shape}, expected ({obj.d},)")
    return SgldVrState(
        x=x0,
        snapshot=x0.copy(),
        snapshot_grad=obj.full_gradient(x0),
        t=0,
        epoch=0,
        rng=TrajectoryStream(seed, trial, obj.n, obj.d, config.batch_size, config.sampling_mode),
    )


def draw_batch(rng: np.random.Generator, n: int, size: int, mode: SamplingMode) -> np.ndarray:
    if mode == "with_replacement":
        return rng.integers(0, n, size=size)
    return rng.choice(n, size=size, replace=False)


def svrg_estimator(obj: FiniteSumObjective, state: SgldVrState, index_batch) -> np.ndarray:
    """(1/B) sum_{i in batch} (grad f_i(x_t) - grad f_i(snapshot) + snapshot_grad)."""
    idx = np.asarray(index_batch)
    if idx.size == 0:
        raise InvalidBatchError("empty index batch")
    if idx.min() < 0 or idx.max() >= obj.n:
        raise InvalidBatchError(f"indices must lie in [0, {obj.n})")
    return obj.batch_gradient(idx, state.x) - obj.batch_gradient(idx, state.snapshot) + state.snapshot_grad


def sgd_estimator(obj: FiniteSumObjective, x, index_batch) -> np.ndarray:
    idx = np.asarray(index_batch)
    if idx.size == 0:
        raise InvalidBatchError("empty index batch")
    return obj.batch_gradient(idx, x)


def svrg_estimates(obj: FiniteSumObjective, x, snapshot, snapshot_grad, batches: np.ndarray) -> np.ndarray:
    """SVRG estimates for many batches at once; ``batches`` has shape (m, B)."""
    x = np.asarray(x, dtype=float)
    all_idx = np.arange(obj.n)
    diff = obj.component_gradients(all_idx, x) - obj.component_gradients(all_idx, np.asarray(snapshot, dtype=float))
    return diff[batches].mean(axis=1) + snapshot_grad


def sgd_estimates(obj: FiniteSumObjective, x, batches: np.ndarray) -> np.ndarray:
    grads = obj.component_gradients(np.arange(obj.n), np.asarray(x, dtype=float))
    return grads[batches].mean(axis=1)


def draw_batches(rng: np.random.Generator, n: int, size: int, count: int, mode: SamplingMode) -> np.ndarray:
    if mode == "with_replacement":
        return rng.integers(0, n, size=(count, size))
    # argsort of uniforms gives an independent uniformly random subset per row
    return np.argsort(rng.random((count, n)), axis=1)[:, :size]


def step(obj: FiniteSumObjective, config: SgldVrConfig, state: SgldVrState, variant: Variant = "sgld-vr") -> SgldVrState:
    """Advance one iteration in place and return the state."""
    t = state.t
    if variant == "sgld-vr" and t % config.epoch_length == 0:
        state.snapshot = state.x.copy()
        state.snapshot_grad = obj.full_gradient(state.snapshot)
        state.epoch = t // config.epoch_length
    batch, noise = state.rng.draws(t)
    eta, rho = config.schedule(t)
    if variant == "sgld-vr":
        grad = svrg_estimator(obj, state, batch)
    elif variant in ("sgd", "sgld"):
        grad = sgd_estimator(obj, state.x, batch)
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    x_new = state.x - eta * grad
    if variant != "sgd" and rho != 0.0:
        x_new = x_new + rho * noise
    state.x = x_new
    state.t = t + 1
    state.last_batch = batch
    state.last_noise = noise
    state.last_estimate = grad
    return state


def run(
    obj: FiniteSumObjective,
    config: SgldVrConfig,
    x0,
    seed: int,
    record_stride: int = 1,
    *,
    variant: Variant = "sgld-vr",
    trial: int = 0,
    record_iterates: bool = False,
) -> RunTrace:
    """Execute ``config.horizon`` steps and record f and the exact gradient norm.

    Records are taken every ``record_stride`` steps and at both endpoints. The
    recorded gradient norms are computed separately and never used by the update.
    """
    config.validate(obj.n)
    if record_stride < 1:
        raise ConfigError(f"record_stride must be >= 1, got {record_stride}")
    state = init_state(obj, config, x0, seed, trial)
    ts, fs, gs, xs = [], [], [], []

    def record():
        f = obj.full_value(state.x)
        g = float(np.linalg.norm(obj.full_gradient(state.x)))
        if not (math.isfinite(f) and math.isfinite(g)):
            raise DivergenceError(state.t, "objective value or gradient norm")
        ts.append(state.t)
        fs.append(f)
        gs.append(g)
        if record_iterates:
            xs.append(state.x.copy())

    record()
    for _ in range(config.horizon):
        step(obj, config, state, variant)
        if not np.all(np.isfinite(state.x)):
            raise DivergenceError(state.t, "iterate")
        if state.t % record_stride == 0 or state.t == config.horizon:
            record()
    return RunTrace(
        t=np.array(ts, dtype=np.int64),
        f=np.array(fs),
        grad_norm=np.array(gs),
        iterates=np.array(xs) if record_iterates else None,
        config={"variant": variant, "record_stride": record_stride, **config.to_dict()},
        seed=int(seed),
        objective=obj.spec,
        provenance=provenance(),
        trial=int(trial),
    )


def run_ensemble(
    obj: FiniteSumObjective,
    config: SgldVrConfig,
    X0,
    seed: int,
    trials,
    *,
    variant: Variant = "sgld-vr",
    observe: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Advance one trajectory per trial index in lockstep and return final iterates.

    Row r follows exactly the trajectory ``run(..., trial=trials[r])`` would.
    ``observe(t, X, noise)`` is called after every step with the (m, d) iterates
    and the perturbations used for that step; a truthy return value stops the
    ensemble early.
    """
    config.validate(obj.n)
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    trials = [int(k) for k in trials]
    X = np.array(X0, dtype=float)
    if X.shape != (len(trials), obj.d):
        raise ConfigError(f"X0 has shape {X.shape}, expected ({len(trials)}, {obj.d})")
    streams = [
        TrajectoryStream(seed, k, obj.n, obj.d, config.batch_size, config.sampling_mode) for k in trials
    ]
    S = W = None
    for t in range(config.horizon):
        if variant == "sgld-vr" and t % config.epoch_length == 0:
            S = X.copy()
            W = obj.full_gradient_many(S)
        draws = [s.draws(t) for s in streams]
        idx = np.stack([b for b, _ in draws])
        noise = np.stack([e for _, e in draws])
        eta, rho = config.schedule(t)
        if variant == "sgld-vr":
            G = obj.batch_gradient_many(idx, X) - obj.batch_gradient_many(idx, S) + W
        else:
            G = obj.batch_gradient_many(idx, X)
        X = X - eta * G
        if variant != "sgd" and rho != 0.0:
            X = X + rho * noise
        if not np.all(np.isfinite(X)):
            raise DivergenceError(t + 1, "iterate")
        if observe is not None and observe(t + 1, X, noise):
            break
    return X


def run_baseline(
    obj: FiniteSumObjective,
    config: SgldVrConfig,
    x0,
    seed: int,
    variant: Literal["sgd", "sgld"],
    record_stride: int = 1,
    **kwargs,
) -> RunTrace:
    """Plain minibatch estimator; ``sgd`` ignores the noise schedule, ``sgld`` uses it."""
    if variant not in ("sgd", "sgld"):
        raise ConfigError(f"baseline variant must be 'sgd' or 'sgld', got {variant!r}")
    return run(obj, config, x0, seed, record_stride, variant=variant, **kwargs)


def default_init(d: int, seed: int, scale: float = 0.1) -> np.ndarray:
    """Seeded Gaussian initial point of the given scale."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A17]))
    return scale * rng.standard_normal(d)


def trial_init(d: int, seed: int, trial: int, scale: float = 0.1) -> np.ndarray:
    """Gaussian initial point derived from (master seed, trial index)."""
    ss = np.random.SeedSequence(entropy=[int(seed), 0x1A17], spawn_key=(int(trial),))
    return scale * np.random.default_rng(ss).standard_normal(d)
