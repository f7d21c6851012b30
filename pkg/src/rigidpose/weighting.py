"""Per-correspondence weight optimization and baseline weighting schemes.

Each frame gets its own free logits ``z``; its weights are ``sigmoid(z)``.
Logits are fitted with Adam on ``L_pose`` of the weighted-Kabsch pose
against the ground-truth pose. Proposed steps that increase the loss are
halved (at most ``max_halvings`` times) and dropped if they still increase
it, so every frame's loss is non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RigidPoseError, ShapeMismatchError
from .geometry import CorrespondenceSet, Pose, solve_kabsch, transform
from .kabsch_grad import kabsch_vjp
from .objectives import l_pose, l_pose_grad

log = logging.getLogger(__name__)

DEFAULT_INIT_LOGIT = 2.0


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class WeightLogits:
    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        if z.ndim != 1 or not np.all(np.isfinite(z)):
            raise ValueError("logits must be a finite 1D array")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    def __len__(self):
        return len(self.z)

    @property
    def weights(self) -> np.ndarray:
        return sigmoid(self.z)

    @classmethod
    def constant(cls, n: int, value: float = DEFAULT_INIT_LOGIT) -> "WeightLogits":
        return cls(np.full(n, float(value)))


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    steps_per_epoch: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    point_rate: float = 0.0
    init_logit: float = DEFAULT_INIT_LOGIT
    init_jitter: float = 0.0
    max_halvings: int = 5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam hyper-parameters")
        if self.point_rate < 0 or self.init_jitter < 0 or self.max_halvings < 0:
            raise ConfigError("point_rate, init_jitter and max_halvings must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown optimizer options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FrameResult:
    logits: WeightLogits | None
    camera_points: np.ndarray | None = None
    scene_points: np.ndarray | None = None
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    error: str | None = None


@dataclass
class OptimizationResult:
    frames: list[FrameResult]
    loss_trace: list[float] = field(default_factory=list)  # index 0 is the starting loss

    @property
    def logits(self) -> list[WeightLogits | None]:
        return [f.logits for f in self.frames]


def apply_weights(c: CorrespondenceSet, wl: WeightLogits) -> CorrespondenceSet:
    if len(wl) != len(c):
        raise ShapeMismatchError(f"{len(wl)} logits for {len(c)} correspondences")
    return c.with_weights(wl.weights)


class _Adam:
    def __init__(self, shape, cfg: OptimizerConfig, rate: float):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.cfg = cfg
        self.rate = rate

    def step(self, grad: np.ndarray, t: int) -> np.ndarray:
        c = self.cfg
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1**t)
        v_hat = self.v / (1 - c.beta2**t)
        return self.rate * m_hat / (np.sqrt(v_hat) + c.eps)


class _FrameProblem:
    def __init__(self, c: CorrespondenceSet, gt: Pose):
        self.c = c
        self.gt = gt

    def loss(self, z, a, b) -> float:
        sol = solve_kabsch(CorrespondenceSet(a, b, sigmoid(z)))
        return l_pose(Pose(sol.rotation, sol.translation), self.gt)

    def value_and_grad(self, z, a, b):
        w = sigmoid(z)
        cs = CorrespondenceSet(a, b, w)
        sol = solve_kabsch(cs)
        est = Pose(sol.rotation, sol.translation)
        g_r, g_t = l_pose_grad(est, self.gt)
        g = kabsch_vjp(cs, g_r, g_t, sol)
        return l_pose(est, self.gt), g.weights * w * (1.0 - w), g.camera_points, g.scene_points


def _optimize_frame(c: CorrespondenceSet, gt: Pose, cfg: OptimizerConfig, rng) -> tuple[FrameResult, list[float]]:
    n = len(c)
    z = np.full(n, cfg.init_logit)
    if cfg.init_jitter:
        z = z + cfg.init_jitter * rng.standard_normal(n)
    a = np.array(c.camera_points)
    b = np.array(c.scene_points)
    refine = cfg.point_rate > 0
    problem = _FrameProblem(c, gt)
    adam_z = _Adam(n, cfg, cfg.learning_rate)
    adam_a = _Adam((n, 3), cfg, cfg.point_rate)
    adam_b = _Adam((n, 3), cfg, cfg.point_rate)

    loss = problem.loss(z, a, b)
    result = FrameResult(None, initial_loss=loss)
    trace = []
    t = 0
    for _ in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            t += 1
            _, g_z, g_a, g_b = problem.value_and_grad(z, a, b)
            dz = adam_z.step(g_z, t)
            da = adam_a.step(g_a, t) if refine else 0.0
            db = adam_b.step(g_b, t) if refine else 0.0
            scale = 1.0
            for _ in range(cfg.max_halvings + 1):
                try:
                    trial = problem.loss(z - scale * dz, a - scale * da, b - scale * db)
                except RigidPoseError:
                    trial = np.inf
                if trial <= loss:
                    z = z - scale * dz
                    if refine:
                        a, b = a - scale * da, b - scale * db
                    loss = trial
                    break
                scale *= 0.5
        trace.append(loss)
    result.logits = WeightLogits(z)
    result.final_loss = loss
    if refine:
        result.camera_points, result.scene_points = a, b
    return result, trace


def _run_frame(args) -> tuple[FrameResult, list[float] | None]:
    i, c, gt, cfg, seed = args
    rng = np.random.default_rng([int(seed), i])
    try:
        return _optimize_frame(c, gt, cfg, rng)
    except RigidPoseError as e:
        log.warning("frame %d aborted: %s", i, e)
        return FrameResult(None, error=f"{e.code}: {e}"), None


def optimize_weights(
    frames: list[tuple[CorrespondenceSet, Pose]],
    cfg: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    workers: int = 1,
) -> OptimizationResult:
    """Fit per-frame weight logits by descending ``L_pose``.

    Frames are independent, so ``workers > 1`` spreads them over processes
    without changing any result. A frame whose configuration is degenerate
    from the start is skipped with its error recorded; ``loss_trace``
    averages over the remaining frames.
    """
    jobs = [(i, c, gt, cfg, seed) for i, (c, gt) in enumerate(frames)]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_frame, jobs))
    else:
        outcomes = [_run_frame(job) for job in jobs]
    traces = [[res.initial_loss] + trace for res, trace in outcomes if trace is not None]
    loss_trace = [float(x) for x in np.mean(traces, axis=0)] if traces else []
    return OptimizationResult([res for res, _ in outcomes], loss_trace)


def baseline_weights(
    c: CorrespondenceSet,
    scheme: str = "uniform",
    mask=None,
    tau: float | None = None,
) -> np.ndarray:
    """Reference weightings.

    ``uniform``: all ones. ``oracle_inlier``: 1 where ``mask`` is true, else 0.
    ``inverse_residual``: ``tau / (tau + e_i)`` with ``e_i`` the endpoint error
    under the uniform-weight pose.
    """
    n = len(c)
    if scheme == "uniform":
        return np.ones(n)
    if scheme == "oracle_inlier":
        if mask is None:
            raise ConfigError("oracle_inlier needs an inlier mask")
        m = np.asarray(mask, dtype=bool).ravel()
        if m.shape != (n,):
            raise ShapeMismatchError(f"mask has {m.size} entries for {n} correspondences")
        return m.astype(np.float64)
    if scheme == "inverse_residual":
        if tau is None or not tau > 0:
            raise ConfigError("inverse_residual needs tau > 0")
        uniform = c.with_weights(np.ones(n))
        sol = solve_kabsch(uniform)
        pose = Pose(sol.rotation, sol.translation)
        e = np.linalg.norm(c.scene_points - transform(pose, c.camera_points), axis=1)
        return tau / (tau + e)
    raise ConfigError(f"unknown weighting scheme {scheme!r}")
