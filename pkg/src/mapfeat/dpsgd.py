"""Decentralized parallel SGD simulated in deterministic virtual time.

Workers sit on a ring. Each step every worker computes a mini-batch gradient on
its current weights while, concurrently, it averages weights with one randomly
chosen peer; the update then applies the (pre-averaging) gradient to the
averaged weights. All parameter groups step together from one snapshot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

DIVERGENCE_LOSS = 1e12


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- objectives


class Objective:
    """Finite-sum loss ``mean_i loss_i(params)`` over named parameter groups."""

    n_samples: int

    def init_params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def loss(self, params, idx=None) -> float:
        raise NotImplementedError

    def grad(self, params, idx) -> dict[str, np.ndarray]:
        """Mean gradient over samples ``idx`` for every group."""
        raise NotImplementedError


@dataclass
class LeastSquares(Objective):
    A: np.ndarray
    b: np.ndarray

    @property
    def n_samples(self):
        return self.A.shape[0]

    @classmethod
    def random(cls, n: int = 2048, d: int = 10, noise: float = 0.1, seed: int = 0):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, d))
        w = rng.standard_normal(d)
        return cls(A, A @ w + noise * rng.standard_normal(n))

    def init_params(self):
        return {"w": np.zeros(self.A.shape[1])}

    def _sel(self, idx):
        return (self.A, self.b) if idx is None else (self.A[idx], self.b[idx])

    def loss(self, params, idx=None):
        A, b = self._sel(idx)
        r = A @ params["w"] - b
        return float(0.5 * np.mean(r * r))

    def grad(self, params, idx):
        A, b = self._sel(idx)
        return {"w": A.T @ (A @ params["w"] - b) / len(b)}

    def optimum(self):
        return {"w": np.linalg.lstsq(self.A, self.b, rcond=None)[0]}


@dataclass
class Logistic(Objective):
    X: np.ndarray
    y: np.ndarray  # labels in {0, 1}
    l2: float = 1e-3

    @property
    def n_samples(self):
        return self.X.shape[0]

    @classmethod
    def random(cls, n: int = 2048, d: int = 10, seed: int = 0):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, d))
        w = rng.standard_normal(d)
        y = (rng.random(n) < 1 / (1 + np.exp(-X @ w))).astype(np.float64)
        return cls(X, y)

    def init_params(self):
        return {"w": np.zeros(self.X.shape[1])}

    def loss(self, params, idx=None):
        X, y = (self.X, self.y) if idx is None else (self.X[idx], self.y[idx])
        z = X @ params["w"]
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * params["w"] @ params["w"])

    def grad(self, params, idx):
        X, y = self.X[idx], self.y[idx]
        p = 1 / (1 + np.exp(-(X @ params["w"])))
        return {"w": X.T @ (p - y) / len(y) + self.l2 * params["w"]}


@dataclass
class CoupledQuadratic(Objective):
    """Two groups u, v with ``f = a/2 |u|^2 + c u.v + b/2 |v|^2`` (per-sample shifted).

    A desk-scale stand-in for jointly stepped generator/discriminator parameters.
    """

    a: float = 1.0
    b: float = 1.0
    c: float = 0.5
    targets: np.ndarray = field(default_factory=lambda: np.zeros((1, 2, 1)))

    @property
    def n_samples(self):
        return self.targets.shape[0]

    def init_params(self):
        d = self.targets.shape[2]
        return {"u": np.ones(d), "v": np.ones(d)}

    def _terms(self, params, idx):
        t = self.targets if idx is None else self.targets[idx]
        du = params["u"] - t[:, 0]
        dv = params["v"] - t[:, 1]
        return du, dv

    def loss(self, params, idx=None):
        du, dv = self._terms(params, idx)
        f = 0.5 * self.a * (du * du).sum(1) + self.c * (du * dv).sum(1) + 0.5 * self.b * (dv * dv).sum(1)
        return float(f.mean())

    def grad(self, params, idx):
        du, dv = self._terms(params, idx)
        return {"u": (self.a * du + self.c * dv).mean(0), "v": (self.c * du + self.b * dv).mean(0)}


# ------------------------------------------------------------------ workers


@dataclass
class TrainConfig:
    workers: int = 1
    lr: float = 0.05
    batch: int = 16
    steps: int = 100
    seed: int = 0
    averaging: str = "random_partner"  # or "ring_neighbor", "none"
    lr_decay: float = 1.0  # per-step multiplicative factor
    groups: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch < 1 or self.steps < 0:
            raise ValueError("batch must be >= 1 and steps >= 0")
        if self.averaging not in ("random_partner", "ring_neighbor", "none"):
            raise ValueError(f"unknown averaging mode {self.averaging!r}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")

    def lr_at(self, step: int) -> float:
        return self.lr * self.lr_decay**step


@dataclass
class WorkerState:
    worker_id: int
    params: dict[str, np.ndarray]
    rng: np.random.Generator
    shard: np.ndarray
    step_count: int = 0

    def copy(self) -> "WorkerState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return replace(self, params={k: v.copy() for k, v in self.params.items()}, rng=rng)


def worker_rngs(seed: int, k: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def sample_batch(w: WorkerState, batch: int) -> np.ndarray:
    if batch >= w.shard.size:
        return w.shard
    return w.shard[w.rng.choice(w.shard.size, size=batch, replace=False)]


def minibatch_grad(w: WorkerState, obj: Objective, cfg: TrainConfig) -> dict[str, np.ndarray]:
    g = obj.grad(w.params, sample_batch(w, cfg.batch))
    for name, v in g.items():
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"worker {w.worker_id}: non-finite gradient in group {name!r} at step {w.step_count}")
    return g


def _groups(cfg: TrainConfig, params) -> list[str]:
    return list(cfg.groups) if cfg.groups else list(params)


def apply_grad(params, grad, lr: float, groups) -> dict[str, np.ndarray]:
    out = dict(params)
    for name in groups:
        out[name] = params[name] - lr * grad[name]
    return out


def local_step(w: WorkerState, obj: Objective, cfg: TrainConfig) -> WorkerState:
    """One SGD step on every group at once, all gradients taken at the pre-step snapshot."""
    g = minibatch_grad(w, obj, cfg)
    params = apply_grad(w.params, g, cfg.lr_at(w.step_count), _groups(cfg, w.params))
    return replace(w, params=params, step_count=w.step_count + 1)


def pair_average(a: WorkerState, b: WorkerState):
    if a.params.keys() != b.params.keys():
        raise ValueError("workers hold different parameter groups")
    avg = {}
    for name in a.params:
        pa, pb = a.params[name], b.params[name]
        if pa.shape != pb.shape:
            raise ValueError(f"group {name!r} shape mismatch {pa.shape} vs {pb.shape}")
        avg[name] = (pa + pb) / 2
    return replace(a, params=avg), replace(b, params={k: v.copy() for k, v in avg.items()})


def choose_pairs(workers: list[WorkerState], mode: str) -> list[tuple[int, int]]:
    """Each worker, in id order, asks one peer; a worker joins at most one pair per step."""
    k = len(workers)
    if k < 2 or mode == "none":
        return []
    busy = set()
    pairs = []
    for w in workers:
        i = w.worker_id
        if mode == "ring_neighbor":
            j = (i + 1) % k if w.rng.random() < 0.5 else (i - 1) % k
        else:
            j = int(w.rng.integers(k - 1))
            j += j >= i
        if i in busy or j in busy:
            continue
        busy.update((i, j))
        pairs.append((i, j))
    return pairs


def init_workers(obj: Objective, cfg: TrainConfig) -> list[WorkerState]:
    shards = np.array_split(np.arange(obj.n_samples), cfg.workers)
    init = obj.init_params()
    return [
        WorkerState(i, {k: v.copy() for k, v in init.items()}, rng, shards[i])
        for i, rng in enumerate(worker_rngs(cfg.seed, cfg.workers))
    ]


def mean_params(workers) -> dict[str, np.ndarray]:
    return {k: sum(w.params[k] for w in workers) / len(workers) for k in workers[0].params}


def consensus_distance(workers) -> float:
    """max over worker pairs of the Euclidean distance between flattened parameters."""
    flat = np.stack([np.concatenate([w.params[k].ravel() for k in sorted(w.params)]) for w in workers])
    if len(flat) < 2:
        return 0.0
    d = flat[:, None, :] - flat[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


@dataclass
class TraceRow:
    step: int
    worker: int
    loss: float
    consensus_distance: float


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    mean_params: list[dict[str, np.ndarray]] = field(default_factory=list)
    consensus: list[float] = field(default_factory=list)
    averaging_events: int = 0
    workers: list[WorkerState] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "worker", "loss", "consensus_distance"])
            for r in self.rows:
                w.writerow([r.step, r.worker, repr(r.loss), repr(r.consensus_distance)])


def run_training(obj: Objective, cfg: TrainConfig, on_average=None) -> Trace:
    """Simulate ``cfg.steps`` rounds of DPSGD; returns a per-step, per-worker trace.

    ``on_average(before, after)`` is called with the worker list around every
    averaging event, for bookkeeping checks.
    """
    workers = init_workers(obj, cfg)
    trace = Trace()
    for step in range(cfg.steps):
        # gradient on the pre-averaging weights: compute overlaps communication
        grads = [minibatch_grad(w, obj, cfg) for w in workers]
        for i, j in choose_pairs(workers, cfg.averaging):
            before = list(workers)
            workers[i], workers[j] = pair_average(workers[i], workers[j])
            trace.averaging_events += 1
            if on_average is not None:
                on_average(before, list(workers))
        lr = cfg.lr_at(step)
        workers = [
            replace(w, params=apply_grad(w.params, g, lr, _groups(cfg, w.params)), step_count=w.step_count + 1)
            for w, g in zip(workers, grads)
        ]
        cd = consensus_distance(workers)
        for w in workers:
            loss = obj.loss(w.params)
            if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                raise DivergenceError(f"worker {w.worker_id} diverged at step {step} (loss={loss})")
            trace.rows.append(TraceRow(step, w.worker_id, loss, cd))
        mp = mean_params(workers)
        trace.mean_params.append(mp)
        trace.mean_loss.append(obj.loss(mp))
        trace.consensus.append(cd)
    trace.workers = workers
    return trace


def sequential_sgd(obj: Objective, cfg: TrainConfig) -> Trace:
    """Plain single-learner SGD over the full dataset, seeded like worker 0 of a ring."""
    rng = worker_rngs(cfg.seed, 1)[0]
    params = {k: v.copy() for k, v in obj.init_params().items()}
    data = np.arange(obj.n_samples)
    groups = _groups(cfg, params)
    trace = Trace()
    for step in range(cfg.steps):
        idx = data if cfg.batch >= data.size else data[rng.choice(data.size, size=cfg.batch, replace=False)]
        g = obj.grad(params, idx)
        for name, v in g.items():
            if not np.all(np.isfinite(v)):
                raise DivergenceError(f"non-finite gradient in group {name!r} at step {step}")
        params = {k: (params[k] - cfg.lr_at(step) * g[k]) if k in groups else params[k] for k in params}
        loss = obj.loss(params)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise DivergenceError(f"diverged at step {step} (loss={loss})")
        trace.rows.append(TraceRow(step, 0, loss, 0.0))
        trace.mean_params.append({k: v.copy() for k, v in params.items()})
        trace.mean_loss.append(loss)
        trace.consensus.append(0.0)
    return trace


def speedup_model(workers: int, t_compute: float, t_comm: float, sync_overhead: float = 0.0) -> float:
    """Projected speed-up when communication overlaps computation.

    ``workers * t_compute / (max(t_compute, t_comm) + sync_overhead)``; a single
    worker never communicates and runs at 1.0.
    """
    if t_compute <= 0 or t_comm < 0 or sync_overhead < 0:
        raise ValueError("times must be positive")
    if workers == 1:
        return 1.0
    return workers * t_compute / (max(t_compute, t_comm) + sync_overhead)


def fit_sync_overhead(workers: int, observed_speedup: float, t_compute: float = 1.0, t_comm: float = 0.0) -> float:
    """Sync overhead that makes ``speedup_model`` reproduce an observed speed-up.

    A curve fit for illustration only: it does not measure anything.
    """
    return workers * t_compute / observed_speedup - max(t_compute, t_comm)
