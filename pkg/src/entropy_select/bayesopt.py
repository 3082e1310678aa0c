"""One-dimensional Gaussian-process minimization with expected improvement."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

log = logging.getLogger(__name__)

LENGTH_SCALES = np.logspace(-2, 1, 21)
SIGNAL_VARIANCES = (0.25, 1.0, 4.0)
NOISE_VARIANCES = (1e-8, 1e-4, 1e-2)
MIN_NOISE = 1e-10
JITTER_START, JITTER_MAX = 1e-10, 1e-4
DUPLICATE_TOL = 1e-6
MAX_CONSECUTIVE_FAILURES = 3


class GPFitError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    lower: float = 0.5
    upper: float = 0.9

    def __post_init__(self):
        if not (0 < self.lower < self.upper <= 1):
            raise ValueError("search space needs 0 < lower < upper <= 1")

    def to_unit(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lower) / (self.upper - self.lower)

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=np.float64) * (self.upper - self.lower)


@dataclass(frozen=True)
class BOConfig:
    total_calls: int = 50
    random_starts: int = 15
    seed: int = 0
    xi: float = 0.01
    candidate_grid_size: int = 1001

    def __post_init__(self):
        if self.total_calls < 1:
            raise ValueError("total_calls must be at least 1")
        if self.random_starts > self.total_calls or self.random_starts < 1:
            raise ValueError("random_starts must lie in [1, total_calls]")


def matern52(r, length_scale, signal_variance=1.0):
    s = math.sqrt(5.0) * np.abs(r) / length_scale
    return signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _cholesky(k: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(len(k))
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(k + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10
    raise GPFitError("kernel matrix is not positive definite even with jitter 1e-4")


@dataclass
class GPSurrogate:
    """Posterior state of a zero-mean GP over standardized targets."""

    x: np.ndarray
    y: np.ndarray
    length_scale: float
    signal_variance: float
    noise_variance: float
    y_mean: float
    y_scale: float
    log_marginal_likelihood: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def hyperparameters(self) -> dict:
        return {
            "length_scale": self.length_scale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }

    def posterior_standardized(self, x) -> tuple[np.ndarray, np.ndarray]:
        xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
        ks = matern52(xs[:, None] - self.x[None, :], self.length_scale, self.signal_variance)
        mean = ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True)
        var = self.signal_variance - np.sum(v * v, axis=0)
        if np.any(var < -1e-12):
            log.debug("negative posterior variance clamped: %g", var.min())
        return mean, np.maximum(var, 0.0)


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float, bool]:
    mu = float(np.mean(y))
    sd = float(np.std(y))
    if sd == 0.0:
        return y - mu, mu, 1.0, True
    return (y - mu) / sd, mu, sd, False


def log_marginal_likelihood(k: np.ndarray, y: np.ndarray) -> float:
    chol = _cholesky(k)
    alpha = cho_solve((chol, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(y) * math.log(2 * math.pi))


def gp_fit(points, targets, length_scales=LENGTH_SCALES, signal_variances=SIGNAL_VARIANCES,
           noise_variances=NOISE_VARIANCES) -> GPSurrogate:
    """Pick Matérn-5/2 hyperparameters maximizing the log marginal likelihood on a grid.

    ``points`` live on the unit interval; targets are standardized first and
    the variance grids are relative to the standardized scale. Constant
    targets are only centred, with the signal variance pinned to 1.
    """
    x = np.asarray(points, dtype=np.float64)
    y_raw = np.asarray(targets, dtype=np.float64)
    if len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct points")
    y, y_mean, y_scale, flat = _standardize(y_raw)
    if flat:
        signal_variances = (1.0,)
    n = len(x)
    r = x[:, None] - x[None, :]
    # One eigendecomposition per length-scale covers every (signal, noise) cell:
    # sf * R + sn * I shares R's eigenvectors.
    pairs = [(float(sf), float(max(sn, MIN_NOISE))) for sf in signal_variances for sn in noise_variances]
    sf_col = np.array([p[0] for p in pairs])[:, None]
    sn_col = np.array([p[1] for p in pairs])[:, None]
    cells, lml = [], []
    for ls in length_scales:
        lam, q = np.linalg.eigh(matern52(r, ls))
        proj2 = (q.T @ y) ** 2
        ev = sf_col * lam + sn_col
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = -0.5 * np.sum(proj2 / ev, axis=1) - 0.5 * np.sum(np.log(ev), axis=1)
        vals = np.where(np.all(ev > 0, axis=1), vals - 0.5 * n * math.log(2 * math.pi), -math.inf)
        cells.extend((float(ls), sf, sn) for sf, sn in pairs)
        lml.extend(vals.tolist())
    best = int(np.argmax(lml))
    ls, sf, sn = cells[best]
    k = matern52(r, ls, sf) + sn * np.eye(n)
    chol = _cholesky(k)
    alpha = cho_solve((chol, True), y)
    lml_best = log_marginal_likelihood(k, y)
    return GPSurrogate(x, y, ls, sf, sn, y_mean, y_scale, lml_best, chol, alpha)


def gp_posterior(surrogate: GPSurrogate, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at unit-interval inputs, in target units."""
    mean, var = surrogate.posterior_standardized(x)
    return surrogate.y_mean + surrogate.y_scale * mean, var * surrogate.y_scale**2


def expected_improvement(mean, std, best_y, xi=0.01) -> np.ndarray:
    """Expected reduction below ``best_y - xi`` for minimization."""
    mean, std = np.broadcast_arrays(np.asarray(mean, dtype=np.float64), np.asarray(std, dtype=np.float64))
    imp = np.atleast_1d(best_y - mean - xi)
    sd = np.atleast_1d(std)
    out = np.maximum(imp, 0.0)
    pos = sd > 0
    if np.any(pos):
        z = imp[pos] / sd[pos]
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        out[pos] = imp[pos] * ndtr(z) + sd[pos] * pdf
    return np.maximum(out, 0.0).reshape(mean.shape)


def surrogate_expected_improvement(surrogate: GPSurrogate, x, best_y, xi=0.01) -> np.ndarray:
    """EI on the surrogate's standardized scale; ``best_y`` is in target units."""
    mean, var = surrogate.posterior_standardized(x)
    best = (best_y - surrogate.y_mean) / surrogate.y_scale
    return expected_improvement(mean, np.sqrt(var), best, xi)


@dataclass
class Call:
    index: int
    x: float
    y: float
    phase: str  # random | model
    failed: bool = False
    hyperparameters: dict | None = None


@dataclass
class OptimizationTrace:
    calls: list[Call]
    space: SearchSpace
    config: BOConfig

    @property
    def best_call(self) -> Call:
        ok = [c for c in self.calls if not c.failed]
        return min(ok, key=lambda c: (c.y, c.index))

    @property
    def best_x(self) -> float:
        return self.best_call.x

    @property
    def best_y(self) -> float:
        return self.best_call.y

    def incumbents(self) -> list[float]:
        out, best = [], math.inf
        for c in self.calls:
            if not c.failed:
                best = min(best, c.y)
            out.append(best)
        return out

    def summary(self) -> dict:
        return {
            "best_proportion": self.best_x,
            "best_validation_loss": self.best_y,
            "config": asdict(self.config),
            "search_space": asdict(self.space),
            "seed": self.config.seed,
        }


class TooManyFailures(RuntimeError):
    pass


def minimize(objective, space: SearchSpace = SearchSpace(), config: BOConfig = BOConfig()) -> OptimizationTrace:
    """Sequentially minimize ``objective`` over ``space``.

    The first ``random_starts`` calls are uniform draws; later calls maximize
    expected improvement over a fixed grid plus the midpoints between sorted
    prior points. A proposal within 1e-6 of an earlier point is swapped for
    the grid point of largest posterior variance. A call whose objective
    raises is recorded as failed and given the worst value seen so far.
    """
    rng = np.random.default_rng(config.seed)
    grid = np.linspace(0.0, 1.0, config.candidate_grid_size)
    calls: list[Call] = []
    streak = 0
    for i in range(config.total_calls):
        hyper = None
        seen_u = np.array([space.to_unit(c.x) for c in calls if c.y is not None and math.isfinite(c.y)])
        if i < config.random_starts or len(np.unique(seen_u)) < 2:
            phase = "random"
            x = float(rng.uniform(space.lower, space.upper))
        else:
            phase = "model"
            usable = [c for c in calls if math.isfinite(c.y)]
            u = space.to_unit([c.x for c in usable])
            surrogate = gp_fit(u, [c.y for c in usable])
            hyper = surrogate.hyperparameters
            su = np.unique(u)
            cand = np.concatenate([grid, 0.5 * (su[:-1] + su[1:])])
            order = np.argsort(cand, kind="stable")
            cand = cand[order]
            best_y = min(c.y for c in usable)
            ei = surrogate_expected_improvement(surrogate, cand, best_y, config.xi)
            x_u = float(cand[int(np.argmax(ei))])
            x = float(space.from_unit(x_u))
            if any(abs(x - c.x) <= DUPLICATE_TOL for c in calls):
                _, var = surrogate.posterior_standardized(grid)
                # never swap one repeat for another
                prior_u = space.to_unit([c.x for c in calls])
                taken = np.any(np.abs(grid[:, None] - prior_u[None, :]) * (space.upper - space.lower)
                               <= DUPLICATE_TOL, axis=1)
                x = float(space.from_unit(grid[int(np.argmax(np.where(taken, -np.inf, var)))]))
        x = min(max(x, space.lower), space.upper)
        try:
            y = float(objective(x))
            if not math.isfinite(y):
                raise ValueError(f"objective returned {y}")
            failed = False
            streak = 0
        except Exception as exc:  # objective failures are part of the contract
            log.warning("objective failed at x=%.6f: %s", x, exc)
            finite = [c.y for c in calls if math.isfinite(c.y)]
            y = max(finite) if finite else math.nan
            failed = True
            streak += 1
        calls.append(Call(i + 1, x, y, phase, failed, hyper))
        if streak >= MAX_CONSECUTIVE_FAILURES:
            raise TooManyFailures(f"{streak} consecutive objective failures (last at call {i + 1})")
    return OptimizationTrace(calls, space, config)


def save_trace(trace: OptimizationTrace, csv_path, json_path=None):
    incumbents = trace.incumbents()
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["call", "phase", "proportion", "objective", "is_best_so_far"])
        prev = math.inf
        for c, inc in zip(trace.calls, incumbents):
            is_best = (not c.failed) and c.y < prev
            prev = inc
            w.writerow([c.index, c.phase, format(c.x, ".17g"), format(c.y, ".17g"), int(is_best)])
    if json_path is not None:
        doc = trace.summary()
        doc["calls"] = [asdict(c) for c in trace.calls]
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def load_trace(json_path) -> OptimizationTrace:
    with open(json_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    calls = [Call(**c) for c in doc["calls"]]
    return OptimizationTrace(calls, SearchSpace(**doc["search_space"]), BOConfig(**doc["config"]))
