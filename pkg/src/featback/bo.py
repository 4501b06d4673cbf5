"""Gaussian-process trigger search with expected improvement.

The search minimizes a black-box objective over a box: a fixed number
of seeded uniform evaluations, then acquisition-driven evaluations,
returning the best point seen. The attack objective trains a
warm-started surrogate on a freshly poisoned dataset for a few epochs
and scores the mean backdoor cross-entropy over the poisoned clouds
plus an L1 penalty on the shift.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .model import TrainConfig, _softmax, forward, train
from .poison import Trigger, poison_dataset


@dataclass
class GPState:
    x: np.ndarray  # (m, d) observation inputs
    y: np.ndarray  # (m,) observation values
    lengthscales: np.ndarray  # (d,)
    signal_var: float
    noise_var: float
    prior_mean: float
    chol: np.ndarray  # lower Cholesky factor of K + noise_var * I
    alpha: np.ndarray  # solve(K + noise_var * I, y - prior_mean)


def _sq_dists(a, b, lengthscales):
    sa = a / lengthscales
    sb = b / lengthscales
    return np.sum(sa * sa, axis=1)[:, None] + np.sum(sb * sb, axis=1)[None, :] - 2.0 * sa @ sb.T


def _kernel(a, b, lengthscales, signal_var):
    return signal_var * np.exp(-0.5 * np.maximum(_sq_dists(a, b, lengthscales), 0.0))


def _fit_fixed(x, y, lengthscales, signal_var, noise_var):
    m = x.shape[0]
    gram = _kernel(x, x, lengthscales, signal_var)
    jitter = noise_var
    for _ in range(8):
        try:
            chol = linalg.cholesky(gram + jitter * np.eye(m), lower=True)
            break
        except linalg.LinAlgError:
            jitter *= 10.0
    else:
        raise FloatingPointError("Gram matrix not positive definite after jitter escalation")
    prior_mean = float(y.mean())
    alpha = linalg.cho_solve((chol, True), y - prior_mean)
    return GPState(x, y, lengthscales, signal_var, jitter, prior_mean, chol, alpha)


def _log_marginal(state):
    m = state.x.shape[0]
    resid = state.y - state.prior_mean
    return float(
        -0.5 * resid @ state.alpha
        - np.sum(np.log(np.diag(state.chol)))
        - 0.5 * m * np.log(2.0 * np.pi)
    )


def gp_fit(x, y, lengthscales=None, signal_var=None, noise_var=1e-6, optimize=False):
    """Fit a squared-exponential GP; caches the Cholesky factor.

    Defaults: per-dimension lengthscale 0.2 * observed input spread,
    signal variance = observation variance. ``optimize`` refines the
    lengthscale and signal variance over a small log-grid by marginal
    likelihood.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] < 1:
        raise ValueError("need at least one observation")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("observations must be finite")
    if lengthscales is None:
        spread = x.max(axis=0) - x.min(axis=0)
        lengthscales = 0.2 * np.where(spread > 0, spread, 1.0)
    lengthscales = np.broadcast_to(
        np.asarray(lengthscales, dtype=np.float64), (x.shape[1],)
    ).copy()
    if signal_var is None:
        signal_var = float(max(y.var(), 1e-12))
    state = _fit_fixed(x, y, lengthscales, signal_var, noise_var)
    if optimize and x.shape[0] >= 3:
        best = state
        best_ml = _log_marginal(state)
        for ls_mult in (0.25, 0.5, 1.0, 2.0, 4.0):
            for sv_mult in (0.5, 1.0, 2.0):
                cand = _fit_fixed(x, y, lengthscales * ls_mult, signal_var * sv_mult, noise_var)
                ml = _log_marginal(cand)
                if ml > best_ml:
                    best, best_ml = cand, ml
        state = best
    return state


def _posterior_batch(state, s):
    kstar = _kernel(np.atleast_2d(s), state.x, state.lengthscales, state.signal_var)
    mean = state.prior_mean + kstar @ state.alpha
    v = linalg.solve_triangular(state.chol, kstar.T, lower=True)
    var = np.maximum(state.signal_var - np.sum(v * v, axis=0), 0.0)
    return mean, var


def gp_posterior(state, s):
    """Posterior (mean, variance) at a single input; variance clamped at 0."""
    mean, var = _posterior_batch(state, np.asarray(s, dtype=np.float64).reshape(1, -1))
    return float(mean[0]), float(var[0])


def ei_value(mean, var, best):
    """Closed-form expected improvement below ``best`` (minimization)."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.asarray(var, dtype=np.float64))
    gap = best - mean
    out = np.maximum(gap, 0.0)
    pos = sigma > 0.0
    z = np.divide(gap, sigma, out=np.zeros_like(gap), where=pos)
    ei = gap * norm.cdf(z) + sigma * norm.pdf(z)
    return np.where(pos, ei, out)


def expected_improvement(state, s, best):
    mean, var = gp_posterior(state, s)
    return float(ei_value(mean, var, best))


@dataclass
class SurrogateConfig:
    """How the attack objective trains and scores its surrogate model."""

    base_params: object = None  # warm-start checkpoint (clean-pretrained)
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    train_seed: int = 0
    poison_seed: int = 0
    eval_count: int = 0  # 0 = score every poisoned cloud


@dataclass
class BOConfig:
    bounds: np.ndarray  # (d, 2)
    init_count: int = 4
    iterations: int = 15
    lam: float = 0.1
    seed: int = 0
    candidates: int = 256
    refine_rounds: int = 3
    refine_count: int = 32
    optimize_hypers: bool = False
    noise_var: float = 1e-6
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        if self.init_count < 2:
            raise ValueError("init_count must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def _uniform_in(bounds, rng, count):
    return rng.uniform(bounds[:, 0], bounds[:, 1], size=(count, bounds.shape[0]))


def _maximize_acquisition(state, bounds, best, rng, config):
    cands = _uniform_in(bounds, rng, config.candidates)
    mean, var = _posterior_batch(state, cands)
    scores = ei_value(mean, var, best)
    pick = cands[int(np.argmax(scores))]
    width = bounds[:, 1] - bounds[:, 0]
    radius = 0.1
    for _ in range(config.refine_rounds):
        local = pick + rng.normal(0.0, radius, size=(config.refine_count, bounds.shape[0])) * width
        local = np.clip(local, bounds[:, 0], bounds[:, 1])
        mean, var = _posterior_batch(state, local)
        local_scores = ei_value(mean, var, best)
        j = int(np.argmax(local_scores))
        if local_scores[j] > expected_improvement(state, pick, best):
            pick = local[j]
        radius *= 0.5
    return pick


def minimize(objective, config):
    """Seeded random initialization plus EI-driven evaluations.

    Returns (best input, trace) where trace is the ordered list of
    (input, value) pairs; the best input is the argmin of the trace.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(config.seed), 0xB0)))
    bounds = config.bounds
    trace = []
    for s in _uniform_in(bounds, rng, config.init_count):
        trace.append((s.copy(), float(objective(s))))
    ls = 0.2 * (bounds[:, 1] - bounds[:, 0])
    for _ in range(config.iterations):
        xs = np.array([t[0] for t in trace])
        ys = np.array([t[1] for t in trace])
        state = gp_fit(
            xs, ys, lengthscales=ls, noise_var=config.noise_var,
            optimize=config.optimize_hypers,
        )
        best = float(ys.min())
        s = _maximize_acquisition(state, bounds, best, rng, config)
        trace.append((s.copy(), float(objective(s))))
    best_idx = int(np.argmin([t[1] for t in trace]))
    return trace[best_idx][0], trace


def make_trigger_objective(dataset, poison_template, config):
    """Objective O(s): poison the training set with shift s, warm-start
    the surrogate from the clean-pretrained checkpoint, train briefly,
    and return mean cross-entropy toward the poison targets over the
    poisoned clouds plus lam * ||s||_1."""
    cfg = config.surrogate
    if cfg.base_params is None:
        raise ValueError("surrogate config needs a clean-pretrained base_params")

    def objective(s):
        trigger = Trigger(np.asarray(s, dtype=np.float64), config.bounds)
        spec = replace(poison_template, trigger=trigger)
        poisoned, indices = poison_dataset(dataset, spec, cfg.poison_seed)
        tc = TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
            momentum=cfg.momentum, seed=cfg.train_seed, pipeline=None,
        ) if cfg.epochs > 0 else None
        params = cfg.base_params
        if tc is not None:
            params, _ = train(cfg.base_params, poisoned, tc)
        scored = indices if cfg.eval_count <= 0 else indices[: cfg.eval_count]
        losses = []
        for i in scored:
            lc = poisoned.clouds[int(i)]
            logits, _, _ = forward(params, lc.cloud)
            probs = _softmax(logits)
            losses.append(-np.log(max(probs[lc.label], 1e-300)))
        return float(np.mean(losses)) + config.lam * float(np.abs(np.asarray(s)).sum())

    return objective


def search_trigger(config, dataset, poison_template):
    """Run the full trigger search over the config bounds.

    Returns (best shift, trace of (shift, objective value)).
    """
    objective = make_trigger_objective(dataset, poison_template, config)
    return minimize(objective, config)
