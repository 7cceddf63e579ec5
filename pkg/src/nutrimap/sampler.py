"""Self-contained No-U-Turn sampler.

Multinomial NUTS with dual-averaging step-size adaptation and a
diagonal mass matrix estimated during windowed warmup (initial
step-size-only phase, expanding covariance windows, final hold). The
trajectory is grown by doublings; across doublings the proposal is
updated with the biased-progressive rule, within a subtree by uniform
multinomial weighting. The generalized U-turn criterion is evaluated on
every merge, including the across-subtree checks on the inner edges.

Determinism: every random decision draws from a counter-based generator
(Philox) keyed by (seed, chain, iteration), so identical (config, data)
pairs reproduce identical draws bit for bit regardless of execution
order, and chains can in principle run concurrently. Here they run
sequentially and are merged by chain index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import SamplingError, ValidationError

_MASK32 = 0xFFFFFFFF
_COUNTER_INIT = _MASK32
_COUNTER_EPS = _MASK32 - 1

#: a leaf whose energy error exceeds this is a divergence
DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chains < 1 or self.warmup < 1 or self.samples < 1:
            raise ValidationError("chains, warmup, and samples must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValidationError("max_tree_depth must be positive")


@dataclass(frozen=True)
class PosteriorDraws:
    """Post-warmup draws on the constrained scale."""

    names: tuple[str, ...]
    draws: np.ndarray        # (chain, iteration, parameter)
    divergent: np.ndarray    # (chain, iteration) bool
    tree_depth: np.ndarray   # (chain, iteration) int
    accept_stat: np.ndarray  # (chain, iteration)
    step_size: tuple[float, ...]

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    def stacked(self) -> np.ndarray:
        """All chains pooled, shape (chains*iterations, parameters)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def column(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape (chains, iterations)."""
        return self.draws[:, :, self.names.index(name)]

    def to_frame(self) -> pd.DataFrame:
        chains, iters, _ = self.draws.shape
        frame = pd.DataFrame(self.stacked(), columns=list(self.names))
        frame.insert(0, "divergent", self.divergent.reshape(-1))
        frame.insert(0, "iteration", np.tile(np.arange(iters), chains))
        frame.insert(0, "chain", np.repeat(np.arange(chains), iters))
        return frame


@dataclass(frozen=True)
class Diagnostics:
    summary: pd.DataFrame  # parameter, mean, sd, rhat, ess_bulk
    divergences: int
    divergence_rate: float
    mean_tree_depth: float
    max_depth_hits: int
    warnings: tuple[str, ...]


def _stream(seed: int, chain: int, counter: int) -> np.random.Generator:
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, ((chain & _MASK32) << 32) | (counter & _MASK32)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def leapfrog(x, r, grad, eps, inv_mass, logpost):
    """One leapfrog step; returns (x', r', logp', grad')."""
    r_half = r + 0.5 * eps * grad
    x_new = x + eps * inv_mass * r_half
    lp_new, g_new = logpost(x_new)
    r_new = r_half + 0.5 * eps * g_new
    return x_new, r_new, lp_new, g_new


class _Subtree:
    """Trajectory-ordered subtree state (minus = backward-in-time end)."""

    __slots__ = (
        "x_minus", "r_minus", "g_minus", "x_plus", "r_plus", "g_plus",
        "x_prop", "lp_prop", "g_prop", "log_w", "r_sum",
        "alpha_sum", "n_alpha", "ok", "diverged",
    )

    def __init__(self, x, r, g, lp, log_w, alpha):
        self.x_minus = self.x_plus = self.x_prop = x
        self.r_minus = self.r_plus = r
        self.g_minus = self.g_plus = self.g_prop = g
        self.lp_prop = lp
        self.log_w = log_w
        self.r_sum = r.copy()
        self.alpha_sum = alpha
        self.n_alpha = 1
        self.ok = True
        self.diverged = False


def _no_uturn(r_sum, r_minus, r_plus, inv_mass) -> bool:
    v = inv_mass * r_sum
    return float(np.dot(v, r_minus)) > 0.0 and float(np.dot(v, r_plus)) > 0.0


def _merge(left: _Subtree, right: _Subtree, rng, inv_mass, new_side: int) -> _Subtree:
    """Combine two adjacent subtrees (left earlier in trajectory time).

    ``new_side`` is 0 for inner merges (uniform multinomial weights) and
    +1/-1 when the right/left subtree is the newly built half of a
    doubling, which is then favoured (biased progressive sampling).
    """
    log_w = np.logaddexp(left.log_w, right.log_w)
    if new_side == 0:
        take_right = math.log(rng.random()) < right.log_w - log_w
    elif new_side > 0:
        log_accept = right.log_w - left.log_w
        take_right = True if log_accept >= 0.0 else math.log(rng.random()) < log_accept
    else:
        log_accept = left.log_w - right.log_w
        take_left = True if log_accept >= 0.0 else math.log(rng.random()) < log_accept
        take_right = not take_left

    ok = _no_uturn(left.r_sum + right.r_sum, left.r_minus, right.r_plus, inv_mass)
    # across-subtree checks on the inner edges
    ok = ok and _no_uturn(left.r_sum + right.r_minus, left.r_minus, right.r_minus, inv_mass)
    ok = ok and _no_uturn(left.r_plus + right.r_sum, left.r_plus, right.r_plus, inv_mass)

    out = left
    out.x_plus, out.r_plus, out.g_plus = right.x_plus, right.r_plus, right.g_plus
    if take_right:
        out.x_prop, out.lp_prop, out.g_prop = right.x_prop, right.lp_prop, right.g_prop
    out.log_w = log_w
    out.r_sum = left.r_sum + right.r_sum
    out.alpha_sum = left.alpha_sum + right.alpha_sum
    out.n_alpha = left.n_alpha + right.n_alpha
    out.ok = ok
    out.diverged = left.diverged or right.diverged
    return out


def _build(depth, x, r, g, direction, eps, inv_mass, h0, logpost, rng) -> _Subtree:
    if depth == 0:
        x1, r1, lp1, g1 = leapfrog(x, r, g, direction * eps, inv_mass, logpost)
        if math.isfinite(lp1):
            log_w = (lp1 - 0.5 * float(np.dot(inv_mass * r1, r1))) - h0
        else:
            log_w = -math.inf
        diverged = not math.isfinite(log_w) or log_w < -DIVERGENCE_THRESHOLD
        alpha = math.exp(min(0.0, log_w)) if math.isfinite(log_w) else 0.0
        leaf = _Subtree(x1, r1, g1, lp1, log_w, alpha)
        leaf.ok = not diverged
        leaf.diverged = diverged
        return leaf
    first = _build(depth - 1, x, r, g, direction, eps, inv_mass, h0, logpost, rng)
    if not first.ok:
        return first
    edge_x, edge_r, edge_g = (
        (first.x_plus, first.r_plus, first.g_plus)
        if direction > 0
        else (first.x_minus, first.r_minus, first.g_minus)
    )
    second = _build(depth - 1, edge_x, edge_r, edge_g, direction, eps, inv_mass, h0, logpost, rng)
    if not second.ok:
        first.alpha_sum += second.alpha_sum
        first.n_alpha += second.n_alpha
        first.ok = False
        first.diverged = first.diverged or second.diverged
        return first
    if direction > 0:
        return _merge(first, second, rng, inv_mass, new_side=0)
    return _merge(second, first, rng, inv_mass, new_side=0)


def _transition(x, lp, g, eps, inv_mass, sqrt_mass, max_depth, logpost, rng):
    """One NUTS update; returns (x, lp, g, accept_stat, depth, diverged)."""
    r0 = rng.standard_normal(x.size) * sqrt_mass
    h0 = lp - 0.5 * float(np.dot(inv_mass * r0, r0))
    tree = _Subtree(x, r0, g, lp, 0.0, 1.0)
    tree.n_alpha = 0
    tree.alpha_sum = 0.0
    depth = 0
    diverged = False
    while depth < max_depth:
        direction = 1 if rng.integers(0, 2) else -1
        edge_x, edge_r, edge_g = (
            (tree.x_plus, tree.r_plus, tree.g_plus)
            if direction > 0
            else (tree.x_minus, tree.r_minus, tree.g_minus)
        )
        sub = _build(depth, edge_x, edge_r, edge_g, direction, eps, inv_mass, h0, logpost, rng)
        if not sub.ok:
            tree.alpha_sum += sub.alpha_sum
            tree.n_alpha += sub.n_alpha
            diverged = diverged or sub.diverged
            break
        if direction > 0:
            tree = _merge(tree, sub, rng, inv_mass, new_side=1)
        else:
            tree = _merge(sub, tree, rng, inv_mass, new_side=-1)
        depth += 1
        if not tree.ok:
            break
    accept = tree.alpha_sum / tree.n_alpha if tree.n_alpha else 0.0
    return tree.x_prop, tree.lp_prop, tree.g_prop, accept, depth, diverged


def _find_reasonable_eps(x, lp, g, inv_mass, sqrt_mass, logpost, rng) -> float:
    """Double or halve eps until one leapfrog step crosses ratio 0.5."""
    eps = 1.0
    r = rng.standard_normal(x.size) * sqrt_mass
    h0 = lp - 0.5 * float(np.dot(inv_mass * r, r))

    def log_ratio(eps_try: float) -> float:
        _, r1, lp1, _ = leapfrog(x, r, g, eps_try, inv_mass, logpost)
        if not math.isfinite(lp1):
            return -math.inf
        return (lp1 - 0.5 * float(np.dot(inv_mass * r1, r1))) - h0

    lr = log_ratio(eps)
    direction = 1.0 if lr > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * lr <= direction * math.log(0.5) or not (1e-10 < eps < 1e7):
            break
        eps *= 2.0**direction
        lr = log_ratio(eps)
    return min(max(eps, 1e-10), 1e7)


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.count = 0

    def update(self, accept: float) -> float:
        self.count += 1
        m = self.count
        self.h_bar += ((self.target - accept) - self.h_bar) / (m + 10.0)
        self.log_eps = self.mu - math.sqrt(m) / 0.05 * self.h_bar
        w = m**-0.75
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def restart(self, eps: float) -> None:
        self.mu = math.log(10.0 * eps)
        self.log_eps = math.log(eps)
        self.log_eps_bar = math.log(eps)
        self.h_bar = 0.0
        self.count = 0


def _slow_windows(warmup: int) -> tuple[int, int, list[tuple[int, int]]]:
    """Stan-style schedule: (init, term, [(start, end) slow windows])."""
    if warmup >= 150:
        init, term, base = 75, 50, 25
    else:
        init = max(1, int(0.15 * warmup))
        term = max(1, int(0.10 * warmup))
        base = max(1, warmup - init - term)
    end_slow = warmup - term
    windows = []
    start, size = init, base
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((start, end))
        start = end
        size *= 2
    return init, term, windows


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def variance(self) -> np.ndarray:
        return self.m2 / (self.n - 1)


def _init_point(logpost, dim: int, rng) -> tuple[np.ndarray, float, np.ndarray]:
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, dim)
        try:
            lp, g = logpost(x)
        except FloatingPointError:
            continue
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return x, lp, g
    raise SamplingError("no finite log-posterior found after 100 jittered initializations")


def sample(logpost, dim: int, config: SamplerConfig, constrain=None, names=None):
    """Run NUTS and return (PosteriorDraws, Diagnostics).

    Parameters
    ----------
    logpost : callable
        ``x -> (value, gradient)`` on the unconstrained space.
    dim : int
        Unconstrained dimension.
    config : SamplerConfig
    constrain : callable, optional
        Maps an unconstrained draw to the stored (constrained) vector;
        identity when omitted.
    names : sequence of str, optional
        Names of the constrained parameters; defaults to x0..x{n-1}.
    """
    if constrain is None:
        constrain = lambda x: x  # noqa: E731
    probe = np.asarray(constrain(np.zeros(dim)), dtype=float)
    if names is None:
        names = tuple(f"x{i}" for i in range(probe.size))
    names = tuple(names)
    if len(names) != probe.size:
        raise ValidationError(f"{len(names)} names for {probe.size} constrained parameters")

    n_keep = config.samples
    draws = np.empty((config.chains, n_keep, probe.size))
    divergent = np.zeros((config.chains, n_keep), dtype=bool)
    tree_depth = np.zeros((config.chains, n_keep), dtype=np.int64)
    accept_stat = np.zeros((config.chains, n_keep))
    step_sizes = []
    init, term, windows = _slow_windows(config.warmup)
    window_ends = {end: (start, end) for start, end in windows}

    for chain in range(config.chains):
        x, lp, g = _init_point(logpost, dim, _stream(config.seed, chain, _COUNTER_INIT))
        inv_mass = np.ones(dim)
        sqrt_mass = np.ones(dim)
        eps = _find_reasonable_eps(
            x, lp, g, inv_mass, sqrt_mass, logpost, _stream(config.seed, chain, _COUNTER_EPS)
        )
        adapt = _DualAveraging(eps, config.target_accept)
        welford = _Welford(dim)
        in_slow = lambda i: any(s <= i < e for s, e in windows)  # noqa: E731

        for i in range(config.warmup + config.samples):
            rng = _stream(config.seed, chain, i)
            x, lp, g, accept, depth, div = _transition(
                x, lp, g, eps, inv_mass, sqrt_mass, config.max_tree_depth, logpost, rng
            )
            if i < config.warmup:
                eps = adapt.update(accept)
                if in_slow(i):
                    welford.add(x)
                if (i + 1) in window_ends and welford.n >= 2:
                    n = welford.n
                    var = welford.variance()
                    inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    sqrt_mass = 1.0 / np.sqrt(inv_mass)
                    welford = _Welford(dim)
                    adapt.restart(eps)
                if i == config.warmup - 1:
                    eps = math.exp(adapt.log_eps_bar)
            else:
                k = i - config.warmup
                draws[chain, k] = constrain(x)
                divergent[chain, k] = div
                tree_depth[chain, k] = depth
                accept_stat[chain, k] = accept
        step_sizes.append(eps)

    posterior = PosteriorDraws(
        names=names,
        draws=draws,
        divergent=divergent,
        tree_depth=tree_depth,
        accept_stat=accept_stat,
        step_size=tuple(step_sizes),
    )
    return posterior, diagnose(posterior, max_tree_depth=config.max_tree_depth)


def diagnose(draws: PosteriorDraws, max_tree_depth: int | None = None) -> Diagnostics:
    """Split R-hat and bulk ESS per parameter, plus run-level counters."""
    from .diagnostics import ess_bulk, split_rhat

    warnings = []
    chains = draws.draws.shape[0]
    rows = []
    degenerate = []
    for j, name in enumerate(draws.names):
        chain_draws = draws.draws[:, :, j]
        mean = float(chain_draws.mean())
        sd = float(chain_draws.std(ddof=1))
        if sd == 0.0:
            degenerate.append(name)
            rows.append((name, mean, sd, math.nan, math.nan))
            continue
        rhat = split_rhat(chain_draws) if chains >= 2 else math.nan
        rows.append((name, mean, sd, rhat, ess_bulk(chain_draws)))
    if chains < 2:
        warnings.append("single chain: split R-hat requires at least 2 chains")
    if degenerate:
        warnings.append(
            "constant draws for parameter(s): " + ", ".join(degenerate) + "; R-hat/ESS undefined"
        )
    summary = pd.DataFrame(rows, columns=("parameter", "mean", "sd", "rhat", "ess_bulk"))

    n_div = int(draws.divergent.sum())
    rate = n_div / draws.divergent.size
    if rate > 0.10:
        warnings.append(f"divergence rate {rate:.1%} exceeds 10%; results are unreliable")
    worst = summary["rhat"].max()
    if math.isfinite(worst) and worst > 1.01:
        warnings.append(f"max split R-hat {worst:.3f} exceeds 1.01; chains may not have mixed")
    hits = 0
    if max_tree_depth is not None:
        hits = int((draws.tree_depth >= max_tree_depth).sum())
        if hits:
            warnings.append(f"{hits} iteration(s) saturated max tree depth {max_tree_depth}")
    return Diagnostics(
        summary=summary,
        divergences=n_div,
        divergence_rate=rate,
        mean_tree_depth=float(draws.tree_depth.mean()),
        max_depth_hits=hits,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class GradientReport:
    max_rel_error: float
    worst_point: int
    worst_coordinate: int
    per_point: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-5


def gradient_check(logpost, points, rel_step: float = 1e-5) -> GradientReport:
    """Compare analytic gradients with central finite differences.

    The relative error at coordinate j is
    ``|fd_j - g_j| / max(1, |fd_j|, |g_j|)``; the report carries the
    maximum over all points and coordinates and its location.
    """
    worst = -1.0
    worst_point = worst_coord = -1
    per_point = []
    for k, point in enumerate(points):
        x = np.asarray(point, dtype=float)
        _, grad = logpost(x)
        point_worst = 0.0
        for j in range(x.size):
            h = rel_step * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (logpost(xp)[0] - logpost(xm)[0]) / (2.0 * h)
            rel = abs(fd - grad[j]) / max(1.0, abs(fd), abs(grad[j]))
            if rel > point_worst:
                point_worst = rel
            if rel > worst:
                worst, worst_point, worst_coord = rel, k, j
        per_point.append(point_worst)
    return GradientReport(
        max_rel_error=worst,
        worst_point=worst_point,
        worst_coordinate=worst_coord,
        per_point=tuple(per_point),
    )
