"""Monte Carlo trivialized scores, the reverse-SDE diffusion sampler, and a
trivialized overdamped Langevin baseline.

The noisy score at ``(g, t)`` is the trivialized gradient of

    f(g) = logsumexp_i ( -E(g w_i^{-1}) - log lambda(w_i) ),   w_i ~ k_t

with the noise set ``{w_i}`` frozen while differentiating.  When the energy
provides its Euclidean matrix gradient ``dE/dX`` the trivialized gradient is
computed exactly as ``-g^T sum_i s_i dE/dX(g w_i^{-1}) w_i^{-T}`` paired with
the basis (``s`` the softmax weights); otherwise central differences along
``g exp(+-h e_k)`` are used.

Chains are simulated in fixed-size blocks.  Every random draw comes from a
stream addressed by ``(chain, step, purpose)``, so the output does not depend
on block scheduling or on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import EstimationError
from .lie import GroupDescriptor, GroupElement
from .noise import NoiseSchedule, draw_increments, grid_index, kernel_batch, path_product
from .streams import Purpose, stream

log = logging.getLogger(__name__)

SCORE_CLIP = 1e6
STEP_LIMIT = 100.0  # algebra norm of one reverse step beyond which a chain counts as diverged
LANGEVIN_CHUNK = 1024


@dataclass(frozen=True)
class EnergyHandle:
    """Energy on a matrix group, vectorized over leading axes.

    ``eval`` maps ``(..., m, m)`` matrices to ``(...)`` energies.  The optional
    ``matrix_grad`` returns the entrywise derivative ``dE/dX`` with the same
    shape as its input; it enables the analytic score path.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    matrix_grad: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "energy"

    def __call__(self, g) -> float:
        mat = g.matrix if isinstance(g, GroupElement) else g
        return float(self.eval(np.asarray(mat, dtype=float)))

    @property
    def analytic_gradient(self) -> Callable[[GroupElement], np.ndarray] | None:
        if self.matrix_grad is None:
            return None

        def grad(g: GroupElement) -> np.ndarray:
            return g.group.pair(g.matrix.T @ self.matrix_grad(g.matrix))

        return grad


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``noise_mode="fresh"`` draws a new Monte Carlo noise set at every
    ``(chain, step)``.  ``"paths"`` draws ``mc_samples`` noise paths per chain
    once and uses their prefix at each step: every step still sees exact
    ``k_t`` draws, but at ``O(N M)`` instead of ``O(N M^2)`` exponentials,
    which is what makes large non-abelian groups affordable.
    """

    schedule: NoiseSchedule
    dt: float
    mc_samples: int = 100
    chains: int = 1
    seed: int = 0
    fd_step: float = 1e-5
    gradient: str = "auto"
    noise_mode: str = "fresh"
    trace: bool = False
    block_size: int = 128
    workers: int | None = None
    score_clip: float = SCORE_CLIP

    def __post_init__(self):
        if not self.dt > 0 or abs(1 / self.dt - round(1 / self.dt)) > 1e-9:
            raise ValueError(f"1/dt must be a positive integer, got dt={self.dt}")
        if self.mc_samples < 1 or self.chains < 1 or self.block_size < 1:
            raise ValueError("mc_samples, chains and block_size must be >= 1")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.gradient not in ("auto", "analytic", "finite_difference"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.noise_mode not in ("fresh", "paths"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")

    @property
    def steps(self) -> int:
        return int(round(1 / self.dt))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = {"gamma_min": self.schedule.gamma_min, "gamma_max": self.schedule.gamma_max}
        return d


@dataclass
class SampleBatch:
    """Terminal samples of a run plus optional per-step states.

    ``trace[c, j]`` is chain ``c`` at ``times[j]``; ``failures`` maps aborted
    chain indices to the reason.
    """

    group: GroupDescriptor
    samples: np.ndarray
    energies: np.ndarray
    times: np.ndarray | None
    trace: np.ndarray | None
    method: str
    config: dict
    seed: int
    failures: dict[int, str] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return len(self.samples)

    def elements(self) -> list[GroupElement]:
        return [GroupElement(s, self.group) for s in self.samples]


def _gradient_mode(energy: EnergyHandle, requested: str) -> str:
    if requested == "auto":
        return "analytic" if energy.matrix_grad is not None else "finite_difference"
    if requested == "analytic" and energy.matrix_grad is None:
        raise ValueError(f"energy {energy.name!r} has no matrix gradient")
    return requested


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    top = logits.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(logits - top).sum(axis=-1)) + top[..., 0]


def _masked_logits(energy: EnergyHandle, y: np.ndarray, logl: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.asarray(energy.eval(y), dtype=float)
        logits = -e - logl
    return np.where(np.isfinite(logits), logits, -np.inf)


def lse_scores(group: GroupDescriptor, energy: EnergyHandle, g: np.ndarray, winv: np.ndarray,
               logl: np.ndarray, mode: str, fd_step: float = 1e-5):
    """Batched frozen-noise score estimates.

    ``g`` is ``(C, m, m)``, ``winv`` ``(C, N, m, m)`` holds inverse noise draws
    and ``logl`` ``(C, N)`` their log modular values.  Returns ``(scores (C, n),
    dropped (C,), failed (C,))`` where ``dropped`` counts non-finite terms.
    """
    y = g[:, None] @ winv
    logits = _masked_logits(energy, y, logl)
    finite = np.isfinite(logits)
    failed = ~finite.any(axis=1)
    dropped = (~finite).sum(axis=1)

    if mode == "analytic":
        lse = _logsumexp(logits)
        weights = np.where(finite, np.exp(logits - np.where(failed, 0.0, lse)[:, None]), 0.0)
        with np.errstate(invalid="ignore", over="ignore"):
            grads = np.asarray(energy.matrix_grad(y), dtype=float)
        bad = ~np.isfinite(grads).all(axis=(-1, -2)) & finite
        if np.any(bad):
            # energy finite but gradient not: drop those terms and renormalize
            finite &= ~bad
            dropped = (~finite).sum(axis=1)
            failed = ~finite.any(axis=1)
            weights = np.where(finite, weights, 0.0)
            tot = weights.sum(axis=1, keepdims=True)
            weights = np.divide(weights, tot, out=np.zeros_like(weights), where=tot > 0)
        grads = np.where(finite[..., None, None], grads, 0.0)
        mix = np.einsum("cn,cnab->cab", weights, grads @ np.swapaxes(winv, -1, -2))
        scores = -group.pair(np.swapaxes(g, -1, -2) @ mix)
    else:
        n = group.n
        steps = group.exp(np.concatenate([np.eye(n), -np.eye(n)]) * fd_step)
        scores = np.empty((len(g), n))
        for k in range(n):
            fp = _logsumexp(_masked_logits(energy, (g @ steps[k])[:, None] @ winv, logl))
            fm = _logsumexp(_masked_logits(energy, (g @ steps[n + k])[:, None] @ winv, logl))
            with np.errstate(invalid="ignore"):
                scores[:, k] = (fp - fm) / (2 * fd_step)
        scores = np.where(np.isfinite(scores), scores, 0.0)
    scores[failed] = 0.0
    return scores, dropped, failed


def _clip(scores: np.ndarray, limit: float) -> tuple[np.ndarray, int]:
    norms = np.linalg.norm(scores, axis=-1)
    over = norms > limit
    if np.any(over):
        scores = scores * np.where(over, limit / np.where(over, norms, 1.0), 1.0)[:, None]
    return scores, int(over.sum())


def score_estimate(g: GroupElement, t: float, energy: EnergyHandle, cfg: SamplerConfig, rng=None,
                   noise: tuple[np.ndarray, np.ndarray] | None = None, info: dict | None = None) -> np.ndarray:
    """Monte Carlo estimate of the trivialized noisy score at ``(g, t)``.

    Draws ``cfg.mc_samples`` noise elements from ``k_t`` (or uses the frozen
    ``noise = (W, log_lambda)`` pair when given) and differentiates the
    logsumexp estimator at ``g``.
    """
    group = g.group
    if noise is None:
        m = grid_index(t, cfg.dt)
        rng = rng if isinstance(rng, np.random.Generator) else stream(cfg.seed if rng is None else int(rng),
                                                                      0, m, Purpose.NOISE)
        w, logl = kernel_batch(group, cfg.schedule, cfg.dt, m, cfg.mc_samples, rng)
    else:
        w, logl = (np.asarray(a, dtype=float) for a in noise)
    mode = _gradient_mode(energy, cfg.gradient)
    scores, dropped, failed = lse_scores(group, energy, g.matrix[None], group.inv(w)[None], logl[None],
                                         mode, cfg.fd_step)
    if failed[0]:
        raise EstimationError(f"all {len(logl)} Monte Carlo terms are non-finite at t={t}")
    if dropped[0]:
        warnings.warn(f"dropped {int(dropped[0])} non-finite Monte Carlo terms", RuntimeWarning, stacklevel=2)
    scores, clipped = _clip(scores, cfg.score_clip)
    if clipped:
        warnings.warn("score norm clamped", RuntimeWarning, stacklevel=2)
    if info is not None:
        info.update(dropped=int(dropped[0]), clipped=clipped, mode=mode)
    return scores[0]


def _workers(cfg_workers: int | None) -> int:
    if cfg_workers is not None:
        return max(1, int(cfg_workers))
    env = os.environ.get("TIED_THREADS")
    return max(1, int(env)) if env else 1


def _run_blocks(fn, chains: int, block: int, workers: int):
    blocks = [np.arange(s, min(s + block, chains)) for s in range(0, chains, block)]
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _resolve_seed(cfg_seed: int, rng) -> int:
    if rng is None:
        return int(cfg_seed)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


class _TiedBlock:
    """Reverse-SDE simulation of one block of chains."""

    def __init__(self, energy, group, cfg, seed, mode):
        self.energy, self.group, self.cfg, self.seed, self.mode = energy, group, cfg, seed, mode
        self.sched = cfg.schedule

    def _inc(self, chains, step, purpose, size):
        return np.stack([
            draw_increments(self.group, self.sched, self.cfg.dt, np.arange(step), stream(self.seed, c, step, purpose), size)
            for c in chains
        ]) if step else None

    def _fresh_noise(self, chains, m):
        group, cfg = self.group, self.cfg
        n_mc = cfg.mc_samples
        if group.abelian:
            std = math.sqrt(self.sched.grid_variance(m, cfg.dt))
            z = np.stack([stream(self.seed, c, m, Purpose.NOISE).standard_normal((n_mc, group.n)) for c in chains])
            return group.exp(z * std), np.zeros((len(chains), n_mc))
        inc = self._inc(chains, m, Purpose.NOISE, n_mc)
        return path_product(group, inc), -(inc.sum(axis=-2) @ group.modular_vector)

    def _path_increment(self, chains, i):
        # increment i of every noise path: gamma(i dt) z_i, from its own stream
        scale = float(self.sched(i * self.cfg.dt)) * math.sqrt(self.cfg.dt)
        z = np.stack([stream(self.seed, c, i, Purpose.NOISE_PATH).standard_normal((self.cfg.mc_samples, self.group.n))
                      for c in chains])
        return z * scale

    def __call__(self, chains):
        group, cfg, energy = self.group, self.cfg, self.energy
        M, dt = cfg.steps, cfg.dt
        a = group.modular_vector
        g = np.stack([kernel_batch(group, self.sched, dt, M, 1, stream(self.seed, c, 0, Purpose.INIT))[0][0]
                      for c in chains])
        trace = [g] if cfg.trace else None
        alive = np.ones(len(chains), bool)
        reasons: dict[int, str] = {}
        dropped_total = clipped_total = 0

        if cfg.noise_mode == "paths":
            w = np.broadcast_to(group.identity(), (len(chains), cfg.mc_samples, group.m, group.m))
            logl = np.zeros((len(chains), cfg.mc_samples))
            for i in range(M):
                v = self._path_increment(chains, i)
                w = group.maybe_project(w @ group.exp(v))
                logl = logl - v @ a

        for m in range(M, 0, -1):
            t = m * dt
            if cfg.noise_mode == "fresh":
                w, logl = self._fresh_noise(chains, m)
            scores, dropped, failed = lse_scores(group, energy, g, group.inv(w), logl, self.mode, cfg.fd_step)
            scores, clipped = _clip(scores, cfg.score_clip)
            dropped_total += int(dropped[alive].sum())
            clipped_total += clipped
            for j in np.flatnonzero(failed & alive):
                reasons[int(chains[j])] = f"all Monte Carlo terms non-finite at t={t:.6g}"
                alive[j] = False
            zbar = np.stack([stream(self.seed, c, m, Purpose.BROWNIAN).standard_normal(group.n) for c in chains])
            gam = float(self.sched(t))
            step = gam**2 * scores * dt + gam * math.sqrt(dt) * zbar
            step[~alive] = 0.0
            g, diverged = _advance(group, g, step)
            for j in np.flatnonzero(diverged & alive):
                reasons[int(chains[j])] = f"reverse step diverged at t={t:.6g}"
                alive[j] = False
            if cfg.trace:
                trace.append(g)
            if cfg.noise_mode == "paths" and m > 1:
                v = self._path_increment(chains, m - 1)
                w = group.maybe_project(w @ group.exp(-v))
                logl = logl + v @ a
        return g, (np.stack(trace, axis=1) if cfg.trace else None), reasons, dropped_total, clipped_total


def _advance(group: GroupDescriptor, g: np.ndarray, step: np.ndarray):
    """``g exp(step)`` per chain; chains whose step or result is unusable keep ``g`` and are flagged.

    Large steps are harmless on compact groups (they wrap around), so the
    norm limit applies to non-compact groups only.
    """
    bad = ~np.isfinite(step).all(axis=-1)
    if not group.compact:
        bad |= np.linalg.norm(np.where(bad[:, None], 0.0, step), axis=-1) > STEP_LIMIT
    safe = np.where(bad[:, None], 0.0, step)
    with np.errstate(over="ignore", invalid="ignore"):
        new = group.maybe_project(g @ group.exp(safe))
        off = ~np.isfinite(new).all(axis=(-1, -2))
        off[~off] = ~(group.defect(new[~off]) <= 1e-6)
    bad |= off
    return np.where(bad[:, None, None], g, new), bad


def tied_sample(energy: EnergyHandle, group: GroupDescriptor, cfg: SamplerConfig, rng=None) -> SampleBatch:
    """Draw ``cfg.chains`` approximate samples from ``p(g) ~ exp(-E(g))``.

    Each chain starts from ``k_1`` and runs ``1/dt`` reverse steps
    ``g <- g exp(gamma(t)^2 s dt + gamma(t) z)``, ``z ~ N(0, dt I)``, with
    ``s`` the Monte Carlo score at ``t = m dt``.
    """
    seed = _resolve_seed(cfg.seed, rng)
    mode = _gradient_mode(energy, cfg.gradient)
    runner = _TiedBlock(energy, group, cfg, seed, mode)
    parts = _run_blocks(runner, cfg.chains, cfg.block_size, _workers(cfg.workers))
    samples = np.concatenate([p[0] for p in parts])
    trace = np.concatenate([p[1] for p in parts]) if cfg.trace else None
    failures = {k: v for p in parts for k, v in p[2].items()}
    per_step = cfg.mc_samples * (1 if mode == "analytic" else 2 * group.n + 1)
    diagnostics = {
        "dropped_terms": sum(p[3] for p in parts),
        "clipped_scores": sum(p[4] for p in parts),
        "gradient_mode": mode,
        "energy_calls_per_chain": per_step * cfg.steps,
        "failed_chains": len(failures),
    }
    if diagnostics["dropped_terms"]:
        log.warning("dropped %d non-finite Monte Carlo terms", diagnostics["dropped_terms"])
    if diagnostics["clipped_scores"]:
        log.warning("clamped %d score estimates to norm %g", diagnostics["clipped_scores"], cfg.score_clip)
    with np.errstate(invalid="ignore", over="ignore"):
        energies = np.asarray(energy.eval(samples), dtype=float)
    times = np.arange(cfg.steps, -1, -1) * cfg.dt if cfg.trace else None
    return SampleBatch(group, samples, energies, times, trace, "tied", cfg.to_dict(), seed, failures, diagnostics)


def haar_so(n: int, size: int, rng) -> np.ndarray:
    """Haar-uniform SO(n) matrices via sign-corrected QR of Gaussian matrices."""
    q, r = np.linalg.qr(rng.standard_normal((size, n, n)))
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    flip = np.linalg.det(q) < 0
    q[flip, :, 0] *= -1
    return q


def _energy_gradients(group, energy, g, mode, fd_step):
    if mode == "analytic":
        return group.pair(np.swapaxes(g, -1, -2) @ energy.matrix_grad(g))
    n = group.n
    steps = group.exp(np.concatenate([np.eye(n), -np.eye(n)]) * fd_step)
    out = np.empty((len(g), n))
    for k in range(n):
        out[:, k] = (energy.eval(g @ steps[k]) - energy.eval(g @ steps[n + k])) / (2 * fd_step)
    return out


def langevin_sample(energy: EnergyHandle, group: GroupDescriptor, steps: int, step_size: float,
                    cfg: SamplerConfig, rng=None, init: str = "identity", record_every: int | None = None,
                    noise_scale: float = 1.0) -> SampleBatch:
    """Overdamped trivialized Langevin: ``g <- g exp(-eta grad E + sqrt(2 eta) z)``.

    Stationary for ``exp(-E)`` against Haar measure on unimodular groups with
    a bi-invariant coefficient metric (SO(n) here).  ``init`` is
    ``"identity"``, ``"haar"`` (SO(n) only) or ``"kernel"`` (a ``k_1`` draw
    under ``cfg.schedule``).  ``noise_scale=0`` turns the chain into plain
    trivialized gradient descent.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    seed = _resolve_seed(cfg.seed, rng)
    mode = _gradient_mode(energy, cfg.gradient)
    if init == "haar" and group.family != "so":
        raise ValueError("haar initialization is only available for SO(n)")
    if init not in ("identity", "haar", "kernel"):
        raise ValueError(f"unknown init {init!r}")
    every = record_every or (1 if cfg.trace else 0)

    def block(chains):
        if init == "identity":
            g = np.broadcast_to(group.identity(), (len(chains), group.m, group.m)).copy()
        elif init == "haar":
            g = np.concatenate([haar_so(group.m, 1, stream(seed, c, 0, Purpose.INIT)) for c in chains])
        else:
            g = np.stack([kernel_batch(group, cfg.schedule, cfg.dt, cfg.steps, 1,
                                       stream(seed, c, 0, Purpose.INIT))[0][0] for c in chains])
        rec = [g] if every else None
        noise = None
        for s in range(steps):
            j = s % LANGEVIN_CHUNK
            if j == 0:
                noise = np.stack([stream(seed, c, s // LANGEVIN_CHUNK, Purpose.LANGEVIN)
                                  .standard_normal((LANGEVIN_CHUNK, group.n)) for c in chains])
            grad = _energy_gradients(group, energy, g, mode, cfg.fd_step)
            step = -step_size * grad + noise_scale * math.sqrt(2 * step_size) * noise[:, j]
            g = group.maybe_project(g @ group.exp(step))
            if every and (s + 1) % every == 0:
                rec.append(g)
        return g, (np.stack(rec, axis=1) if every else None)

    parts = _run_blocks(block, cfg.chains, cfg.block_size, _workers(cfg.workers))
    samples = np.concatenate([p[0] for p in parts])
    trace = np.concatenate([p[1] for p in parts]) if every else None
    times = np.arange(0, steps + 1, every) if every else None
    calls = 1 if mode == "analytic" else 2 * group.n
    return SampleBatch(
        group, samples, np.asarray(energy.eval(samples), dtype=float), times, trace, "langevin",
        {**cfg.to_dict(), "steps": steps, "step_size": step_size, "init": init}, seed,
        diagnostics={"gradient_mode": mode, "energy_calls_per_chain": calls * steps},
    )
