"""Covariance matrix adaptation evolution strategy (derivative-free baseline).

Standard (mu/mu_w, lambda) CMA-ES: weighted recombination of the top half of
the population, cumulative step-size adaptation, and rank-one plus rank-mu
covariance updates, with the usual default constants and population size
4 + floor(3 ln n).  Deterministic under a fixed seed.  If the covariance
loses positive definiteness (or turns non-finite) the strategy restarts from
the current mean with the initial step size.

Above ``SEPARABLE_THRESHOLD`` dimensions the full covariance is intractable
(memory is O(n^2), the eigendecomposition O(n^3)); the strategy switches to
its separable variant, which keeps only the diagonal of C and uses the same
path and step-size machinery.

The objective may raise ``StopIteration(loss)`` to end the run early (used
for threshold-based stopping); the raising candidate is adopted as the best
point when its loss improves on the incumbent.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


SEPARABLE_THRESHOLD = 200


def cma_es_minimize(f: Callable[[np.ndarray], float], x0, sigma0: float,
                    max_evals: int, seed: int,
                    popsize: int | None = None,
                    on_generation: Callable[[int, int, float, float], bool]
                    | None = None) -> tuple[np.ndarray, float, int]:
    """Minimize f from x0; returns (x_best, f_best, evals_used)."""
    x0 = np.asarray(x0, dtype=np.float64).copy()
    n = x0.size
    if max_evals <= 0:
        return x0, math.inf, 0
    if n > SEPARABLE_THRESHOLD:
        return _sep_cma_minimize(f, x0, sigma0, max_evals, seed, popsize,
                                 on_generation)
    lam = popsize or 4 + int(3 * math.log(n))
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w * w)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    rng = np.random.default_rng(np.uint64(seed))
    mean = x0.copy()
    sigma = float(sigma0)
    pc = np.zeros(n)
    ps = np.zeros(n)
    cov = np.eye(n)
    eig_b = np.eye(n)
    eig_d = np.ones(n)

    evals = 0
    gen = 0
    x_best = x0.copy()
    f_best = math.inf

    def restart():
        nonlocal cov, eig_b, eig_d, pc, ps, sigma
        cov = np.eye(n)
        eig_b = np.eye(n)
        eig_d = np.ones(n)
        pc = np.zeros(n)
        ps = np.zeros(n)
        sigma = float(sigma0)

    while evals < max_evals:
        take = min(lam, max_evals - evals)
        zs = rng.standard_normal((lam, n))[:take]
        ys = zs @ (eig_b * eig_d).T
        xs = mean[None, :] + sigma * ys
        fs = np.empty(take)
        for i in range(take):
            try:
                fs[i] = f(xs[i])
            except StopIteration as stop:
                evals += 1
                f_cand = stop.value if stop.value is not None else -math.inf
                if f_cand < f_best:
                    x_best = xs[i].copy()
                    f_best = f_cand
                return x_best, f_best, evals
            evals += 1
        order = np.argsort(fs, kind="stable")
        gen_best = float(fs[order[0]])
        if gen_best < f_best:
            f_best = gen_best
            x_best = xs[order[0]].copy()
        if take < lam:
            break  # budget exhausted mid-generation; no reliable update

        sel = xs[order[:mu]]
        old_mean = mean
        mean = w @ sel
        y_w = (mean - old_mean) / sigma

        inv_sqrt = eig_b @ np.diag(1.0 / eig_d) @ eig_b.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt @ y_w)
        gen += 1
        hsig = (np.linalg.norm(ps)
                / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n
                < 1.4 + 2 / (n + 1))
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        art = (sel - old_mean) / sigma
        cov = ((1 - c1 - cmu) * cov
               + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * cov)
               + cmu * art.T @ (w[:, None] * art))
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))

        cov = (cov + cov.T) / 2
        vals, vecs = np.linalg.eigh(cov)
        if not np.all(np.isfinite(vals)) or vals.min() <= 0 or \
                not math.isfinite(sigma):
            restart()
        else:
            eig_d = np.sqrt(vals)
            eig_b = vecs
        if on_generation is not None and \
                on_generation(gen, evals, gen_best, f_best):
            break
    return x_best, f_best, evals


def _sep_cma_minimize(f, x0: np.ndarray, sigma0: float, max_evals: int,
                      seed: int, popsize: int | None,
                      on_generation) -> tuple[np.ndarray, float, int]:
    """Separable CMA-ES: diagonal covariance, same paths and step control."""
    n = x0.size
    lam = popsize or 4 + int(3 * math.log(n))
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w * w)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    # the separable variant can afford a larger rank-mu rate (Ros & Hansen)
    c1 = 2 / ((n + 1.3) ** 2 + mueff) * (n + 2) / 3
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff)
              * (n + 2) / 3)
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    rng = np.random.default_rng(np.uint64(seed))
    mean = x0.copy()
    sigma = float(sigma0)
    pc = np.zeros(n)
    ps = np.zeros(n)
    diag = np.ones(n)                 # variance vector (diagonal of C)

    evals = 0
    gen = 0
    x_best = x0.copy()
    f_best = math.inf

    while evals < max_evals:
        take = min(lam, max_evals - evals)
        d = np.sqrt(diag)
        zs = rng.standard_normal((lam, n))[:take]
        ys = zs * d
        xs = mean[None, :] + sigma * ys
        fs = np.empty(take)
        for i in range(take):
            try:
                fs[i] = f(xs[i])
            except StopIteration as stop:
                evals += 1
                f_cand = stop.value if stop.value is not None else -math.inf
                if f_cand < f_best:
                    x_best = xs[i].copy()
                    f_best = f_cand
                return x_best, f_best, evals
            evals += 1
        order = np.argsort(fs, kind="stable")
        gen_best = float(fs[order[0]])
        if gen_best < f_best:
            f_best = gen_best
            x_best = xs[order[0]].copy()
        if take < lam:
            break

        sel = xs[order[:mu]]
        old_mean = mean
        mean = w @ sel
        y_w = (mean - old_mean) / sigma
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (y_w / d)
        gen += 1
        hsig = (np.linalg.norm(ps)
                / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n
                < 1.4 + 2 / (n + 1))
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        art = (sel - old_mean) / sigma
        diag = ((1 - c1 - cmu) * diag
                + c1 * (pc * pc + (1 - hsig) * cc * (2 - cc) * diag)
                + cmu * (w @ (art * art)))
        sigma *= math.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))
        if not (np.all(np.isfinite(diag)) and diag.min() > 0
                and math.isfinite(sigma)):
            diag = np.ones(n)
            pc = np.zeros(n)
            ps = np.zeros(n)
            sigma = float(sigma0)
        if on_generation is not None and \
                on_generation(gen, evals, gen_best, f_best):
            break
    return x_best, f_best, evals
