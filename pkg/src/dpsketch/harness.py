"""Exact oracles, Monte-Carlo lemma verifiers, and mechanism bound checks.

Every Monte-Carlo operation is driven by explicit seeds and is exactly
reproducible; reports carry the seeds used. Trials are independent and may
run on a thread pool (capped by the DPSK_THREADS environment variable);
results are always reduced in seed order, so parallel runs reproduce
serial ones.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import guard, numerics
from .errors import ContractViolationError, ParameterDomainError
from .lra import LraConfig, new_lra, reconstruct
from .matprod import new_matprod
from .regress import new_regress


@dataclass
class BoundReport:
    """Outcome of one verifier: per-trial observations against a bound.

    ``allowed`` is the final failure-rate threshold including any
    Monte-Carlo slack the check defines; pass means
    violations/trials <= allowed.
    """

    check: str
    trials: int
    violations: int
    allowed: float
    passed: bool
    seeds: list = field(default_factory=list)
    observed_lhs: np.ndarray = field(default_factory=lambda: np.empty(0))
    bound_rhs: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_json_dict(self) -> dict:
        return {
            "check": self.check,
            "trials": self.trials,
            "violations": self.violations,
            "allowed": self.allowed,
            "pass": self.passed,
            "seeds": [int(s) for s in self.seeds],
        }


def binomial_allowed(rate: float, trials: int) -> float:
    """Failure-rate allowance: nominal rate plus a 3-sigma binomial band."""
    return rate + 3.0 * math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)


def thread_count() -> int:
    raw = os.environ.get("DPSK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_trials(fn, seeds):
    workers = thread_count()
    if workers == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


# ---------------------------------------------------------------------------
# Exact oracles


def exact_truncated_svd(a, k: int) -> np.ndarray:
    """Best rank-k approximation by singular value truncation."""
    m = numerics.as_matrix(a)
    if k > min(m.shape):
        raise ContractViolationError(f"k={k} exceeds min dimension {min(m.shape)}")
    res = numerics.svd(m)
    return (res.u[:, :k] * res.sigma[:k]) @ res.vt[:k, :]


def exact_lsq(a, b) -> np.ndarray:
    """Minimum-norm least-squares solution via the pseudo-inverse."""
    m = numerics.as_matrix(a)
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.shape[0] != m.shape[0]:
        raise ContractViolationError(
            f"rhs has {rhs.shape[0]} rows, expected {m.shape[0]}"
        )
    x, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    return x


def exact_product(a, b) -> np.ndarray:
    """Exact A.T @ B, the transposed-product convention of the multiply query."""
    ma = numerics.as_matrix(a, "a")
    mb = numerics.as_matrix(b, "b")
    if ma.shape[0] != mb.shape[0]:
        raise ContractViolationError(
            f"row counts differ: {ma.shape[0]} vs {mb.shape[0]}"
        )
    return ma.T @ mb


def two_pass_reference(a, omega, k: int) -> np.ndarray:
    """Two-pass randomized range-finder baseline for the non-private check.

    Sketches the range from a @ omega, then uses a second pass over ``a``
    to form the core matrix exactly, truncating to the top-k eigenpairs.
    """
    m = numerics.as_matrix(a)
    psi = numerics.orthonormal_range(m @ omega).basis
    core = psi.T @ m @ psi
    core = (core + core.T) / 2.0
    lam, ub = np.linalg.eigh(core)
    order = np.argsort(-np.abs(lam), kind="stable")[:k]
    uk = psi @ ub[:, order]
    out = (uk * lam[order]) @ uk.T
    return (out + out.T) / 2.0


# ---------------------------------------------------------------------------
# Random-matrix lemma verifiers


def mc_pseudoinverse_frobenius(
    k: int, p: int, trials: int, seed: int = 0, rel_tol: float = 0.05
) -> BoundReport:
    """Mean squared Frobenius norm of Gaussian pseudo-inverses vs k/(p-1).

    Samples k x (k+p) standard Gaussians; the trace identity gives
    E||pinv||_F^2 = k/(p-1) for that shape.
    """
    if p < 2:
        raise ParameterDomainError(f"oversampling must be >= 2, got {p}")
    rng = np.random.default_rng(seed)
    omegas = rng.standard_normal((trials, k, k + p))
    sv = np.linalg.svd(omegas, compute_uv=False)
    per_trial = np.sum(1.0 / sv**2, axis=1)
    expected = k / (p - 1.0)
    mean = float(per_trial.mean())
    ok = abs(mean - expected) <= rel_tol * expected
    return BoundReport(
        check="pseudoinverse_frobenius",
        trials=trials,
        violations=0 if ok else trials,
        allowed=rel_tol,
        passed=ok,
        seeds=[seed],
        observed_lhs=per_trial,
        bound_rhs=np.full(trials, expected),
    )


def mc_pseudoinverse_spectral(
    k: int, p: int, trials: int, seed: int = 0, bound_scale: float = 1.0
) -> BoundReport:
    """One-sided check: mean spectral norm of pseudo-inverses <= e sqrt(k+p)/p."""
    if p < 1:
        raise ParameterDomainError(f"oversampling must be >= 1, got {p}")
    rng = np.random.default_rng(seed)
    omegas = rng.standard_normal((trials, k, k + p))
    sv = np.linalg.svd(omegas, compute_uv=False)
    per_trial = 1.0 / sv[:, -1]
    bound = bound_scale * math.e * math.sqrt(k + p) / p
    mean = float(per_trial.mean())
    ok = mean <= bound
    return BoundReport(
        check="pseudoinverse_spectral",
        trials=trials,
        violations=0 if ok else trials,
        allowed=0.0,
        passed=ok,
        seeds=[seed],
        observed_lhs=per_trial,
        bound_rhs=np.full(trials, bound),
    )


def mc_jl(
    m_vectors: int,
    r: int,
    alpha: float,
    trials: int,
    dim: int = 32,
    seed: int = 0,
    bound_scale: float = 1.0,
) -> BoundReport:
    """Norm-preservation failure rate of fresh Gaussian projections.

    Counts how often ||omega x||^2 / r leaves (1 +- alpha) ||x||^2 over
    fresh draws, against the tail bound 2 exp(-alpha^2 r / 8).
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterDomainError(f"alpha must lie in (0, 1), got {alpha}")
    need = 4.0 / (alpha**2 / 2.0 - alpha**3 / 3.0) * math.log(max(m_vectors, 2))
    if r < need:
        raise ParameterDomainError(
            f"r={r} below the dimension requirement {need:.1f} for {m_vectors} vectors"
        )
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((dim, m_vectors))
    vecs /= np.linalg.norm(vecs, axis=0)
    violations = 0
    rates = np.empty(trials)
    for t in range(trials):
        omega = rng.standard_normal((r, dim))
        ratios = np.sum((omega @ vecs) ** 2, axis=0) / r
        bad = int(np.count_nonzero(np.abs(ratios - 1.0) > alpha))
        violations += bad
        rates[t] = bad / m_vectors
    total = trials * m_vectors
    nominal = bound_scale * 2.0 * math.exp(-(alpha**2) * r / 8.0)
    allowed = binomial_allowed(nominal, total)
    return BoundReport(
        check="jl_concentration",
        trials=total,
        violations=violations,
        allowed=allowed,
        passed=violations / total <= allowed,
        seeds=[seed],
        observed_lhs=rates,
        bound_rhs=np.full(trials, nominal),
    )


# ---------------------------------------------------------------------------
# Desk-scale differential-privacy check for the direct sketch generator


def dp_density_ratio_check(
    n: int,
    r: int,
    budget: guard.PrivacyBudget,
    samples: int,
    seed: int = 0,
    sigma_scale: float = 1.1,
    perturbation_scale: float = 1.0,
    enforce_guard: bool = True,
) -> BoundReport:
    """Per-row density-ratio test for the direct projection generator.

    Builds a neighboring pair (A, A - u e_i.T) with spectra at
    ``sigma_scale`` times the guard threshold, samples rows of the
    published sketch from N(0, A.T A), and counts how often the analytic
    log-density ratio against the neighbor exceeds the per-row loss
    eps0 = eps / sqrt(4 r ln(2/delta)). The tolerated frequency is
    delta0 = delta / (2r) plus Monte-Carlo slack. Dropping sigma_scale
    well below 1 must make this check fail (the guard is necessary);
    ``enforce_guard=False`` permits building such negative controls.
    """
    if n > 8:
        raise ParameterDomainError(f"density-ratio check is desk-scale only, n={n} > 8")
    threshold = guard.sigma_min_psg1(budget, r)
    rng = np.random.default_rng(seed)
    u_basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v_basis, _ = np.linalg.qr(rng.standard_normal((n, n)))
    sigmas = sigma_scale * threshold * rng.uniform(1.0, 1.5, size=n)
    a = (u_basis * sigmas) @ v_basis.T
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    col = int(rng.integers(0, n))
    perturb = np.zeros((n, n))
    perturb[:, col] = perturbation_scale * direction
    a_tilde = a - perturb
    if enforce_guard:
        for name, mat in (("A", a), ("A~", a_tilde)):
            observed = float(numerics.svd(mat).sigma[-1])
            if observed < threshold:
                raise ParameterDomainError(
                    f"{name} spectrum {observed:.4g} below guard threshold {threshold:.4g}"
                )
    eps0 = budget.eps / math.sqrt(4.0 * r * math.log(2.0 / budget.delta))
    delta0 = budget.delta / (2.0 * r)

    gram_a = a.T @ a
    gram_t = a_tilde.T @ a_tilde
    inv_a = np.linalg.inv(gram_a)
    inv_t = np.linalg.inv(gram_t)
    _, logdet_a = np.linalg.slogdet(gram_a)
    _, logdet_t = np.linalg.slogdet(gram_t)

    g = rng.standard_normal((samples, n))
    x = g @ a
    quad_a = np.einsum("ij,jk,ik->i", x, inv_a, x)
    quad_t = np.einsum("ij,jk,ik->i", x, inv_t, x)
    log_ratio = 0.5 * (logdet_t - logdet_a) + 0.5 * (quad_t - quad_a)
    violations = int(np.count_nonzero(np.abs(log_ratio) > eps0))
    allowed = binomial_allowed(delta0, samples)
    return BoundReport(
        check="dp_density_ratio_psg1",
        trials=samples,
        violations=violations,
        allowed=allowed,
        passed=violations / samples <= allowed,
        seeds=[seed],
        observed_lhs=np.abs(log_ratio),
        bound_rhs=np.full(samples, eps0),
    )


# ---------------------------------------------------------------------------
# Mechanism error-bound checks


def lra_frobenius_rhs(config: LraConfig, tail_sq: float) -> float:
    k, p = config.k, config.oversample
    b = config.budget
    return math.sqrt(1.0 + k / (p - 1.0)) * math.sqrt(tail_sq) + (
        2.0 * k / b.eps
    ) * math.sqrt((config.n + config.d) * math.log(k / b.delta) / p)


def lra_spectral_rhs(config: LraConfig, sigma_k1: float, tail_sq: float) -> float:
    k, p = config.k, config.oversample
    b = config.budget
    return (
        math.sqrt(1.0 + k / (p - 1.0)) * sigma_k1
        + math.e * math.sqrt((k + p) * tail_sq) / p
        + 2.0 * math.sqrt(k * (config.n + config.d) * math.log(k / b.delta)) / b.eps
    )


def _lra_trial(config: LraConfig, trial_seed: int, norm: str):
    rng = np.random.default_rng(trial_seed)
    if config.symmetric:
        g = rng.standard_normal((config.n, config.n))
        a = (g + g.T) / math.sqrt(2.0)
    else:
        a = rng.standard_normal((config.n, config.d))
    state = new_lra(replace(config, seed=trial_seed))
    for i in range(config.n):
        state.ingest_row(i, a[i, :])
    approx = reconstruct(state.finalize(), config)
    sigma = numerics.svd(a).sigma
    tail_sq = float(np.sum(sigma[config.k :] ** 2))
    if norm == "fro":
        lhs = float(np.linalg.norm(a - approx))
        rhs = lra_frobenius_rhs(config, tail_sq)
    else:
        lhs = numerics.spectral_norm(a - approx)
        sigma_k1 = float(sigma[config.k]) if config.k < sigma.size else 0.0
        rhs = lra_spectral_rhs(config, sigma_k1, tail_sq)
    return lhs, rhs


def bound_check_lra(
    config: LraConfig,
    trials: int,
    norm: str = "fro",
    base_seed: int = 0,
    rhs_scale: float = 1.0,
    allowed_rate: float = 0.10,
) -> BoundReport:
    """Run the low-rank mechanism against the error-bound right-hand side.

    ``rhs_scale`` exists for negative controls: shrinking the bound must
    make the check fail.
    """
    if norm not in ("fro", "spectral"):
        raise ParameterDomainError(f"norm must be 'fro' or 'spectral', got {norm!r}")
    seeds = [base_seed + t for t in range(trials)]
    results = _map_trials(lambda s: _lra_trial(config, s, norm), seeds)
    lhs = np.array([x[0] for x in results])
    rhs = np.array([x[1] for x in results]) * rhs_scale
    violations = int(np.count_nonzero(lhs > rhs))
    return BoundReport(
        check=f"lra_bound_{norm}",
        trials=trials,
        violations=violations,
        allowed=allowed_rate,
        passed=violations / trials <= allowed_rate,
        seeds=seeds,
        observed_lhs=lhs,
        bound_rhs=rhs,
    )


def nonprivate_sanity_check(
    n: int,
    k: int,
    trials: int,
    budget: guard.PrivacyBudget,
    base_seed: int = 0,
    ratio_bound: float = 1.5,
) -> BoundReport:
    """Range quality of the mechanism with the lift disabled (w = 0).

    With privacy off the streamed sketch is exactly the classical
    randomized range finder, so the residual ||A - Psi Psi^T A||_F must
    stay within ``ratio_bound`` of an independent two-pass prototype draw
    on every seed.
    """
    lhs = np.empty(trials)
    rhs = np.empty(trials)
    seeds = [base_seed + t for t in range(trials)]
    for t, s in enumerate(seeds):
        cfg = LraConfig(
            n=n, d=n, k=k, budget=budget, seed=s, symmetric=True,
            w_override=0.0, enforce_guard=False,
        )
        q, _ = np.linalg.qr(np.random.default_rng(7_000 + s).standard_normal((n, n)))
        decay = np.array([10.0 / (j + 1.0) ** 2 for j in range(n)])
        a = (q * decay) @ q.T
        state = new_lra(cfg)
        for i in range(n):
            state.ingest_row(i, a[i, :])
        psi = numerics.orthonormal_range(state.y1).basis
        lhs[t] = float(np.linalg.norm(a - psi @ (psi.T @ a)))
        omega = np.random.default_rng(9_000 + s).standard_normal((n, k + cfg.oversample))
        psi_ref = numerics.orthonormal_range(a @ omega).basis
        rhs[t] = ratio_bound * float(np.linalg.norm(a - psi_ref @ (psi_ref.T @ a)))
    violations = int(np.count_nonzero(lhs > rhs))
    return BoundReport(
        check="nonprivate_range_sanity",
        trials=trials,
        violations=violations,
        allowed=0.0,
        passed=violations == 0,
        seeds=seeds,
        observed_lhs=lhs,
        bound_rhs=rhs,
    )


def mc_unbiased_product(
    n: int,
    d1: int,
    d2: int,
    budget: guard.PrivacyBudget,
    acc: guard.AccuracySpec,
    trials: int,
    seed: int = 0,
) -> BoundReport:
    """Monte-Carlo unbiasedness of the product query over fresh sketchers.

    The entrywise mean of the estimate over independent projections must
    land within 3 standard errors of the exact product in every entry.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, d1))
    b = rng.standard_normal((n, d2))
    truth = exact_product(a, b)
    total = np.zeros((d1, d2))
    total_sq = np.zeros((d1, d2))
    for t in range(trials):
        state = new_matprod(n, d1, d2, budget, acc, seed=seed + 1 + t)
        for j in range(d1):
            state.ingest_a_column(j, a[:, j])
        for j in range(d2):
            state.ingest_b_column(j, b[:, j])
        estimate = state.product_query()
        total += estimate
        total_sq += estimate * estimate
    mean = total / trials
    stderr = np.sqrt(np.maximum(total_sq / trials - mean**2, 0.0) / trials)
    deviation = np.abs(mean - truth)
    band = 3.0 * stderr
    violations = int(np.count_nonzero(deviation > band))
    return BoundReport(
        check="matprod_unbiasedness",
        trials=trials,
        violations=violations,
        allowed=0.0,
        passed=violations == 0,
        seeds=[seed],
        observed_lhs=deviation.ravel(),
        bound_rhs=band.ravel(),
    )


def _matprod_trial(n, d1, d2, budget, acc, trial_seed):
    rng = np.random.default_rng(trial_seed)
    a = rng.standard_normal((n, d1))
    b = rng.standard_normal((n, d2))
    state = new_matprod(n, d1, d2, budget, acc, trial_seed)
    for j in range(d1):
        state.ingest_a_column(j, a[:, j])
    for j in range(d2):
        state.ingest_b_column(j, b[:, j])
    estimate = state.product_query()
    lhs = float(np.linalg.norm(exact_product(a, b) - estimate))
    rhs = acc.alpha * float(np.linalg.norm(a)) * float(
        np.linalg.norm(b)
    ) + state.s**2 * math.sqrt(n) * acc.alpha
    return lhs, rhs


def bound_check_matprod(
    n: int,
    d1: int,
    d2: int,
    budget: guard.PrivacyBudget,
    acc: guard.AccuracySpec,
    trials: int,
    base_seed: int = 0,
    rhs_scale: float = 1.0,
) -> BoundReport:
    """Multiply mechanism vs its multiplicative-plus-additive bound."""
    seeds = [base_seed + t for t in range(trials)]
    results = _map_trials(
        lambda s: _matprod_trial(n, d1, d2, budget, acc, s), seeds
    )
    lhs = np.array([x[0] for x in results])
    rhs = np.array([x[1] for x in results]) * rhs_scale
    violations = int(np.count_nonzero(lhs > rhs))
    allowed = binomial_allowed(acc.beta, trials)
    return BoundReport(
        check="matprod_bound",
        trials=trials,
        violations=violations,
        allowed=allowed,
        passed=violations / trials <= allowed,
        seeds=seeds,
        observed_lhs=lhs,
        bound_rhs=rhs,
    )


def _regress_trial(n, d, budget, acc, trial_seed):
    rng = np.random.default_rng(trial_seed)
    a = rng.standard_normal((n, d))
    x0 = rng.standard_normal(d)
    b = a @ x0 + rng.standard_normal(n)
    state = new_regress(n, d, budget, acc, trial_seed)
    for j in range(d):
        state.ingest_column(j, a[:, j])
    x = state.query(b)
    lhs = float(np.linalg.norm(a @ x - b))
    optimum = float(np.linalg.norm(a @ exact_lsq(a, b) - b))
    rhs = (1.0 + acc.alpha) * optimum + state.s**2 * math.sqrt(n) * acc.alpha
    return lhs, rhs


def bound_check_regress(
    n: int,
    d: int,
    budget: guard.PrivacyBudget,
    acc: guard.AccuracySpec,
    trials: int,
    base_seed: int = 0,
    rhs_scale: float = 1.0,
) -> BoundReport:
    """Regression mechanism vs its relative-plus-additive residual bound."""
    seeds = [base_seed + t for t in range(trials)]
    results = _map_trials(lambda s: _regress_trial(n, d, budget, acc, s), seeds)
    lhs = np.array([x[0] for x in results])
    rhs = np.array([x[1] for x in results]) * rhs_scale
    violations = int(np.count_nonzero(lhs > rhs))
    allowed = binomial_allowed(acc.beta, trials)
    return BoundReport(
        check="regress_bound",
        trials=trials,
        violations=violations,
        allowed=allowed,
        passed=violations / trials <= allowed,
        seeds=seeds,
        observed_lhs=lhs,
        bound_rhs=rhs,
    )
