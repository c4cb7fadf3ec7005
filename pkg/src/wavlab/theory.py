"""Monte Carlo validation of the linear-Gaussian forward/inverse risk gap.

Two whitened regressions share dimensions and noise scales: the forward
problem maps [s; a] in R^(d_s+d_a) to the next state, the inverse problem
maps [z; z'] in R^(2 d_z) to the action. Both are fit by OLS on n samples,
and both are scored in state space: the forward excess risk directly, the
inverse one after mapping the action error through B. The known results
under isotropic Gaussian design:

- scalar OLS excess risk equals nu^2 * D / (n - D - 1),
- expected forward risk equals sigma_s^2 (d_s + d_a) / (n - (d_s+d_a) - 1)
  exactly,
- expected inverse risk is at most
  lambda^2 (d_a / d_s) sigma_a^2 * 2 d_z / (n - 2 d_z - 1),
- and their ratio is lower-bounded by the product of a dimensionality, a
  stochasticity, and a sample-size factor.

The two problems are generated as independent whitened regressions, which
is the regime the closed forms describe; a coupled mode simulates the joint
system instead and reports how far the inverse design then is from white.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, RankDeficientError, TheoryInvariantError

__all__ = [
    "LinearGaussianSpec",
    "LemmaResult",
    "GapReport",
    "sample_forward_problem",
    "sample_inverse_problem",
    "ols_fit",
    "lemma_excess_risk",
    "gamma_factors",
    "measure_gap",
    "sweep_gap",
    "coupled_inverse_whiteness",
]

MAX_CONDITION = 1e8


@dataclass(frozen=True)
class LinearGaussianSpec:
    """Dimensions, maps, and noise scales of the paired regressions."""

    d_s: int
    d_a: int
    d_z: int
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    H: np.ndarray
    sigma_s: float
    sigma_a: float

    def __post_init__(self):
        if self.d_z > self.d_s:
            raise ConfigError("d_z must not exceed d_s")
        if self.sigma_s <= 0 or self.sigma_a <= 0:
            raise ConfigError("noise scales must be positive")
        expected = {
            "A": (self.d_s, self.d_s),
            "B": (self.d_s, self.d_a),
            "M": (self.d_z, self.d_s),
            "H": (self.d_a, 2 * self.d_z),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"{name} must have shape {shape}")

    @property
    def lam(self) -> float:
        """Operator norm of B, recomputed on demand."""
        return float(np.linalg.norm(self.B, 2))

    @classmethod
    def default(
        cls,
        d_s: int,
        d_a: int,
        d_z: int,
        sigma_s: float,
        sigma_a: float,
        lam: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ) -> "LinearGaussianSpec":
        """A and H iid N(0,1)/sqrt(dim); B = lam * first-d_a identity columns;
        M selects the first d_z coordinates."""
        rng = rng if rng is not None else np.random.default_rng(0)
        A = rng.normal(size=(d_s, d_s)) / np.sqrt(d_s)
        B = lam * np.eye(d_s, d_a)
        M = np.eye(d_z, d_s)
        H = rng.normal(size=(d_a, 2 * d_z)) / np.sqrt(2 * d_z)
        return cls(d_s=d_s, d_a=d_a, d_z=d_z, A=A, B=B, M=M, H=H,
                   sigma_s=sigma_s, sigma_a=sigma_a)


def sample_forward_problem(spec: LinearGaussianSpec, n: int, rng: np.random.Generator):
    """Whitened forward regression: X iid N(0,I), Y = X [A B]^T + noise."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    W = np.concatenate([spec.A, spec.B], axis=1)  # d_s x (d_s + d_a)
    X = rng.normal(size=(n, spec.d_s + spec.d_a))
    Y = X @ W.T + spec.sigma_s * rng.normal(size=(n, spec.d_s))
    return X, Y, W


def sample_inverse_problem(spec: LinearGaussianSpec, n: int, rng: np.random.Generator):
    """Whitened inverse regression: X iid N(0,I), Y = X H^T + noise."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    X = rng.normal(size=(n, 2 * spec.d_z))
    Y = X @ spec.H.T + spec.sigma_a * rng.normal(size=(n, spec.d_a))
    return X, Y, spec.H


def ols_fit(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Exact normal-equations least squares; rejects ill-posed designs.

    Returns W of shape (D, q) with Y ~ X @ W. No silent pseudo-inverse:
    n < D or condition number above 1e8 raises RankDeficientError.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, D = X.shape
    if n < D:
        raise RankDeficientError(f"{n} samples cannot determine {D} coefficients")
    G = X.T @ X
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankDeficientError(
            f"normal equations condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}"
        )
    return np.linalg.solve(G, X.T @ Y)


@dataclass(frozen=True)
class LemmaResult:
    D: int
    n: int
    nu: float
    trials: int
    empirical: float
    theoretical: float
    rel_err: float


def lemma_excess_risk(
    D: int, n: int, nu: float, trials: int, rng: np.random.Generator
) -> LemmaResult:
    """Monte Carlo check of the scalar OLS excess risk nu^2 D / (n - D - 1).

    With isotropic inputs the excess risk of one fit is exactly
    ||w_hat - w*||^2, so the empirical value is its mean over trials.
    """
    if n <= D + 1:
        raise ConfigError(f"need n > D + 1, got n={n}, D={D}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    total = 0.0
    for _ in range(trials):
        w_star = rng.normal(size=(D, 1))
        X = rng.normal(size=(n, D))
        y = X @ w_star + nu * rng.normal(size=(n, 1))
        w_hat = ols_fit(X, y)
        total += float(np.sum((w_hat - w_star) ** 2))
    empirical = total / trials
    theoretical = nu * nu * D / (n - D - 1)
    rel = abs(empirical - theoretical) / theoretical if theoretical > 0 else abs(empirical)
    return LemmaResult(
        D=D, n=n, nu=nu, trials=trials,
        empirical=empirical, theoretical=theoretical, rel_err=rel,
    )


@dataclass(frozen=True)
class GapReport:
    """Empirical against closed-form risks, plus the factored ratio bound."""

    d_s: int
    d_a: int
    d_z: int
    sigma_s: float
    sigma_a: float
    lam: float
    n: int
    trials: int
    emp_EF: float
    theo_EF: float
    emp_EI: float
    theo_EI_bound: float
    emp_ratio: float
    gamma_bound: float
    factor_dim: float
    factor_stoch: float
    factor_sample: float
    rel_err_EF: float
    se_EF: float
    se_EI: float


def gamma_factors(spec: LinearGaussianSpec, n: int) -> tuple[float, float, float]:
    """(dimensionality, stochasticity, sample-size) factors of the ratio bound."""
    d_fwd = spec.d_s + spec.d_a
    if n <= d_fwd + 1:
        raise ConfigError(f"need n > d_s + d_a + 1 = {d_fwd + 1}, got n={n}")
    if n <= 2 * spec.d_z + 1:
        raise ConfigError(f"need n > 2 d_z + 1 = {2 * spec.d_z + 1}, got n={n}")
    dim = (d_fwd / (2 * spec.d_z)) * (spec.d_s / spec.d_a)
    stoch = (spec.sigma_s / (spec.lam * spec.sigma_a)) ** 2
    sample = (n - 2 * spec.d_z - 1) / (n - d_fwd - 1)
    return dim, stoch, sample


def measure_gap(
    spec: LinearGaussianSpec, n: int, trials: int, rng: np.random.Generator
) -> GapReport:
    """Fit both regressions `trials` times and compare to the closed forms.

    Forward risk per trial is ||W_hat - W||_F^2 / d_s (isotropic inputs);
    inverse risk maps the coefficient error through B before the same norm.
    """
    factor_dim, factor_stoch, factor_sample = gamma_factors(spec, n)
    ef = np.empty(trials)
    ei = np.empty(trials)
    for t in range(trials):
        Xf, Yf, Wf = sample_forward_problem(spec, n, rng)
        Wf_hat = ols_fit(Xf, Yf)
        ef[t] = np.sum((Wf_hat.T - Wf) ** 2) / spec.d_s
        Xi, Yi, Hi = sample_inverse_problem(spec, n, rng)
        Hi_hat = ols_fit(Xi, Yi)
        ei[t] = np.sum((spec.B @ (Hi_hat.T - Hi)) ** 2) / spec.d_s
    d_fwd = spec.d_s + spec.d_a
    theo_ef = spec.sigma_s**2 * d_fwd / (n - d_fwd - 1)
    theo_ei = (
        spec.lam**2 * (spec.d_a / spec.d_s) * spec.sigma_a**2
        * (2 * spec.d_z) / (n - 2 * spec.d_z - 1)
    )
    emp_ef = float(ef.mean())
    emp_ei = float(ei.mean())
    return GapReport(
        d_s=spec.d_s, d_a=spec.d_a, d_z=spec.d_z,
        sigma_s=spec.sigma_s, sigma_a=spec.sigma_a, lam=spec.lam,
        n=n, trials=trials,
        emp_EF=emp_ef, theo_EF=theo_ef,
        emp_EI=emp_ei, theo_EI_bound=theo_ei,
        emp_ratio=emp_ef / emp_ei,
        gamma_bound=factor_dim * factor_stoch * factor_sample,
        factor_dim=factor_dim, factor_stoch=factor_stoch, factor_sample=factor_sample,
        rel_err_EF=abs(emp_ef - theo_ef) / theo_ef,
        se_EF=float(ef.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("inf"),
        se_EI=float(ei.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("inf"),
    )


def _check_bound_direction(report: GapReport) -> None:
    if report.emp_EI > report.theo_EI_bound + 2 * report.se_EI:
        raise TheoryInvariantError(
            f"inverse risk {report.emp_EI:.6g} exceeds its bound "
            f"{report.theo_EI_bound:.6g} by more than 2 standard errors "
            f"(se={report.se_EI:.3g}) at d_s={report.d_s}, n={report.n}"
        )


def sweep_gap(
    spec_grid: Sequence[LinearGaussianSpec],
    n_grid: Sequence[int],
    trials: int,
    rng: np.random.Generator,
    check: bool = True,
) -> list[GapReport]:
    """Cartesian sweep over specs and sample sizes.

    With ``check`` on, verifies in-process that the bound moves the right
    way along each swept axis (up in the dimensionality and stochasticity
    factors, down in n) and that the empirical ratio clears the bound up to
    twice its Monte Carlo standard error.
    """
    reports = [
        measure_gap(spec, n, trials, rng) for spec in spec_grid for n in n_grid
    ]
    if check:
        for r in reports:
            _check_bound_direction(r)
            ratio_se = r.emp_ratio * (r.se_EF / r.emp_EF + r.se_EI / r.emp_EI)
            if r.emp_ratio < r.gamma_bound - 2 * ratio_se:
                raise TheoryInvariantError(
                    f"empirical ratio {r.emp_ratio:.4g} falls short of the bound "
                    f"{r.gamma_bound:.4g} at d_s={r.d_s}, n={r.n}"
                )
        _check_bound_monotonicity(reports)
    return reports


def _check_bound_monotonicity(reports: Sequence[GapReport]) -> None:
    """Bound must rise with d_s and with (sigma_s/sigma_a)^2, and fall with n."""

    def groups(key_fn, axis_fn):
        grouped: dict[tuple, list[GapReport]] = {}
        for r in reports:
            grouped.setdefault(key_fn(r), []).append(r)
        for group in grouped.values():
            group.sort(key=axis_fn)
            yield [(axis_fn(r), r.gamma_bound) for r in group]

    axes = (
        ("d_s", lambda r: (r.d_a, r.d_z, r.sigma_s, r.sigma_a, r.lam, r.n),
         lambda r: r.d_s, +1),
        ("noise ratio", lambda r: (r.d_s, r.d_a, r.d_z, r.lam, r.n),
         lambda r: r.sigma_s / r.sigma_a, +1),
        ("n", lambda r: (r.d_s, r.d_a, r.d_z, r.sigma_s, r.sigma_a, r.lam),
         lambda r: r.n, -1),
    )
    for name, key_fn, axis_fn, sense in axes:
        for series in groups(key_fn, axis_fn):
            for (x0, b0), (x1, b1) in zip(series, series[1:]):
                if x0 == x1:
                    continue
                if sense * (b1 - b0) <= 0:
                    raise TheoryInvariantError(
                        f"bound is not {'increasing' if sense > 0 else 'decreasing'} "
                        f"in {name}: {b0:.6g} at {x0} vs {b1:.6g} at {x1}"
                    )


def coupled_inverse_whiteness(
    spec: LinearGaussianSpec, n: int, rng: np.random.Generator
) -> float:
    """Max absolute deviation of cov([z; z']) from identity under the joint system.

    Simulates s ~ N(0, I), a ~ N(0, I), s' = A s + B a + noise, z = M s,
    z' = M s'. The whitened analysis does not describe this coupled design;
    the returned deviation quantifies the difference.
    """
    s = rng.normal(size=(n, spec.d_s))
    a = rng.normal(size=(n, spec.d_a))
    s_next = s @ spec.A.T + a @ spec.B.T + spec.sigma_s * rng.normal(size=(n, spec.d_s))
    Xi = np.concatenate([s @ spec.M.T, s_next @ spec.M.T], axis=1)
    cov = Xi.T @ Xi / n
    return float(np.max(np.abs(cov - np.eye(2 * spec.d_z))))
