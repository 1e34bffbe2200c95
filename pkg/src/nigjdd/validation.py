"""Closed-form loss terms checked against Monte Carlo estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nig import NigField, expectation_term, kl_nig, mc_expectation_oracle, mc_kl_oracle


def random_field(rng) -> NigField:
    """One scalar NIG parameter set from a moderate range.

    ``alpha >= 2`` keeps the sampled log-ratios light-tailed enough for the
    sample standard error to be a fair yardstick.
    """
    return NigField(
        mean=rng.uniform(-1.0, 1.0),
        lam=float(np.exp(rng.uniform(np.log(0.2), np.log(20.0)))),
        alpha=rng.uniform(2.0, 12.0),
        beta=float(np.exp(rng.uniform(np.log(0.05), np.log(5.0)))),
    )


@dataclass
class OracleRow:
    index: int
    term: str
    closed_form: float
    estimate: float
    stderr: float

    @property
    def z(self) -> float:
        return (self.closed_form - self.estimate) / self.stderr


def check_kl(n: int, samples: int, seed: int) -> list:
    rng = np.random.default_rng([seed, 0])
    rows = []
    for i in range(n):
        q, p = random_field(rng), random_field(rng)
        est, se = mc_kl_oracle(q, p, samples, [seed, 1, i])
        rows.append(OracleRow(i, "kl", float(kl_nig(q, p)), est, se))
    return rows


def check_expectation(n: int, samples: int, seed: int, variant: str = "derivation_consistent") -> list:
    rng = np.random.default_rng([seed, 2])
    rows = []
    for i in range(n):
        q = random_field(rng)
        x = q.mean + rng.normal(0.0, 0.5)
        est, se = mc_expectation_oracle(q, x, samples, [seed, 3, i])
        rows.append(OracleRow(i, f"expectation[{variant}]", float(expectation_term(q, x, variant)), est, se))
    return rows


def literal_gap(samples: int, seed: int, lam=1.0, alpha=3.0, beta=0.5):
    """Difference between the literal expectation term and a sampled one at ``x = mean``.

    Returns ``(gap, stderr)``. For the default point the two closed forms
    differ by ``beta / (2 lam^2 (alpha - 1)) - 1 / (2 lam) = -0.375``, so the
    literal form overstates the log-likelihood by 0.375 nats.
    """
    q = NigField(0.0, lam, alpha, beta)
    est, se = mc_expectation_oracle(q, 0.0, samples, seed)
    return float(expectation_term(q, 0.0, "paper_literal")) - est, se


def oracle_suite(n: int, samples: int, seed: int, threshold: float = 3.0) -> dict:
    rows = check_kl(n, samples, seed) + check_expectation(n, samples, seed)
    gap, gap_se = literal_gap(samples, seed)
    worst = max(rows, key=lambda r: abs(r.z))
    failures = [r for r in rows if abs(r.z) > threshold]
    return {
        "rows": rows,
        "failures": failures,
        "worst": worst,
        "literal_gap": gap,
        "literal_gap_stderr": gap_se,
        "passed": not failures,
    }
