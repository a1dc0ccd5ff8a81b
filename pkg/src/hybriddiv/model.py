"""Model parameters, validation and the threshold dividend policy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    AssumptionHViolated,
    NonPositiveParameter,
    ParameterError,
    RegimeCountUnsupported,
)


@dataclass(frozen=True)
class RegimeParams:
    mu: float
    sigma: float
    lambda_out: float


@dataclass(frozen=True)
class ModelParams:
    """Market and contract scalars for the regime-modulated surplus.

    ``jump_probs[i][j]`` is the probability that a switch out of regime ``i``
    lands in ``j``. It is only needed for three or more regimes; with two
    regimes every switch goes to the other one.
    """

    regimes: tuple[RegimeParams, ...]
    delta: float
    rate_cap: float
    fixed_cost: float
    jump_probs: tuple[tuple[float, ...], ...] | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "regimes", tuple(self.regimes))
        if self.jump_probs is not None:
            object.__setattr__(
                self, "jump_probs", tuple(tuple(float(p) for p in row) for row in self.jump_probs)
            )

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def mu(self) -> np.ndarray:
        return np.array([r.mu for r in self.regimes])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([r.sigma for r in self.regimes])

    @property
    def lam(self) -> np.ndarray:
        return np.array([r.lambda_out for r in self.regimes])

    @property
    def mu_max(self) -> float:
        return max(r.mu for r in self.regimes)

    @property
    def mu_min(self) -> float:
        return min(r.mu for r in self.regimes)

    def transition_matrix(self) -> np.ndarray:
        """Row-stochastic jump matrix of the embedded chain (zero diagonal)."""
        n = self.n_regimes
        if self.jump_probs is not None:
            return np.array(self.jump_probs, dtype=float)
        p = np.full((n, n), 1.0 / (n - 1))
        np.fill_diagonal(p, 0.0)
        return p

    def generator(self) -> np.ndarray:
        """Intensity matrix Q with Q[i, i] = -lambda_i."""
        q = self.lam[:, None] * self.transition_matrix()
        np.fill_diagonal(q, -self.lam)
        return q

    def upper_bound(self, x):
        """Value upper bound x + mu*/delta + L/delta (unit marginal utility)."""
        return np.asarray(x, dtype=float) + (self.mu_max + self.rate_cap) / self.delta

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "mu": [r.mu for r in self.regimes],
            "sigma": [r.sigma for r in self.regimes],
            "lambda": [r.lambda_out for r in self.regimes],
            "delta": self.delta,
            "rate_cap": self.rate_cap,
            "fixed_cost": self.fixed_cost,
        }
        if self.jump_probs is not None:
            out["jump_probs"] = [list(row) for row in self.jump_probs]
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ModelParams":
        try:
            mu, sigma, lam = doc["mu"], doc["sigma"], doc["lambda"]
            if not (len(mu) == len(sigma) == len(lam)):
                raise ParameterError("mu, sigma and lambda must have the same length")
            regimes = tuple(
                RegimeParams(float(m), float(s), float(l)) for m, s, l in zip(mu, sigma, lam)
            )
            return cls(
                regimes=regimes,
                delta=float(doc["delta"]),
                rate_cap=float(doc["rate_cap"]),
                fixed_cost=float(doc["fixed_cost"]),
                jump_probs=doc.get("jump_probs"),
            )
        except KeyError as exc:
            raise ParameterError(f"missing model key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"malformed model block: {exc}") from None


def make_params(
    mu: Sequence[float],
    sigma: Sequence[float],
    lam: Sequence[float],
    delta: float,
    rate_cap: float,
    fixed_cost: float,
) -> ModelParams:
    return ModelParams(
        regimes=tuple(RegimeParams(float(m), float(s), float(l)) for m, s, l in zip(mu, sigma, lam)),
        delta=float(delta),
        rate_cap=float(rate_cap),
        fixed_cost=float(fixed_cost),
    )


def validate(params: ModelParams, *, analytic: bool = False) -> ModelParams:
    """Return ``params`` unchanged if every invariant holds, else raise.

    With ``analytic=True`` the two-regime restriction of the closed-form
    solver is enforced as well.
    """
    n = params.n_regimes
    if n < 2:
        raise RegimeCountUnsupported(f"need at least 2 regimes, got {n}")
    if analytic and n != 2:
        raise RegimeCountUnsupported(f"the analytic solver handles exactly 2 regimes, got {n}")
    for k, r in enumerate(params.regimes, start=1):
        for name in ("mu", "sigma", "lambda_out"):
            value = getattr(r, name)
            if not math.isfinite(value) or value <= 0.0:
                raise NonPositiveParameter(f"regime {k}: {name} must be positive, got {value}")
    for name in ("delta", "fixed_cost"):
        value = getattr(params, name)
        if not math.isfinite(value) or value <= 0.0:
            raise NonPositiveParameter(f"{name} must be positive, got {value}")
    if not math.isfinite(params.rate_cap) or params.rate_cap < 0.0:
        raise NonPositiveParameter(f"rate_cap must be non-negative, got {params.rate_cap}")
    if params.rate_cap >= params.mu_min:
        raise AssumptionHViolated(
            f"assumption (H) requires rate_cap < min mu: {params.rate_cap} >= {params.mu_min}"
        )
    if params.jump_probs is not None:
        p = np.asarray(params.jump_probs, dtype=float)
        if p.shape != (n, n) or np.any(p < 0) or np.any(np.abs(np.diag(p)) > 0):
            raise ParameterError("jump_probs must be an n x n non-negative matrix with zero diagonal")
        if not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ParameterError("jump_probs rows must sum to 1")
    return params


def swap_regimes(params: ModelParams) -> ModelParams:
    """Exchange the labels of regimes 1 and 2."""
    if params.n_regimes != 2:
        raise RegimeCountUnsupported("regime relabeling is defined for exactly 2 regimes")
    r1, r2 = params.regimes
    return replace(params, regimes=(r2, r1), jump_probs=None)


@dataclass(frozen=True)
class DividendPolicy:
    """Band policy per regime: rate on [0, b), rate on [b, B), impulse to b above B.

    The standard QVI policy pays 0 below ``lower`` and ``rate_cap`` between the
    thresholds. ``rate_low``/``rate_high`` exist so perturbed (e.g. band-swapped)
    policies can be simulated with the same machinery.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    rate_low: tuple[float, ...]
    rate_high: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("lower", "upper", "rate_low", "rate_high"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        n = len(self.lower)
        if not (len(self.upper) == len(self.rate_low) == len(self.rate_high) == n):
            raise ParameterError("policy fields must have one entry per regime")
        for b, B in zip(self.lower, self.upper):
            if not (0.0 <= b < B):
                raise ParameterError(f"policy thresholds need 0 <= b < B, got b={b}, B={B}")

    @classmethod
    def threshold(cls, lower, upper, rate_cap: float) -> "DividendPolicy":
        n = len(lower)
        return cls(tuple(lower), tuple(upper), (0.0,) * n, (float(rate_cap),) * n)

    @property
    def n_regimes(self) -> int:
        return len(self.lower)

    def rate(self, x: float, i: int) -> float:
        """Continuous payout rate at surplus ``x`` in regime ``i`` (0-based)."""
        if x < self.lower[i]:
            return self.rate_low[i]
        return self.rate_high[i]

    def impulse(self, x: float, i: int) -> float:
        """Lump payout triggered at ``x`` (0 below the upper threshold)."""
        if x >= self.upper[i]:
            return x - self.lower[i]
        return 0.0

    def check_rates(self, rate_cap: float) -> None:
        for r in self.rate_low + self.rate_high:
            if r not in (0.0, rate_cap):
                raise ParameterError(f"rates must be 0 or the cap {rate_cap}, got {r}")

    def swapped(self) -> "DividendPolicy":
        if self.n_regimes != 2:
            raise RegimeCountUnsupported("policy relabeling is defined for exactly 2 regimes")
        rev = lambda t: (t[1], t[0])  # noqa: E731
        return DividendPolicy(rev(self.lower), rev(self.upper), rev(self.rate_low), rev(self.rate_high))

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "rate_low": list(self.rate_low),
            "rate_high": list(self.rate_high),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DividendPolicy":
        return cls(
            tuple(doc["lower"]), tuple(doc["upper"]), tuple(doc["rate_low"]), tuple(doc["rate_high"])
        )
