"""Reaction nonlinearities ``f`` (interior) and ``g`` (hole boundary) with their growth constants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Fn = Callable[[np.ndarray], np.ndarray]


class AssumptionError(ValueError):
    """A nonlinearity violates its declared growth or one-sided Lipschitz bounds."""


@dataclass(frozen=True)
class Reaction:
    """One scalar reaction term with exponent and antiderivative."""

    name: str
    fn: Fn
    antiderivative: Fn
    exponent: float
    alpha1: float
    alpha2: float
    beta: float
    lower_lipschitz: float
    """``l`` in ``(fn(s) - fn(r))(s - r) >= -l (s - r)^2``."""
    upper_lipschitz: float | None = None
    """``l`` in ``(fn(s) - fn(r))(s - r) <= l (s - r)^2`` when such a bound holds."""
    admissible: bool = True

    def __call__(self, s):
        return self.fn(s)


@dataclass(frozen=True)
class Nonlinearity:
    f: Reaction
    g: Reaction

    @property
    def p(self) -> float:
        return self.f.exponent

    @property
    def q(self) -> float:
        return self.g.exponent

    @property
    def alpha1(self) -> float:
        return min(self.f.alpha1, self.g.alpha1)

    @property
    def alpha2(self) -> float:
        return max(self.f.alpha2, self.g.alpha2)

    @property
    def beta(self) -> float:
        return max(self.f.beta, self.g.beta)

    @property
    def l(self) -> float:  # noqa: E743
        return max(self.f.lower_lipschitz, self.g.lower_lipschitz)

    def validate(self, span: float = 10.0, step: float = 0.01) -> None:
        """Check growth, one-sided Lipschitz and antiderivative consistency by dense sampling."""
        for term, label in ((self.f, "f"), (self.g, "g")):
            check_reaction(term, label, span, step)


def check_reaction(term: Reaction, label: str = "f", span: float = 10.0, step: float = 0.01) -> None:
    if not term.admissible:
        raise AssumptionError(f"{label}={term.name} does not satisfy the growth bounds")
    if term.exponent < 2:
        raise AssumptionError(f"{label}: exponent must be >= 2")
    if min(term.alpha1, term.alpha2, term.beta, term.lower_lipschitz) <= 0:
        raise AssumptionError(f"{label}: constants alpha1, alpha2, beta, l must be positive")
    n = int(round(2 * span / step)) + 1
    s = np.linspace(-span, span, n)
    fs = term.fn(s)
    prod = fs * s
    power = np.abs(s) ** term.exponent
    tol = 1e-9 * (1 + power)
    if np.any(prod < term.alpha1 * power - term.beta - tol):
        raise AssumptionError(f"{label}: lower growth bound violated")
    if np.any(prod > term.alpha2 * power + term.beta + tol):
        raise AssumptionError(f"{label}: upper growth bound violated")
    # pairwise one-sided bounds, in row blocks to bound memory
    block = 256
    for i0 in range(0, n, block):
        ds = s[i0 : i0 + block, None] - s[None, :]
        df = fs[i0 : i0 + block, None] - fs[None, :]
        lhs = df * ds
        slack = 1e-9 * (1 + np.abs(lhs))
        if np.any(lhs < -term.lower_lipschitz * ds**2 - slack):
            raise AssumptionError(f"{label}: one-sided lower Lipschitz bound violated")
        if term.upper_lipschitz is not None and np.any(lhs > term.upper_lipschitz * ds**2 + slack):
            raise AssumptionError(f"{label}: upper Lipschitz bound violated")
    if abs(float(term.antiderivative(np.array([0.0]))[0])) > 1e-14:
        raise AssumptionError(f"{label}: antiderivative must vanish at 0")
    h = 1e-5
    fd = (term.antiderivative(s + h) - term.antiderivative(s - h)) / (2 * h)
    if np.any(np.abs(fd - fs) > 1e-5 * (1 + np.abs(fs))):
        raise AssumptionError(f"{label}: antiderivative does not match by finite differences")


def power(p: float) -> Reaction:
    """``s |s|^(p-2)``: monotone, so any positive ``l`` works."""
    if p == 2:
        return Reaction("linear", lambda s: 1.0 * np.asarray(s, dtype=float),
                        lambda s: 0.5 * np.asarray(s, dtype=float) ** 2,
                        2.0, 1.0, 1.0, 1.0, 1.0, upper_lipschitz=1.0)
    return Reaction(
        f"power{p:g}",
        lambda s: np.asarray(s, dtype=float) * np.abs(s) ** (p - 2),
        lambda s: np.abs(s) ** p / p,
        float(p), 1.0, 1.0, 1.0, 1.0,
    )


def linear_tanh() -> Reaction:
    """``s + tanh(s)``; quadratic growth with ``s tanh(s) <= |s| <= s^2 + 1/4``."""
    return Reaction(
        "linear_tanh",
        lambda s: np.asarray(s, dtype=float) + np.tanh(s),
        lambda s: 0.5 * np.asarray(s, dtype=float) ** 2 + np.logaddexp(s, -s) - np.log(2.0),
        2.0, 1.0, 2.0, 0.25, 2.0, upper_lipschitz=2.0,
    )


def zero() -> Reaction:
    """The trivial reaction; fails the lower growth bound, used for linear checks only."""
    return Reaction("zero", lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                    lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                    2.0, 1.0, 1.0, 1.0, 1.0, upper_lipschitz=1.0, admissible=False)


CATALOG: dict[str, Callable[[], Reaction]] = {
    "linear": lambda: power(2),
    "cubic": lambda: power(4),
    "linear_tanh": linear_tanh,
    "zero": zero,
}


def reaction(name: str, exponent: float | None = None) -> Reaction:
    """Look up a catalog entry; ``power`` needs an ``exponent``."""
    if name == "power":
        if exponent is None:
            raise KeyError("power reaction needs an exponent")
        return power(exponent)
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown nonlinearity {name!r}; known: power, {', '.join(CATALOG)}") from None
