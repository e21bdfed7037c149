"""Scaling parameters (eps, delta, lambda), their ratios and limit kinds."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from ..errors import RegimeMismatch, ValidationError


@dataclass(frozen=True)
class ExtReal:
    """A value in [0, inf]; arithmetic is deliberately unsupported."""

    value: float = 0.0
    infinite: bool = False

    def __post_init__(self):
        if self.infinite:
            object.__setattr__(self, "value", math.inf)
        elif not (math.isfinite(self.value) and self.value >= 0.0):
            raise ValueError(f"finite extended real must be a non-negative number, got {self.value}")

    @classmethod
    def inf(cls) -> "ExtReal":
        return cls(infinite=True)

    @classmethod
    def of(cls, v) -> "ExtReal":
        if isinstance(v, ExtReal):
            return v
        if isinstance(v, str):
            if v.strip().lower() in ("inf", "infinity", "+inf"):
                return cls.inf()
            v = float(v)
        if math.isinf(v):
            return cls.inf()
        return cls(float(v))

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    @property
    def is_zero(self) -> bool:
        return not self.infinite and self.value == 0.0

    def finite(self, what: str = "ratio") -> float:
        """The float value; raises if infinite so callers cannot mix in inf by accident."""
        if self.infinite:
            raise RegimeMismatch(f"{what} is infinite here")
        return self.value

    def _refuse(self, *_):
        raise TypeError("arithmetic on ExtReal is not allowed; dispatch on is_finite first")

    __add__ = __radd__ = __sub__ = __rsub__ = __mul__ = __rmul__ = _refuse
    __truediv__ = __rtruediv__ = __neg__ = __float__ = _refuse

    def __str__(self):
        return "inf" if self.infinite else repr(self.value)

    def to_json(self):
        return "inf" if self.infinite else self.value


@dataclass(frozen=True)
class ScalingRegime:
    """Membrane spacing eps, permeability scale delta and stickiness scale lambda."""

    epsilon: float
    delta: float
    lam: float

    def __post_init__(self):
        for name in ("epsilon", "delta", "lam"):
            v = getattr(self, name)
            lo_ok = v >= 0.0 if name == "lam" else v > 0.0
            if not (lo_ok and v <= 1.0):
                raise ValidationError("regime-range", f"{name} = {v} outside its range")

    @property
    def p_ratio(self) -> float:
        return self.delta / self.epsilon

    @property
    def q_ratio(self) -> float:
        return self.lam / self.epsilon

    @property
    def r_ratio(self) -> float:
        return self.lam / self.delta

    def check_permeability(self, beta_sup: float) -> None:
        if self.delta * beta_sup >= 1.0:
            raise ValidationError("delta-beta", f"delta*|beta| = {self.delta * beta_sup:g} must stay below 1")

    def describe(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta, "lambda": self.lam}


@dataclass(frozen=True)
class PowerLaw:
    """Coupling param = coef * eps**power, as used along an eps ladder."""

    coef: float = 1.0
    power: float = 1.0

    def __call__(self, eps: float) -> float:
        return self.coef * eps ** self.power

    def ratio_limit(self) -> ExtReal:
        """Limit of param/eps as eps -> 0."""
        if self.coef == 0.0:
            return ExtReal(0.0)
        if self.power == 1.0:
            return ExtReal(self.coef)
        return ExtReal.inf() if self.power < 1.0 else ExtReal(0.0)


@dataclass(frozen=True)
class Coupling:
    """Rules producing (delta, lambda) from eps."""

    delta: PowerLaw = PowerLaw()
    lam: PowerLaw = PowerLaw(0.0, 1.0)

    def regime(self, eps: float) -> ScalingRegime:
        return ScalingRegime(eps, self.delta(eps), self.lam(eps))

    @property
    def p_limit(self) -> ExtReal:
        return self.delta.ratio_limit()

    @property
    def q_limit(self) -> ExtReal:
        return self.lam.ratio_limit()

    @property
    def r_limit(self) -> ExtReal:
        if self.lam.coef == 0.0:
            return ExtReal(0.0)
        if self.delta.power == self.lam.power:
            return ExtReal(self.lam.coef / self.delta.coef)
        return ExtReal.inf() if self.lam.power < self.delta.power else ExtReal(0.0)


class LimitKind(enum.Enum):
    HOMOGENIZED_SDE = "homogenized-sde"
    STICKY_SDE = "sticky-sde"
    LIMIT_A_FUNCTIONAL = "limit-a"
    DEGENERATE_ODE = "degenerate-ode"
    STICKY_ODE = "sticky-ode"


@dataclass(frozen=True, eq=False)
class LimitSpec:
    """Coefficients plus the limiting ratios selecting which limit equation applies."""

    field: object
    density: object
    p_limit: ExtReal
    q_limit: ExtReal
    r_limit: ExtReal
    kind: LimitKind

    def __post_init__(self):
        k = self.kind
        if k in (LimitKind.HOMOGENIZED_SDE, LimitKind.LIMIT_A_FUNCTIONAL) and not self.p_limit.is_finite:
            raise RegimeMismatch("the homogenized SDE needs a finite delta/eps limit")
        if k is LimitKind.LIMIT_A_FUNCTIONAL and not self.q_limit.is_finite:
            raise RegimeMismatch("the limiting additive functional needs a finite lambda/eps limit")
        if k is LimitKind.STICKY_SDE and not (self.p_limit.is_finite and self.q_limit.is_finite):
            raise RegimeMismatch("the sticky SDE needs finite delta/eps and lambda/eps limits")
        if k is LimitKind.STICKY_ODE and (not self.r_limit.is_finite or self.r_limit.is_zero):
            raise RegimeMismatch("the sticky ODE needs lambda/delta to converge in (0, inf)")
        if k is LimitKind.DEGENERATE_ODE and self.p_limit.is_finite:
            raise RegimeMismatch("the degenerate ODE arises only when delta/eps diverges")
