"""Parameter types shared by the closed forms, the sampling oracle and the CLI.

All quantities are SI: speeds in m/s, densities in 1/m, lengths in m.
Densities are lane totals per driving direction.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class TrafficConditions:
    """Homogeneous traffic description for the two driving directions.

    Direction 1 carries the message source and the final receivers,
    direction 2 carries the relays.

    Attributes:
        v1: speed of direction-1 vehicles (m/s).
        v2: speed of direction-2 vehicles (m/s).
        rho1: lane-total vehicle density of direction 1 (1/m).
        rho2: lane-total vehicle density of direction 2 (1/m).
        alpha: fraction of vehicles equipped with a transceiver, in [0, 1].
    """

    v1: float
    v2: float
    rho1: float
    rho2: float
    alpha: float

    def __post_init__(self):
        if self.v1 <= 0.0 or self.v2 <= 0.0:
            raise ValueError("speeds must be positive")
        if self.rho1 < 0.0 or self.rho2 < 0.0:
            raise ValueError("densities must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("equipped fraction must lie in [0, 1]")

    @classmethod
    def symmetric(cls, v: float, rho: float, alpha: float) -> "TrafficConditions":
        """Both directions share one speed and one density."""
        return cls(v1=v, v2=v, rho1=rho, rho2=rho, alpha=alpha)

    @property
    def lambda1(self) -> float:
        """Linear density of equipped direction-1 vehicles (1/m)."""
        return self.alpha * self.rho1

    @property
    def lambda2(self) -> float:
        """Linear density of equipped direction-2 vehicles (1/m)."""
        return self.alpha * self.rho2

    @property
    def lambda_tilde1(self) -> float:
        """Equipped direction-1 density rescaled by the closing-speed ratio.

        Receivers approach an oncoming relay at v1 + v2 while the relay
        itself covers ground at v2, so per meter of relay travel the
        encounter rate is lambda1 * (v1 + v2) / v2.  Always >= lambda1.
        """
        return self.lambda1 * (self.v1 + self.v2) / self.v2


@dataclass(frozen=True)
class FixedRange:
    """Every broadcast reaches exactly the distance r (m)."""

    r: float

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("broadcast range must be positive")


@dataclass(frozen=True)
class ExponentialRange:
    """Broadcast range drawn per message from an exponential distribution.

    The draw is fully correlated across both hops of one message: a single
    range value applies to the first and the second transversal hop alike.

    Attributes:
        lambda_r: inverse mean range (1/m).
    """

    lambda_r: float

    def __post_init__(self):
        if self.lambda_r <= 0.0:
            raise ValueError("range rate must be positive")


@dataclass(frozen=True)
class CommParams:
    """Communication model: range model plus the usefulness distance.

    Attributes:
        range_model: FixedRange or ExponentialRange.
        r_min: minimum useful transport distance (m); a message counts as
            delivered only to vehicles at least r_min behind its source.
    """

    range_model: "FixedRange | ExponentialRange"
    r_min: float

    def __post_init__(self):
        if self.r_min <= 0.0:
            raise ValueError("minimum useful distance must be positive")

    @classmethod
    def fixed(cls, r: float, r_min: float) -> "CommParams":
        return cls(range_model=FixedRange(r), r_min=r_min)

    @classmethod
    def exponential(cls, lambda_r: float, r_min: float) -> "CommParams":
        return cls(range_model=ExponentialRange(lambda_r), r_min=r_min)

    @property
    def fixed_r(self) -> float:
        """Broadcast range of the fixed-range model (m)."""
        if not isinstance(self.range_model, FixedRange):
            raise ValueError("operation requires the fixed-range model")
        return self.range_model.r

    @property
    def range_rate(self) -> float:
        """Inverse mean range of the exponential model (1/m)."""
        if not isinstance(self.range_model, ExponentialRange):
            raise ValueError("operation requires exponentially distributed ranges")
        return self.range_model.lambda_r

    def tau_min(self, v2: float) -> float:
        """Earliest possible delivery time (s), fixed-range model.

        The relay must cover r_min - 2r of ground before its broadcasts can
        reach vehicles in the destination region; negative if r_min < 2r.
        """
        return (self.r_min - 2.0 * self.fixed_r) / v2
