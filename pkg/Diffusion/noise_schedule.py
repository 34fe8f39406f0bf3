from abc import ABC, abstractmethod

import numpy as np


class InvalidTime(ValueError):
    pass


def check_time(t, name: str = "t"):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0) or np.any(np.isnan(t_arr)):
        raise InvalidTime(f"{name}={t} outside [0, 1]")


class NoiseSchedule(ABC):
    """alpha(t): probability a clean token is still unmasked at time t."""

    name = "abstract"

    @abstractmethod
    def alpha(self, t):
        ...

    @abstractmethod
    def alpha_prime(self, t):
        ...

    def weight(self, t):
        """alpha'(t) / (1 - alpha(t)); negative for t > 0."""
        return self.alpha_prime(t) / (1.0 - self.alpha(t))

    def to_dict(self) -> dict:
        return {"name": self.name}


class LogLinearSchedule(NoiseSchedule):
    name = "loglinear"

    def __init__(self, eps: float = 1e-4):
        if not 0.0 <= eps < 1.0:
            raise ValueError(f"schedule eps={eps} must lie in [0, 1)")
        self.eps = eps

    def alpha(self, t):
        return 1.0 - (1.0 - self.eps) * np.asarray(t, dtype=np.float64)

    def alpha_prime(self, t):
        return np.full_like(np.asarray(t, dtype=np.float64), -(1.0 - self.eps))

    def weight(self, t):
        # closed form, exact even where alpha rounds
        return -1.0 / np.asarray(t, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"name": self.name, "eps": self.eps}


class CosineSchedule(NoiseSchedule):
    name = "cosine"

    def alpha(self, t):
        return np.cos(0.5 * np.pi * np.asarray(t, dtype=np.float64))

    def alpha_prime(self, t):
        return -0.5 * np.pi * np.sin(0.5 * np.pi * np.asarray(t, dtype=np.float64))


def make_schedule(name: str = "loglinear", eps: float = 1e-4) -> NoiseSchedule:
    if name == LogLinearSchedule.name:
        return LogLinearSchedule(eps)
    if name == CosineSchedule.name:
        return CosineSchedule()
    raise ValueError(f"unknown noise schedule {name!r}")
