"""
Model priors over the 2^d regression models.

Three priors are supported, all depending on a model only through its size:
  - uniform: every model gets mass 2^-d
  - scott-berger: beta-binomial with Beta(1, 1) on the inclusion probability,
    uniform over model sizes
  - loss: mass proportional to exp(-c * size), c > 0

Priors are exposed on the log scale with analytic normalising constants.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.special import expit, gammaln

from exceptions import ValidationError
from model_space import Gamma


DEFAULT_LOSS_C = 1.0


class PriorKind(str, Enum):
    UNIFORM = "uniform"
    SCOTT_BERGER = "scott-berger"
    LOSS = "loss"


_KIND_ALIASES = {
    "uniform": PriorKind.UNIFORM,
    "scott-berger": PriorKind.SCOTT_BERGER,
    "scott_berger": PriorKind.SCOTT_BERGER,
    "sb": PriorKind.SCOTT_BERGER,
    "loss": PriorKind.LOSS,
}


@dataclass(frozen=True)
class PriorSpec:
    """
    A model prior. `c` is required for the loss prior and must be absent otherwise.
    """

    kind: PriorKind
    c: Optional[float] = None

    def __post_init__(self):
        kind = self.kind
        if not isinstance(kind, PriorKind):
            key = str(kind).strip().lower()
            if key not in _KIND_ALIASES:
                raise ValidationError(f"unknown prior kind '{kind}'", flag="--prior")
            kind = _KIND_ALIASES[key]
            object.__setattr__(self, "kind", kind)

        if kind is PriorKind.LOSS:
            if self.c is None:
                raise ValidationError("the loss prior requires a constant c", flag="--c")
            c = float(self.c)
            if not math.isfinite(c) or c <= 0:
                raise ValidationError(
                    f"c must be positive, got {self.c} (use the uniform prior for the c -> 0 limit)",
                    flag="--c")
            object.__setattr__(self, "c", c)
        elif self.c is not None:
            raise ValidationError(f"the {kind.value} prior takes no constant c", flag="--c")

    @classmethod
    def uniform(cls) -> "PriorSpec":
        return cls(PriorKind.UNIFORM)

    @classmethod
    def scott_berger(cls) -> "PriorSpec":
        return cls(PriorKind.SCOTT_BERGER)

    @classmethod
    def loss(cls, c: float = DEFAULT_LOSS_C) -> "PriorSpec":
        return cls(PriorKind.LOSS, c)

    @property
    def label(self) -> str:
        if self.kind is PriorKind.LOSS:
            return f"loss(c={self.c:g})"
        return self.kind.value


def log_binomial(d: int, k: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
    """log C(d, k)."""
    k = np.asarray(k, dtype=float)
    return gammaln(d + 1.0) - gammaln(k + 1.0) - gammaln(d - k + 1.0)


def log_prior_by_size(spec: PriorSpec, d: int, k: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Per-model log prior mass of a model of size k (vectorised over k).
    """
    if d < 0:
        raise ValidationError(f"d must be non-negative, got {d}")
    sizes = np.asarray(k)
    if np.any(sizes < 0) or np.any(sizes > d):
        raise ValidationError(f"model size outside [0, {d}]")

    if spec.kind is PriorKind.UNIFORM:
        values = np.full(sizes.shape, -d * math.log(2.0))
    elif spec.kind is PriorKind.SCOTT_BERGER:
        values = -math.log(d + 1.0) - log_binomial(d, sizes)
    else:
        # normaliser sum_k C(d,k) e^{-ck} = (1 + e^{-c})^d
        values = -spec.c * sizes - d * math.log1p(math.exp(-spec.c))

    if np.ndim(values) == 0:
        return float(values)
    return values


def log_prior(spec: PriorSpec, gamma: Gamma) -> float:
    """log p(M_gamma), normalised over the 2^d models."""
    return float(log_prior_by_size(spec, gamma.d, gamma.size))


def size_prior(spec: PriorSpec, d: int) -> np.ndarray:
    """
    Prior distribution of the model size k = 0..d.

    uniform -> Binomial(d, 1/2); scott-berger -> uniform on {0..d};
    loss -> Binomial(d, 1/(e^c + 1)).
    """
    sizes = np.arange(d + 1)
    return np.exp(log_binomial(d, sizes) + log_prior_by_size(spec, d, sizes))


def prior_inclusion(spec: PriorSpec) -> float:
    """Marginal prior inclusion probability of each covariate."""
    if spec.kind is PriorKind.LOSS:
        return float(expit(-spec.c))
    return 0.5


def prior_curve(spec: PriorSpec, d: int) -> pd.DataFrame:
    """
    Per-model log prior mass at each size k = 0..d (plot-ready).

    Returns:
        DataFrame with columns k, log_mass, kind, c
    """
    if d < 1:
        raise ValidationError(f"prior curve needs d >= 1, got {d}")
    sizes = np.arange(d + 1)
    return pd.DataFrame({
        'k': sizes,
        'log_mass': log_prior_by_size(spec, d, sizes),
        'kind': spec.kind.value,
        'c': spec.c if spec.c is not None else np.nan,
    })
