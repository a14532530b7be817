"""
Model space for linear regression variable selection.
Models are covariate subsets (Gamma); the space of all 2^d subsets is
enumerated in binary-counter order and each submodel is summarised by its
least-squares sufficient statistics.
"""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from exceptions import (CapacityError, ContractError, DegenerateResponseError,
                        SingularDesignError)


MAX_COVARIATES = 30

# Relative tolerance on |R_jj| / ||x_j|| below which a centered column is
# treated as linearly dependent on the columns before it.
RANK_TOLERANCE = 1e-10

# Models per batched QR call; bounds memory at n * k * BATCH_SIZE doubles.
BATCH_SIZE = 4096


@dataclass(frozen=True)
class Gamma:
    """
    A regression model identified by the covariates it includes.

    The intercept is always present and is not listed.
    """

    included: tuple
    d: int

    def __post_init__(self):
        if self.d < 0:
            raise ContractError(f"number of covariates must be non-negative, got {self.d}")
        indices = tuple(sorted(int(j) for j in self.included))
        if len(set(indices)) != len(indices):
            raise ContractError(f"duplicate covariate index in {self.included}")
        if indices and (indices[0] < 0 or indices[-1] >= self.d):
            raise ContractError(f"covariate index out of range [0, {self.d}) in {self.included}")
        object.__setattr__(self, "included", indices)

    @property
    def size(self) -> int:
        return len(self.included)

    @property
    def mask(self) -> int:
        """Binary encoding; bit j is set when covariate j is included."""
        mask = 0
        for j in self.included:
            mask |= 1 << j
        return mask

    @classmethod
    def from_mask(cls, mask: int, d: int) -> "Gamma":
        return cls(tuple(j for j in range(d) if (mask >> j) & 1), d)

    @classmethod
    def null(cls, d: int) -> "Gamma":
        return cls((), d)

    def __contains__(self, j: int) -> bool:
        return j in self.included

    def label(self, names: Optional[Sequence[str]] = None) -> str:
        if not self.included:
            return "(null)"
        if names is None:
            return "{" + ",".join(str(j) for j in self.included) + "}"
        return " + ".join(names[j] for j in self.included)


@dataclass(frozen=True)
class SufficientStats:
    """Least-squares summary of one submodel (intercept always included)."""

    n: int
    k: int
    sst: float
    sse: float
    r2: float


@dataclass(frozen=True)
class SubmodelFits:
    """Sufficient statistics for every model of the space, indexed by mask."""

    n: int
    d: int
    sst: float
    sizes: np.ndarray
    sse: np.ndarray
    r2: np.ndarray

    def stats(self, mask: int) -> SufficientStats:
        return SufficientStats(n=self.n, k=int(self.sizes[mask]), sst=self.sst,
                               sse=float(self.sse[mask]), r2=float(self.r2[mask]))


def check_capacity(d: int, max_covariates: int = MAX_COVARIATES):
    if d < 0:
        raise ContractError(f"number of covariates must be non-negative, got {d}")
    if d > max_covariates:
        raise CapacityError(
            f"model space with d={d} covariates exceeds the enumeration cap of {max_covariates}",
            cap=max_covariates)


def enumerate_models(d: int, max_covariates: int = MAX_COVARIATES) -> List[Gamma]:
    """
    Enumerate all 2^d models in binary-counter order (first element is the null model).

    Args:
        d: Number of candidate covariates
        max_covariates: Enumeration cap

    Returns:
        List of Gamma, position i holding the model whose mask is i
    """
    check_capacity(d, max_covariates)
    return [Gamma.from_mask(mask, d) for mask in range(1 << d)]


def inclusion_matrix(d: int, max_covariates: int = MAX_COVARIATES) -> np.ndarray:
    """Boolean (2^d, d) matrix; row i is the inclusion vector of mask i."""
    check_capacity(d, max_covariates)
    masks = np.arange(1 << d, dtype=np.int64)
    return ((masks[:, None] >> np.arange(d, dtype=np.int64)) & 1).astype(bool)


def model_sizes(d: int) -> np.ndarray:
    return inclusion_matrix(d).sum(axis=1)


def _centered_response(y: np.ndarray):
    yc = y - y.mean()
    sst = float(yc @ yc)
    if not np.isfinite(sst) or sst <= 1e-24 * max(float(y @ y), 1.0):
        raise DegenerateResponseError("response is constant; R^2 is undefined")
    return yc, sst


def _validate_design(X: np.ndarray, y: np.ndarray):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ContractError(f"design matrix must be 2-dimensional, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ContractError(f"response length {y.shape} does not match design rows {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ContractError("design and response must be finite")
    return X, y


def fit_submodel(X: np.ndarray, y: np.ndarray, gamma: Gamma) -> SufficientStats:
    """
    Least-squares fit of the intercept-augmented submodel selected by gamma.

    The response and the selected columns are centered, which absorbs the
    intercept, and the centered columns are decomposed with a QR factorisation.

    Args:
        X: n x d design matrix
        y: Response vector of length n
        gamma: Model to fit

    Returns:
        SufficientStats for the submodel
    """
    X, y = _validate_design(X, y)
    n, d = X.shape
    if gamma.d != d:
        raise ContractError(f"model is defined over {gamma.d} covariates but the design has {d}")
    if n <= gamma.size + 1:
        raise ContractError(f"need n > k + 1 observations, got n={n}, k={gamma.size}", gamma=gamma)

    yc, sst = _centered_response(y)
    if gamma.size == 0:
        return SufficientStats(n=n, k=0, sst=sst, sse=sst, r2=0.0)

    Xc = X[:, list(gamma.included)]
    Xc = Xc - Xc.mean(axis=0)
    Q, R = np.linalg.qr(Xc)

    column_norms = np.linalg.norm(Xc, axis=0)
    if np.any(np.abs(np.diag(R)) <= RANK_TOLERANCE * np.maximum(column_norms, 1e-300)):
        raise SingularDesignError("selected columns are rank deficient after centering", gamma=gamma)

    residual = yc - Q @ (Q.T @ yc)
    sse = float(residual @ residual)
    r2 = min(max(1.0 - sse / sst, 0.0), 1.0)
    return SufficientStats(n=n, k=gamma.size, sst=sst, sse=sse, r2=r2)


def _masks_by_size(d: int) -> Iterator[tuple]:
    incl = inclusion_matrix(d)
    sizes = incl.sum(axis=1)
    for k in range(1, d + 1):
        masks = np.flatnonzero(sizes == k)
        columns = np.nonzero(incl[masks])[1].reshape(len(masks), k)
        yield k, masks, columns


def fit_all_submodels(X: np.ndarray, y: np.ndarray,
                      max_covariates: int = MAX_COVARIATES) -> SubmodelFits:
    """
    Sufficient statistics for all 2^d submodels.

    Models of equal size are fitted together with a stacked QR
    factorisation; each model still gets its own decomposition, so the
    result agrees with fit_submodel model by model.

    Args:
        X: n x d design matrix
        y: Response vector of length n
        max_covariates: Enumeration cap

    Returns:
        SubmodelFits indexed by model mask
    """
    X, y = _validate_design(X, y)
    n, d = X.shape
    check_capacity(d, max_covariates)
    if n <= d + 1:
        raise ContractError(f"need n > d + 1 observations, got n={n}, d={d}")

    yc, sst = _centered_response(y)
    Xc = X - X.mean(axis=0)
    column_norms = np.linalg.norm(Xc, axis=0)

    total = 1 << d
    sizes = np.zeros(total, dtype=np.int64)
    sse = np.empty(total, dtype=float)
    sse[0] = sst

    for k, masks, columns in _masks_by_size(d):
        sizes[masks] = k
        for start in range(0, len(masks), BATCH_SIZE):
            block_masks = masks[start:start + BATCH_SIZE]
            block_columns = columns[start:start + BATCH_SIZE]

            # (models, n, k) stack of centered submatrices
            stacked = np.transpose(Xc[:, block_columns], (1, 0, 2))
            Q, R = np.linalg.qr(stacked)

            diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
            floor = RANK_TOLERANCE * np.maximum(column_norms[block_columns], 1e-300)
            singular = np.any(diag <= floor, axis=1)
            if np.any(singular):
                bad = int(block_masks[np.flatnonzero(singular)[0]])
                raise SingularDesignError("selected columns are rank deficient after centering",
                                          gamma=Gamma.from_mask(bad, d))

            coefficients = np.einsum('mnk,n->mk', Q, yc)
            fitted = np.einsum('mnk,mk->mn', Q, coefficients)
            residual = yc[None, :] - fitted
            sse[block_masks] = np.einsum('mn,mn->m', residual, residual)

    r2 = np.clip(1.0 - sse / sst, 0.0, 1.0)
    r2[0] = 0.0
    return SubmodelFits(n=n, d=d, sst=sst, sizes=sizes, sse=sse, r2=r2)
