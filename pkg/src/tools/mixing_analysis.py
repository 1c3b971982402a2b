"""
Mixing analysis for ergodic chains.

Computes the spectral profile of a transition matrix, the deviation
||Pi* - P^k||_inf from stationarity, and constants (c, k_floor, rate) with

    ||Pi* - P^k||_inf <= c * rate^k      for every k >= k_floor

from which the mixing index tau(k) used by the solvers is derived.
"""

from typing import List, Optional, Sequence
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import pandas as pd

from ..core.errors import (
    Defective, EigSolverFailure, InsufficientDecay, MCGDError, NotSymmetric,
)
from ..core.markov_chain import TransitionMatrix, matrix_power, stationary_distribution

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
DEGENERATE_GAP = 1e-9
DEFECTIVE_CONDITION = 1e8
# deviations below this are double-precision noise
DEVIATION_FLOOR = 1e-14
# log-deviations below this are distorted by rounding in P^k
FIT_NOISE_FLOOR = 1e-9
FIT_THRESHOLD = 1e-3
MIN_FIT_HORIZON = 10
MIN_RATE = 1e-12
POLISH_STEPS = 200
_CEIL_SLACK = 1e-12


class ConstantsMethod(str, Enum):
    SYMMETRIC_EXACT = "symmetric_exact"
    ANALYTIC_DIAGONALIZABLE = "analytic_diagonalizable"
    EMPIRICAL_FIT = "empirical_fit"


class IndexKind(str, Enum):
    """Which constant H multiplies in the mixing index"""
    CONVEX_J = "convex_J"
    NONCONVEX_T = "nonconvex_T"


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    eigenvalues: np.ndarray
    eigen_moduli: np.ndarray
    lambda2_modulus: float
    lambdaM_modulus: float
    lambda_P: float
    psi_P: float
    symmetric: bool
    degenerate: bool


@dataclass(frozen=True)
class MixingConstants:
    c_value: float
    k_floor: int
    rate: float
    method: ConstantsMethod

    def __post_init__(self):
        if not self.c_value > 0:
            raise ValueError(f"c must be positive, got {self.c_value}")
        if self.k_floor < 0:
            raise ValueError(f"k_floor must be non-negative, got {self.k_floor}")
        if not 0 < self.rate < 1:
            raise ValueError(f"rate must lie in (0, 1), got {self.rate}")

    def bound(self, k: int) -> float:
        return self.c_value * self.rate ** k


@dataclass(frozen=True)
class MixingIndex:
    k: int
    value: int
    kind: IndexKind
    constant_H: float


def psi_from_lambda(lam: float) -> float:
    """max(1, 1/ln(1/lam)); exactly 1 for lam <= 1/e, infinite at lam >= 1"""
    if lam <= math.exp(-1.0):
        return 1.0
    if lam >= 1.0:
        return math.inf
    return max(1.0, 1.0 / math.log(1.0 / lam))


def spectral_profile(chain: TransitionMatrix) -> SpectralProfile:
    """
    Eigenvalues sorted by modulus (descending, ties broken by real part),
    with lambda(P) = (max(|l2|, |lM|) + 1) / 2 and psi(P).
    """
    symmetric = chain.is_symmetric(SYMMETRY_TOL)
    try:
        if symmetric:
            eigenvalues = np.linalg.eigvalsh(chain.entries).astype(complex)
        else:
            eigenvalues = np.linalg.eigvals(chain.entries)
    except np.linalg.LinAlgError as e:
        raise EigSolverFailure(str(e)) from e
    if not np.all(np.isfinite(eigenvalues)):
        raise EigSolverFailure("eigen solver returned non-finite values")

    moduli = np.abs(eigenvalues)
    order = np.lexsort((-eigenvalues.real, -np.round(moduli, 12)))
    eigenvalues = eigenvalues[order]
    moduli = moduli[order]

    if chain.size > 1:
        lambda2 = float(moduli[1])
        lambdaM = float(moduli[-1])
    else:
        lambda2 = lambdaM = 0.0
    lam = (max(lambda2, lambdaM) + 1.0) / 2.0

    degenerate = lambda2 >= 1.0 - DEGENERATE_GAP
    if degenerate:
        logger.warning(f"Second eigenvalue modulus {lambda2:.12f} is within {DEGENERATE_GAP} of 1")

    return SpectralProfile(
        eigenvalues=eigenvalues,
        eigen_moduli=moduli,
        lambda2_modulus=lambda2,
        lambdaM_modulus=lambdaM,
        lambda_P=lam,
        psi_P=psi_from_lambda(lam),
        symmetric=symmetric,
        degenerate=degenerate,
    )


def _stationary(chain: TransitionMatrix) -> np.ndarray:
    """Stationary vector polished past the power-iteration tolerance"""
    pi = stationary_distribution(chain)
    floor = chain.size * np.finfo(float).eps
    for _ in range(POLISH_STEPS):
        nxt = pi @ chain.entries
        nxt /= nxt.sum()
        done = np.abs(nxt - pi).sum() <= floor
        pi = nxt
        if done:
            break
    return pi


def deviation_norm(chain: TransitionMatrix, k: int) -> float:
    """Entrywise max of |Pi* - P^k|"""
    pi = _stationary(chain)
    return float(np.max(np.abs(pi[None, :] - matrix_power(chain, k))))


def deviation_frobenius(chain: TransitionMatrix, k: int) -> float:
    pi = _stationary(chain)
    return float(np.linalg.norm(pi[None, :] - matrix_power(chain, k), "fro"))


def deviation_profile(chain: TransitionMatrix, k_values: Sequence[int],
                      pi: Optional[np.ndarray] = None) -> np.ndarray:
    """Deviation norms for sorted non-negative k, sharing one stationary solve"""
    ks = [int(k) for k in k_values]
    if any(b < a for a, b in zip(ks, ks[1:])) or (ks and ks[0] < 0):
        raise ValueError("k values must be non-negative and sorted")
    if pi is None:
        pi = _stationary(chain)

    out = np.empty(len(ks))
    power = np.eye(chain.size)
    current = 0
    for idx, k in enumerate(ks):
        if k - current > 8:
            power = power @ matrix_power(chain, k - current)
        else:
            for _ in range(k - current):
                power = power @ chain.entries
        current = k
        out[idx] = np.max(np.abs(pi[None, :] - power))
    return out


def symmetric_deviation_bound(chain: TransitionMatrix, k: int) -> float:
    """M^{3/2} |l2|^k, valid for symmetric P"""
    profile = spectral_profile(chain)
    if not profile.symmetric:
        raise NotSymmetric("symmetric bound needs P == P^T")
    return chain.size ** 1.5 * profile.lambda2_modulus ** k


def _require_ergodic(chain: TransitionMatrix) -> np.ndarray:
    return _stationary(chain)


def analytic_constants(chain: TransitionMatrix) -> MixingConstants:
    """
    Closed-form constants. Symmetric chains: c = M^{3/2}, rate = |l2|.
    Otherwise, for diagonalizable P = U diag(l) U^-1:
    c = sqrt(M-1) ||U||_F ||U^-1||_F, rate = lambda(P).
    """
    _require_ergodic(chain)
    profile = spectral_profile(chain)
    m = chain.size

    if profile.symmetric:
        return MixingConstants(
            c_value=m ** 1.5,
            k_floor=0,
            rate=min(max(profile.lambda2_modulus, MIN_RATE), 1.0 - MIN_RATE),
            method=ConstantsMethod.SYMMETRIC_EXACT,
        )

    try:
        _, vectors = np.linalg.eig(chain.entries)
        condition = float(np.linalg.cond(vectors))
    except np.linalg.LinAlgError as e:
        raise EigSolverFailure(str(e)) from e
    if not np.isfinite(condition) or condition > DEFECTIVE_CONDITION:
        raise Defective(condition)

    inverse = np.linalg.inv(vectors)
    c_value = math.sqrt(m - 1) * np.linalg.norm(vectors, "fro") * np.linalg.norm(inverse, "fro")
    return MixingConstants(
        c_value=float(max(c_value, MIN_RATE)),
        k_floor=0,
        rate=profile.lambda_P,
        method=ConstantsMethod.ANALYTIC_DIAGONALIZABLE,
    )


def fit_mixing_constants(chain: TransitionMatrix, k_max: int) -> MixingConstants:
    """
    Empirical constants from a log-linear least-squares fit of the deviation.

    Only deviations above FIT_NOISE_FLOOR enter the slope. The fit starts at
    K0, the first k whose log-deviation is within a factor of 10 of a
    preliminary trend line. The rate is never below |l2| and c is raised to
    the smallest value that keeps the bound on [K0, k_max] up to an
    additive DEVIATION_FLOOR.
    """
    if k_max < MIN_FIT_HORIZON:
        raise ValueError(f"k_max must be >= {MIN_FIT_HORIZON}, got {k_max}")
    pi = _require_ergodic(chain)
    profile = spectral_profile(chain)

    ks = np.arange(k_max + 1)
    deviations = deviation_profile(chain, ks, pi)
    if deviations.min() >= FIT_THRESHOLD:
        raise InsufficientDecay(
            f"deviation stays >= {FIT_THRESHOLD} up to k={k_max} (min {deviations.min():.3e})")

    usable = deviations > DEVIATION_FLOOR
    above_noise = deviations > FIT_NOISE_FLOOR
    fit_ks = ks[above_noise]
    fit_logs = np.log(deviations[above_noise])

    k0 = 0
    if len(fit_ks) >= 2:
        slope, intercept = np.polyfit(fit_ks, fit_logs, 1)
        near_trend = np.abs(fit_logs - (intercept + slope * fit_ks)) <= math.log(10.0)
        k0 = int(fit_ks[np.argmax(near_trend)]) if near_trend.any() else 0
        tail = fit_ks >= k0
        if tail.sum() >= 2:
            slope, _ = np.polyfit(fit_ks[tail], fit_logs[tail], 1)
        rate = math.exp(slope)
    else:
        rate = profile.lambda2_modulus

    rate = min(max(rate, profile.lambda2_modulus, MIN_RATE), 1.0 - MIN_RATE)

    check = usable & (ks >= k0)
    if check.any():
        # verify_bound allows DEVIATION_FLOOR of slack on top of c * rate^k
        excess = deviations[check] - DEVIATION_FLOOR
        c_value = float(np.max(excess / rate ** ks[check].astype(float)))
    else:
        c_value = float(deviations[k0])
    c_value = max(c_value, MIN_RATE)

    logger.info(f"Fitted mixing constants c={c_value:.4g} rate={rate:.6f} k_floor={k0} over k<={k_max}")
    return MixingConstants(c_value=c_value, k_floor=k0, rate=rate, method=ConstantsMethod.EMPIRICAL_FIT)


def verify_bound(chain: TransitionMatrix, constants: MixingConstants, k_max: int,
                 atol: float = DEVIATION_FLOOR) -> List[int]:
    """k in [k_floor, k_max] where the deviation exceeds c*rate^k + atol"""
    ks = np.arange(constants.k_floor, k_max + 1)
    if len(ks) == 0:
        return []
    deviations = deviation_profile(chain, ks)
    bounds = constants.c_value * constants.rate ** ks.astype(float)
    return [int(k) for k in ks[deviations > bounds + atol]]


def mixing_index(k: int, constants: MixingConstants, H: float, kind: IndexKind) -> MixingIndex:
    """
    tau(k) = min{ max{ ceil(ln(k / (2 c H)) / ln(1/rate)), k_floor }, k }.

    For the convex index H is the value-range bound; for the nonconvex index
    pass D^2.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not H > 0:
        raise ValueError(f"H must be positive, got {H}")
    raw = math.log(k / (2.0 * constants.c_value * H)) / math.log(1.0 / constants.rate)
    value = max(math.ceil(raw - _CEIL_SLACK), constants.k_floor, 0)
    return MixingIndex(k=k, value=min(value, k), kind=kind, constant_H=float(H))


def mixing_table(chain: TransitionMatrix, k_max: int) -> pd.DataFrame:
    """
    Per-k deviation with the bound from analytic constants (fitted ones when
    P is defective), the fitted rate, lambda(P) and psi(P).
    """
    profile = spectral_profile(chain)
    ks = np.arange(k_max + 1)
    deviations = deviation_profile(chain, ks)

    fitted: Optional[MixingConstants] = None
    if k_max >= MIN_FIT_HORIZON:
        try:
            fitted = fit_mixing_constants(chain, k_max)
        except InsufficientDecay as e:
            logger.warning(f"No fitted rate: {e}")

    try:
        bound_constants = analytic_constants(chain)
    except (Defective, EigSolverFailure) as e:
        logger.warning(f"Analytic constants unavailable ({e}), bounding with fitted constants")
        if fitted is None:
            raise MCGDError("neither analytic nor fitted constants are available") from e
        bound_constants = fitted

    bounds = bound_constants.c_value * bound_constants.rate ** ks.astype(float)
    if bound_constants.k_floor > 0:
        bounds = np.where(ks >= bound_constants.k_floor, bounds, np.nan)

    return pd.DataFrame({
        "k": ks,
        "deviation_inf_norm": deviations,
        "bound_value": bounds,
        "fitted_rate": fitted.rate if fitted is not None else np.nan,
        "lambda_P": profile.lambda_P,
        "psi_P": profile.psi_P,
    })
