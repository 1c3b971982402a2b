"""
Synthetic data sources.

- AR stream: continuous-state chain xi^1_{t+1} = A xi^1_t + e_1 W_t with a
  strictly lower-subdiagonal A, and labels from the sign of <u, xi^1> flipped
  with a fixed probability.
- Node dataset: noiseless linear regression data, one sample per chain state.
"""

from typing import List, Optional, Tuple
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd

from ..core.random_streams import Stream, make_rng
from .objectives import LossComponent, LossFamily

logger = logging.getLogger(__name__)

AR_DIMENSION = 50
AR_SUBDIAG_LOW = 0.8
AR_SUBDIAG_HIGH = 0.99
AR_FLIP_PROB = 0.2
AR_BURN_IN = 1000


def _ar_step(a_matrix: np.ndarray, u: np.ndarray, flip_prob: float,
             xi1: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    nxt = a_matrix @ xi1
    nxt[0] += rng.standard_normal()
    label = 1 if np.dot(u, nxt) > 0 else 0
    if rng.random() < flip_prob:
        label = 1 - label
    return nxt, label


@dataclass(eq=False)
class ARStream:
    """Stateful AR sample source; next() advances the cursor by one sample"""
    a_matrix: np.ndarray
    u: np.ndarray
    flip_prob: float
    seed: int
    xi1: Optional[np.ndarray] = None
    rng: Optional[np.random.Generator] = field(default=None, repr=False)
    noise_stream: int = Stream.AR_NOISE
    emitted: int = 0

    def __post_init__(self):
        if self.xi1 is None:
            self.xi1 = np.zeros(len(self.u))
        if self.rng is None:
            self.rng = make_rng(self.seed, self.noise_stream)

    @property
    def dimension(self) -> int:
        return len(self.u)

    def next(self) -> Tuple[np.ndarray, int]:
        self.xi1, label = _ar_step(self.a_matrix, self.u, self.flip_prob, self.xi1, self.rng)
        self.emitted += 1
        return self.xi1.copy(), label


def make_ar_stream(d: int = AR_DIMENSION, seed: int = 0, flip_prob: float = AR_FLIP_PROB,
                   noise_stream: int = Stream.AR_NOISE) -> ARStream:
    """
    A[i, i-1] ~ U[0.8, 0.99], u uniform on the unit sphere, xi^1_0 = 0.

    A and u depend only on the seed; `noise_stream` selects the substream for
    W_t and label flips, so evaluation draws can share A and u with the run.
    """
    if d < 1:
        raise ValueError(f"AR dimension must be >= 1, got {d}")
    if not 0 <= flip_prob <= 1:
        raise ValueError(f"flip_prob must lie in [0, 1], got {flip_prob}")

    setup = make_rng(seed, Stream.AR_SETUP)
    a_matrix = np.zeros((d, d))
    a_matrix[np.arange(1, d), np.arange(d - 1)] = setup.uniform(AR_SUBDIAG_LOW, AR_SUBDIAG_HIGH, d - 1)
    u = setup.standard_normal(d)
    u /= np.linalg.norm(u)
    return ARStream(a_matrix=a_matrix, u=u, flip_prob=flip_prob, seed=seed, noise_stream=noise_stream)


def ar_next(stream: ARStream) -> Tuple[np.ndarray, int]:
    return stream.next()


def ar_trajectory_sample(stream: ARStream, T: int, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """T-th sample of a fresh trajectory from xi^1_0 = 0; the stream cursor is untouched"""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    xi1 = np.zeros(stream.dimension)
    label = 0
    for _ in range(T):
        xi1, label = _ar_step(stream.a_matrix, stream.u, stream.flip_prob, xi1, rng)
    return xi1, label


def collect_ar_samples(stream: ARStream, count: int, burn_in: int = AR_BURN_IN) -> Tuple[np.ndarray, np.ndarray]:
    """(features, labels) from `count` consecutive draws after `burn_in` discarded ones"""
    for _ in range(burn_in):
        stream.next()
    features = np.empty((count, stream.dimension))
    labels = np.empty(count)
    for t in range(count):
        features[t], labels[t] = stream.next()
    return features, labels


@dataclass(frozen=True, eq=False)
class NodeDataset:
    features: np.ndarray
    labels: np.ndarray
    beta_star: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def make_node_dataset(n: int = 20, d: int = 10, seed: int = 0) -> NodeDataset:
    """x_i ~ N(0, I_d), beta* ~ N(0, I_d), y_i = <x_i, beta*>"""
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n} d={d}")
    rng = make_rng(seed, Stream.DATASET)
    features = rng.standard_normal((n, d))
    beta_star = rng.standard_normal(d)
    return NodeDataset(features=features, labels=features @ beta_star, beta_star=beta_star)


def node_least_squares(dataset: NodeDataset) -> List[LossComponent]:
    return [LossComponent(LossFamily.LEAST_SQUARES, dataset.features[i], float(dataset.labels[i]))
            for i in range(dataset.n)]


def sample_components(family: LossFamily, features: np.ndarray, labels: np.ndarray) -> List[LossComponent]:
    return [LossComponent(family, features[i], float(labels[i])) for i in range(len(labels))]


def finite_surrogate(family: LossFamily, m: int, d: int, seed: int,
                     flip_prob: float = AR_FLIP_PROB, burn_in: int = AR_BURN_IN) -> List[LossComponent]:
    """M components built from AR draws, for running a data loss on a finite chain"""
    stream = make_ar_stream(d=d, seed=seed, flip_prob=flip_prob, noise_stream=Stream.SURROGATE)
    features, labels = collect_ar_samples(stream, m, burn_in=burn_in)
    return sample_components(family, features, labels)


def dataset_frame(features: np.ndarray, labels: np.ndarray,
                  beta_star: Optional[np.ndarray] = None) -> pd.DataFrame:
    frame = pd.DataFrame(features, columns=[f"x{j}" for j in range(features.shape[1])])
    frame.insert(0, "index", np.arange(len(labels)))
    frame["y"] = labels
    if beta_star is not None:
        for j, value in enumerate(beta_star):
            frame[f"beta_star{j}"] = value
    return frame
