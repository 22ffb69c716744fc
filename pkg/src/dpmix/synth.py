"""Synthetic novelty-detection data: two heavy-tailed clusters plus uniform outliers.

Nominal rows come from two multivariate Student-t distributions centred at
``(0, ..., 0)`` and ``(5, ..., 5)``. Each cluster draws its own correlation
``ρ ~ U(0, 1)``, giving scale matrix ``c_ij = ρ^|i-j|``, and its own degrees
of freedom ``ν ~ Gamma(shape=1, scale=5)``. Draws below ``min_dof`` are
redrawn because tinier values overflow double precision. Outliers are
uniform in a box around the nominal mean whose half-width is ``box_scale``
nominal standard deviations per axis.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .data import REAL, Column, FeatureSchema
from .errors import ConfigError, SamplingError

CENTRE_OFFSET = 5.0


def gen_covariance(d: int, rho: float) -> np.ndarray:
    """Kac-Murdock-Szegő matrix ``c_ij = ρ^|i-j|``.

    Positive definite for ``0 <= ρ < 1``; ``ρ = 0`` gives the identity.
    """
    d = int(d)
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must lie in [0, 1), got {rho}")
    lag = np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    # numpy defines 0.0 ** 0 == 1, so the diagonal is 1 even for ρ = 0
    return np.power(float(rho), lag)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 2000
    n_features: int = 5
    outlier_fraction: float = 0.05
    seed: int = 0
    box_scale: float = 7.0
    min_dof: float = 0.1

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ConfigError(f"n_samples must be an integer >= 2, got {self.n_samples}")
        if int(self.n_features) != self.n_features or self.n_features < 1:
            raise ConfigError(f"n_features must be a positive integer, got {self.n_features}")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigError(f"outlier_fraction must lie in [0, 1), got {self.outlier_fraction}")
        if not self.min_dof > 0:
            raise ConfigError(f"min_dof must be positive, got {self.min_dof}")
        if not self.box_scale > 0:
            raise ConfigError(f"box_scale must be positive, got {self.box_scale}")
        if self.n_samples - self.n_outliers < 2:
            raise ConfigError("too few nominal rows; lower outlier_fraction or raise n_samples")

    @property
    def n_outliers(self) -> int:
        # round first so that e.g. 0.05 * 2000 is not pushed to 101 by float error
        return int(math.ceil(round(self.outlier_fraction * self.n_samples, 9)))


@dataclass(frozen=True, eq=False)
class SynthDataset:
    """Generated rows with labels (1 = outlier) and the draws that made them."""

    X: np.ndarray
    labels: np.ndarray
    rho: Tuple[float, float]
    dof: Tuple[float, float]
    box: Tuple[np.ndarray, np.ndarray]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def ids(self):
        return [str(i) for i in range(self.X.shape[0])]

    def schema(self, with_label=True) -> FeatureSchema:
        cols = tuple(Column(f"x{j}", REAL) for j in range(self.n_features))
        return FeatureSchema(cols, label="label" if with_label else None, id_column="id")

    def write_csv(self, path, index=None, with_label=False):
        """Write ``id, x0, ..., x{d-1}[, label]`` rows (all rows or ``index``)."""
        index = np.arange(self.X.shape[0]) if index is None else np.asarray(index)
        header = ["id"] + [f"x{j}" for j in range(self.n_features)]
        if with_label:
            header.append("label")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in index:
                row = [str(i)] + [repr(float(v)) for v in self.X[i]]
                if with_label:
                    row.append(str(int(self.labels[i])))
                w.writerow(row)

    def write_labels(self, path, index=None):
        index = np.arange(self.X.shape[0]) if index is None else np.asarray(index)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label"])
            for i in index:
                w.writerow([str(i), str(int(self.labels[i]))])


def sample_student_t(rng, n, centre, scale, dof) -> np.ndarray:
    """Multivariate Student-t draws as Gaussian draws scaled by ``sqrt(ν / χ²_ν)``."""
    d = centre.shape[0]
    chol = np.linalg.cholesky(scale)
    z = rng.standard_normal((n, d)) @ chol.T
    u = rng.chisquare(dof, size=n)
    return centre + z * np.sqrt(dof / u)[:, None]


def gen_dataset(config: SynthConfig, rng: Optional[np.random.Generator] = None) -> SynthDataset:
    """Generate one dataset; rows are shuffled, ``labels`` marks outliers with 1.

    Without ``rng`` the generator is seeded from ``config.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d = int(config.n_features)
    n_out = config.n_outliers
    n_nom = int(config.n_samples) - n_out
    sizes = (n_nom // 2, n_nom - n_nom // 2)
    parts, rhos, dofs = [], [], []
    for c, size in enumerate(sizes):
        rho = float(rng.uniform(0.0, 1.0))
        dof = float(rng.gamma(1.0, 5.0))
        while dof < config.min_dof:
            dof = float(rng.gamma(1.0, 5.0))
        centre = np.full(d, CENTRE_OFFSET * c)
        parts.append(sample_student_t(rng, size, centre, gen_covariance(d, rho), dof))
        rhos.append(rho)
        dofs.append(dof)
    nominal = np.vstack(parts)
    if not np.all(np.isfinite(nominal)):
        raise SamplingError("Student-t draws overflowed; raise min_dof")
    mid = nominal.mean(axis=0)
    half = config.box_scale * nominal.std(axis=0)
    lo, hi = mid - half, mid + half
    outliers = rng.uniform(lo, hi, size=(n_out, d))
    X = np.vstack([nominal, outliers])
    labels = np.concatenate([np.zeros(n_nom, dtype=int), np.ones(n_out, dtype=int)])
    order = rng.permutation(X.shape[0])
    return SynthDataset(X[order], labels[order], tuple(rhos), tuple(dofs), (lo, hi))
