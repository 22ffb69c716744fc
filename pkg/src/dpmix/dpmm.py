"""Truncated stick-breaking Dirichlet process mixture fitted by coordinate ascent.

The variational family is

* ``q(z_n) = Categorical(r_n)`` for every sample,
* ``q(v_k) = Beta(alpha_k, beta_k)`` for ``k < K`` with ``v_K = 1``,
* ``q(η_kb)`` conjugate to block ``b``'s likelihood, with natural
  parameters ``(tau1_kb, tau2_kb)``,
* ``q(w) = Gamma(g1, g2)`` for the concentration.

Every update below is the exact maximizer of the lower bound in its own
coordinate, so the bound never decreases during :func:`fit`.

Arrays are stacked across components: ``tau1[b]`` has shape ``(K, S_b)`` and
``tau2[b]`` shape ``(K,)`` for feature block ``b``.
"""

import logging
import weakref
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import special as sp

from .data import DatasetView, EncodingStats, FeatureSchema, parse_schema
from .errors import (
    ConfigError,
    InputError,
    InternalConsistencyError,
    NumericalError,
    ShapeError,
    UnsupportedSchemaError,
)
from .expfam import (
    Binomial,
    ConjugatePosterior,
    ExpFamily,
    Multinomial,
    MultivariateNormal,
    Poisson,
    _as_rows,
    family_from_dict,
    safe_cholesky,
    symmetrize,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "dpmm-model/1"
# allowed decrease of the bound between iterations, relative to |ELBO|
ELBO_SLACK = 1e-8
# components below this expected weight are reported as vanished
VANISHED_WEIGHT = 1e-3
INIT_METHODS = ("kmeans++", "uniform")
# weight of the perturbed-uniform part mixed into seeded assignments
INIT_SMOOTHING = 0.1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters and run settings.

    Attributes
    ----------
    K : int
        Truncation level.
    s0, r0 : float
        Shape and rate of the Gamma prior on the concentration ``w``.
    elbo_tol : float
        Stop when the relative gain of the bound drops below this.
    max_iters : int
    mc_samples : int
        Posterior draws per component for Monte-Carlo scoring.
    seed : int
    init : {"kmeans++", "uniform"}
        Responsibility initialization, see :func:`init_state`.
    priors : tuple of ConjugatePosterior, optional
        One prior per feature block. ``None`` means data-driven defaults
        (see :func:`default_priors`).
    """

    K: int = 10
    s0: float = 1.0
    r0: float = 1e-3
    elbo_tol: float = 1e-6
    max_iters: int = 500
    mc_samples: int = 100
    seed: int = 0
    init: str = "kmeans++"
    priors: Optional[Tuple[ConjugatePosterior, ...]] = None

    def validate(self, allow_degenerate=False):
        if int(self.K) != self.K or self.K < (1 if allow_degenerate else 2):
            raise ConfigError(f"truncation level K must be an integer >= 2, got {self.K}")
        if not self.s0 > 0 or not self.r0 > 0:
            raise ConfigError(f"s0 and r0 must be positive, got s0={self.s0}, r0={self.r0}")
        if not self.elbo_tol >= 0:
            raise ConfigError(f"elbo_tol must be >= 0, got {self.elbo_tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if int(self.mc_samples) != self.mc_samples or self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be a positive integer, got {self.mc_samples}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")
        if self.init not in INIT_METHODS:
            raise ConfigError(f"init must be one of {INIT_METHODS}, got {self.init!r}")
        return self

    def seed_sequences(self):
        """Child seeds: index 0 drives initialization, index 1 Monte-Carlo scoring."""
        return np.random.SeedSequence(int(self.seed)).spawn(2)

    def to_dict(self):
        return {
            "K": int(self.K),
            "s0": float(self.s0),
            "r0": float(self.r0),
            "elbo_tol": float(self.elbo_tol),
            "max_iters": int(self.max_iters),
            "mc_samples": int(self.mc_samples),
            "seed": int(self.seed),
            "init": self.init,
            "priors": None if self.priors is None else [p.to_dict() for p in self.priors],
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        priors = data.pop("priors", None)
        if priors is not None:
            priors = tuple(ConjugatePosterior.from_dict(p) for p in priors)
        return cls(priors=priors, **data)


def default_priors(data: DatasetView) -> Tuple[ConjugatePosterior, ...]:
    """Weakly informative priors centred on the data.

    Gaussian blocks get a Normal-Wishart with mean equal to the column means,
    ``dof = d + 2`` and ``E[Λ] = diag(1 / var)``. Count blocks get a Gamma
    whose mean is the column mean; Beta and Dirichlet priors are uniform.
    """
    priors = []
    for block in data.blocks:
        fam, x = block.family, block.values
        if isinstance(fam, MultivariateNormal):
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            var = np.where(var > 0, var, 1.0)
            dof = fam.d + 2.0
            priors.append(fam.conjugate_prior(mean, np.diag(1.0 / var) / dof, dof))
        elif isinstance(fam, Poisson):
            m = float(x.mean())
            priors.append(fam.conjugate_prior(1.0, 1.0 / m if m > 0 else 1.0))
        elif isinstance(fam, Multinomial):
            priors.append(fam.conjugate_prior(1.0))
        elif isinstance(fam, Binomial):
            priors.append(fam.conjugate_prior(1.0, 1.0))
        else:
            raise UnsupportedSchemaError(f"no default prior for family {fam!r}")
    return tuple(priors)


def _resolve_priors(data, config):
    priors = config.priors if config.priors is not None else default_priors(data)
    if len(priors) != len(data.blocks):
        raise ConfigError(f"{len(priors)} priors given for {len(data.blocks)} feature blocks")
    for p, b in zip(priors, data.blocks):
        if p.family != b.family:
            raise ConfigError(f"prior family {p.family!r} does not match block {b.family!r}")
    return tuple(priors)


# ---------------------------------------------------------------------------
# per-dataset cache of sufficient statistics
# ---------------------------------------------------------------------------

_STATS_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _block_stats(data: DatasetView):
    """``[(T, ln h)]`` per block; cached for the lifetime of the view."""
    cached = _STATS_CACHE.get(data)
    if cached is None:
        cached = []
        for b in data.blocks:
            b.family.check_support(b.values)
            cached.append((b.family._stats(b.values), b.family._log_base(b.values)))
        cached = tuple(cached)
        _STATS_CACHE[data] = cached
    return cached


# ---------------------------------------------------------------------------
# variational state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureState:
    """All variational parameters of the truncated mixture.

    ``alpha`` and ``beta`` have length ``K - 1``; the last stick is fixed to 1.
    """

    config: PriorConfig
    priors: Tuple[ConjugatePosterior, ...]
    r: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    tau1: Tuple[np.ndarray, ...]
    tau2: Tuple[np.ndarray, ...]
    g1: float
    g2: float
    elbo_trace: Tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return self.r.shape[1]

    @property
    def families(self):
        return tuple(p.family for p in self.priors)

    def component_posteriors(self, k) -> Tuple[ConjugatePosterior, ...]:
        return tuple(
            ConjugatePosterior(f, t1[k], t2[k]) for f, t1, t2 in zip(self.families, self.tau1, self.tau2)
        )

    @property
    def tau(self):
        return [self.component_posteriors(k) for k in range(self.K)]


def _stick_expectations(alpha, beta, K):
    """``E[ln v_k]`` and ``E[ln(1 - v_k)]`` padded to length K (zeros for v_K = 1)."""
    e_log_v = np.zeros(K)
    e_log_1mv = np.zeros(K)
    if K > 1:
        psi_ab = sp.digamma(alpha + beta)
        e_log_v[:-1] = sp.digamma(alpha) - psi_ab
        e_log_1mv[:-1] = sp.digamma(beta) - psi_ab
    return e_log_v, e_log_1mv


def _perturbed_uniform(rng, n, K):
    r = 1.0 / K + rng.dirichlet(np.ones(K), size=n)
    return r / r.sum(axis=1, keepdims=True)


def _seeded_assignment(data, K, rng):
    """Hard nearest-centre labels from k-means++ seeding on z-scored columns."""
    x = data.matrix
    std = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)
    n = x.shape[0]
    centres = [rng.integers(n)]
    d2 = ((x - x[centres[0]]) ** 2).sum(axis=1)
    for _ in range(1, min(K, n)):
        total = d2.sum()
        nxt = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    dist = ((x[:, None, :] - x[centres][None, :, :]) ** 2).sum(axis=2)
    return dist.argmin(axis=1)


def init_state(data: DatasetView, config: PriorConfig, rng=None, *, allow_degenerate=False) -> MixtureState:
    """Prior-valued state with seeded initial responsibilities.

    With ``init="uniform"`` rows of ``r`` are ``1/K`` plus Dirichlet(1)
    noise, renormalized. With ``init="kmeans++"`` (the default) each sample
    is first assigned to its nearest k-means++ seed and that one-hot row is
    mixed with a 10% perturbed-uniform row. Without ``rng`` the generator
    is seeded from ``config.seed``.
    """
    config.validate(allow_degenerate)
    if data.n_samples == 0:
        raise InputError("cannot fit an empty dataset")
    priors = _resolve_priors(data, config)
    K, N = int(config.K), data.n_samples
    if rng is None:
        rng = np.random.default_rng(config.seed_sequences()[0])
    if K == 1:
        r = np.ones((N, 1))
    elif config.init == "uniform":
        r = _perturbed_uniform(rng, N, K)
    else:
        labels = _seeded_assignment(data, K, rng)
        r = INIT_SMOOTHING * _perturbed_uniform(rng, N, K)
        r[np.arange(N), labels] += 1.0 - INIT_SMOOTHING
    tau1 = tuple(np.tile(p.tau1, (K, 1)) for p in priors)
    tau2 = tuple(np.full(K, p.tau2) for p in priors)
    return MixtureState(
        config=config,
        priors=priors,
        r=r,
        alpha=np.ones(K - 1),
        beta=np.ones(K - 1),
        tau1=tau1,
        tau2=tau2,
        g1=float(config.s0 + K - 1),
        g2=float(config.r0),
    )


def _component_expectations(state):
    return [f.expectations(t1, t2) for f, t1, t2 in zip(state.families, state.tau1, state.tau2)]


def _expected_loglik(state, data):
    """``Σ_b ln h + E[η_k]·T + E[-a_k]``, shape (N, K)."""
    out = np.zeros((data.n_samples, state.K))
    for (stats, log_h), (e_eta, e_neg_a) in zip(_block_stats(data), _component_expectations(state)):
        out += log_h[:, None] + stats @ e_eta.T + e_neg_a[None, :]
    return out


def update_responsibilities(state: MixtureState, data: DatasetView) -> MixtureState:
    e_log_v, e_log_1mv = _stick_expectations(state.alpha, state.beta, state.K)
    prior_term = e_log_v + np.concatenate([[0.0], np.cumsum(e_log_1mv[:-1])])
    log_rho = _expected_loglik(state, data) + prior_term[None, :]
    bad = ~np.isfinite(log_rho)
    if bad.any():
        n, k = np.argwhere(bad)[0]
        raise NumericalError(f"non-finite log responsibility at sample {n}, component {k}")
    log_r = log_rho - sp.logsumexp(log_rho, axis=1, keepdims=True)
    return replace(state, r=np.exp(log_r))


def update_sticks(state: MixtureState) -> MixtureState:
    Nk = state.r.sum(axis=0)
    # mass assigned beyond k: Σ_{i>k} N_i
    tail = np.cumsum(Nk[::-1])[::-1]
    tail = np.append(tail[1:], 0.0)
    e_w = state.g1 / state.g2
    return replace(state, alpha=1.0 + Nk[:-1], beta=e_w + tail[:-1])


def update_components(state: MixtureState, data: DatasetView) -> MixtureState:
    r = state.r
    Nk = r.sum(axis=0)
    tau1, tau2 = [], []
    for p, (stats, _) in zip(state.priors, _block_stats(data)):
        t1 = p.tau1[None, :] + r.T @ stats
        if isinstance(p.family, MultivariateNormal):
            d = p.family.d
            block = symmetrize(t1[:, d:].reshape(-1, d, d))
            t1[:, d:] = block.reshape(-1, d * d)
        tau1.append(t1)
        tau2.append(p.tau2 + Nk)
    return replace(state, tau1=tuple(tau1), tau2=tuple(tau2))


def update_concentration(state: MixtureState) -> MixtureState:
    _, e_log_1mv = _stick_expectations(state.alpha, state.beta, state.K)
    g2 = state.config.r0 - e_log_1mv.sum()
    if not g2 > 0 or not np.isfinite(g2):
        raise NumericalError(f"concentration rate g2 = {g2} is not positive")
    return replace(state, g1=float(state.config.s0 + state.K - 1), g2=float(g2))


def elbo_terms(state: MixtureState, data: DatasetView) -> dict:
    """The lower bound split into its expectation terms.

    Keys: ``loglik``, ``assign`` (E ln p(z|v)), ``sticks`` (E ln p(v|w)),
    ``concentration`` (E ln p(w)), ``components`` (E ln p(η) - E ln q(η)),
    ``entropy_z``, ``entropy_v``, ``entropy_w``.
    """
    K, r = state.K, state.r
    s0, r0 = state.config.s0, state.config.r0
    g1, g2 = state.g1, state.g2
    e_w = g1 / g2
    e_log_w = sp.digamma(g1) - np.log(g2)
    e_log_v, e_log_1mv = _stick_expectations(state.alpha, state.beta, K)

    terms = {}
    terms["loglik"] = float((r * _expected_loglik(state, data)).sum())

    # q(z_n > k) = Σ_{j>k} r_nj
    beyond = np.cumsum(r[:, ::-1], axis=1)[:, ::-1]
    beyond = np.concatenate([beyond[:, 1:], np.zeros((r.shape[0], 1))], axis=1)
    terms["assign"] = float((beyond.sum(0) * e_log_1mv + r.sum(0) * e_log_v).sum())

    terms["sticks"] = float(((K - 1) * e_log_w + (e_w - 1.0) * e_log_1mv[:-1].sum()))
    terms["concentration"] = float(
        s0 * np.log(r0) - sp.gammaln(s0) + (s0 - 1.0) * e_log_w - r0 * e_w
    )

    comp = 0.0
    for p, t1, t2, (e_eta, e_neg_a) in zip(
        state.priors, state.tau1, state.tau2, _component_expectations(state)
    ):
        lam_ap = p.log_partition()
        tau_ap = p.family.prior_log_partition(t1, t2)
        comp += float(
            (((p.tau1[None, :] - t1) * e_eta).sum(1) + (p.tau2 - t2) * e_neg_a - lam_ap + tau_ap).sum()
        )
    terms["components"] = comp

    terms["entropy_z"] = float(-sp.xlogy(r, r).sum())
    a, b = state.alpha, state.beta
    terms["entropy_v"] = float(
        -((a - 1.0) * e_log_v[:-1] + (b - 1.0) * e_log_1mv[:-1] - sp.betaln(a, b)).sum()
    )
    terms["entropy_w"] = float(-(g1 * np.log(g2) - sp.gammaln(g1) + (g1 - 1.0) * e_log_w - g2 * e_w))

    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalError(f"lower-bound term {name!r} is not finite ({value})")
    return terms


def compute_elbo(state: MixtureState, data: DatasetView) -> float:
    return float(sum(elbo_terms(state, data).values()))


def _warm_start(state, data, rounds=100):
    """M-step from the initial responsibilities.

    Sticks and concentration are alternated until ``E[w]`` settles; starting
    from the prior's ``E[w] = (s0 + K - 1)/r0`` would otherwise push every
    sample into the last component on the first E-step.
    """
    state = update_components(state, data)
    if state.K == 1:
        return state
    for _ in range(rounds):
        prev = state.g2
        state = update_concentration(update_sticks(state))
        if abs(state.g2 - prev) <= 1e-12 * abs(prev):
            break
    return state


def run_cavi(state: MixtureState, data: DatasetView) -> MixtureState:
    """Iterate the coordinate updates from ``state`` until convergence."""
    config = state.config
    trace = list(state.elbo_trace)
    for it in range(int(config.max_iters)):
        state = update_responsibilities(state, data)
        state = update_sticks(state)
        state = update_components(state, data)
        state = update_concentration(state)
        elbo = compute_elbo(state, data)
        trace.append(elbo)
        log.debug("iteration %d: elbo %.12g", it + 1, elbo)
        if len(trace) > 1:
            delta = trace[-1] - trace[-2]
            if delta < -ELBO_SLACK * abs(trace[-2]):
                raise InternalConsistencyError(
                    f"lower bound decreased by {-delta:.6g} at iteration {len(trace)}"
                )
            if delta < config.elbo_tol * abs(elbo):
                break
    return replace(state, elbo_trace=tuple(trace))


def fit(data: DatasetView, config: Optional[PriorConfig] = None, *, init_resp=None,
        allow_degenerate=False):
    """Fit the mixture by coordinate ascent.

    Parameters
    ----------
    data : DatasetView
    config : PriorConfig, optional
    init_resp : array (N, K), optional
        Initial responsibilities replacing the seeded random start.
    allow_degenerate : bool
        Permit ``K = 1`` (a single conjugate component).

    Returns
    -------
    (FittedModel, numpy.ndarray)
        The model and the per-iteration lower bound.
    """
    config = config or PriorConfig()
    state = init_state(data, config, allow_degenerate=allow_degenerate)
    if init_resp is not None:
        r = np.array(init_resp, dtype=float)
        if r.shape != state.r.shape:
            raise ShapeError(f"init_resp must have shape {state.r.shape}, got {r.shape}")
        if np.any(r < 0) or not np.allclose(r.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("init_resp rows must be probability vectors")
        state = replace(state, r=r)
    state = run_cavi(_warm_start(state, data), data)
    trace = np.asarray(state.elbo_trace)
    converged = len(trace) < config.max_iters or (
        len(trace) > 1 and trace[-1] - trace[-2] < config.elbo_tol * abs(trace[-1])
    )
    return FittedModel.from_state(state, data, converged=bool(converged)), trace


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------


def expected_mixing_proportions(model) -> np.ndarray:
    """``E[π_k] = E[v_k] Π_{i<k} (1 - E[v_i])``; the last component takes the rest.

    Accepts a :class:`FittedModel`, a :class:`MixtureState` or an
    ``(alpha, beta)`` pair.
    """
    if isinstance(model, tuple):
        alpha, beta = model
    else:
        alpha, beta = model.alpha, model.beta
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    ev = alpha / (alpha + beta)
    return stick_breaking(ev)


def stick_breaking(v) -> np.ndarray:
    """Proportions from stick fractions ``v_1..v_{K-1}`` with ``v_K = 1``."""
    v = np.asarray(v, dtype=float)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    pi = np.empty(v.shape[0] + 1)
    pi[:-1] = v * remaining[:-1]
    pi[-1] = remaining[-1]
    return pi


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Immutable result of :func:`fit`; everything needed to score new data."""

    config: PriorConfig
    priors: Tuple[ConjugatePosterior, ...]
    tau1: Tuple[np.ndarray, ...]
    tau2: Tuple[np.ndarray, ...]
    alpha: np.ndarray
    beta: np.ndarray
    g1: float
    g2: float
    weights: np.ndarray
    block_columns: Tuple[Tuple[str, ...], ...]
    schema: Optional[FeatureSchema] = None
    encoding: Optional[EncodingStats] = None
    elbo_trace: Tuple[float, ...] = ()
    converged: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "weights"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "tau1", tuple(_readonly(t) for t in self.tau1))
        object.__setattr__(self, "tau2", tuple(_readonly(t) for t in self.tau2))

    @classmethod
    def from_state(cls, state: MixtureState, data: DatasetView, converged=True):
        return cls(
            config=state.config,
            priors=state.priors,
            tau1=state.tau1,
            tau2=state.tau2,
            alpha=state.alpha,
            beta=state.beta,
            g1=state.g1,
            g2=state.g2,
            weights=expected_mixing_proportions((state.alpha, state.beta)),
            block_columns=tuple(b.columns for b in data.blocks),
            schema=data.schema,
            encoding=data.stats,
            elbo_trace=tuple(state.elbo_trace),
            converged=converged,
        )

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def families(self) -> Tuple[ExpFamily, ...]:
        return tuple(p.family for p in self.priors)

    @property
    def active(self) -> np.ndarray:
        """Indices of components whose expected weight is at least 1e-3."""
        return np.flatnonzero(self.weights >= VANISHED_WEIGHT)

    def component_posteriors(self, k) -> Tuple[ConjugatePosterior, ...]:
        return tuple(
            ConjugatePosterior(f, t1[k], t2[k]) for f, t1, t2 in zip(self.families, self.tau1, self.tau2)
        )

    def check_data(self, data: DatasetView):
        if data.families != self.families:
            raise UnsupportedSchemaError(
                f"data blocks {data.families} do not match the model's {self.families}"
            )

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "config": self.config.to_dict(),
            "priors": [p.to_dict() for p in self.priors],
            "blocks": [
                {
                    "family": f.to_dict(),
                    "columns": list(cols),
                    "tau1": t1.tolist(),
                    "tau2": t2.tolist(),
                }
                for f, cols, t1, t2 in zip(self.families, self.block_columns, self.tau1, self.tau2)
            ],
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "g1": float(self.g1),
            "g2": float(self.g2),
            "weights": self.weights.tolist(),
            "schema": None if self.schema is None else self.schema.to_text(),
            "encoding": None if self.encoding is None else self.encoding.to_dict(),
            "elbo_trace": [float(v) for v in self.elbo_trace],
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT:
            raise InputError(f"unsupported model format {doc.get('format')!r}")
        try:
            blocks = doc["blocks"]
            families = [family_from_dict(b["family"]) for b in blocks]
            model = cls(
                config=PriorConfig.from_dict(doc["config"]),
                priors=tuple(ConjugatePosterior.from_dict(p) for p in doc["priors"]),
                tau1=tuple(np.asarray(b["tau1"], dtype=float) for b in blocks),
                tau2=tuple(np.asarray(b["tau2"], dtype=float) for b in blocks),
                alpha=np.asarray(doc["alpha"], dtype=float),
                beta=np.asarray(doc["beta"], dtype=float),
                g1=float(doc["g1"]),
                g2=float(doc["g2"]),
                weights=np.asarray(doc["weights"], dtype=float),
                block_columns=tuple(tuple(b["columns"]) for b in blocks),
                schema=None if doc.get("schema") is None else parse_schema(doc["schema"]),
                encoding=None if doc.get("encoding") is None else EncodingStats.from_dict(doc["encoding"]),
                elbo_trace=tuple(doc.get("elbo_trace", ())),
                converged=bool(doc.get("converged", True)),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model document: {exc!r}") from None
        if tuple(families) != model.families:
            raise InputError("model blocks disagree with the stored priors")
        return model


def save_model(model: FittedModel, path):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> FittedModel:
    import json

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from None
    return FittedModel.from_dict(doc)


# ---------------------------------------------------------------------------
# predictive scoring
# ---------------------------------------------------------------------------


def _scoring_rows(model, data):
    """Per-block row arrays for ``data`` (a DatasetView or a sequence of arrays)."""
    if isinstance(data, DatasetView):
        model.check_data(data)
        rows = [b.values for b in data.blocks]
    else:
        if len(data) != len(model.families):
            raise ShapeError(f"expected {len(model.families)} blocks, got {len(data)}")
        rows = [_as_rows(x, f.width)[0] for f, x in zip(model.families, data)]
    for f, x in zip(model.families, rows):
        f.check_support(x)
    return rows


def score_mc(model: FittedModel, data, rng=None, mc_samples=None, return_se=False):
    """Monte-Carlo log predictive density of each sample.

    For every component ``m`` likelihood parameters are drawn from its
    posterior (jointly across blocks) and

    ``log p(x) ≈ log Σ_k E[π_k] (1/m) Σ_r p(x | θ_kr)``

    is evaluated with log-sum-exp.

    Parameters
    ----------
    model : FittedModel
    data : DatasetView or sequence of per-block arrays
    rng : numpy Generator, optional
        Defaults to the scoring stream derived from ``model.config.seed``.
    mc_samples : int, optional
        Defaults to ``model.config.mc_samples``.
    return_se : bool
        Also return the delta-method standard error of each log density.

    Returns
    -------
    ndarray of shape (N,), optionally with the standard errors.
    """
    rows = _scoring_rows(model, data)
    m = int(mc_samples if mc_samples is not None else model.config.mc_samples)
    if m < 1:
        raise ConfigError(f"mc_samples must be >= 1, got {m}")
    if rng is None:
        rng = np.random.default_rng(model.config.seed_sequences()[1])
    n = rows[0].shape[0]
    log_w = np.log(model.weights)
    comp_logmean = np.empty((n, model.K))
    comp_var = np.empty((n, model.K))  # variance of exp(L - shift) per component
    shift = np.empty((n, model.K))
    for k in range(model.K):
        ll = np.zeros((n, m))
        for f, t1, t2, x in zip(model.families, model.tau1, model.tau2, rows):
            draws = f.sample_draws(t1[k], np.asarray(t2[k]), rng, m)
            ll += f.draw_log_likelihood(x, draws)
        top = ll.max(axis=1)
        e = np.exp(ll - top[:, None])
        comp_logmean[:, k] = top + np.log(e.mean(axis=1))
        comp_var[:, k] = e.var(axis=1, ddof=1) if m > 1 else 0.0
        shift[:, k] = top
    logp = sp.logsumexp(comp_logmean + log_w[None, :], axis=1)
    if not return_se:
        return logp
    # Var(p̂) = Σ_k π_k² Var_r(p_kr) / m, on the log scale divided by p̂
    scaled = 2.0 * (log_w[None, :] + shift - logp[:, None])
    with np.errstate(divide="ignore"):
        var = (np.exp(scaled) * comp_var).sum(axis=1) / m
    return logp, np.sqrt(var)


def student_t_params(posterior: ConjugatePosterior):
    """Predictive Student-t ``(mean, precision, dof)`` of a Normal-Wishart posterior."""
    fam = posterior.family
    if not isinstance(fam, MultivariateNormal):
        raise UnsupportedSchemaError("Student-t predictive needs a Normal-Wishart posterior")
    mean, kappa, scale, dof = posterior.classical()
    t_dof = float(dof) + 1.0 - fam.d
    precision = t_dof * float(kappa) / (1.0 + float(kappa)) * scale
    return np.asarray(mean), symmetrize(np.asarray(precision)), t_dof


def student_t_logpdf(x, mean, precision, dof):
    x, _ = _as_rows(x, mean.shape[0])
    d = mean.shape[0]
    chol = safe_cholesky(precision)
    proj = (x - mean) @ chol  # rows of Lᵀ(x - μ)
    quad = (proj * proj).sum(axis=1)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return (
        sp.gammaln(0.5 * (dof + d))
        - sp.gammaln(0.5 * dof)
        - 0.5 * d * np.log(dof * np.pi)
        + 0.5 * logdet
        - 0.5 * (dof + d) * np.log1p(quad / dof)
    )


def score_exact_gaussian(model: FittedModel, data) -> np.ndarray:
    """Closed-form log predictive density for models whose blocks are all Gaussian.

    Each component's predictive is a product of multivariate Student-t
    densities, one per block.
    """
    if not all(isinstance(f, MultivariateNormal) for f in model.families):
        raise UnsupportedSchemaError("exact scoring needs every feature block to be Gaussian")
    rows = _scoring_rows(model, data)
    n = rows[0].shape[0]
    comp = np.zeros((n, model.K))
    for k in range(model.K):
        for post, x in zip(model.component_posteriors(k), rows):
            comp[:, k] += student_t_logpdf(x, *student_t_params(post))
    return sp.logsumexp(comp + np.log(model.weights)[None, :], axis=1)
