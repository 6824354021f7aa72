"""Priors and posteriors over the unknown reward vector.

Exact posterior representations are used wherever the (prior, observation
model) pair allows it: conjugate Gaussian updates, and uniform bodies cut
by noiseless linear observations.  Every other combination falls back to a
self-normalized importance-sampling cloud with the prior as proposal.

Also houses the posterior-contraction harness (a Bayesian analog of the
Chernoff bound) and the empirical subgaussian-norm certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import betaln, logsumexp
from scipy.stats import beta as beta_dist

from .errors import (
    ContradictionError,
    DegenerateGeometryError,
    InvalidInputError,
    PreconditionViolationError,
)
from .geometry import ConvexBody

LOW_ESS = 100.0
DEFAULT_PARTICLES = 100_000


# -- observation models --------------------------------------------------


@dataclass(frozen=True)
class Noiseless:
    kind: str = "noiseless"


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float
    kind: str = "gaussian"


@dataclass(frozen=True)
class BernoulliSign:
    """Binary rewards in {-1, +1} with mean <l, A> (clipped to [-1, 1])."""

    kind: str = "bernoulli-sign"


ObsModel = Noiseless | GaussianNoise | BernoulliSign


def obs_from_json_dict(doc: dict) -> ObsModel:
    kind = doc["kind"]
    if kind == "noiseless":
        return Noiseless()
    if kind == "gaussian":
        return GaussianNoise(sigma=float(doc["sigma"]))
    if kind == "bernoulli-sign":
        return BernoulliSign()
    raise InvalidInputError(f"unknown observation model {kind!r}")


def obs_to_json_dict(obs: ObsModel) -> dict:
    if isinstance(obs, GaussianNoise):
        return {"kind": "gaussian", "sigma": obs.sigma}
    return {"kind": obs.kind}


def simulate_rewards(obs: ObsModel, means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rewards for plays with conditional means ``means`` under the channel."""
    means = np.asarray(means, dtype=float)
    if isinstance(obs, Noiseless):
        return means.copy()
    if isinstance(obs, GaussianNoise):
        return means + obs.sigma * rng.standard_normal(means.shape)
    p = 0.5 * (1.0 + np.clip(means, -1.0, 1.0))
    return np.where(rng.random(means.shape) < p, 1.0, -1.0)


# -- priors ---------------------------------------------------------------


@dataclass(eq=False)
class LinearPrior:
    """Either a centered Gaussian with SPD covariance or uniform on a body."""

    kind: str
    dim: int
    cov: np.ndarray | None = None
    body: ConvexBody | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (self.dim, self.dim) or not np.allclose(c, c.T, atol=1e-12):
                raise InvalidInputError("gaussian covariance must be symmetric (d, d)")
            if float(np.min(np.linalg.eigvalsh(c))) <= 0.0:
                raise InvalidInputError("gaussian covariance must be positive definite")
            self.cov = c
        elif self.kind == "uniform":
            if self.body is None:
                raise InvalidInputError("uniform prior needs a body")
        else:
            raise InvalidInputError(f"unknown prior kind {self.kind!r}")

    @staticmethod
    def gaussian(cov) -> "LinearPrior":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return LinearPrior(kind="gaussian", dim=cov.shape[0], cov=cov)

    @staticmethod
    def uniform(body: ConvexBody, scale: float | None = None) -> "LinearPrior":
        if scale is not None:
            body = body.scaled(scale)
        return LinearPrior(kind="uniform", dim=body.dim, body=body)

    def mean(self) -> np.ndarray:
        if self.kind == "gaussian":
            return np.zeros(self.dim)
        if self.body.kind == "ball":
            return np.zeros(self.dim)
        if self.body.kind == "box":
            return 0.5 * (self.body.lo + self.body.hi)
        raise InvalidInputError("mean of a uniform half-space prior requires sampling")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_n(rng, 1)[0]

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            chol = np.linalg.cholesky(self.cov)
            return rng.standard_normal((n, self.dim)) @ chol.T
        return sample_uniform_body(self.body, rng, n)

    def to_json_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "cov": self.cov.tolist()}
        return {"kind": "uniform", "body": self.body.to_json_dict()}

    @staticmethod
    def from_json_dict(doc: dict) -> "LinearPrior":
        if doc["kind"] == "gaussian":
            return LinearPrior.gaussian(doc["cov"])
        body = ConvexBody.from_json_dict(doc["body"])
        scale = doc.get("scale")
        return LinearPrior.uniform(body, scale)


def sample_uniform_ball(dim: int, radius: float, rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return z * r[:, None]


def sample_uniform_body(
    body: ConvexBody,
    rng: np.random.Generator,
    n: int,
    method: str = "auto",
    burn_in: int | None = None,
    thin: int | None = None,
) -> np.ndarray:
    """Exact uniform samples: direct for balls/boxes, rejection from the
    bounding ball for low-dimensional half-space bodies, hit-and-run above
    dimension four (or on request)."""
    if body.kind == "ball":
        return sample_uniform_ball(body.dim, body.radius, rng, n)
    if body.kind == "box":
        return body.lo + (body.hi - body.lo) * rng.random((n, body.dim))
    if method == "auto":
        method = "rejection" if body.dim <= 4 else "hit-and-run"
    if method == "rejection":
        out = np.empty((n, body.dim))
        got, proposed = 0, 0
        while got < n:
            batch = max(4 * (n - got), 1024)
            cand = sample_uniform_ball(body.dim, 1.0, rng, batch)
            keep = cand[body.contains_many(cand)]
            proposed += batch
            if proposed >= 2_000_000 and (got + len(keep)) / proposed < 1e-6:
                raise DegenerateGeometryError(
                    "rejection acceptance below 1e-6; use hit-and-run"
                )
            take = min(len(keep), n - got)
            out[got : got + take] = keep[:take]
            got += take
        return out
    return hit_and_run(body, rng, n, burn_in=burn_in, thin=thin)


def _bounding_radius(body: ConvexBody) -> float:
    if body.kind == "ball":
        return body.radius
    if body.kind == "box":
        return math.sqrt(float(np.sum(np.maximum(body.lo**2, body.hi**2))))
    return 1.0  # half-space bodies are regular, hence inside the unit ball


def hit_and_run(
    body: ConvexBody,
    rng: np.random.Generator,
    n: int,
    x0: np.ndarray | None = None,
    burn_in: int | None = None,
    thin: int | None = None,
) -> np.ndarray:
    """Hit-and-run chain targeting the uniform law on the body.

    Starts at the origin (valid for r-regular bodies).  Defaults: burn-in
    50 d steps, thinning d steps.
    """
    d = body.dim
    burn_in = 50 * d if burn_in is None else burn_in
    thin = d if thin is None else thin
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    out = np.empty((n, d))
    total = burn_in + thin * n
    dirs = rng.standard_normal((total, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    us = rng.random(total)
    k = 0
    for step in range(total):
        lo, hi = body.line_interval(x, dirs[step])
        x = x + (lo + (hi - lo) * us[step]) * dirs[step]
        if step >= burn_in and (step - burn_in) % thin == thin - 1:
            out[k] = x
            k += 1
    return out[:k] if k < n else out


# -- posterior states -----------------------------------------------------


class GaussianState:
    """Exact (possibly degenerate) Gaussian posterior."""

    def __init__(self, mean, cov):
        self._mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        self.cov = 0.5 * (cov + cov.T)
        w, u = np.linalg.eigh(self.cov)
        if float(np.min(w)) < -1e-9:
            raise InvalidInputError("posterior covariance is not PSD")
        self._factor = u * np.sqrt(np.clip(w, 0.0, None))

    @property
    def dim(self) -> int:
        return self._mean.shape[0]

    def mean(self) -> np.ndarray:
        return self._mean.copy()

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_n(rng, 1)[0]

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self._mean + z @ self._factor.T


class SliceState:
    """Uniform law on body ∩ {V l = c}, from noiseless observations."""

    def __init__(self, body: ConvexBody, constraint_vectors, constraint_values):
        self.body = body
        v = np.atleast_2d(np.asarray(constraint_vectors, dtype=float))
        c = np.atleast_1d(np.asarray(constraint_values, dtype=float))
        self.constraint_vectors = v
        self.constraint_values = c
        x0, *_ = np.linalg.lstsq(v, c, rcond=None)
        if float(np.max(np.abs(v @ x0 - c))) > 1e-7:
            raise ContradictionError("noiseless observations are mutually inconsistent")
        # Orthonormal basis of the null space of V.
        _, s, vt = np.linalg.svd(v)
        rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if len(s) else 1.0)))
        self.basis = vt[rank:].T  # (d, k)
        self.x0 = self._feasible_point(x0)

    def _feasible_point(self, x0: np.ndarray) -> np.ndarray:
        body = self.body
        k = self.basis.shape[1]
        if body.contains(x0, tol=1e-7):
            return x0
        if k == 0:
            raise ContradictionError("noiseless observations identify a point outside the body")
        if body.kind == "ball":
            # x0 is the min-norm point of the affine subspace, so the slice
            # is nonempty iff it lies inside the ball.
            raise ContradictionError("affine slice does not meet the ball")
        if body.kind == "box":
            rows = np.vstack([np.eye(body.dim), -np.eye(body.dim)])
            offs = np.concatenate([body.hi, -body.lo])
        else:
            rows, offs = body.rows, body.offsets
        res = linprog(
            np.zeros(k),
            A_ub=rows @ self.basis,
            b_ub=offs - rows @ x0,
            bounds=(None, None),
            method="highs",
        )
        if not res.success:
            raise ContradictionError("affine slice does not meet the body")
        return x0 + self.basis @ res.x

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def nullity(self) -> int:
        return self.basis.shape[1]

    def mean(self, rng: np.random.Generator | None = None, n_mc: int = 8192) -> np.ndarray:
        if self.nullity == 0:
            return self.x0.copy()
        if self.nullity == 1:
            u = self.basis[:, 0]
            lo, hi = self.body.line_interval(self.x0, u)
            return self.x0 + 0.5 * (lo + hi) * u
        if rng is None:
            raise InvalidInputError("mean of a slice with nullity >= 2 needs an rng (MC)")
        return self.sample_n(rng, n_mc).mean(axis=0)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_n(rng, 1)[0]

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = self.nullity
        if k == 0:
            return np.tile(self.x0, (n, 1))
        if k == 1:
            u = self.basis[:, 0]
            lo, hi = self.body.line_interval(self.x0, u)
            t = lo + (hi - lo) * rng.random(n)
            return self.x0 + t[:, None] * u
        # Rejection within the slice; proposals bounded by the body radius.
        radius = _bounding_radius(self.body) + float(np.linalg.norm(self.x0))
        out = np.empty((n, self.dim))
        got, proposed = 0, 0
        while got < n:
            batch = max(8 * (n - got), 1024)
            z = sample_uniform_ball(k, radius, rng, batch)
            pts = self.x0 + z @ self.basis.T
            keep = pts[self.body.contains_many(pts)]
            proposed += batch
            if proposed >= 2_000_000 and (got + len(keep)) / proposed < 1e-6:
                raise DegenerateGeometryError("slice rejection acceptance below 1e-6")
            take = min(len(keep), n - got)
            out[got : got + take] = keep[:take]
            got += take
        return out


class CloudState:
    """Self-normalized importance-sampling particle cloud."""

    def __init__(self, particles: np.ndarray, log_weights: np.ndarray):
        self.particles = np.asarray(particles, dtype=float)
        lw = np.asarray(log_weights, dtype=float)
        lw = lw - logsumexp(lw)
        self.weights = np.exp(lw)
        total = float(self.weights.sum())
        if not math.isfinite(total) or total <= 0:
            raise ContradictionError("all particle weights vanished")
        self.weights /= total
        self.ess = 1.0 / float(np.sum(self.weights**2))
        self.low_ess = self.ess < LOW_ESS

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_n(rng, 1)[0]

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.particles[idx]


PosteriorState = GaussianState | SliceState | CloudState


def condition(
    prior: LinearPrior,
    actions: np.ndarray,
    rewards: np.ndarray,
    obs: ObsModel,
    n_particles: int = DEFAULT_PARTICLES,
    rng: np.random.Generator | None = None,
) -> PosteriorState:
    """Posterior over the reward vector given played ``actions`` (t, d) and
    observed ``rewards`` (t,).

    Representation by (prior, channel): conjugate Gaussian for a Gaussian
    prior with Gaussian or noiseless observations; a uniform slice for a
    uniform prior with noiseless observations; an importance-weighted cloud
    (proposal = prior) otherwise.
    """
    x = np.atleast_2d(np.asarray(actions, dtype=float))
    y = np.atleast_1d(np.asarray(rewards, dtype=float))
    if x.shape[0] != y.shape[0]:
        raise InvalidInputError("actions and rewards must have matching length")
    if x.shape[0] == 0:
        if prior.kind == "gaussian":
            return GaussianState(np.zeros(prior.dim), prior.cov)
        return SliceState(prior.body, np.zeros((0, prior.dim)), np.zeros(0))

    if prior.kind == "gaussian" and isinstance(obs, GaussianNoise):
        prec = np.linalg.inv(prior.cov) + (x.T @ x) / obs.sigma**2
        cov = np.linalg.inv(prec)
        mean = cov @ (x.T @ y) / obs.sigma**2
        return GaussianState(mean, cov)
    if prior.kind == "gaussian" and isinstance(obs, Noiseless):
        s = x @ prior.cov @ x.T
        gain = prior.cov @ x.T @ np.linalg.pinv(s)
        mean = gain @ y
        if float(np.max(np.abs(x @ mean - y))) > 1e-8:
            raise ContradictionError("noiseless observations are mutually inconsistent")
        cov = prior.cov - gain @ x @ prior.cov
        return GaussianState(mean, cov)
    if prior.kind == "uniform" and isinstance(obs, Noiseless):
        return SliceState(prior.body, x, y)

    if rng is None:
        raise InvalidInputError("importance-sampled conditioning needs an rng stream")
    particles = prior.sample_n(rng, n_particles)
    means = particles @ x.T
    if isinstance(obs, GaussianNoise):
        logw = -0.5 * np.sum((y - means) ** 2, axis=1) / obs.sigma**2
    elif isinstance(obs, BernoulliSign):
        p_plus = np.clip(0.5 * (1.0 + np.clip(means, -1.0, 1.0)), 1e-12, 1.0 - 1e-12)
        logw = np.sum(np.where(y > 0, np.log(p_plus), np.log1p(-p_plus)), axis=1)
    else:
        raise InvalidInputError("noiseless observations never use the particle path")
    return CloudState(particles, logw)


def posterior_sample(state: PosteriorState, rng: np.random.Generator) -> np.ndarray:
    return state.sample(rng)


# -- contraction harness ---------------------------------------------------


@dataclass
class HarnessReport:
    frequency: float
    ci99: float
    bound: float
    passed: bool
    hypothesis_ok: bool
    replications: int


class BetaBernoulliModel:
    """Beta prior, n Bernoulli observations, empirical-mean estimator."""

    def __init__(self, a: float, b: float, n_obs: int):
        self.a, self.b, self.n_obs = a, b, n_obs

    def hypothesis_grid(self) -> np.ndarray:
        return np.linspace(0.02, 0.98, 25)

    def estimator_given(self, xi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.binomial(self.n_obs, xi) / self.n_obs

    def run(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        xi = rng.beta(self.a, self.b, size=n)
        k = rng.binomial(self.n_obs, xi)
        post = rng.beta(self.a + k, self.b + self.n_obs - k)
        return xi, post


class GaussianMeanModel:
    """N(0, v) prior, n noisy observations of the mean, sample-mean estimator."""

    def __init__(self, prior_var: float, n_obs: int, noise_sd: float = 1.0):
        self.prior_var, self.n_obs, self.noise_sd = prior_var, n_obs, noise_sd

    def hypothesis_grid(self) -> np.ndarray:
        sd = math.sqrt(self.prior_var)
        return np.linspace(-3 * sd, 3 * sd, 13)

    def estimator_given(self, xi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return xi + self.noise_sd * rng.standard_normal(xi.shape) / math.sqrt(self.n_obs)

    def run(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        xi = math.sqrt(self.prior_var) * rng.standard_normal(n)
        m = self.estimator_given(xi, rng)
        post_var = 1.0 / (1.0 / self.prior_var + self.n_obs / self.noise_sd**2)
        post_mean = post_var * self.n_obs * m / self.noise_sd**2
        post = post_mean + math.sqrt(post_var) * rng.standard_normal(n)
        return xi, post


class NoiselessPointModel:
    """The estimator observes xi exactly; the posterior is a point mass."""

    def __init__(self, prior_var: float = 1.0):
        self.prior_var = prior_var

    def hypothesis_grid(self) -> np.ndarray:
        return np.linspace(-2.0, 2.0, 5)

    def estimator_given(self, xi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(xi, dtype=float).copy()

    def run(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        xi = math.sqrt(self.prior_var) * rng.standard_normal(n)
        return xi, xi.copy()


def contraction_harness(
    model,
    eps: float,
    delta: float,
    replications: int,
    rng: np.random.Generator,
    hypothesis_reps: int = 4000,
) -> HarnessReport:
    """Estimate the posterior 2*eps-tail frequency and compare it to 2*delta.

    First validates empirically that the estimator satisfies the
    conditional concentration hypothesis P[|theta - xi| >= eps | xi] <= delta
    on a grid of parameter values; refuses to assert the conclusion (raises)
    if the hypothesis fails.
    """
    grid = model.hypothesis_grid()
    for xi0 in grid:
        est = model.estimator_given(np.full(hypothesis_reps, xi0), rng)
        freq = float(np.mean(np.abs(est - xi0) >= eps))
        slack = 3.0 * math.sqrt(delta * (1.0 - delta) / hypothesis_reps)
        if freq > delta + slack:
            raise PreconditionViolationError(
                f"estimator tail {freq:.4f} at xi={xi0:.3f} exceeds delta={delta:.4f}"
            )
    xi, post = model.run(replications, rng)
    hits = np.abs(post - xi) >= 2.0 * eps
    freq = float(np.mean(hits))
    ci99 = 2.576 * math.sqrt(max(freq * (1.0 - freq), 1.0 / replications) / replications)
    bound = 2.0 * delta
    return HarnessReport(
        frequency=freq,
        ci99=ci99,
        bound=bound,
        passed=freq <= bound + ci99,
        hypothesis_ok=True,
        replications=replications,
    )


# -- semibandit atom priors -------------------------------------------------


@dataclass(eq=False)
class AtomPrior:
    """Independent Beta(a_i, b_i) priors over atom success probabilities.

    Carries the derived non-degeneracy constants: tau (smallest prior
    mean), sigma2 (smallest prior variance), and the declared lower-tail
    exponent alpha, which is validated on a grid at construction.
    """

    a: np.ndarray
    b: np.ndarray
    alpha: float

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a.shape != self.b.shape or np.any(self.a <= 0) or np.any(self.b <= 0):
            raise InvalidInputError("Beta parameters must be positive and aligned")
        if self.alpha <= 0:
            raise InvalidInputError("tail exponent alpha must be positive")
        grid = np.arange(0.01, 1.0 + 1e-9, 0.01)
        floor = np.exp(-grid ** (-self.alpha))
        for ai, bi in zip(self.a, self.b):
            if np.any(beta_dist.cdf(grid, ai, bi) < floor - 1e-12):
                raise InvalidInputError(
                    f"Beta({ai}, {bi}) violates the lower-tail assumption at alpha={self.alpha}"
                )

    @property
    def n_atoms(self) -> int:
        return self.a.shape[0]

    def means(self) -> np.ndarray:
        return self.a / (self.a + self.b)

    def variances(self) -> np.ndarray:
        s = self.a + self.b
        return self.a * self.b / (s**2 * (s + 1.0))

    @property
    def tau(self) -> float:
        return float(np.min(self.means()))

    @property
    def sigma2(self) -> float:
        return float(np.min(self.variances()))

    def zero_run_probability(self, atom: int, n: int) -> float:
        """E[(1 - theta_atom)^n] = B(a, b + n) / B(a, b)."""
        ai, bi = self.a[atom], self.b[atom]
        return float(np.exp(betaln(ai, bi + n) - betaln(ai, bi)))

    def mean_times_zero_run(self, atom: int, n: int) -> float:
        """E[theta_atom * (1 - theta_atom)^n] = B(a + 1, b + n) / B(a, b)."""
        ai, bi = self.a[atom], self.b[atom]
        return float(np.exp(betaln(ai + 1.0, bi + n) - betaln(ai, bi)))

    def posterior_mean(self, atom: int, successes: int, n: int) -> float:
        ai, bi = self.a[atom], self.b[atom]
        return float((ai + successes) / (ai + bi + n))

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.beta(self.a, self.b, size=size)


def subgaussian_norm_estimate(samples, directions, t_grid=(0.5, 1.0, 2.0)) -> float:
    """Empirical lower-bound certificate for the subgaussian norm.

    Evaluates sqrt(2 log E[exp(t X)] / t^2) over the +-t_grid scaled by the
    per-direction empirical standard deviation and returns the maximum.
    Samples are assumed empirically centered.
    """
    if directions is None or len(directions) == 0:
        raise InvalidInputError("at least one direction is required")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    best = 0.0
    for u in directions:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = samples @ u
        sd = float(np.std(x))
        if sd == 0.0:
            continue
        for t0 in t_grid:
            for sign in (1.0, -1.0):
                t = sign * t0 / sd
                log_mgf = float(logsumexp(t * x) - math.log(n))
                best = max(best, math.sqrt(max(0.0, 2.0 * log_mgf / t**2)))
    return best
