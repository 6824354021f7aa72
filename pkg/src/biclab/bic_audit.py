"""Monte-Carlo estimation of recommendation margins for Thompson sampling
on linear bandits, the geometric margin checks for uniform priors on
regular bodies, both counterexample drivers, and the extreme-point
simulation reduction.

The margin audited at time t is E[(theta_i - theta_j) 1{A^(t) = A_i}],
where A^(t) is the Thompson recommendation given the first t-1 observed
steps.  Per replication the estimator accumulates
P^t[A* = A_i] * (posterior mean difference), whose expectation equals the
margin; the recommendation probabilities come from shared inner posterior
samples, so they sum to one exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import InvalidInputError
from .geometry import ActionSet, ConvexBody, best_action_many, caratheodory_decompose
from .linear_ts import SpectralHistory, gamma_threshold
from .priors import (
    BernoulliSign,
    GaussianNoise,
    LinearPrior,
    Noiseless,
    ObsModel,
    SliceState,
    condition,
    simulate_rewards,
)

Z_CERT = 2.58
DEFAULT_N_INNER = 2000


@dataclass(eq=False)
class LinearAuditConfig:
    """Instance for a BIC margin audit: prior, action set, observation
    channel, and the schedule of actions played before the audited step."""

    prior: LinearPrior
    actions: ActionSet
    obs: ObsModel
    schedule: list[int] = field(default_factory=list)
    n_inner: int = DEFAULT_N_INNER


@dataclass
class BicMarginRow:
    t: int
    i: int
    j: int
    margin: float
    se: float
    cond_freq: float
    certified: bool
    undefined: bool


@dataclass
class BicReport:
    rows: list[BicMarginRow]
    t: int
    replications: int
    z: float
    cond_freqs: np.ndarray
    ts_value: float
    prior_best_value: float
    averaging_slack: float

    def all_certified(self) -> bool:
        return all(r.certified for r in self.rows if not r.undefined)

    def row(self, i: int, j: int) -> BicMarginRow:
        for r in self.rows:
            if r.i == i and r.j == j:
                return r
        raise KeyError((i, j))


def _ratio_se(num: np.ndarray, den: np.ndarray, m: float) -> float:
    r = num.shape[0]
    resid = num - m * den
    return math.sqrt(float(np.mean(resid**2)) / r) / max(float(np.mean(den)), 1e-300)


def _assemble_report(
    t, pairs, p_hat, mean_diffs, action_means, prior_best, z, replications
) -> BicReport:
    rows = []
    for i, j in pairs:
        num = p_hat[:, i] * mean_diffs[(i, j)]
        freq = float(np.mean(p_hat[:, i]))
        margin = float(np.mean(num))
        se = float(np.std(num) / math.sqrt(replications))
        rows.append(
            BicMarginRow(
                t=t,
                i=i,
                j=j,
                margin=margin,
                se=se,
                cond_freq=freq,
                certified=bool(margin >= -z * se),
                undefined=bool(freq == 0.0),
            )
        )
    ts_value = float(np.mean(np.sum(p_hat * action_means, axis=1)))
    value_se = float(np.std(np.sum(p_hat * action_means, axis=1)) / math.sqrt(replications))
    return BicReport(
        rows=rows,
        t=t,
        replications=replications,
        z=z,
        cond_freqs=p_hat.mean(axis=0),
        ts_value=ts_value,
        prior_best_value=prior_best,
        averaging_slack=ts_value - prior_best + 3.0 * value_se,
    )


def estimate_bic_margin(
    config: LinearAuditConfig,
    t: int,
    pairs: list[tuple[int, int]],
    replications: int,
    rng: np.random.Generator,
    z: float = Z_CERT,
) -> BicReport:
    """Margin estimates for the Thompson recommendation at time t, with the
    first t-1 steps played from the config schedule.

    Exact posterior regimes (conjugate Gaussian; uniform prior with
    noiseless observations) are fully vectorized; a noiseless spanning
    schedule collapses the posterior to a point mass, making the inner
    recommendation probabilities exact indicators.
    """
    if t < 1:
        raise InvalidInputError("time index t must be at least 1")
    steps = t - 1
    if len(config.schedule) < steps:
        raise InvalidInputError("schedule shorter than the audited horizon")
    sched = [int(k) for k in config.schedule[:steps]]
    acts = config.actions
    vectors = acts.vectors
    n_actions = len(acts)
    for i, j in pairs:
        if not (0 <= i < n_actions and 0 <= j < n_actions):
            raise InvalidInputError("pair indices out of range")

    prior = config.prior
    x = vectors[sched] if steps else np.zeros((0, prior.dim))
    ell = prior.sample_n(rng, replications)
    prior_best = float(np.max(_prior_action_means(prior, acts, rng)))

    if isinstance(config.obs, Noiseless) and steps and np.linalg.matrix_rank(x) == prior.dim:
        # Point-mass regime: the posterior identifies the truth exactly.
        best = best_action_many(acts, ell)
        p_hat = np.zeros((replications, n_actions))
        p_hat[np.arange(replications), best] = 1.0
        mean_diffs = {(i, j): ell @ (vectors[i] - vectors[j]) for i, j in pairs}
        action_means = ell @ vectors.T
        return _assemble_report(
            t, pairs, p_hat, mean_diffs, action_means, prior_best, z, replications
        )

    if prior.kind == "gaussian" and isinstance(config.obs, (GaussianNoise, Noiseless)):
        means, factor = _gaussian_posterior_batch(prior, config.obs, x, ell, rng)
        p_hat = _inner_frequencies(means, factor, acts, config.n_inner, rng)
        mean_diffs = {(i, j): means @ (vectors[i] - vectors[j]) for i, j in pairs}
        action_means = means @ vectors.T
        return _assemble_report(
            t, pairs, p_hat, mean_diffs, action_means, prior_best, z, replications
        )

    # Generic per-replication fallback (particle or slice posteriors).
    p_hat = np.zeros((replications, n_actions))
    means = np.zeros((replications, prior.dim))
    for r in range(replications):
        rewards = simulate_rewards(config.obs, x @ ell[r], rng) if steps else np.zeros(0)
        state = condition(prior, x, rewards, config.obs, rng=rng)
        inner = state.sample_n(rng, config.n_inner)
        idx = best_action_many(acts, inner)
        p_hat[r] = np.bincount(idx, minlength=n_actions) / config.n_inner
        means[r] = state.mean(rng) if isinstance(state, SliceState) else state.mean()
    mean_diffs = {(i, j): means @ (vectors[i] - vectors[j]) for i, j in pairs}
    action_means = means @ vectors.T
    return _assemble_report(t, pairs, p_hat, mean_diffs, action_means, prior_best, z, replications)


def _prior_action_means(prior: LinearPrior, acts: ActionSet, rng) -> np.ndarray:
    try:
        mu = prior.mean()
    except InvalidInputError:
        mu = prior.sample_n(rng, 20_000).mean(axis=0)
    return acts.vectors @ mu


def _gaussian_posterior_batch(prior, obs, x, ell, rng):
    """Posterior means (per replication) and the shared covariance factor
    for a Gaussian prior with a deterministic schedule."""
    if x.shape[0] == 0:
        cov = prior.cov
        means = np.zeros_like(ell)
        rewards = None
    elif isinstance(obs, GaussianNoise):
        prec = np.linalg.inv(prior.cov) + (x.T @ x) / obs.sigma**2
        cov = np.linalg.inv(prec)
        noise = obs.sigma * rng.standard_normal((ell.shape[0], x.shape[0]))
        rewards = ell @ x.T + noise
        means = rewards @ (cov @ x.T / obs.sigma**2).T
    else:
        s = x @ prior.cov @ x.T
        gain = prior.cov @ x.T @ np.linalg.pinv(s)
        rewards = ell @ x.T
        means = rewards @ gain.T
        cov = prior.cov - gain @ x @ prior.cov
    w, u = np.linalg.eigh(0.5 * (cov + cov.T))
    factor = u * np.sqrt(np.clip(w, 0.0, None))
    return means, factor


def _inner_frequencies(means, factor, acts, n_inner, rng, chunk=200) -> np.ndarray:
    """P^t[A* = A_i] estimated from n_inner posterior samples per
    replication, shared across all i (frequencies sum to one exactly)."""
    r, d = means.shape
    n_actions = len(acts)
    out = np.empty((r, n_actions))
    for start in range(0, r, chunk):
        stop = min(start + chunk, r)
        block = stop - start
        z = rng.standard_normal((block, n_inner, d))
        samples = means[start:stop, None, :] + z @ factor.T
        scores = samples @ acts.vectors.T
        idx = np.argmax(scores, axis=2)
        counts = np.apply_along_axis(np.bincount, 1, idx, None, n_actions)
        out[start:stop] = counts / n_inner
    return out


def conditional_margin_estimate(
    config: LinearAuditConfig,
    t: int,
    pairs: list[tuple[int, int]],
    replications: int,
    rng: np.random.Generator,
) -> dict[tuple[int, int], tuple[float, float, float]]:
    """Alternate estimator that draws the recommendation itself and
    averages the posterior mean difference over the conditioning event,
    times its frequency: (i, j) -> (margin, se, frequency).

    Agrees with ``estimate_bic_margin`` in expectation; used as the
    dual-route consistency check.
    """
    report_cfg = config
    steps = t - 1
    sched = [int(k) for k in report_cfg.schedule[:steps]]
    acts = config.actions
    vectors = acts.vectors
    prior = config.prior
    x = vectors[sched] if steps else np.zeros((0, prior.dim))
    ell = prior.sample_n(rng, replications)
    if isinstance(config.obs, Noiseless) and steps and np.linalg.matrix_rank(x) == prior.dim:
        means = ell
        factor = np.zeros((prior.dim, prior.dim))
    elif prior.kind == "gaussian":
        means, factor = _gaussian_posterior_batch(prior, config.obs, x, ell, rng)
    else:
        raise InvalidInputError("conditional estimator implemented for exact regimes only")
    draws = means + rng.standard_normal((replications, prior.dim)) @ factor.T
    rec = best_action_many(acts, draws)
    out = {}
    for i, j in pairs:
        mask = (rec == i).astype(float)
        diffs = means @ (vectors[i] - vectors[j])
        num = mask * diffs
        m = float(np.mean(num))
        se = float(np.std(num) / math.sqrt(replications))
        out[(i, j)] = (m, se, float(np.mean(mask)))
    return out


# -- corollary margins -------------------------------------------------------


@dataclass
class CorollaryRow:
    i: int
    p_hat: float
    p_se: float
    bound: float
    bound_ok: bool
    margins: dict[int, tuple[float, float]]


@dataclass
class CorollaryReport:
    rows: list[CorollaryRow]
    replications: int

    def all_bounds_ok(self) -> bool:
        return all(r.bound_ok for r in self.rows)


def audit_corollary_margins(
    body: ConvexBody,
    actions: ActionSet,
    replications: int,
    rng: np.random.Generator,
    chunk: int = 250_000,
) -> CorollaryReport:
    """For a uniform prior on the body: per action, the optimality
    probability P[A* = A_i] against the (r eps / 4)^d floor, and conditional
    margins E[<l, A_i - A_j> | A* = A_i] for every alternative."""
    prior = LinearPrior.uniform(body)
    eps = actions.separation
    r_reg = body.regularity
    d = body.dim
    bound = (r_reg * eps / 4.0) ** d
    n_actions = len(actions)
    counts = np.zeros(n_actions)
    sums = np.zeros((n_actions, n_actions))
    sums_sq = np.zeros((n_actions, n_actions))
    done = 0
    while done < replications:
        block = min(chunk, replications - done)
        ell = prior.sample_n(rng, block)
        best = best_action_many(actions, ell)
        proj = ell @ actions.vectors.T
        for i in range(n_actions):
            mask = best == i
            counts[i] += float(np.sum(mask))
            if np.any(mask):
                gaps = proj[mask, i][:, None] - proj[mask]
                sums[i] += gaps.sum(axis=0)
                sums_sq[i] += (gaps**2).sum(axis=0)
        done += block
    rows = []
    for i in range(n_actions):
        p = counts[i] / replications
        p_se = math.sqrt(max(p * (1 - p), 1.0 / replications) / replications)
        margins = {}
        for j in range(n_actions):
            if j == i or counts[i] == 0:
                continue
            m = sums[i, j] / counts[i]
            var = max(sums_sq[i, j] / counts[i] - m**2, 0.0)
            margins[j] = (float(m), math.sqrt(var / counts[i]))
        rows.append(
            CorollaryRow(
                i=i,
                p_hat=float(p),
                p_se=float(p_se),
                bound=bound,
                bound_ok=bool(p + 3 * p_se >= bound),
                margins=margins,
            )
        )
    return CorollaryReport(rows=rows, replications=replications)


# -- counterexample drivers ---------------------------------------------------


PROP1_ACTIONS = np.array([[1.0, 0.0], [-1.0, 0.0], [1.8, 0.6]])


@dataclass
class SubcaseMargin:
    first_action: int
    margin: float
    se: float
    weight: float


@dataclass
class Counterexample1Result:
    margin: float
    margin_se: float
    num_mean: float
    num_se: float
    rec_prob: float
    subcases: dict[int, SubcaseMargin]
    replications: int

    def positive_at(self, z: float = Z_CERT) -> bool:
        return self.num_mean - z * self.num_se > 0.0


def run_counterexample_1(
    replications: int,
    rng: np.random.Generator,
    actions: np.ndarray | None = None,
    cov: np.ndarray | None = None,
) -> Counterexample1Result:
    """Estimate E[theta_3 - theta_1 | A^(2) = A_1] for the three-action
    Gaussian instance with a noiseless first observation.

    The time-2 posterior is an exact one-dimensional conditional Gaussian,
    so P^2[A* = A_1] is computed in closed form from normal CDFs of the
    optimality cone's chord; only the outer replications are Monte Carlo.
    Reports the overall margin plus the per-first-action sub-cases.
    """
    a = PROP1_ACTIONS if actions is None else np.asarray(actions, dtype=float)
    sigma = np.eye(a.shape[1]) if cov is None else np.asarray(cov, dtype=float)
    chol = np.linalg.cholesky(sigma)
    d = a.shape[1]
    if d != 2:
        raise InvalidInputError("the driver is specific to the planar instance")
    ell = rng.standard_normal((replications, d)) @ chol.T
    tilde = rng.standard_normal((replications, d)) @ chol.T
    first = np.argmax(tilde @ a.T, axis=1)

    target = a[2] - a[0]
    cone = np.stack([a[0] - a[1], a[0] - a[2]])  # A* = A_1 constraints
    num = np.zeros(replications)
    den = np.zeros(replications)
    subcases = {}
    for k in range(a.shape[0]):
        mask = first == k
        if not np.any(mask):
            continue
        ak = a[k]
        denom = float(ak @ sigma @ ak)
        gain = sigma @ ak / denom
        y = ell[mask] @ ak
        m2 = y[:, None] * gain[None, :]
        cov2 = sigma - np.outer(sigma @ ak, sigma @ ak) / denom
        w_eig, u_eig = np.linalg.eigh(0.5 * (cov2 + cov2.T))
        w = math.sqrt(max(w_eig[-1], 0.0)) * u_eig[:, -1]
        p = _gaussian_cone_probability(m2, w, cone)
        mu_diff = m2 @ target
        num[mask] = p * mu_diff
        den[mask] = p
        sub_m = float(np.mean(p * mu_diff)) / max(float(np.mean(p)), 1e-300)
        sub_se = _ratio_se(p * mu_diff, p, sub_m)
        subcases[k + 1] = SubcaseMargin(
            first_action=k + 1, margin=sub_m, se=sub_se, weight=float(np.mean(mask))
        )
    m = float(np.mean(num)) / max(float(np.mean(den)), 1e-300)
    return Counterexample1Result(
        margin=m,
        margin_se=_ratio_se(num, den, m),
        num_mean=float(np.mean(num)),
        num_se=float(np.std(num) / math.sqrt(replications)),
        rec_prob=float(np.mean(den)),
        subcases=subcases,
        replications=replications,
    )


def _gaussian_cone_probability(means: np.ndarray, direction: np.ndarray, cone: np.ndarray):
    """P[means + s * direction satisfies cone rows >= 0] for s ~ N(0, 1)."""
    lo = np.full(means.shape[0], -np.inf)
    hi = np.full(means.shape[0], np.inf)
    feasible = np.ones(means.shape[0], dtype=bool)
    for c in cone:
        alpha = means @ c
        beta = float(direction @ c)
        if abs(beta) <= 1e-14:
            feasible &= alpha >= 0.0
            continue
        bound = -alpha / beta
        if beta > 0:
            lo = np.maximum(lo, bound)
        else:
            hi = np.minimum(hi, bound)
    p = np.clip(ndtr(hi) - ndtr(lo), 0.0, 1.0)
    p[~feasible] = 0.0
    return p


@dataclass
class DecayRow:
    d: int
    tail: float
    tail_se: float
    censored: bool
    inner_mean: float
    inner_se: float
    expected_mean: float


@dataclass
class Counterexample2Result:
    rows: list[DecayRow]
    slope: float
    intercept: float
    r_squared: float
    replications: int

    def decays(self, min_r2: float = 0.9) -> bool:
        return self.slope < 0.0 and self.r_squared >= min_r2

    def means_match(self, z: float = 3.0) -> bool:
        return all(abs(r.inner_mean - r.expected_mean) <= z * r.inner_se for r in self.rows)


def decay_probe_counterexample_2(
    d_list: list[int],
    replications: int,
    rng: np.random.Generator,
    threshold: float = 0.1,
    chunk: int = 200_000,
) -> Counterexample2Result:
    """Tail estimates E[(1/10 - <l, A_1>)_+] for the biased-box prior and
    the prior-optimal action, with a log-linear decay fit over d.

    The inner product reduces to the mean of d-1 iid uniform[-0.5, 1]
    coordinates scaled by 1/(2d); censored rows (all-zero estimates) are
    reported as "< 1/replications" and excluded from the fit.
    """
    rows = []
    for d in d_list:
        if d < 2:
            raise InvalidInputError("the construction needs d >= 2")
        s_sum = s_sq = t_sum = t_sq = 0.0
        done = 0
        while done < replications:
            block = min(chunk, replications - done)
            u = rng.random((block, d - 1)) * 1.5 - 0.5
            inner = u.sum(axis=1) / (2.0 * d)
            tail = np.clip(threshold - inner, 0.0, None)
            s_sum += float(inner.sum())
            s_sq += float((inner**2).sum())
            t_sum += float(tail.sum())
            t_sq += float((tail**2).sum())
            done += block
        mean_inner = s_sum / replications
        se_inner = math.sqrt(
            max(s_sq / replications - mean_inner**2, 0.0) / replications
        )
        mean_tail = t_sum / replications
        se_tail = math.sqrt(max(t_sq / replications - mean_tail**2, 0.0) / replications)
        rows.append(
            DecayRow(
                d=d,
                tail=mean_tail,
                tail_se=se_tail,
                censored=bool(mean_tail == 0.0),
                inner_mean=mean_inner,
                inner_se=se_inner,
                expected_mean=(d - 1) / (8.0 * d),
            )
        )
    pts = [(r.d, math.log(r.tail)) for r in rows if not r.censored]
    if len(pts) >= 2:
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        slope, intercept = np.polyfit(xs, ys, 1)
        fitted = slope * xs + intercept
        ss_res = float(np.sum((ys - fitted) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, intercept, r2 = 0.0, 0.0, 0.0
    return Counterexample2Result(
        rows=rows,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(r2),
        replications=replications,
    )


# -- extreme-point simulation reduction ---------------------------------------


@dataclass
class WrappedStep:
    inner_action: np.ndarray
    plays: list[int]
    weights: list[tuple[float, int]]
    rewards: list[float]
    selected_reward: float


@dataclass
class WrappedTranscript:
    steps: list[WrappedStep]
    inner_gram: np.ndarray
    wrapped_gram: np.ndarray
    gram_dominates: bool

    @property
    def length(self) -> int:
        return sum(len(s.plays) for s in self.steps)


def simulate_extreme_point_wrapper(
    vertices,
    inner_actions: np.ndarray,
    ell_star: np.ndarray,
    rng: np.random.Generator,
) -> WrappedTranscript:
    """Simulate each inner step with d extreme-point plays.

    Per inner action: decompose it over the vertex set, play every vertex
    of the decomposition once (padding with the heaviest vertex up to d
    plays), draw binary sign rewards with the vertex means, and select the
    feedback of one decomposition vertex with its convex weight.  The
    wrapped Gram matrix always dominates the inner one; the result records
    the eigenvalue check.
    """
    inner_actions = np.atleast_2d(np.asarray(inner_actions, dtype=float))
    d = inner_actions.shape[1]
    steps = []
    inner_gram = np.zeros((d, d))
    wrapped_gram = np.zeros((d, d))
    for a_t in inner_actions:
        decomp = caratheodory_decompose(vertices, a_t)
        plays = [idx for _, idx in decomp]
        heaviest = max(decomp)[1]
        while len(plays) < d:
            plays.append(heaviest)
        reward_of_vertex = {}
        rewards = []
        channel = BernoulliSign()
        for idx in plays:
            v = vertices.vectors[idx]
            r = float(simulate_rewards(channel, np.array([float(v @ ell_star)]), rng)[0])
            rewards.append(r)
            if idx not in reward_of_vertex:
                reward_of_vertex[idx] = r
            wrapped_gram += np.outer(v, v)
        weights = np.array([w for w, _ in decomp])
        pick = rng.choice(len(decomp), p=weights / weights.sum())
        selected = reward_of_vertex[decomp[pick][1]]
        inner_gram += np.outer(a_t, a_t)
        steps.append(
            WrappedStep(
                inner_action=a_t,
                plays=plays,
                weights=[(float(w), int(i)) for w, i in decomp],
                rewards=rewards,
                selected_reward=selected,
            )
        )
    lam_inner = float(np.linalg.eigvalsh(inner_gram)[0])
    lam_wrapped = float(np.linalg.eigvalsh(wrapped_gram)[0])
    return WrappedTranscript(
        steps=steps,
        inner_gram=inner_gram,
        wrapped_gram=wrapped_gram,
        gram_dominates=bool(lam_wrapped >= lam_inner - 1e-9),
    )


# -- spectral constant calibration --------------------------------------------


def spectral_schedule(d: int, r: float, eps: float, c: float) -> tuple[int, int]:
    """Fixed point of the threshold-schedule recursion: the number of
    round-robin plays per axis m and the audited time t = d m + 1 such that
    m >= gamma_threshold(d, t, r, eps, c)."""
    t = max(d + 1, 3)
    for _ in range(200):
        m = max(1, math.ceil(gamma_threshold(d, t, r, eps, c)))
        t_new = d * m + 1
        if t_new == t:
            return m, t
        t = t_new
    raise InvalidInputError("threshold schedule recursion did not stabilize")


def calibrate_spectral_constant(audit_passes, lo: float = 1.0 / 1024, hi: float = 1024.0) -> float:
    """Smallest constant (log-bisection, 5% resolution) for which the
    audit predicate passes; returns the bracket floor when even that
    passes."""
    if audit_passes(lo):
        return lo
    if not audit_passes(hi):
        raise InvalidInputError("audit fails across the whole constant bracket")
    while hi / lo > 1.05:
        mid = math.sqrt(lo * hi)
        if audit_passes(mid):
            hi = mid
        else:
            lo = mid
    return hi
