"""The stage recommendation game: a zero-sum game between a planner who
may recommend an action containing the stage atom (or do nothing) and an
agent who best-responds from the atom-avoiding actions.

The continuum signal is discretized into scenarios (exactly enumerated
count tuples for finite per-atom sample sizes when small enough, Monte
Carlo otherwise), the minimax value is an exact LP on the discretized
game, and padding certificates are recomputed by enumeration so they do
not depend on the solver.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import betaln, gammaln

from .errors import (
    InvalidInputError,
    LiftUndefinedError,
    PreconditionViolationError,
    SolverError,
)
from .semibandit import SemibanditInstance

ENUMERATION_CAP = 100_000
CERT_TOL = 1e-8


@dataclass(eq=False)
class GameSpec:
    """Discretized stage game: scenario weights, per-scenario conditional
    atom means, and the two menus (instance action indices)."""

    stage: int
    n_atoms: int
    actions: list[tuple[int, ...]]
    menu_rec: list[int]
    menu_resp: list[int]
    weights: np.ndarray
    scenario_means: np.ndarray
    signal: str  # enumerated | mc | infinite | easy
    n: int | None

    @property
    def scenario_count(self) -> int:
        return self.weights.shape[0]

    def action_value(self, action_idx: int) -> np.ndarray:
        """Per-scenario conditional mean reward of an action."""
        act = list(self.actions[action_idx])
        return self.scenario_means[:, act].sum(axis=1)


def _beta_binomial_pmf(k: np.ndarray, n: int, a: float, b: float) -> np.ndarray:
    return np.exp(
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + betaln(a + k, b + n - k)
        - betaln(a, b)
    )


def build_game(
    instance: SemibanditInstance,
    j: int,
    n: int | None,
    scenario_count: int,
    rng: np.random.Generator | None = None,
    mode: str = "standard",
) -> GameSpec:
    """Construct the stage-j game.

    ``n`` is the per-atom sample count of the planner's signal (atoms with
    0-based index < j); ``None`` means the infinite-sample game where those
    atom values are known exactly.  ``mode="easy"`` additionally reveals
    every other atom.  Count tuples are enumerated exactly when the product
    space is at most 100000 scenarios, otherwise sampled.
    """
    d = instance.n_atoms
    if not (1 <= j <= d):
        raise InvalidInputError("stage j out of range")
    if scenario_count < 10:
        raise InvalidInputError("scenario count must be at least 10")
    aj = j - 1
    menu_rec = instance.actions_containing(aj)
    menu_resp = instance.actions_avoiding(aj)
    if not menu_rec or not menu_resp:
        raise InvalidInputError("both menus of the stage game must be nonempty")
    prior_means = instance.prior.means()

    if n is None or mode == "easy":
        if rng is None:
            raise InvalidInputError("sampled games need an rng stream")
        theta = instance.prior.sample(rng, size=(scenario_count, d))
        means = np.tile(prior_means, (scenario_count, 1))
        if mode == "easy":
            means = theta
        else:
            means[:, :j] = theta[:, :j]
        return GameSpec(
            stage=j,
            n_atoms=d,
            actions=list(instance.actions),
            menu_rec=menu_rec,
            menu_resp=menu_resp,
            weights=np.full(scenario_count, 1.0 / scenario_count),
            scenario_means=means,
            signal="easy" if mode == "easy" else "infinite",
            n=None,
        )

    if n < 0:
        raise InvalidInputError("sample count must be nonnegative")
    if (n + 1) ** j <= ENUMERATION_CAP:
        grids = [np.arange(n + 1)] * j
        counts = np.array(list(itertools.product(*grids)), dtype=np.int64).reshape(-1, j)
        weights = np.ones(counts.shape[0])
        for i in range(j):
            weights *= _beta_binomial_pmf(
                counts[:, i], n, float(instance.prior.a[i]), float(instance.prior.b[i])
            )
        means = np.tile(prior_means, (counts.shape[0], 1))
        for i in range(j):
            ai, bi = instance.prior.a[i], instance.prior.b[i]
            means[:, i] = (ai + counts[:, i]) / (ai + bi + n)
        return GameSpec(
            stage=j,
            n_atoms=d,
            actions=list(instance.actions),
            menu_rec=menu_rec,
            menu_resp=menu_resp,
            weights=weights,
            scenario_means=means,
            signal="enumerated",
            n=n,
        )

    if rng is None:
        raise InvalidInputError("sampled games need an rng stream")
    theta = instance.prior.sample(rng, size=(scenario_count, d))
    counts = rng.binomial(n, theta[:, :j])
    means = np.tile(prior_means, (scenario_count, 1))
    for i in range(j):
        ai, bi = instance.prior.a[i], instance.prior.b[i]
        means[:, i] = (ai + counts[:, i]) / (ai + bi + n)
    return GameSpec(
        stage=j,
        n_atoms=d,
        actions=list(instance.actions),
        menu_rec=menu_rec,
        menu_resp=menu_resp,
        weights=np.full(scenario_count, 1.0 / scenario_count),
        scenario_means=means,
        signal="mc",
        n=n,
    )


@dataclass(eq=False)
class PaddedPolicy:
    """Planner strategy: per-scenario distribution over the recommendation
    menu (remainder is do-nothing) with enumerated padding values."""

    stage: int
    n: int | None
    menu_action_indices: list[int]
    probs: np.ndarray  # (scenarios, menu)
    padding: np.ndarray  # (menu,)
    signal: str

    @property
    def scenario_count(self) -> int:
        return self.probs.shape[0]

    @property
    def total_padding(self) -> float:
        return float(np.sum(self.padding))

    def do_nothing_mass(self) -> np.ndarray:
        return np.clip(1.0 - self.probs.sum(axis=1), 0.0, 1.0)

    def scenario_of_counts(self, counts) -> int:
        if self.signal != "enumerated" or self.n is None:
            raise InvalidInputError("count lookup needs an enumerated finite-sample policy")
        j = self.stage
        if len(counts) != j:
            raise InvalidInputError(f"expected {j} per-atom counts")
        s = 0
        for k in counts:
            if not (0 <= int(k) <= self.n):
                raise InvalidInputError("count outside the signal range")
            s = s * (self.n + 1) + int(k)
        return s

    def probs_for_counts(self, counts) -> np.ndarray:
        return self.probs[self.scenario_of_counts(counts)]

    def padding_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """(menu action indices, padding weights normalized to 1)."""
        total = self.total_padding
        if total <= 0.0:
            raise LiftUndefinedError("zero total padding; the q-distribution is ill-posed")
        return np.asarray(self.menu_action_indices), self.padding / total

    def to_json(self) -> str:
        return json.dumps(
            {
                "stage": self.stage,
                "n": self.n,
                "menu": list(self.menu_action_indices),
                "probs": self.probs.tolist(),
                "padding": self.padding.tolist(),
                "total_padding": self.total_padding,
                "signal": self.signal,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "PaddedPolicy":
        doc = json.loads(text)
        return PaddedPolicy(
            stage=int(doc["stage"]),
            n=None if doc["n"] is None else int(doc["n"]),
            menu_action_indices=[int(k) for k in doc["menu"]],
            probs=np.asarray(doc["probs"], dtype=float),
            padding=np.asarray(doc["padding"], dtype=float),
            signal=doc["signal"],
        )


@dataclass
class SolveReport:
    value: float
    padding_total: float
    dual_objective: float
    duality_gap: float
    certificate_upper_bound: float
    certificate_gap: float


def _pair_margins(game: GameSpec, probs: np.ndarray) -> np.ndarray:
    """E[(theta_rec - theta_resp) 1{pi = rec}] for every (menu, response) pair."""
    m = len(game.menu_rec)
    b = len(game.menu_resp)
    out = np.empty((m, b))
    for mi, rec_idx in enumerate(game.menu_rec):
        rec_val = game.action_value(rec_idx)
        weighted = game.weights * probs[:, mi]
        for bi, resp_idx in enumerate(game.menu_resp):
            out[mi, bi] = float(np.sum(weighted * (rec_val - game.action_value(resp_idx))))
    return out


def solve_minimax(game: GameSpec) -> tuple[float, PaddedPolicy, SolveReport]:
    """Exact LP solution of the discretized game.

    Maximizes the total padding sum_m t_m subject to, for every menu action
    and response, t_m <= E[(theta_rec - theta_resp) 1{pi = rec}], with
    per-scenario simplex constraints (do-nothing takes the slack).  The
    returned policy's padding values are recomputed by enumeration, and the
    report carries both the LP dual objective and an independent
    best-response certificate built from the agent's dual strategy.
    """
    s = game.scenario_count
    m = len(game.menu_rec)
    b = len(game.menu_resp)
    n_pi = s * m

    rec_vals = np.stack([game.action_value(i) for i in game.menu_rec], axis=1)  # (s, m)
    resp_vals = np.stack([game.action_value(i) for i in game.menu_resp], axis=1)  # (s, b)

    rows, cols, data = [], [], []
    row_id = 0
    for mi in range(m):
        for bi in range(b):
            delta = game.weights * (rec_vals[:, mi] - resp_vals[:, bi])
            rows.extend([row_id] * s)
            cols.extend(range(mi, n_pi, m))  # pi[s, mi] at index s * m + mi
            data.extend(-delta)
            rows.append(row_id)
            cols.append(n_pi + mi)
            data.append(1.0)
            row_id += 1
    pair_rows = row_id
    for si in range(s):
        rows.extend([row_id] * m)
        cols.extend(range(si * m, si * m + m))
        data.extend([1.0] * m)
        row_id += 1
    a_ub = sparse.coo_matrix((data, (rows, cols)), shape=(row_id, n_pi + m)).tocsr()
    b_ub = np.concatenate([np.zeros(pair_rows), np.ones(s)])
    c = np.concatenate([np.zeros(n_pi), -np.ones(m)])
    # No explicit upper bound on pi: the scenario rows carry it, which keeps
    # the row duals meaningful (a duplicate variable bound absorbs them).
    bounds = [(0.0, None)] * (n_pi + m)

    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise SolverError(f"minimax LP failed: {res.message}")
    value = float(-res.fun) + 0.0
    probs = res.x[:n_pi].reshape(s, m)

    margins = _pair_margins(game, probs)
    padding = margins.min(axis=1)
    policy = PaddedPolicy(
        stage=game.stage,
        n=game.n,
        menu_action_indices=list(game.menu_rec),
        probs=probs,
        padding=padding,
        signal=game.signal,
    )

    marginals = np.asarray(res.ineqlin.marginals)
    dual_obj = float(-np.sum(marginals[pair_rows:]))
    y = -marginals[:pair_rows].reshape(m, b)
    response = np.empty_like(y)
    for mi in range(m):
        tot = float(np.sum(y[mi]))
        response[mi] = y[mi] / tot if tot > 0 else 1.0 / b
    # Planner best-responds per scenario against the agent's dual strategy:
    # a valid upper bound on the game value for any response.
    gains = rec_vals[:, :, None] - resp_vals[:, None, :]  # (s, m, b)
    against = np.einsum("smb,mb->sm", gains, response)
    ub = float(np.sum(game.weights * np.clip(against.max(axis=1), 0.0, None)))
    report = SolveReport(
        value=value,
        padding_total=float(np.sum(padding)),
        dual_objective=dual_obj,
        duality_gap=abs(value - dual_obj),
        certificate_upper_bound=ub,
        certificate_gap=ub - value,
    )
    return value, policy, report


@dataclass
class PaddingCertificate:
    declared: np.ndarray
    recomputed: np.ndarray
    max_deviation: float
    passed: bool


def verify_padding(policy: PaddedPolicy, game: GameSpec) -> PaddingCertificate:
    """Re-enumerate every per-arm worst-case margin and compare with the
    policy's declared padding values."""
    if policy.probs.shape != (game.scenario_count, len(game.menu_rec)) or list(
        policy.menu_action_indices
    ) != list(game.menu_rec):
        raise InvalidInputError("policy dimensions do not match the game")
    recomputed = _pair_margins(game, policy.probs).min(axis=1)
    dev = float(np.max(np.abs(recomputed - policy.padding))) if len(recomputed) else 0.0
    tol = CERT_TOL * (1.0 + abs(policy.total_padding))
    return PaddingCertificate(
        declared=policy.padding.copy(),
        recomputed=recomputed,
        max_deviation=dev,
        passed=bool(dev <= tol),
    )


@dataclass
class LiftedStrategy:
    p: float
    base_probs: np.ndarray
    lifted_probs: np.ndarray
    q: np.ndarray
    pair_lower_bounds: np.ndarray
    pair_values: np.ndarray
    all_nonnegative: bool


def bic_lift(policy: PaddedPolicy, game: GameSpec, p: float) -> LiftedStrategy:
    """Mix the policy with the blind padding distribution q = padding/total:
    with probability p follow the policy, otherwise recommend from q.

    Verifies, for every (recommendation, response) pair, the lift margin
        E[(theta_rec - theta_resp) 1{lift = rec}]
          >= p * padding_rec - d (1 - p) q_rec >= 0
    by direct computation over scenarios.  Requires p >= d / (d + total).
    """
    total = policy.total_padding
    if total <= 0.0:
        raise LiftUndefinedError("cannot lift a policy with zero total padding")
    d = game.n_atoms
    threshold = d / (d + total)
    if p < threshold - 1e-12:
        raise PreconditionViolationError(
            f"mixing weight p={p:.6f} below the lift threshold {threshold:.6f}"
        )
    _, q = policy.padding_distribution()
    lifted = p * policy.probs + (1.0 - p) * q[None, :]

    base_margins = _pair_margins(game, policy.probs)  # (m, b)
    prior_gaps = np.empty_like(base_margins)
    for mi, rec_idx in enumerate(game.menu_rec):
        rec_val = game.action_value(rec_idx)
        for bi, resp_idx in enumerate(game.menu_resp):
            prior_gaps[mi, bi] = float(
                np.sum(game.weights * (rec_val - game.action_value(resp_idx)))
            )
    pair_values = p * base_margins + (1.0 - p) * q[:, None] * prior_gaps
    lower = p * policy.padding[:, None] - d * (1.0 - p) * q[:, None]
    ok = bool(np.all(pair_values >= lower - 1e-9) and np.all(lower >= -1e-9))
    return LiftedStrategy(
        p=p,
        base_probs=policy.probs,
        lifted_probs=lifted,
        q=q,
        pair_lower_bounds=lower,
        pair_values=pair_values,
        all_nonnegative=ok,
    )


def policy_value_se(game: GameSpec, policy: PaddedPolicy) -> float:
    """Monte-Carlo standard error of the solved value for equally weighted
    scenario games (0 for exactly enumerated games)."""
    if game.signal == "enumerated":
        return 0.0
    margins = _pair_margins(game, policy.probs)
    worst = margins.argmin(axis=1)
    g = np.zeros(game.scenario_count)
    for mi, rec_idx in enumerate(game.menu_rec):
        resp_idx = game.menu_resp[int(worst[mi])]
        diff = game.action_value(rec_idx) - game.action_value(resp_idx)
        g += policy.probs[:, mi] * diff
    return float(np.std(g) / math.sqrt(game.scenario_count))


@dataclass
class EasyGameResult:
    lambda_easy: float
    lambda_infinite: float
    se_easy: float
    se_infinite: float
    dominates: bool


def easy_game_value(
    instance: SemibanditInstance, j: int, scenario_count: int, rng: np.random.Generator
) -> EasyGameResult:
    """Value of the game where every atom value is revealed to the planner,
    compared against the infinite-sample stage game on coupled draws."""
    seed_state = rng.bit_generator.state
    easy = build_game(instance, j, None, scenario_count, rng, mode="easy")
    rng.bit_generator.state = seed_state
    inf_game = build_game(instance, j, None, scenario_count, rng)
    v_easy, pol_easy, _ = solve_minimax(easy)
    v_inf, pol_inf, _ = solve_minimax(inf_game)
    se_easy = policy_value_se(easy, pol_easy)
    se_inf = policy_value_se(inf_game, pol_inf)
    combined = math.hypot(se_easy, se_inf)
    return EasyGameResult(
        lambda_easy=v_easy,
        lambda_infinite=v_inf,
        se_easy=se_easy,
        se_infinite=se_inf,
        dominates=bool(v_easy >= v_inf - 3.0 * combined),
    )


@dataclass
class GapResult:
    n: int
    lambda_n: float
    lambda_infinite: float
    gap: float
    se_infinite: float
    n_threshold: float
    checked: bool
    half_value_ok: bool


def finite_sample_gap(
    instance: SemibanditInstance,
    j: int,
    n: int,
    scenario_count: int,
    rng: np.random.Generator,
    kappa: float = 1.0,
) -> GapResult:
    """Solve the finite-sample and infinite-sample stage games and report
    the value gap.

    Asserts the half-value property lambda_j(n) >= lambda_inf / 2 (up to
    three combined standard errors) whenever n is at least
    kappa d^2 log|A| / lambda_inf^2, the calibrated sufficient sample size.
    """
    game_n = build_game(instance, j, n, scenario_count, rng)
    v_n, pol_n, _ = solve_minimax(game_n)
    game_inf = build_game(instance, j, None, scenario_count, rng)
    v_inf, pol_inf, _ = solve_minimax(game_inf)
    se_n = policy_value_se(game_n, pol_n)
    se_inf = policy_value_se(game_inf, pol_inf)
    combined = math.hypot(se_n, se_inf)
    d = instance.n_atoms
    threshold = math.inf
    if v_inf > 0:
        threshold = kappa * d**2 * math.log(max(len(instance.actions), 2)) / v_inf**2
    checked = n >= threshold
    ok = (not checked) or (v_n >= 0.5 * v_inf - 3.0 * combined)
    return GapResult(
        n=n,
        lambda_n=v_n,
        lambda_infinite=v_inf,
        gap=v_inf - v_n,
        se_infinite=se_inf,
        n_threshold=threshold,
        checked=checked,
        half_value_ok=ok,
    )


@dataclass
class StagePlan:
    policies: dict
    lambda_infinite: dict
    lam_lower: float
    lam: float


def stage_policies(
    instance: SemibanditInstance,
    n: int,
    rng: np.random.Generator,
    scenario_count: int = 20_000,
) -> StagePlan:
    """Solve every stage game: infinite-sample values for the growth rate
    (lam = min_j lambda_j / 2d) and enumerated n-sample policies for the
    padded phases."""
    d = instance.n_atoms
    lambda_inf = {}
    for j in range(1, d + 1):
        game = build_game(instance, j, None, scenario_count, rng)
        lambda_inf[j], _, _ = solve_minimax(game)
    lam_lower = min(lambda_inf.values())
    policies = {}
    for j in range(2, d + 1):
        game = build_game(instance, j, n, scenario_count, rng)
        _, policy, _ = solve_minimax(game)
        policies[j] = policy
    return StagePlan(
        policies=policies,
        lambda_infinite=lambda_inf,
        lam_lower=lam_lower,
        lam=lam_lower / (2.0 * d),
    )

