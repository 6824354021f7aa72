"""Combinatorial semibandit with independent Bernoulli atoms: the
zero-reward-run signal machinery, exact Beta-prior posterior formulas, the
staged initial-exploration algorithm, and a Monte-Carlo BIC audit of its
recommendation step classes.

Stages are 1-based: stage ``j`` explores atom ``j - 1`` (0-based), and the
zero-run event for stage ``j`` concerns the first N samples of atoms
``0 .. j-2``.  Instances must be in canonical stage order (see
``canonical_order``); the runner fails loudly otherwise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from .errors import InvalidInputError
from .priors import AtomPrior


@dataclass(eq=False)
class SemibanditInstance:
    """Atom priors plus a family of subset actions over the atoms."""

    prior: AtomPrior
    actions: list[tuple[int, ...]]

    def __post_init__(self):
        self.actions = [tuple(sorted(int(a) for a in act)) for act in self.actions]
        d = self.prior.n_atoms
        covered = set()
        for act in self.actions:
            if len(act) == 0:
                raise InvalidInputError("empty actions are not allowed")
            if min(act) < 0 or max(act) >= d:
                raise InvalidInputError("action references an unknown atom")
            covered.update(act)
        if covered != set(range(d)):
            raise InvalidInputError("every atom must appear in at least one action")

    @property
    def n_atoms(self) -> int:
        return self.prior.n_atoms

    def actions_containing(self, atom: int) -> list[int]:
        return [k for k, act in enumerate(self.actions) if atom in act]

    def actions_avoiding(self, atom: int) -> list[int]:
        return [k for k, act in enumerate(self.actions) if atom not in act]

    def action_scores(self, atom_means: np.ndarray) -> np.ndarray:
        return np.array([sum(atom_means[a] for a in act) for act in self.actions])

    def greedy_action(self, atom_means: np.ndarray) -> int:
        """First-maximum action index under the given atom means."""
        return int(np.argmax(self.action_scores(atom_means)))

    def posterior_means_for_counts(self, counts, n: int) -> np.ndarray:
        """Per-atom posterior means given ``counts`` successes in the first
        n samples of atoms 0..len(counts)-1; later atoms keep prior means."""
        means = self.prior.means().copy()
        for i, k in enumerate(counts):
            means[i] = self.prior.posterior_mean(i, int(k), n)
        return means

    def to_json(self) -> str:
        doc = {
            "atoms": [{"a": float(a), "b": float(b)} for a, b in zip(self.prior.a, self.prior.b)],
            "actions": [list(act) for act in self.actions],
            "alpha": self.prior.alpha,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SemibanditInstance":
        doc = json.loads(text)
        a = [atom["a"] for atom in doc["atoms"]]
        b = [atom["b"] for atom in doc["atoms"]]
        prior = AtomPrior(np.array(a), np.array(b), float(doc.get("alpha", 1.0)))
        return SemibanditInstance(prior, [tuple(act) for act in doc["actions"]])


# -- zero-run signal formulas (exact for Beta priors) -----------------------


def epsilon_for_set(instance: SemibanditInstance, n: int, prefix) -> float:
    """P[every atom in ``prefix`` earns zero reward in its first n samples]."""
    out = 1.0
    for i in prefix:
        out *= instance.prior.zero_run_probability(i, n)
    return out


def epsilon_j(instance: SemibanditInstance, n: int, j: int) -> float:
    """Probability of the stage-j zero-run event (1 for j = 1)."""
    if not (1 <= j <= instance.n_atoms) or n < 1:
        raise InvalidInputError("need 1 <= j <= d and n >= 1")
    return epsilon_for_set(instance, n, range(j - 1))


def zeros_means_for_set(instance: SemibanditInstance, n: int, prefix) -> np.ndarray:
    """E[theta_a | zero-run event over ``prefix``] for every atom a."""
    means = instance.prior.means().copy()
    for i in prefix:
        zp = instance.prior.zero_run_probability(i, n)
        means[i] = instance.prior.mean_times_zero_run(i, n) / zp
    return means


def zeros_posterior_mean(instance: SemibanditInstance, n: int, j: int, atom: int) -> float:
    """E[theta_atom | stage-j zero-run event]: Beta(a, b + n) mean for prefix
    atoms, the prior mean otherwise."""
    if atom < j - 1:
        ai, bi = instance.prior.a[atom], instance.prior.b[atom]
        return float(ai / (ai + bi + n))
    return float(instance.prior.means()[atom])


def mixed_signal_means(
    instance: SemibanditInstance, n: int, j: int, q: float
) -> tuple[np.ndarray, float]:
    """Atom means conditioned on x_j = 1, where x_j = max(zero-run, Ber(q)).

    Returns (means, P[x_j = 1]).  The new-atom conclusion needs q <= eps_j;
    the mixture itself is exact for any q in [0, 1].
    """
    eps = epsilon_j(instance, n, j)
    prior_means = instance.prior.means()
    e_theta_zeros = prior_means * eps
    for a in range(j - 1):
        others = eps / instance.prior.zero_run_probability(a, n)
        e_theta_zeros[a] = instance.prior.mean_times_zero_run(a, n) * others
    p_x1 = eps + q * (1.0 - eps)
    e_theta_x1 = e_theta_zeros + q * (prior_means - e_theta_zeros)
    return e_theta_x1 / p_x1, p_x1


def signal_zero_means(instance: SemibanditInstance, n: int, j: int, q: float) -> np.ndarray:
    """Atom means conditioned on x_j = 0."""
    means_x1, p_x1 = mixed_signal_means(instance, n, j, q)
    prior_means = instance.prior.means()
    return (prior_means - means_x1 * p_x1) / (1.0 - p_x1)


def n_lower_bound(instance: SemibanditInstance, guard_factor: float = 1.0) -> int:
    """Smallest integer at or above (20d/tau)^(1+alpha) log(20d/tau) times
    the guard factor."""
    tau = instance.prior.tau
    if tau <= 0:
        raise InvalidInputError("tau must be positive")
    ratio = 20.0 * instance.n_atoms / tau
    return math.ceil(guard_factor * ratio ** (1.0 + instance.prior.alpha) * math.log(ratio))


def greedy_after_zeros(instance: SemibanditInstance, n: int, j: int) -> tuple[int, ...]:
    """Action with the highest posterior mean given the stage-j zero-run
    event.

    When n meets the stage sample bound the returned action must contain an
    atom outside the explored prefix (raises otherwise); with smaller n a
    prefix-bound action is possible and simply returned.
    """
    means = zeros_means_for_set(instance, n, range(j - 1))
    act = instance.actions[instance.greedy_action(means)]
    if set(act) <= set(range(j - 1)) and n >= n_lower_bound(instance):
        raise InvalidInputError(
            "zero-run greedy action stayed inside the explored prefix despite "
            "a sufficient sample size"
        )
    return act


def greedy_mixed_signal(
    instance: SemibanditInstance, n: int, j: int, q: float | None = None
) -> tuple[int, ...]:
    """Greedy action conditioned on the mixed signal x_j = 1 (q defaults to
    eps_j, the largest value covered by the stage lemma)."""
    if q is None:
        q = epsilon_j(instance, n, j)
    means, _ = mixed_signal_means(instance, n, j, q)
    return instance.actions[instance.greedy_action(means)]


def canonical_order(instance: SemibanditInstance, n: int) -> list[int]:
    """Stage order constructed by iterating the zero-run greedy rule.

    Stage 1 uses the prior-greedy action; each later stage conditions on
    the zero-run event over the atoms ordered so far and appends the
    smallest-index new atom of the greedy action.  Raises if some stage's
    greedy action contains no new atom.
    """
    order: list[int] = []
    for _ in range(instance.n_atoms):
        means = zeros_means_for_set(instance, n, order)
        act = instance.actions[instance.greedy_action(means)]
        new = [a for a in act if a not in order]
        if not new:
            raise InvalidInputError(
                f"no consistent atom order: greedy action {act} adds no new atom "
                f"after prefix {order}"
            )
        order.append(min(new))
    return order


def sort_instance(instance: SemibanditInstance, n: int) -> SemibanditInstance:
    """Relabel atoms into canonical stage order."""
    order = canonical_order(instance, n)
    relabel = {old: new for new, old in enumerate(order)}
    prior = AtomPrior(instance.prior.a[order], instance.prior.b[order], instance.prior.alpha)
    actions = [tuple(sorted(relabel[a] for a in act)) for act in instance.actions]
    return SemibanditInstance(prior, actions)


def lemma4_likelihood_check(instance: SemibanditInstance, n: int) -> dict:
    """Exact Beta-CDF check of the conditional tail bound
    P[theta_a >= tau/(5d) | zero-run] <= tau/(5d), valid when n meets the
    stage sample bound."""
    d = instance.n_atoms
    x = instance.prior.tau / (5.0 * d)
    tails = {
        a: float(beta_dist.sf(x, instance.prior.a[a], instance.prior.b[a] + n))
        for a in range(d)
    }
    applicable = n >= n_lower_bound(instance)
    ok = all(v <= x for v in tails.values())
    return {"threshold": x, "tails": tails, "applicable": applicable, "ok": ok}


# -- the staged exploration algorithm ---------------------------------------


def while_iteration_count(eps: float, lam: float) -> int:
    """Growth iterations until the exploration probability reaches 1, using
    the exact float update of the run."""
    k, p = 0, eps
    while p < 1.0:
        p = min(1.0, p * (1.0 + lam))
        k += 1
        if k > 10_000_000:
            raise InvalidInputError("exploration probability fails to reach 1")
    return k


def algorithm1_budget(instance: SemibanditInstance, n: int, lam: float) -> int:
    """Concrete per-run step budget: sum_j [N + N K_j] + N."""
    total = n
    for j in range(1, instance.n_atoms + 1):
        eps = epsilon_j(instance, n, j)
        k_j = 0 if eps >= 1.0 else while_iteration_count(eps, lam)
        total += n + n * k_j
    return total


def _growth_trigger(p: float, lam: float) -> float:
    # The final iteration must fire almost surely; tying the trigger to the
    # same comparison as the p-update clamp makes that exact in floats.
    if p * (1.0 + lam) >= 1.0:
        return 1.0
    return min(1.0, p * lam / (1.0 - p))


@dataclass
class PhaseRecord:
    stage: int
    kind: str  # initial | exploit-x | exploit-z0 | padded
    x: int | None = None
    y: int | None = None
    b: int | None = None
    z: int | None = None
    p: float | None = None
    informed: bool | None = None


@dataclass(eq=False)
class ExplorationTranscript:
    theta: np.ndarray
    n: int
    lam: float
    steps: list[tuple] = field(default_factory=list)  # (time, phase, stage, action, bits)
    phases: list[PhaseRecord] = field(default_factory=list)
    counters: np.ndarray | None = None
    budget: int = 0

    def bits_by_atom(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for _, _, _, action, bits in self.steps:
            for a, bit in zip(action, bits):
                out.setdefault(a, []).append(bit)
        return out

    def first_n_mean(self, atom: int) -> float:
        bits = self.bits_by_atom().get(atom, [])[: self.n]
        if len(bits) < self.n:
            return float("nan")
        return float(np.mean(bits))

    def recount(self) -> np.ndarray:
        d = self.theta.shape[0]
        c = np.zeros(d, dtype=int)
        for _, _, _, action, _ in self.steps:
            for a in action:
                c[a] += 1
        return c

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "phase", "stage", "action", "bits", "p_j", "x", "y", "z", "b"])
        phase_of_step: list[PhaseRecord] = []
        for rec in self.phases:
            phase_of_step.extend([rec] * self.n)
        for (t, phase, stage, action, bits), rec in zip(self.steps, phase_of_step):
            w.writerow(
                [
                    t,
                    phase,
                    stage,
                    ";".join(str(a) for a in action),
                    ";".join(str(v) for v in bits),
                    "" if rec.p is None else format(rec.p, ".17g"),
                    "" if rec.x is None else rec.x,
                    "" if rec.y is None else rec.y,
                    "" if rec.z is None else rec.z,
                    "" if rec.b is None else rec.b,
                ]
            )
        return buf.getvalue()


def run_algorithm1(
    instance: SemibanditInstance,
    n: int,
    policies: dict,
    lam: float,
    rng: np.random.Generator,
    check_budget: bool = True,
    check_order: bool = True,
) -> ExplorationTranscript:
    """Execute the staged exploration loop and return the full transcript.

    ``policies`` maps each stage j >= 2 to a padded recommendation policy
    for the stage game with enumerated count scenarios (see the game
    module).  A padded phase follows the policy only when the exploration
    trigger history is exogenous ("clean": the stage's first Bernoulli
    signal or an earlier growth coin fired) and the stage atom already has
    N samples; otherwise all N recommendations are drawn from the policy's
    padding distribution, which always plays an action containing the stage
    atom.  Policy do-nothing resolves to the greedy action for the count
    scenario.  Exploit phases recommend the greedy action conditioned on
    the stated signal only, never on the full history.
    """
    d = instance.n_atoms
    if not (0.0 < lam < 1.0):
        raise InvalidInputError("growth rate lam must lie in (0, 1)")
    for j in range(2, d + 1):
        if j not in policies:
            raise InvalidInputError(f"missing padded policy for stage {j}")
    if check_order and canonical_order(instance, n) != list(range(d)):
        raise InvalidInputError("instance atoms are not in canonical stage order")

    theta = instance.prior.sample(rng)
    out = ExplorationTranscript(theta=theta, n=n, lam=lam)
    out.budget = algorithm1_budget(instance, n, lam)
    counters = np.zeros(d, dtype=int)
    bits_by_atom: dict[int, list[int]] = {a: [] for a in range(d)}

    def play(action: tuple[int, ...], phase: str, stage: int) -> None:
        time = len(out.steps) + 1
        bits = tuple(int(v) for v in (rng.random(len(action)) < theta[list(action)]))
        for a, bit in zip(action, bits):
            counters[a] += 1
            bits_by_atom[a].append(bit)
        out.steps.append((time, phase, stage, action, bits))

    def play_block(action: tuple[int, ...], phase: str, stage: int) -> None:
        for _ in range(n):
            play(action, phase, stage)

    prior_greedy = instance.actions[instance.greedy_action(instance.prior.means())]
    out.phases.append(PhaseRecord(stage=1, kind="initial"))
    play_block(prior_greedy, "initial", 1)

    for j in range(2, d + 1):
        aj = j - 1
        eps = epsilon_j(instance, n, j)
        y = int(rng.random() < eps)
        zeros = all(not any(bits_by_atom[i][:n]) for i in range(j - 1))
        x = int(zeros or y)
        if x:
            action = greedy_mixed_signal(instance, n, j, eps)
        else:
            action = instance.actions[
                instance.greedy_action(signal_zero_means(instance, n, j, eps))
            ]
        out.phases.append(PhaseRecord(stage=j, kind="exploit-x", x=x, y=y))
        play_block(action, "exploit", j)

        policy = policies[j]
        q_actions, q_probs = policy.padding_distribution()
        p = eps
        clean = bool(y)
        while p < 1.0:
            trigger = _growth_trigger(p, lam)
            b = int(rng.random() < trigger)
            z = int(b or y)
            if z:
                informed = clean and counters[aj] >= n
                out.phases.append(
                    PhaseRecord(stage=j, kind="padded", y=y, b=b, z=z, p=p, informed=informed)
                )
                if informed:
                    scenario = tuple(int(np.sum(bits_by_atom[i][:n])) for i in range(j))
                    menu_probs = policy.probs_for_counts(scenario)
                    greedy_idx = instance.greedy_action(
                        instance.posterior_means_for_counts(scenario, n)
                    )
                    u = rng.random(n)
                    cum = np.cumsum(menu_probs)
                    picks = (u[:, None] > cum[None, :]).sum(axis=1)
                    for pick in picks:
                        if pick >= len(policy.menu_action_indices):
                            play(instance.actions[greedy_idx], "padded", j)
                        else:
                            play(instance.actions[policy.menu_action_indices[pick]], "padded", j)
                else:
                    picks = rng.choice(len(q_actions), size=n, p=q_probs)
                    for pick in picks:
                        play(instance.actions[q_actions[pick]], "padded", j)
            else:
                out.phases.append(PhaseRecord(stage=j, kind="exploit-z0", y=y, b=b, z=z, p=p))
                play_block(prior_greedy, "exploit", j)
            clean = clean or bool(b)
            p = min(1.0, p * (1.0 + lam))

    out.counters = counters
    if check_budget and len(out.steps) > out.budget:
        raise InvalidInputError(
            f"transcript length {len(out.steps)} exceeded the budget {out.budget}"
        )
    return out


# -- vectorized BIC audit over step classes ---------------------------------


@dataclass
class SemibanditAuditRow:
    label: str
    stage: int
    rec: tuple[int, ...]
    alt: tuple[int, ...]
    margin: float
    se: float
    cond_freq: float
    effective_count: float
    certified: bool
    undersampled: bool


@dataclass
class SemibanditAuditReport:
    rows: list[SemibanditAuditRow]
    replications: int
    z: float

    def all_certified(self) -> bool:
        return all(r.certified for r in self.rows if not r.undersampled)


def _emit_margin_stats(label, stage, rec_weights, theta, instance, stats):
    """Fold per-replication recommendation weights into mergeable sums.

    Keys: row|{label}|{stage}|{rec}|{alt}|{w, w_sq, wd, wd_sq, w2d}.
    The ratio-estimator margin and its delta-method standard error are
    recoverable from these sums alone.
    """
    for rec_idx, w in sorted(rec_weights.items()):
        if float(np.sum(w)) == 0.0:
            continue
        rec = instance.actions[rec_idx]
        theta_rec = theta[:, rec].sum(axis=1)
        for alt_idx, alt in enumerate(instance.actions):
            if alt_idx == rec_idx:
                continue
            diff = theta_rec - theta[:, alt].sum(axis=1)
            wd = w * diff
            base = f"row|{label}|{stage}|{rec_idx}|{alt_idx}|"
            stats[base + "w"] = stats.get(base + "w", 0.0) + float(np.sum(w))
            stats[base + "w_sq"] = stats.get(base + "w_sq", 0.0) + float(np.sum(w**2))
            stats[base + "wd"] = stats.get(base + "wd", 0.0) + float(np.sum(wd))
            stats[base + "wd_sq"] = stats.get(base + "wd_sq", 0.0) + float(np.sum(wd**2))
            stats[base + "w2d"] = stats.get(base + "w2d", 0.0) + float(np.sum(w * wd))


def _collect_audit_stats(
    instance: SemibanditInstance,
    n: int,
    policies: dict,
    lam: float,
    replications: int,
    rng: np.random.Generator,
) -> dict:
    """One vectorized chunk of the audit: mergeable sufficient statistics
    per (class, recommendation, alternative) row."""
    d = instance.n_atoms
    r = replications
    theta = instance.prior.sample(rng, size=(r, d))
    counts = rng.binomial(n, theta)
    stats: dict = {"n": float(r)}

    prior_greedy_idx = instance.greedy_action(instance.prior.means())
    _emit_margin_stats("initial", 1, {prior_greedy_idx: np.ones(r)}, theta, instance, stats)

    explored = np.zeros((r, d), dtype=bool)
    explored[:, instance.actions[prior_greedy_idx]] = True

    for j in range(2, d + 1):
        aj = j - 1
        eps = epsilon_j(instance, n, j)
        zeros = np.all(counts[:, : j - 1] == 0, axis=1)
        y = rng.random(r) < eps
        x = zeros | y

        mixed_idx = instance.actions.index(greedy_mixed_signal(instance, n, j, eps))
        zero_idx = instance.greedy_action(signal_zero_means(instance, n, j, eps))
        weights: dict[int, np.ndarray] = {mixed_idx: x.astype(float)}
        weights[zero_idx] = weights.get(zero_idx, np.zeros(r)) + (~x).astype(float)
        _emit_margin_stats(f"exploit-x[{j}]", j, weights, theta, instance, stats)
        for idx, w in weights.items():
            explored[:, instance.actions[idx]] |= (w > 0)[:, None]

        policy = policies[j]
        full_probs, greedy_by_scenario, _ = _policy_audit_tables(instance, policy, n, j)
        radix = np.array([(n + 1) ** (j - 1 - i) for i in range(j)], dtype=np.int64)
        scen = counts[:, :j].astype(np.int64) @ radix
        cum = np.cumsum(full_probs, axis=1)
        q_actions, q_probs = policy.padding_distribution()
        q_cum = np.cumsum(q_probs)

        clean = y.copy()
        pad_weights: dict[int, np.ndarray] = {}
        z0_weight = np.zeros(r)
        p = eps
        while p < 1.0:
            trigger = _growth_trigger(p, lam)
            b = rng.random(r) < trigger
            zsig = b | y
            informed = zsig & clean & explored[:, aj]
            blind = zsig & ~informed

            holders = np.flatnonzero(informed)
            if holders.size:
                u = rng.random(holders.size)
                rows_cum = cum[scen[holders]]
                pick = (u[:, None] > rows_cum).sum(axis=1)
                n_cols = full_probs.shape[1]
                rec_idx = np.where(pick >= n_cols - 1, greedy_by_scenario[scen[holders]], pick)
                for k_idx in np.unique(rec_idx):
                    w = pad_weights.setdefault(int(k_idx), np.zeros(r))
                    w[holders[rec_idx == k_idx]] += 1.0
            holders_b = np.flatnonzero(blind)
            if holders_b.size:
                u = rng.random(holders_b.size)
                pick = np.minimum((u[:, None] > q_cum[None, :]).sum(axis=1), len(q_actions) - 1)
                for k in np.unique(pick):
                    idx = int(q_actions[k])
                    w = pad_weights.setdefault(idx, np.zeros(r))
                    w[holders_b[pick == k]] += 1.0
                explored[holders_b, aj] = True

            not_z = ~zsig
            z0_weight += not_z.astype(float)
            explored[:, instance.actions[prior_greedy_idx]] |= not_z[:, None]

            clean = clean | b
            p = min(1.0, p * (1.0 + lam))

        _emit_margin_stats(f"padded[{j}]", j, pad_weights, theta, instance, stats)
        _emit_margin_stats(f"exploit-z0[{j}]", j, {prior_greedy_idx: z0_weight}, theta,
                           instance, stats)

    return stats


def semibandit_report_from_stats(
    instance: SemibanditInstance,
    stats: dict,
    replications: int,
    z: float = 2.58,
    min_count: int = 10,
) -> SemibanditAuditReport:
    """Assemble audit rows from merged sufficient statistics."""
    grouped: dict[tuple, dict] = {}
    class_slots: dict[tuple, float] = {}
    for key, value in stats.items():
        if not key.startswith("row|"):
            continue
        _, label, stage, rec_idx, alt_idx, name = key.split("|")
        row_key = (label, int(stage), int(rec_idx), int(alt_idx))
        grouped.setdefault(row_key, {})[name] = value
    for (label, stage, rec_idx, alt_idx), vals in grouped.items():
        if alt_idx == (rec_idx + 1) % len(instance.actions):
            class_slots[(label, stage)] = class_slots.get((label, stage), 0.0) + vals["w"]
    rows = []
    for (label, stage, rec_idx, alt_idx), vals in sorted(grouped.items()):
        w_sum = vals["w"]
        den_mean = w_sum / replications
        m = vals["wd"] / w_sum
        mean_resid_sq = (
            vals["wd_sq"] - 2.0 * m * vals["w2d"] + m**2 * vals["w_sq"]
        ) / replications
        se = math.sqrt(max(mean_resid_sq, 0.0) / replications) / den_mean
        rows.append(
            SemibanditAuditRow(
                label=label,
                stage=stage,
                rec=instance.actions[rec_idx],
                alt=instance.actions[alt_idx],
                margin=m,
                se=se,
                cond_freq=w_sum / max(class_slots.get((label, stage), w_sum), 1.0),
                effective_count=w_sum,
                certified=bool(m >= -z * se),
                undersampled=bool(w_sum < min_count),
            )
        )
    return SemibanditAuditReport(rows=rows, replications=replications, z=z)


def audit_transcript_bic(
    instance: SemibanditInstance,
    n: int,
    policies: dict,
    lam: float,
    replications: int,
    rng: np.random.Generator,
    z: float = 2.58,
    min_count: int = 10,
) -> SemibanditAuditReport:
    """Estimate E[theta_rec - theta_alt | recommendation] for every step
    class of the exploration loop, vectorized across replications.

    Step classes pool the statistically identical while-loop iterations of
    each stage; padded phases contribute one representative recommendation
    draw per iteration.  Stage-atom sample quotas inside mixed informed
    phases are tracked with per-atom binomials, which is exact for
    singleton recommendation menus (partial cross-stage accumulation is not
    modeled; intended for small instances, d <= 3).
    """
    stats = _collect_audit_stats(instance, n, policies, lam, replications, rng)
    return semibandit_report_from_stats(instance, stats, replications, z, min_count)


def _policy_audit_tables(instance: SemibanditInstance, policy, n: int, j: int):
    """Per-scenario tables for the vectorized audit.

    Returns (full_probs, greedy_by_scenario, contain_prob): full_probs has
    one column per instance action plus a trailing do-nothing column;
    greedy resolves do-nothing; contain_prob is the per-scenario chance the
    played action contains the stage atom.
    """
    n_scen = (n + 1) ** j
    if policy.scenario_count != n_scen:
        raise InvalidInputError("policy scenarios do not match an enumerated stage game")
    n_actions = len(instance.actions)
    full = np.zeros((n_scen, n_actions + 1))
    for col, action_idx in enumerate(policy.menu_action_indices):
        full[:, action_idx] += policy.probs[:, col]
    full[:, -1] = np.clip(1.0 - policy.probs.sum(axis=1), 0.0, 1.0)

    greedy = np.empty(n_scen, dtype=np.int64)
    shape = (n + 1,) * j
    for s in range(n_scen):
        counts = np.unravel_index(s, shape)
        greedy[s] = instance.greedy_action(instance.posterior_means_for_counts(counts, n))

    aj = j - 1
    contains = np.array([aj in act for act in instance.actions], dtype=float)
    contain_prob = full[:, :-1] @ contains + full[:, -1] * contains[greedy]
    return full, greedy, contain_prob
