"""Experiment orchestration: configs, counter-based stream derivation,
chunked (optionally parallel) replication with order-fixed merging of
sufficient statistics, and result persistence.

Chunking is fixed by the config (never by the worker count), each chunk
draws from its own derived stream, and chunk statistics are merged in
index order, so serial and parallel runs produce byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .errors import BiclabError, InvalidInputError
from .geometry import ActionSet, ConvexBody, prop2_polytope
from .priors import LinearPrior, obs_from_json_dict
from .semibandit import SemibanditInstance

DEFAULT_CHUNK = 250_000

KINDS = (
    "bic-audit",
    "corollary",
    "counterexample-1",
    "counterexample-2",
    "glm-audit",
    "semibandit-explore",
    "game-solve",
    "game-sweep",
    "reduce",
)


def derive_stream(seed: int, index: int) -> np.random.Generator:
    """Deterministic, collision-free stream for (seed, replication index),
    built on the counter-based Philox generator."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def fmt(x) -> str:
    """Fixed decimal formatting for CSV cells (17 significant digits)."""
    if isinstance(x, float):
        if math.isnan(x):
            return "na"
        return format(x, ".17g")
    return str(x)


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    replications: int = 1
    jobs: int = 1
    chunk_size: int = DEFAULT_CHUNK
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown experiment kind {self.kind!r}")
        if self.replications < 1:
            raise InvalidInputError("replications must be at least 1")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidInputError("seed must be a 64-bit value")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "replications": self.replications,
            "jobs": self.jobs,
            "chunk_size": self.chunk_size,
            "params": self.params,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = {"kind", "seed", "replications", "jobs", "chunk_size"}
        params = dict(doc.get("params", {}))
        for key, value in doc.items():
            if key not in known and key != "params":
                params[key] = value
        return ExperimentConfig(
            kind=doc["kind"],
            seed=int(doc.get("seed", 0)),
            replications=int(doc.get("replications", 1)),
            jobs=int(doc.get("jobs", 1)),
            chunk_size=int(doc.get("chunk_size", DEFAULT_CHUNK)),
            params=params,
        )


# -- chunked map-reduce ------------------------------------------------------


def _chunks(total: int, chunk_size: int) -> list[tuple[int, int]]:
    out = []
    start = 0
    index = 0
    while start < total:
        out.append((index, min(chunk_size, total - start)))
        start += chunk_size
        index += 1
    return out


def _run_chunk(kind: str, payload: dict, chunk_index: int, chunk_size: int, seed: int) -> dict:
    rng = derive_stream(seed, chunk_index)
    worker = _CHUNK_WORKERS[kind]
    return worker(payload, chunk_size, rng)


def map_reduce(kind: str, payload: dict, config: ExperimentConfig) -> dict:
    """Run replication chunks (serially or in a worker pool) and merge the
    flat statistic dicts by summation in chunk-index order."""
    chunks = _chunks(config.replications, config.chunk_size)
    results: list[dict] = [None] * len(chunks)  # type: ignore[list-item]
    if config.jobs <= 1 or len(chunks) == 1:
        for index, size in chunks:
            results[index] = _run_chunk(kind, payload, index, size, config.seed)
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = {
                index: pool.submit(_run_chunk, kind, payload, index, size, config.seed)
                for index, size in chunks
            }
            for index, fut in futures.items():
                results[index] = fut.result()
    merged: dict = {}
    for part in results:
        for key, value in part.items():
            merged[key] = merged.get(key, 0.0) + value
    return merged


# -- chunk workers (module level so they pickle for the worker pool) ---------


def _ce1_chunk(payload: dict, size: int, rng) -> dict:
    from .bic_audit import PROP1_ACTIONS, _gaussian_cone_probability

    a = np.asarray(payload.get("actions", PROP1_ACTIONS.tolist()), dtype=float)
    cov = np.asarray(payload.get("cov", np.eye(a.shape[1]).tolist()), dtype=float)
    chol = np.linalg.cholesky(cov)
    ell = rng.standard_normal((size, 2)) @ chol.T
    tilde = rng.standard_normal((size, 2)) @ chol.T
    first = np.argmax(tilde @ a.T, axis=1)
    target = a[2] - a[0]
    cone = np.stack([a[0] - a[1], a[0] - a[2]])
    out: dict = {"n": float(size)}
    for k in range(a.shape[0]):
        mask = first == k
        prefix = f"sub{k + 1}_"
        if not np.any(mask):
            for name in ("count", "num", "den", "num_sq", "den_sq", "cross"):
                out[prefix + name] = 0.0
            continue
        ak = a[k]
        denom = float(ak @ cov @ ak)
        gain = cov @ ak / denom
        y = ell[mask] @ ak
        m2 = y[:, None] * gain[None, :]
        cov2 = cov - np.outer(cov @ ak, cov @ ak) / denom
        w_eig, u_eig = np.linalg.eigh(0.5 * (cov2 + cov2.T))
        w = math.sqrt(max(float(w_eig[-1]), 0.0)) * u_eig[:, -1]
        p = _gaussian_cone_probability(m2, w, cone)
        num = p * (m2 @ target)
        out[prefix + "count"] = float(np.sum(mask))
        out[prefix + "num"] = float(np.sum(num))
        out[prefix + "den"] = float(np.sum(p))
        out[prefix + "num_sq"] = float(np.sum(num**2))
        out[prefix + "den_sq"] = float(np.sum(p**2))
        out[prefix + "cross"] = float(np.sum(num * p))
    return out


def _corollary_chunk(payload: dict, size: int, rng) -> dict:
    from .geometry import best_action_many

    body = ConvexBody.from_json_dict(payload["body"])
    actions = ActionSet.from_json_dict(payload["actions"])
    prior = LinearPrior.uniform(body)
    ell = prior.sample_n(rng, size)
    best = best_action_many(actions, ell)
    proj = ell @ actions.vectors.T
    out: dict = {"n": float(size)}
    for i in range(len(actions)):
        mask = best == i
        out[f"count_{i}"] = float(np.sum(mask))
        if np.any(mask):
            gaps = proj[mask, i][:, None] - proj[mask]
            for j in range(len(actions)):
                if j == i:
                    continue
                out[f"sum_{i}_{j}"] = float(gaps[:, j].sum())
                out[f"sq_{i}_{j}"] = float((gaps[:, j] ** 2).sum())
    return out


def _ce2_chunk(payload: dict, size: int, rng) -> dict:
    d = int(payload["d"])
    threshold = float(payload.get("threshold", 0.1))
    u = rng.random((size, d - 1)) * 1.5 - 0.5
    inner = u.sum(axis=1) / (2.0 * d)
    tail = np.clip(threshold - inner, 0.0, None)
    return {
        "n": float(size),
        "s_sum": float(inner.sum()),
        "s_sq": float((inner**2).sum()),
        "t_sum": float(tail.sum()),
        "t_sq": float((tail**2).sum()),
    }


def _bic_audit_chunk(payload: dict, size: int, rng) -> dict:
    from .bic_audit import LinearAuditConfig, estimate_bic_margin

    config = LinearAuditConfig(
        prior=LinearPrior.from_json_dict(payload["prior"]),
        actions=ActionSet.from_json_dict(payload["actions"]),
        obs=obs_from_json_dict(payload["obs"]),
        schedule=list(payload["schedule"]),
        n_inner=int(payload.get("n_inner", 2000)),
    )
    pairs = [tuple(p) for p in payload["pairs"]]
    report = estimate_bic_margin(config, int(payload["t"]), pairs, size, rng)
    out: dict = {"n": float(size)}
    for row in report.rows:
        key = f"{row.i}_{row.j}"
        out[f"num_{key}"] = row.margin * size
        out[f"numsq_{key}"] = (row.se**2 * size + row.margin**2) * size
    for i, freq in enumerate(report.cond_freqs):
        out[f"freq_{i}"] = float(freq) * size
    out["value"] = report.ts_value * size
    out["prior_best"] = report.prior_best_value * size
    return out


def _semibandit_audit_chunk(payload: dict, size: int, rng) -> dict:
    from .recgame import PaddedPolicy
    from .semibandit import _collect_audit_stats

    instance = SemibanditInstance.from_json(payload["instance"])
    policies = {
        int(j): PaddedPolicy.from_json(text) for j, text in payload["policies"].items()
    }
    return _collect_audit_stats(
        instance, int(payload["n"]), policies, float(payload["lam"]), size, rng
    )


def _reduce_chunk(payload: dict, size: int, rng) -> dict:
    from .bic_audit import simulate_extreme_point_wrapper

    d = int(payload.get("d", 3))
    inner_steps = int(payload.get("inner_steps", 10))
    _, vertices = prop2_polytope(d)
    ok = 0
    for _ in range(size):
        weights = rng.dirichlet(np.ones(len(vertices)), size=inner_steps)
        inner = weights @ vertices.vectors
        ell = rng.uniform(-0.5, 1.0, size=d) / math.sqrt(d)
        wrapped = simulate_extreme_point_wrapper(vertices, inner, ell, rng)
        ok += int(wrapped.gram_dominates)
    return {"n": float(size), "dominates": float(ok)}


_CHUNK_WORKERS = {
    "counterexample-1": _ce1_chunk,
    "corollary": _corollary_chunk,
    "counterexample-2": _ce2_chunk,
    "bic-audit": _bic_audit_chunk,
    "semibandit-explore": _semibandit_audit_chunk,
    "reduce": _reduce_chunk,
}


# -- experiment drivers ------------------------------------------------------


def _ratio_from_stats(stats: dict, prefix: str) -> dict:
    n = stats["n"]
    num, den = stats[f"{prefix}num"], stats[f"{prefix}den"]
    if den <= 0:
        return {"margin": float("nan"), "se": float("nan"), "weight": 0.0}
    m = num / den
    mean_resid_sq = (
        stats[f"{prefix}num_sq"] - 2 * m * stats[f"{prefix}cross"] + m**2 * stats[f"{prefix}den_sq"]
    ) / n
    se = math.sqrt(max(mean_resid_sq, 0.0) / n) / (den / n)
    return {
        "margin": m,
        "se": se,
        "weight": stats.get(f"{prefix}count", n) / n,
        "num_mean": num / n,
        "num_se": math.sqrt(max(stats[f"{prefix}num_sq"] / n - (num / n) ** 2, 0.0) / n),
    }


def _drive_counterexample_1(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    stats = map_reduce("counterexample-1", config.params, config)
    overall_stats = {"n": stats["n"]}
    for name in ("num", "den", "num_sq", "den_sq", "cross", "count"):
        overall_stats["o_" + name] = sum(stats.get(f"sub{k}_{name}", 0.0) for k in (1, 2, 3))
    overall = _ratio_from_stats(overall_stats, "o_")
    z = float(config.params.get("z", 2.58))
    rows = [["scope", "margin", "se", "num_mean", "num_se", "weight"]]
    rows.append(
        ["overall", overall["margin"], overall["se"], overall["num_mean"], overall["num_se"], 1.0]
    )
    subcases = {}
    for k in (1, 2, 3):
        sub = _ratio_from_stats(stats, f"sub{k}_")
        subcases[k] = sub
        rows.append(
            [f"first=A{k}", sub["margin"], sub["se"], sub.get("num_mean", float("nan")),
             sub.get("num_se", float("nan")), sub["weight"]]
        )
    positive = overall["num_mean"] - z * overall["num_se"] > 0
    sub3 = subcases[3]
    sub3_zero = abs(sub3["margin"]) <= z * sub3["se"]
    failures = []
    if not positive:
        failures.append("overall margin not positive at 99% confidence")
    if not sub3_zero:
        failures.append("first=A3 sub-case margin not zero within its 99% CI")
    result = {
        "overall": overall,
        "subcases": {str(k): v for k, v in subcases.items()},
        "positive_at_99": positive,
        "subcase3_zero_within_ci": sub3_zero,
        "failures": failures,
    }
    return result, rows, bool(positive and sub3_zero)


def _drive_corollary(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    stats = map_reduce("corollary", config.params, config)
    actions = ActionSet.from_json_dict(config.params["actions"])
    body = ConvexBody.from_json_dict(config.params["body"])
    eps = actions.separation
    bound = (body.regularity * eps / 4.0) ** body.dim
    n = stats["n"]
    rows = [["i", "j", "p_hat", "p_se", "bound", "bound_ok", "margin", "margin_se"]]
    all_ok = True
    result_rows = []
    for i in range(len(actions)):
        count = stats.get(f"count_{i}", 0.0)
        p = count / n
        p_se = math.sqrt(max(p * (1 - p), 1.0 / n) / n)
        ok = p + 3 * p_se >= bound
        all_ok &= ok
        for j in range(len(actions)):
            if j == i:
                continue
            if count > 0:
                m = stats.get(f"sum_{i}_{j}", 0.0) / count
                var = max(stats.get(f"sq_{i}_{j}", 0.0) / count - m**2, 0.0)
                se = math.sqrt(var / count)
            else:
                m, se = float("nan"), float("nan")
            rows.append([i, j, p, p_se, bound, ok, m, se])
            result_rows.append(
                {"i": i, "j": j, "p_hat": p, "p_se": p_se, "margin": m, "margin_se": se,
                 "bound": bound, "bound_ok": bool(ok)}
            )
    failures = [f"P[A*=A_{r['i']}] bound violated" for r in result_rows if not r["bound_ok"]]
    return (
        {"rows": result_rows, "bound": bound, "failures": sorted(set(failures))},
        rows,
        bool(all_ok),
    )


def _drive_counterexample_2(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    dims = [int(d) for d in config.params.get("dims", [10, 20, 40, 80])]
    threshold = float(config.params.get("threshold", 0.1))
    per_d = []
    for cell, d in enumerate(dims):
        cell_config = ExperimentConfig(
            kind=config.kind,
            seed=config.seed + cell,
            replications=config.replications,
            jobs=config.jobs,
            chunk_size=config.chunk_size,
            params={"d": d, "threshold": threshold},
        )
        stats = map_reduce("counterexample-2", cell_config.params, cell_config)
        n = stats["n"]
        mean_inner = stats["s_sum"] / n
        se_inner = math.sqrt(max(stats["s_sq"] / n - mean_inner**2, 0.0) / n)
        tail = stats["t_sum"] / n
        se_tail = math.sqrt(max(stats["t_sq"] / n - tail**2, 0.0) / n)
        per_d.append(
            {
                "d": d,
                "tail": tail,
                "tail_se": se_tail,
                "censored": tail == 0.0,
                "inner_mean": mean_inner,
                "inner_se": se_inner,
                "expected_mean": (d - 1) / (8.0 * d),
            }
        )
    pts = [(r["d"], math.log(r["tail"])) for r in per_d if not r["censored"]]
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    means_ok = all(
        abs(r["inner_mean"] - r["expected_mean"]) <= 3.0 * r["inner_se"] for r in per_d
    )
    rows = [["d", "tail", "tail_se", "censored", "inner_mean", "inner_se", "expected_mean"]]
    for r in per_d:
        rows.append([r["d"], r["tail"], r["tail_se"], int(r["censored"]), r["inner_mean"],
                     r["inner_se"], r["expected_mean"]])
    rows.append(["fit", float(slope), float(intercept), float(r2), "", "", ""])
    passed = bool(slope < 0 and r2 >= 0.9 and means_ok)
    failures = []
    if slope >= 0:
        failures.append("tail fit slope is not negative")
    if r2 < 0.9:
        failures.append(f"tail fit R^2 {r2:.3f} below 0.9")
    if not means_ok:
        failures.append("inner-product mean off its closed form by more than 3 SE")
    return (
        {"rows": per_d, "slope": float(slope), "intercept": float(intercept),
         "r_squared": float(r2), "means_ok": means_ok, "failures": failures},
        rows,
        passed,
    )


def _drive_bic_audit(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    params = dict(config.params)
    actions = ActionSet.from_json_dict(params["actions"])
    if params.get("pairs", "all") == "all":
        params["pairs"] = [
            [i, j] for i in range(len(actions)) for j in range(len(actions)) if i != j
        ]
    stats = map_reduce("bic-audit", params, config)
    n = stats["n"]
    z = float(params.get("z", 2.58))
    gate = config.replications > 1
    rows = [["t", "i", "j", "margin", "se", "cond_freq", "certified"]]
    result_rows = []
    all_ok = True
    for i, j in [tuple(p) for p in params["pairs"]]:
        key = f"{i}_{j}"
        margin = stats[f"num_{key}"] / n
        var = max(stats[f"numsq_{key}"] / n - margin**2, 0.0)
        se = math.sqrt(var / n) if gate else float("nan")
        freq = stats[f"freq_{i}"] / n
        certified = (not gate) or margin >= -z * se
        all_ok &= certified
        rows.append([params["t"], i, j, margin, se, freq, int(certified)])
        result_rows.append(
            {"t": params["t"], "i": i, "j": j, "margin": margin, "se": se,
             "cond_freq": freq, "certified": bool(certified)}
        )
    value = stats["value"] / n
    prior_best = stats["prior_best"] / n
    failures = [
        f"margin ({r['t']},{r['i']},{r['j']}) = {r['margin']:.5f} below -z*SE"
        for r in result_rows
        if not r["certified"]
    ]
    return (
        {"rows": result_rows, "ts_value": value, "prior_best_value": prior_best, "z": z,
         "failures": failures},
        rows,
        bool(all_ok),
    )


def _drive_glm_audit(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    from .linear_ts import glm_audit_experiment

    result = glm_audit_experiment(
        d=int(config.params.get("d", 2)),
        delta=float(config.params.get("delta", 0.05)),
        c=float(config.params.get("c", 1.0)),
        replications=config.replications,
        n_residual_checks=int(config.params.get("n_check", 100)),
        rng=derive_stream(config.seed, 0),
    )
    rows = [["check", "value", "bound", "passed"]]
    for name, (value, bound, ok) in result["checks"].items():
        rows.append([name, value, bound, int(ok)])
    passed = all(ok for _, _, ok in result["checks"].values())
    result["failures"] = [name for name, (_, _, ok) in result["checks"].items() if not ok]
    return result, rows, bool(passed)


def _drive_semibandit(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    from .recgame import stage_policies
    from .semibandit import (
        algorithm1_budget,
        lemma4_likelihood_check,
        n_lower_bound,
        run_algorithm1,
        semibandit_report_from_stats,
    )

    params = config.params
    if "instance" in params and isinstance(params["instance"], str):
        instance = SemibanditInstance.from_json(params["instance"])
    else:
        instance = SemibanditInstance.from_json(json.dumps(params["instance_doc"]))
    guard = float(params.get("guard_factor", 1.0))
    n = int(params.get("n", 0)) or n_lower_bound(instance, guard)
    scenario_count = int(params.get("scenario_count", 20_000))
    plan = stage_policies(instance, n, derive_stream(config.seed, 2**32), scenario_count)
    lam = float(params.get("lam", 0.0)) or plan.lam
    budget = algorithm1_budget(instance, n, lam)

    runs = int(params.get("runs", 100))
    run_rows = []
    runs_ok = True
    for k in range(runs):
        tr = run_algorithm1(instance, n, plan.policies, lam, derive_stream(config.seed, k))
        ok = bool(np.all(tr.counters >= n) and len(tr.steps) <= budget)
        runs_ok &= ok
        run_rows.append({"run": k, "steps": len(tr.steps), "counters": tr.counters.tolist(),
                         "ok": ok})

    payload = {
        "instance": instance.to_json(),
        "policies": {str(j): p.to_json() for j, p in plan.policies.items()},
        "n": n,
        "lam": lam,
    }
    audit_cfg = ExperimentConfig(
        kind=config.kind,
        seed=config.seed + 10_000,
        replications=int(params.get("audit_replications", config.replications)),
        jobs=config.jobs,
        chunk_size=min(config.chunk_size, 50_000),
        params=payload,
    )
    stats = map_reduce("semibandit-explore", payload, audit_cfg)
    report = semibandit_report_from_stats(
        instance, stats, audit_cfg.replications, float(params.get("z", 2.58))
    )
    lemma4 = lemma4_likelihood_check(instance, n_lower_bound(instance))

    rows = [["label", "stage", "rec", "alt", "margin", "se", "eff", "certified", "undersampled"]]
    for r in report.rows:
        rows.append([r.label, r.stage, ";".join(map(str, r.rec)), ";".join(map(str, r.alt)),
                     r.margin, r.se, r.effective_count, int(r.certified), int(r.undersampled)])
    passed = bool(runs_ok and report.all_certified() and lemma4["ok"])
    failures = [f"run {r['run']} missed counters or budget" for r in run_rows if not r["ok"]]
    failures += [
        f"audit row {r.label} rec={r.rec} alt={r.alt} uncertified"
        for r in report.rows
        if not r.certified and not r.undersampled
    ]
    if not lemma4["ok"]:
        failures.append("exact likelihood-ratio bound violated at the full sample size")
    result = {
        "failures": failures,
        "n": n,
        "lam": lam,
        "budget": budget,
        "lambda_infinite": {str(j): v for j, v in plan.lambda_infinite.items()},
        "runs": run_rows,
        "runs_ok": runs_ok,
        "audit_rows": [r.__dict__ for r in report.rows],
        "audit_ok": report.all_certified(),
        "lemma4": {"threshold": lemma4["threshold"], "ok": lemma4["ok"],
                   "applicable": lemma4["applicable"]},
    }
    return result, rows, passed


def _drive_game_solve(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    from .recgame import build_game, solve_minimax, verify_padding

    params = config.params
    instance = SemibanditInstance.from_json(
        params["instance"] if isinstance(params["instance"], str)
        else json.dumps(params["instance_doc"])
    )
    j = int(params["j"])
    n = params.get("n")
    n = None if n in (None, "inf", "infinite") else int(n)
    samples = int(params.get("samples", 10_000))
    game = build_game(instance, j, n, samples, derive_stream(config.seed, 0))
    value, policy, report = solve_minimax(game)
    cert = verify_padding(policy, game)
    rows = [["quantity", "value"]]
    rows.extend(
        [
            ["lambda", value],
            ["padding_total", report.padding_total],
            ["duality_gap", report.duality_gap],
            ["certificate_gap", report.certificate_gap],
            ["padding_cert_deviation", cert.max_deviation],
        ]
    )
    passed = bool(report.duality_gap <= 1e-8 and cert.passed)
    failures = []
    if report.duality_gap > 1e-8:
        failures.append(f"duality gap {report.duality_gap:.2e} above 1e-8")
    if not cert.passed:
        failures.append("padding certificate deviation above tolerance")
    result = {
        "failures": failures,
        "stage": j,
        "n": n,
        "lambda": value,
        "duality_gap": report.duality_gap,
        "certificate_gap": report.certificate_gap,
        "padding": policy.padding.tolist(),
        "padding_certificate_ok": cert.passed,
        "policy": json.loads(policy.to_json()),
    }
    return result, rows, passed


def _drive_game_sweep(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    from .recgame import build_game, policy_value_se, solve_minimax

    params = config.params
    instance = SemibanditInstance.from_json(
        params["instance"] if isinstance(params["instance"], str)
        else json.dumps(params["instance_doc"])
    )
    j = int(params["j"])
    n_list = [int(v) for v in params.get("n_list", [0, 1, 2, 4, 8])]
    samples = int(params.get("samples", 10_000))
    cells = []
    for cell, n in enumerate(n_list):
        rng = derive_stream(config.seed, cell)
        game = build_game(instance, j, n, samples, rng)
        value, policy, _ = solve_minimax(game)
        cells.append({"j": j, "n": n, "lambda": value, "se": policy_value_se(game, policy)})
    inf_game = build_game(instance, j, None, samples, derive_stream(config.seed, len(n_list)))
    v_inf, pol_inf, _ = solve_minimax(inf_game)
    cells.append({"j": j, "n": "inf", "lambda": v_inf, "se": policy_value_se(inf_game, pol_inf)})
    monotone = True
    for a, b in zip(cells[:-2], cells[1:-1]):
        slack = 3.0 * math.hypot(a["se"], b["se"])
        monotone &= b["lambda"] >= a["lambda"] - slack - 1e-9
    rows = [["j", "n", "lambda", "se"]]
    for c in cells:
        rows.append([c["j"], c["n"], c["lambda"], c["se"]])
    failures = [] if monotone else ["game value sweep is not nondecreasing in n"]
    return (
        {"cells": cells, "monotone": bool(monotone), "failures": failures},
        rows,
        bool(monotone),
    )


def _drive_reduce(config: ExperimentConfig) -> tuple[dict, list[list], bool]:
    stats = map_reduce("reduce", config.params, config)
    n = stats["n"]
    dominates = stats["dominates"]
    rows = [["replications", "gram_dominates"], [int(n), int(dominates)]]
    passed = dominates == n
    failures = [] if passed else [
        f"Gram domination failed in {int(n - dominates)} of {int(n)} replications"
    ]
    return (
        {"replications": int(n), "dominates": int(dominates), "failures": failures},
        rows,
        bool(passed),
    )


_DRIVERS = {
    "counterexample-1": _drive_counterexample_1,
    "corollary": _drive_corollary,
    "counterexample-2": _drive_counterexample_2,
    "bic-audit": _drive_bic_audit,
    "glm-audit": _drive_glm_audit,
    "semibandit-explore": _drive_semibandit,
    "game-solve": _drive_game_solve,
    "game-sweep": _drive_game_sweep,
    "reduce": _drive_reduce,
}


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return buf.getvalue()


def run(config: ExperimentConfig, out_dir: str | None = None, quiet: bool = False) -> int:
    """Dispatch an experiment, persist results + manifest, return the exit
    status (0 pass, 1 assertion failure).  Failing checks are listed on
    stderr unless quiet."""
    start = time.time()
    driver = _DRIVERS[config.kind]
    result, rows, passed = driver(config)
    result["passed"] = passed
    outputs = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "results.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(_csv_text(rows))
        json_path = os.path.join(out_dir, "results.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=1, default=_json_default)
            fh.write("\n")
        outputs = ["results.csv", "results.json"]
        manifest = {
            "config": config.to_dict(),
            "config_sha256": config.config_hash(),
            "seed": config.seed,
            "code_version": __version__,
            "wall_time_s": time.time() - start,
            "outputs": outputs,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
    if not passed and not quiet:
        for line in result.get("failures", ["experiment assertions failed"]):
            print(f"FAIL: {line}", file=sys.stderr)
    if not quiet:
        print(f"{config.kind}: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot parse config {path}: {exc}") from exc
    if "kind" not in doc:
        raise InvalidInputError("config is missing the experiment kind")
    return ExperimentConfig.from_dict(doc)
