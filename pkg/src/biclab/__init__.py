"""Simulation laboratory for incentive-compatible bandit exploration:
Thompson sampling margins on linear and generalized-linear bandits under
convex-body priors, spectral-exploration accounting, two counterexample
drivers, and a staged semibandit exploration algorithm driven by a
zero-sum recommendation-game solver.
"""

from ._version import __version__  # noqa: F401

from .geometry import (  # noqa: F401
    ActionSet,
    ConvexBody,
    PolytopeVertexSet,
    best_action,
    caratheodory_decompose,
    optimal_region_contains,
    separation,
    width,
)
from .linear_ts import (  # noqa: F401
    IDENTITY,
    LOGISTIC,
    LinkFunction,
    SpectralHistory,
    gamma_threshold,
    glm_mle,
    link_constants,
    run_episode,
    spectral_floor,
    thompson_step,
)
from .priors import (  # noqa: F401
    AtomPrior,
    BernoulliSign,
    GaussianNoise,
    LinearPrior,
    Noiseless,
    condition,
    contraction_harness,
    posterior_sample,
    subgaussian_norm_estimate,
)
from .semibandit import (  # noqa: F401
    SemibanditInstance,
    audit_transcript_bic,
    epsilon_j,
    greedy_after_zeros,
    n_lower_bound,
    run_algorithm1,
    zeros_posterior_mean,
)
from .recgame import (  # noqa: F401
    GameSpec,
    PaddedPolicy,
    bic_lift,
    build_game,
    easy_game_value,
    finite_sample_gap,
    solve_minimax,
    verify_padding,
)
from .bic_audit import (  # noqa: F401
    LinearAuditConfig,
    audit_corollary_margins,
    decay_probe_counterexample_2,
    estimate_bic_margin,
    run_counterexample_1,
    simulate_extreme_point_wrapper,
)
from .runner import ExperimentConfig, derive_stream, run  # noqa: F401
