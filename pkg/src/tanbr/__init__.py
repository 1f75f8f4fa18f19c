"""Tree-structured adaptive neural bandit router for expert merging."""

from .bandit import (
    BanditConfig,
    BanditState,
    RoundRecord,
    gamma,
    new_state,
    observe_and_update,
    run_round,
    select_arm,
    ucb_score,
    ucb_scores,
    update_design_and_net,
)
from .baselines import (
    AveragePolicy,
    FixedExpertPolicy,
    NucbPolicy,
    RandomPolicy,
    TanbrPolicy,
    make_policy,
    uniform_simplex_sample,
)
from .environments import (
    CountMinSketch,
    SyntheticEnvironment,
    TaskMonitor,
    ToyMoEEnvironment,
    environment_from_spec,
    monitor_ema,
    oracle_best,
    simplex_grid,
    slot_feature,
    synthetic_reward,
    toy_moe_reward,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    RunSummary,
    aggregate,
    config_from_dict,
    load_config,
    run_experiment,
    run_replication,
    write_outputs,
)
from .partition import (
    Box,
    ExpansionReport,
    PartitionNode,
    PartitionTree,
    TreeConfig,
    candidate_count_bound,
    depth_bound,
    expansion_threshold,
    is_feasible,
    new_tree,
    representative_point,
    top_b_project,
    weight_is_valid,
)
from .reward_net import (
    NetConfig,
    RewardNet,
    TrainConfig,
    forward,
    forward_batch,
    gradient,
    gradient_batch,
    init_params,
    load_params,
    save_params,
    sgd_update,
)

__version__ = "0.1.0"
