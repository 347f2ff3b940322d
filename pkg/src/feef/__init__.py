"""Model-based control with the free energy of the expected future (FEEF)."""

from .nets import ContractError, DenseNet, AdamState, adam_step, init_net, net_forward, nll_loss_and_grads
from .stats import DiagonalGaussian, gaussian_entropy, gaussian_kl, knn_entropy, softmax_stable
from .world_model import (
    Normalizer,
    ReplayBuffer,
    RewardModel,
    Transition,
    TransitionEnsemble,
    WorldModel,
    WorldModelConfig,
    buffer_append,
    predict_reward,
    predict_transition,
    train_world_model,
)
from .objective import (
    BeliefRollout,
    FeefScore,
    PreferredPrior,
    evaluate_candidate,
    extrinsic_step,
    info_gain_step,
    rollout,
    score_candidates,
)
from .planner import CemConfig, PolicyDist, act, plan, refit
from .envs import CoverageGrid, EnvSpec, coverage_fraction, make_env
from .tabular import TabularToyModel, bound_check_suite, tabular_feef
from .harness import Agent, ExperimentConfig, EpisodeRecord, baseline_score, run_episode, run_experiment
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
