from .buffer import ReplayBuffer
from .config import EQUALITY, FAMILIES, INEQUALITY, KINDS, TrainerConfig
from .duals import DualState, dual_update, v_proxy
from .lemma import (
    QuadToy, decrease_slack, lemma1_monitor, primal_minimizer, run_dual_ascent, toy_equality, toy_mixed,
)
from .loop import (
    METRIC_COLUMNS, Agent, TrainedArtifacts, actor_loss, baseline_trainer, critic_update, train,
)
from .residuals import batch_means, constraint_residuals, physical_block, residual_norms

__all__ = [
    "Agent", "DualState", "EQUALITY", "FAMILIES", "INEQUALITY", "KINDS", "METRIC_COLUMNS", "QuadToy",
    "ReplayBuffer", "TrainedArtifacts", "TrainerConfig", "actor_loss", "baseline_trainer", "batch_means",
    "constraint_residuals", "critic_update", "decrease_slack", "dual_update", "lemma1_monitor",
    "physical_block", "primal_minimizer", "residual_norms", "run_dual_ascent", "toy_equality", "toy_mixed",
    "train", "v_proxy",
]
