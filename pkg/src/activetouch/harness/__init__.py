from .config import ExperimentConfig, load_config
from .metrics import add_s, add_s_batch, first_stable_step
from .trial import TrialResult, replay_trial, run_ablation, run_trial, summarize
from .world import World, load_priors, sample_truth
