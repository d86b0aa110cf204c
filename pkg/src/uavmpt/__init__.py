"""UAV-assisted power transfer and data collection: simulator, schedulers, oracles."""

from .channel import (ChannelDraw, EfficiencyModel, FadingParams, GainQuantizer,
                      LinkGeometry, ber_nakagami, contact_time, link_geometry,
                      mpt_received_power, required_tx_power, sample_power_gain)
from .config import ConfigError, SimConfig, TrainingParams, load_config, save_config
from .dqn import (AdamState, Experience, MlpParams, ReplayMemory, forward,
                  load_checkpoint, save_checkpoint, sync_target, td_targets,
                  train_step)
from .env import (Action, DeviceState, EnvState, Simulator, StepOutcome, UavState,
                  encode_state, reset, step)
from .exact_mdp import ExactMdp, enumerate_exact_mdp
from .harness import (EvalResult, RunResult, SweepSpec, episodes_to_stabilization,
                      evaluate_policy, run_oracle, run_sweep, run_training)
from .modulation import (ModulationProblem, brute_force_modulation, foc_residual,
                         net_energy, optimal_modulation)
from .schedulers import (EpsilonSchedule, drlsa_select, finalize_action, lqsa_select,
                         rsa_select)
from .tabular import QTable, policy_evaluation, q_update, train_tabular, value_iteration

__version__ = "0.1.0"
