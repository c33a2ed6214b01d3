"""camflow: interactive action-conditioned video generation on a
procedural grid world.

Keyboard and mouse input map onto a continuous camera action space;
a small flow-matching transformer denoises fixed-length frame chunks
conditioned on per-pixel camera-ray (Plücker) grids and clean history
tokens, extending video autoregressively while a raycast renderer
provides exact ground truth for training data and evaluation.
"""

from .actions import Action, ControlConfig, KeyState, NULL_ACTION, blend_actions, invert_action, keys_to_action
from .alignment import RpeResult, Sim3, apply_sim3, rpe, umeyama_sim3
from .camera import (
    CameraPose,
    Intrinsics,
    Trajectory,
    integrate_action,
    plucker_embedding,
    pose_to_extrinsic,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Chunk,
    DatasetManifest,
    balance_manifest,
    read_chunks,
    sample_training_chunk,
    temporal_inversion,
    write_chunks,
)
from .distill import DistillConfig, cfg_distill_loss, cfg_target, pcm_distill, sample_distilled
from .extension import HeadCondition, HeadMode, HistoryBuffer, autoregressive_extend, build_head_condition, sample_training_mode
from .evalkit import EvalReport, dynamic_average, drift_photometric, recover_trajectory, temporal_consistency
from .model import Denoiser, ModelConfig, flow_matching_loss, sample
from .session import SessionConfig, SessionManager
from .train import EpisodeDataset, TrainConfig, generate_training_data, train
from .world import World, generate_world, render_frame

__version__ = "0.1.0"