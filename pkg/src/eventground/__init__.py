"""Attribute-aware referring-expression grounding on event-camera voxel grids."""

from .boxes import BoxXYWH, giou, iou
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import GroundingSample, SceneObject, load_dataset, save_dataset
from .errors import *  # noqa: F401,F403
from .events import (Event, EventWindow, ResponseStrength, VoxelGrid, normalize_strengths, read_events,
                     response_strength, strength_bin, voxelize, write_events)
from .gradcheck import GradCheckResult, gradient_check, gradient_check_report
from .inference import GroundingResult, GroundScore, score_queries, select_box
from .matching import Assignment, CostMatrix, LossWeights, PseudoTargetSet, cost_matrix, hungarian_assign, total_loss
from .metrics import EvalRecord, MetricsReport, expert_activation_profile, miou, report, top1_acc
from .model import (GateWeights, JointStates, ModelConfig, QueryOutput, SampleInput, backward, decode, encode, forward,
                    fuse, init_params, mask_states, moee_fuse)
from .synth import GridConfig, gen_corpus, gen_scene
from .text import (AttributeKind, AttributeMask, ExpressionMaps, PositiveMap, SoftTokenMap, SynonymTable,
                   build_attribute_mask, build_public_context, expression_maps, fuzzy_match_spans, soften, tokenize)
from .train import TrainConfig, TrainResult

__version__ = "0.1.0"
