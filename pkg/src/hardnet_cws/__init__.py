"""HarDNet-style wound segmentation with colour-merged inputs, plus evaluation and rater-reliability tools."""
from .colour import EyConfig, derive_ey, merge_channels
from .encoder import BlockSchedule, builtin_schedule, link_set, schedule_stats
from .metrics import confusion, evaluate_set, metrics
from .model import HarDNetCWS, ModelConfig, build_model
from .reliability import anova_two_way, icc_agreement, icc_consistency, interpret_icc
from .training import TrainConfig, make_folds, train, tta_infer

__version__ = "0.1.0"
