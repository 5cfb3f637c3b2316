"""Desk-scale lab for diffusion-guided adversarial sample generation."""

from .schedule import NoiseSchedule, RespacedSchedule, diffuse, make_schedule, respace
from .unet import ArchSpec, NoisePredictor
from .denoiser import (
    TrainConfig,
    TrainState,
    denoising_mse,
    load_denoiser,
    new_denoiser,
    predict_noise,
    save_denoiser,
    train_denoiser,
    training_loss,
)
from .sampler import RepaintContext, SdeditConfig, generate, reverse_step, rsdedit, sdedit
from .models import (
    AdversarialRecipe,
    ClassifierSpec,
    ClassifierTrainConfig,
    FeatureExtractor,
    SmallResNet,
    accuracy,
    extract_features,
    load_classifier,
    logits,
    new_classifier,
    predict,
    save_classifier,
    train_classifier,
)
from .attacks import (
    AttackConfig,
    AttackError,
    AttackOutput,
    PatchTransform,
    StyleConfig,
    TransformSpec,
    apply_transform,
    diff_pgd,
    diff_pgd_accel,
    diff_phys,
    fooling_rate,
    gram,
    pgd,
    project,
    sample_transform,
    style_attack,
    style_transfer,
)
from .evaluation import (
    EvalReport,
    RateEntry,
    anti_purification_report,
    purify_then_classify,
    select_correct,
    success_rate,
    transfer_matrix,
)
from .data import load_dataset, load_image, load_mask, make_desk_dataset, save_image, square_mask
from .manifest import TOOL_VERSION, parse_fraction

__version__ = TOOL_VERSION
