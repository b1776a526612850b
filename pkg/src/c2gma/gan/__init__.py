from .losses import (
    AdversarialLosses,
    Batch,
    adversarial_losses,
    cycle_loss,
    discriminator_losses,
    generator_losses,
    gradient_penalty,
    total_objective,
)
from .networks import ClassEmbedding, ConditionalBatchNorm2d, ConditionalGenerator, ProjectionDiscriminator
from .spectral import SNConv2d, SNLinear, spectral_norm, top_singular_value
from .trainer import (
    LOSS_COLUMNS,
    ModelBundle,
    TrainConfig,
    build_bundle,
    load_bundle,
    mean_cycle_loss,
    train_domain_transfer,
)
