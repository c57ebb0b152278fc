from .losses import (
    DistillPlan,
    LossParts,
    distill_term,
    loss_ce,
    loss_cos,
    loss_kl,
    loss_mae,
    loss_mse,
    loss_total,
)
from .optim import OptimState, Schedule, adamw_step, lr_schedule
from .trainer import (
    StepReport,
    TrainState,
    evaluate,
    fit,
    joint_forward,
    make_schedule,
    predict,
    pretrain_backbone,
    train_step,
)
