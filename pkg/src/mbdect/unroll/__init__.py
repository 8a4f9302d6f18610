from .mixer import MixerConfig, init_params, mixer_backward, mixer_forward
from .network import (
    Sample,
    TrainConfig,
    TrainingDiverged,
    UnrolledNet,
    block_apply,
    broadcast,
    evaluate_losses,
    infer,
    load_net,
    make_net,
    pretrain_first_block,
    save_net,
    train,
    weight_schedule,
)
