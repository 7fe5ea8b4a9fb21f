"""Per-building forecasters and their federated training."""

from .federated import (
    COMMUNITY_A_FED,
    COMMUNITY_B_FED,
    ClientDataset,
    ClientTrainingError,
    DataTooShortError,
    FedConfig,
    LearnerConfig,
    ModelWeights,
    RoundLog,
    TargetKind,
    fedavg,
    forecast,
    initial_weights,
    load_weights,
    local_train,
    rolling_forecast,
    run_federated,
    save_weights,
    select_participants,
    train_local_only,
    zero_weights,
)
from .learners import IncompatibleWeightsError, LinearAR, RecurrentNet, learner_from_tag
