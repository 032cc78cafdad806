"""Deterministic simulator of a federated learning-from-demonstration network.

Simulated teachers are modelled by autoencoder user profiles that modulate
both the per-session weighting of the local training loss and the per-user
weighting of update aggregation at the server.
"""

from .aggregation import (
    FedAvg,
    LocalUpdate,
    UserWeighted,
    aggregate_fedavg,
    aggregate_user_weighted,
    apply_global_update,
    update_global_profile,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .federated import (
    FeedbackSample,
    NodeState,
    PolicyModel,
    RoundReport,
    build_policy,
    local_train,
    run_round,
    session_weights,
    weighted_local_loss,
)
from .harness import compare_strategies, resume, run_experiment
from .lstm import LstmAutoencoder, encode_sequence, train_lstm_autoencoder
from .profile import (
    ProfileDims,
    SessionFeatures,
    UserProfile,
    build_profile_model,
    encode_session,
    extract_profile,
    profile_distance,
    train_profile,
)
from .rng import Rng
from .world import (
    SensorCatalog,
    SensorSpec,
    SessionRecord,
    UserArchetype,
    evaluate_policy,
    generate_population,
    generate_session,
)

__version__ = "0.1.0"
