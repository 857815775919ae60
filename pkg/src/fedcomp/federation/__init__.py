"""Federated averaging and CORAL personalization."""

from fedcomp.federation.aggregate import (
    FED_MODES,
    FederationConfig,
    GlobalModel,
    SyncEvent,
    SyncLog,
    fed_average,
    should_sync,
    snapshot,
    sync,
)
from fedcomp.federation.coral import (
    ObservationWindow,
    coral_grad,
    coral_loss,
    coral_theta_grad,
    covariance,
    personalized_actor_update,
)

__all__ = [
    "FED_MODES",
    "FederationConfig",
    "GlobalModel",
    "ObservationWindow",
    "SyncEvent",
    "SyncLog",
    "coral_grad",
    "coral_loss",
    "coral_theta_grad",
    "covariance",
    "fed_average",
    "personalized_actor_update",
    "should_sync",
    "snapshot",
    "sync",
]
