"""gufu: keep a WiFi RSS fingerprint database fresh from unlabeled signals.

The package maintains a labeled fingerprint survey over time: periodic
batches of crowdsourced, unlabeled RSS samples update every stored RSS
vector, predict where the new samples were taken, and adapt the database to
access points appearing or disappearing from the site.
"""

from .config import RunConfig
from .data import (
    FingerprintDatabase,
    SignalBatch,
    align,
    denormalize_rss,
    load_batch,
    load_survey,
    normalize_rss,
    save_batch,
    save_survey,
)
from .errors import (
    ContractError,
    DimensionError,
    GufuError,
    ParseError,
    TrainingError,
    ValidationError,
)
from .feature_extractor import Autoencoder
from .pipeline import GufuState, initialize, load_state, save_state, update_cycle
from .simenv import SimConfig, Simulator, default_desk_config, location_error, rss_error

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "FingerprintDatabase",
    "SignalBatch",
    "align",
    "normalize_rss",
    "denormalize_rss",
    "load_survey",
    "load_batch",
    "save_survey",
    "save_batch",
    "Autoencoder",
    "GufuState",
    "initialize",
    "update_cycle",
    "save_state",
    "load_state",
    "SimConfig",
    "Simulator",
    "default_desk_config",
    "rss_error",
    "location_error",
    "GufuError",
    "DimensionError",
    "ValidationError",
    "ParseError",
    "TrainingError",
    "ContractError",
    "__version__",
]
