"""Home solar-battery dispatch: simulator, DDPG agent, oracles, experiments."""

__version__ = "0.1.0"

from .env import Action, BatteryEnv, BatteryState, EnvConfig, Observation, Settlement  # noqa: F401
from .ingest import (  # noqa: F401
    DataSplit,
    HalfHourRecord,
    SyntheticProfile,
    WeekTrace,
    filter_complete_weeks,
    generate_synthetic_weeks,
    parse_ausgrid_csv,
    select_household,
    split_train_test,
)
