"""Spring-shape design and orbital stabilization of an underactuated five-bar mechanism."""

__version__ = "0.1.0"

from .errors import *  # noqa: E402,F401,F403
from .mechanism import DesignParams, LinkTable, MechanismInstance  # noqa: E402
from .scenario import Reference, ScenarioConfig, default_scenario  # noqa: E402

__all__ = ["DesignParams", "LinkTable", "MechanismInstance", "Reference", "ScenarioConfig",
           "default_scenario", "__version__"]
