"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and every other M1LabError to exit
code 3; library code raises plain ValueError only for programming errors
(bad argument shapes), never for data-dependent failures.
"""


class M1LabError(Exception):
    """Base class for runtime failures raised by m1lab."""


class ConfigError(M1LabError):
    """A configuration value violates the schema. Message names the field."""


class CapacityError(M1LabError):
    """A requested construction exceeds an explicit size cap."""


class StabilityError(M1LabError):
    """A numerical scheme's stability constraint is violated."""
