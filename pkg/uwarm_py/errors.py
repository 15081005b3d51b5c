##############################################################################
# Copyright© 2025 UT-Battelle, LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################
"""
Exceptions raised by the uwarm_py package.

Every error derives from UwarmError and from the closest builtin
exception, so callers may catch either.
"""


class UwarmError(Exception):
    """Base class of all uwarm_py errors."""


class ConfigError(UwarmError, ValueError):
    """Bad configuration key, value or scenario file."""


class InvalidStateError(UwarmError, ValueError):
    def __init__(self, msg: str = "invalid state"):
        super().__init__(msg)


class DynamicsDivergedError(UwarmError, FloatingPointError):
    """The integrator produced a non-finite state, the episode must abort."""
    def __init__(self, msg: str = "dynamics diverged"):
        super().__init__(msg)


class EpisodeFinishedError(UwarmError, RuntimeError):
    def __init__(self, msg: str = "episode finished"):
        super().__init__(msg)


class DimensionError(UwarmError, ValueError):
    def __init__(self, msg: str = "dimension error"):
        super().__init__(msg)


class NumericError(UwarmError, FloatingPointError):
    def __init__(self, msg: str = "numeric error"):
        super().__init__(msg)


class TrainingDivergedError(UwarmError, FloatingPointError):
    def __init__(self, msg: str = "training diverged"):
        super().__init__(msg)


class InsufficientDataError(UwarmError, ValueError):
    def __init__(self, msg: str = "insufficient data"):
        super().__init__(msg)


class LinearizationError(UwarmError, FloatingPointError):
    def __init__(self, msg: str = "linearization failed"):
        super().__init__(msg)


class MetricsError(UwarmError, ValueError):
    """Metric evaluated on an empty or malformed episode log."""


class ArtifactNotFoundError(UwarmError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"artifact not found: {path}")
        self.path = path


class CheckpointError(UwarmError, ValueError):
    """Checkpoint header or payload does not match the expected layout."""


# exit code 2 of the cli
NUMERIC_FAILURES = (DynamicsDivergedError, TrainingDivergedError,
                    NumericError, LinearizationError)
