# Copyright 2026 The StageRefine Authors.
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

"""Stage-scheduled pseudo-label refinement for learning with noisy labels."""

import json as _json

from ._core import (
    ConfigError,
    ContractError,
    IngestionError,
    IntegrityError,
    PhaseError,
    StageRefineError,
    VersioningError,
    consensus,
    cross_entropy,
    default_config,
    derive_seed,
    inject_idn,
    make_blobs,
    nt_xent_loss,
)
from ._core import run as _run


def run(config=None):
    """Runs the pipeline for a config given as a dict, JSON text or None."""
    if config is None:
        text = "{}"
    elif isinstance(config, str):
        text = config
    else:
        text = _json.dumps(config)
    return _run(text)


__all__ = [
    "ConfigError",
    "ContractError",
    "IngestionError",
    "IntegrityError",
    "PhaseError",
    "StageRefineError",
    "VersioningError",
    "consensus",
    "cross_entropy",
    "default_config",
    "derive_seed",
    "inject_idn",
    "make_blobs",
    "nt_xent_loss",
    "run",
]
