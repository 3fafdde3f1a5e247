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

import json
import math

import numpy as np
import pytest

import stagerefine as sr

TINY = {
    "dataset": {"blobs": {"num_samples": 90, "num_test_samples": 30,
                          "image_size": 8}},
    "encoder": {"input_height": 8, "input_width": 8, "embedding_dim": 8,
                "projection_dim": 4, "base_width": 4, "hidden_width": 12},
    "contrastive": {"epochs": 1, "batch_size": 16,
                    "augmentation": {"output_size": [8, 8]}},
    "refinery": {"iterations": 1, "augmentation": {"output_size": [8, 8]}},
    "train": {"warmup_epochs": 1, "batch_size": 16},
}


def test_nt_xent_orthogonal_pairs():
    p = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    loss, grad = sr.nt_xent_loss(p, 1.0)
    assert loss == pytest.approx(math.log(1 + 2 / math.e), abs=1e-6)
    assert grad.shape == p.shape


def test_cross_entropy_uniform():
    for k in (2, 10, 100):
        assert sr.cross_entropy(np.zeros(k), 0) == pytest.approx(
            math.log(k), abs=1e-9)
    with pytest.raises(sr.ContractError):
        sr.cross_entropy(np.zeros(3), 3)


def test_blobs_and_noise():
    data = sr.make_blobs(num_samples=300, image_size=8)
    assert data["images"].shape == (300, 8, 8, 3)
    assert data["images"].dtype == np.uint8
    noisy = sr.inject_idn(data["images"], data["labels"], 3, 0.3, 7)
    flipped = np.array(noisy["flipped"])
    assert flipped.sum() == 90
    changed = np.array(noisy["labels"]) != np.array(data["clean_labels"])
    assert (changed == flipped).all()
    again = sr.inject_idn(data["images"], data["labels"], 3, 0.3, 7)
    assert again["labels"] == noisy["labels"]


def test_consensus_is_intersection():
    losses = [[0.1, 0.5, 2.0], [0.2, 1.5, 0.1], [0.3, 0.4, 0.2]]
    assert sr.consensus(losses, [2, 3, 4], 1.0) == [0]


def test_config_errors_name_the_field():
    with pytest.raises(sr.ConfigError, match="noise.bogus"):
        sr.run({"noise": {"bogus": 1}})
    assert json.loads(sr.default_config())["refinery"]["iterations"] == 4


def test_tiny_pipeline_is_deterministic():
    a = sr.run(TINY)
    b = sr.run(json.dumps(TINY))
    assert a["working_labels"] == b["working_labels"]
    assert a["final_test_accuracy"] == b["final_test_accuracy"]
    assert [row["iteration"] for row in a["quality"]] == [0, 1]
    assert 0.0 <= a["final_test_accuracy"] <= 1.0
