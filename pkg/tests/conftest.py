import pytest
import torch

from lidarcap.smpl_body import synthetic_body_model

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def body_model():
    return synthetic_body_model(seed=0)
