import numpy as np
import pytest

from mixdistill import data, nn
from mixdistill.nn import NetworkSpec, TrainConfig


def train_blob_teacher(num_classes=3, per_class=200, side=8, noise=0.05, seed=0):
    train_ds = data.synth_blobs(num_classes, per_class, side, seed=seed, noise=noise)
    spec = NetworkSpec((side, side, 1), ("flatten", "dense:16", "relu", f"dense:{num_classes}"),
                       num_classes)
    onehot = np.zeros((len(train_ds), num_classes))
    onehot[np.arange(len(train_ds)), train_ds.labels] = 1.0
    cfg = TrainConfig(learning_rate=0.2, momentum=0.9, epochs=30, batch_size=32, seed=seed)
    model, _ = nn.train(spec, train_ds.images, onehot, cfg)
    return model, train_ds


@pytest.fixture(scope="session")
def blob_teacher():
    """Trained 3-class blob teacher plus its training dataset."""
    return train_blob_teacher()


@pytest.fixture
def tiny_model():
    """Fixed random 2-layer dense model on 2x2 inputs."""
    spec = NetworkSpec((2, 2, 1), ("flatten", "dense:6", "relu", "dense:3"), 3)
    return nn.new_model(spec, seed=7)
