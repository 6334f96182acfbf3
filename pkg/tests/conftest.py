import numpy as np
import pytest

from safecomp.network import Layer, Network


def make_network(layers, labels=("a", "b"), score_order="max_best", name="test",
                 input_min=None, input_max=None, input_mean=None, input_range=None,
                 metadata=None):
    input_dim = layers[0].in_dim
    return Network(
        name=name,
        labels=tuple(labels),
        score_order=score_order,
        input_dim=input_dim,
        layers=tuple(layers),
        input_min=np.zeros(input_dim) if input_min is None else np.asarray(input_min, float),
        input_max=np.ones(input_dim) if input_max is None else np.asarray(input_max, float),
        input_mean=np.zeros(input_dim) if input_mean is None else np.asarray(input_mean, float),
        input_range=np.ones(input_dim) if input_range is None else np.asarray(input_range, float),
        metadata=metadata or {},
    )


def identity_network(dim=2, score_order="max_best", labels=None):
    """One identity layer, W=I, b=0: scores equal the inputs."""
    labels = labels or tuple(chr(ord("a") + i) for i in range(dim))
    return make_network(
        [Layer(np.eye(dim), np.zeros(dim), "identity")],
        labels=labels,
        score_order=score_order,
    )


def random_network(seed, dims=(2, 8, 8, 3), score_order="max_best", scale=1.0):
    """Seeded random ReLU net with hidden relu layers and identity output."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        activation = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(
            weights=rng.normal(0.0, scale, size=(dims[i + 1], dims[i])),
            bias=rng.normal(0.0, scale, size=dims[i + 1]),
            activation=activation,
        ))
    labels = tuple(f"l{i}" for i in range(dims[-1]))
    return make_network(layers, labels=labels, score_order=score_order,
                        name=f"rand{seed}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
