import numpy as np
import pytest

from prefixprop.attention import LayerWeights
from prefixprop.tensor import Tensor


def make_layer_weights(rng, d, d_ff=None, requires_grad=False, scale=1.0):
    """Random layer weights sized for attention-only or full-layer tests."""
    d_ff = d_ff or 4 * d

    def t(*shape):
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=requires_grad)

    return LayerWeights(
        w_q=t(d, d),
        w_k=t(d, d),
        w_v=t(d, d),
        w_o=t(d, d),
        w_ff1=t(d, d_ff),
        b_ff1=Tensor(np.zeros((1, d_ff)), requires_grad=requires_grad),
        w_ff2=t(d_ff, d),
        b_ff2=Tensor(np.zeros((1, d)), requires_grad=requires_grad),
        ln1_gamma=Tensor(np.ones((1, d)), requires_grad=requires_grad),
        ln1_beta=Tensor(np.zeros((1, d)), requires_grad=requires_grad),
        ln2_gamma=Tensor(np.ones((1, d)), requires_grad=requires_grad),
        ln2_beta=Tensor(np.zeros((1, d)), requires_grad=requires_grad),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
