"""Record a small computation on a tape and check its gradient numerically."""
import numpy as np

from idat.gradcheck import check_gradients
from idat.tensor import Tape, Tensor, gelu, layer_norm, softmax

g = np.random.default_rng(0)
x = Tensor(g.normal(size=(4, 6)), requires_grad=True)
w = Tensor(g.normal(size=(6, 3)), requires_grad=True)
gamma, beta = Tensor(np.ones(6)), Tensor(np.zeros(6))


def loss():
    h = layer_norm(x, gamma, beta)
    return (softmax(gelu(h @ w)) * Tensor(np.arange(3.0))).sum()


with Tape() as tape:
    value = loss()
tape.backward(value)
print("loss", value.item())
print("dL/dw\n", w.grad)

# finite differences only call the forward function, so they are an
# independent check on the tape
print(check_gradients(loss, [x, w]))
