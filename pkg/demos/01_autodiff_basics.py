# Tensors, reverse-mode gradients, and a finite-difference cross-check.

import numpy as np

from plausifill import autodiff as ad
from plausifill.autodiff import Tensor, backward

# d(x^2)/dx at x = 3 is 6
x = Tensor([3.0], requires_grad=True)
backward(ad.mul(x, x).sum())
print("d(x^2)/dx at 3 =", x.grad[0])

# a small composite graph: softmax(tanh(A @ B) + c), summed squares
rng = np.random.default_rng(0)
a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
c = Tensor(rng.normal(size=2), requires_grad=True)

out = ad.softmax(ad.add(ad.tanh(ad.matmul(a, b)), c), axis=-1)
loss = ad.mul(out, out).sum()
backward(loss)
print("loss =", float(loss.data))
print("gradient shapes:", a.grad.shape, b.grad.shape, c.grad.shape)

# central finite differences on one coordinate of A agree with the autodiff value
h = 1e-5
flat = a.data.reshape(-1)


def loss_value():
    out = ad.softmax(ad.add(ad.tanh(ad.matmul(Tensor(a.data), b)), c), axis=-1)
    return float(ad.mul(out, out).sum().data)


orig = flat[5]
flat[5] = orig + h
up = loss_value()
flat[5] = orig - h
down = loss_value()
flat[5] = orig
numeric = (up - down) / (2 * h)
print(f"analytic {a.grad.reshape(-1)[5]:.10f} vs finite-difference {numeric:.10f}")

# dropout is inverted: the train-time mean matches the input, eval is identity
row = Tensor(np.tile([1.0, -2.0, 3.0], (100_000, 1)))
dropped = ad.dropout(row, 0.5, "train", np.random.default_rng(1))
print("dropout column means over 1e5 draws:", np.round(dropped.data.mean(axis=0), 3))
