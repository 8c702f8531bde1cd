"""Walk through the reverse-mode engine: build a tiny computation on the tape,
pull gradients back, and confirm one of them against a finite difference."""

import numpy as np

from mognet.tensor import (Tape, Tensor, backward, cross_entropy, gradient_check,
                           matmul, softmax, tanh)

# a 2x2 projection feeding a softmax classifier
w = Tensor(np.array([[0.2, -0.1], [0.4, 0.3]]), requires_grad=True)
x = Tensor(np.array([1.0, 2.0]))

with Tape():
    hidden = tanh(matmul(x, w))
    probs = softmax(hidden)
    loss = cross_entropy(probs, 1)   # negative log prob of class 1
    backward(loss)

print("loss          :", loss.item())
print("probs         :", probs.data)
print("dloss/dw      :\n", w.grad)

# check dloss/dw[0,0] by nudging the weight both ways
h = 1e-5
saved = w.grad.copy()


def loss_at(v):
    w.data[0, 0] = v
    with Tape():
        return cross_entropy(softmax(tanh(matmul(x, w))), 1).item()


base = w.data[0, 0]
numeric = (loss_at(base + h) - loss_at(base - h)) / (2 * h)
w.data[0, 0] = base
print("analytic[0,0] :", saved[0, 0])
print("numeric [0,0] :", numeric)
print("difference    :", abs(saved[0, 0] - numeric))

# gradient_check automates that sweep over every parameter entry
def f():
    return cross_entropy(softmax(tanh(matmul(x, w))), 1)


report = gradient_check(f, [w], names=["w"])
print("\ngradient_check ok:", report.ok,
      "max relative error:", report.max_rel_error)
for entry in report.entries:
    print(f"  {entry.name} shape {entry.shape} worst {entry.max_rel_error:.2e}"
          f" at {entry.worst_index}")

# outside a tape nothing is recorded, so inference costs no memory
probs = softmax(tanh(matmul(x, w)))
print("\nno-tape forward:", probs.data, "(tape:", probs.tape, ")")
