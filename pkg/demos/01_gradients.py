"""Walk through the autodiff engine on the pieces the reconstruction is built from.

Run:  python demos/01_gradients.py
"""
import numpy as np

from implicitvol import autodiff as ad
from implicitvol import data, siren, train
from implicitvol.geometry import SlicePose, euler_to_matrix

# A tape records array operations as they run; backward walks it in reverse.
tape = ad.Tape()
x = tape.leaf(np.array([0.0, 0.5, 1.0]))
y = ad.sum(ad.sin(x) * x)
g = ad.backward(tape, y)[x]
print("d/dx sum(x sin x) =", g, " expected", np.sin(x.value) + x.value * np.cos(x.value))

# Euler angles go through the same tape, so rotations are differentiable.
print("R(0, 0, pi/2) =\n", np.round(euler_to_matrix([0.0, 0.0, np.pi / 2]), 12))

# The full pipeline: pose -> plane coordinates -> encoding -> SIREN -> SSIM loss.
phantom = data.generate_phantom(32, seed=0)
true_pose = SlicePose((0.3, 0.0, 0.1), (0.05, 0.0, 0.0))
image = data.slice_image(phantom.volume, true_pose, 16, 16)
net = siren.init(n_freqs=3, seed=1, hidden=32, n_hidden=2)
start = true_pose.as_vector() + 0.05


def loss_of_pose(pose):
    return train.step_loss(net, None, [pose], image[None])


err = ad.finite_diff_check(loss_of_pose, start, h=1e-5)
print(f"pose gradient vs central differences: max relative error {err:.2e}")

theta = np.concatenate([p.ravel() for p in net.parameters()])
shapes = [p.shape for p in net.parameters()]


def loss_of_weights(flat):
    parts, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        parts.append(ad.reshape(flat[off:off + n], s))
        off += n
    return train.step_loss(net, parts, [start], image[None])


err = ad.finite_diff_check(loss_of_weights, theta, h=1e-5, floor=1e-8)
print(f"{theta.size} network gradients vs central differences: max relative error {err:.2e}")
