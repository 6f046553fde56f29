"""Shared test utilities."""
import math

import numpy as np

from approxuq.rjmcmc import split_params


def random_split_input(rng, M, delta_x=1.0, delta_a=1.0):
    a = rng.normal()
    tau = rng.uniform(25.0, 400.0) * delta_x ** 2  # keeps the split ball inside the cube
    nu = rng.uniform(0.3, 0.7, M)
    R = delta_x / (2.0 * math.sqrt(tau))
    d = rng.normal(size=M)
    u_x = d / np.linalg.norm(d) * R * rng.random() ** (1.0 / M)
    return (a, tau, nu), rng.uniform(0.01, 0.99), u_x, rng.uniform(-delta_a / 2, delta_a / 2)


def numerical_split_jacobian(kern, u_tau, u_x, u_a):
    """|det| of d(theta') / d(theta, u) by fourth-order central differences."""
    M = len(kern[2])

    def h(v):
        k1, k2 = split_params((v[0], v[1], v[2:2 + M]), v[2 + M], v[3 + M:3 + 2 * M], v[3 + 2 * M])
        return np.concatenate([[k1[0], k1[1]], k1[2], [k2[0], k2[1]], k2[2]])

    v = np.concatenate([[kern[0], kern[1]], kern[2], [u_tau], u_x, [u_a]])
    J = np.empty((len(v), len(v)))
    for i in range(len(v)):
        e = np.zeros(len(v))
        e[i] = 1e-4 * max(1.0, abs(v[i])) if i != 2 + M else 1e-5
        J[:, i] = (-h(v + 2 * e) + 8 * h(v + e) - 8 * h(v - e) + h(v - 2 * e)) / (12 * e[i])
    return abs(np.linalg.det(J))
