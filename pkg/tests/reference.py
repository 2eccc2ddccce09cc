"""Hand-written reference loops used as oracles for the engine."""

import numpy as np

from ldsgd.rng import NoiseStream


def quad_noise(problem, seed, T):
    return problem.draws(NoiseStream(seed), np.arange(1, T + 1))


def plain_dsgd(problem, weights, eta, T, seed):
    """Gossip after every local step: x <- (x - eta g) W, written without any scheme logic."""
    H, B = problem.hessian, problem.offsets
    d, n = problem.dim, problem.nodes
    noise = quad_noise(problem, seed, T)
    x = np.zeros((d, n))
    states = []
    for t in range(T):
        states.append(x.copy())
        g = np.empty((d, n))
        for k in range(n):
            g[:, k] = H @ x[:, k] - B[k] + noise[t, k]
        x = np.matmul(x - eta * g, weights)
    return states, x


def local_sgd(problem, eta, T, seed, period):
    """Federated averaging: local steps, exact averaging every ``period`` steps."""
    H, B = problem.hessian, problem.offsets
    d, n = problem.dim, problem.nodes
    noise = quad_noise(problem, seed, T)
    x = np.zeros((d, n))
    states = []
    for t in range(1, T + 1):
        states.append(x.copy())
        for k in range(n):
            x[:, k] = x[:, k] - eta * (H @ x[:, k] - B[k] + noise[t - 1, k])
        if t % period == 0:
            x[:] = x.mean(axis=1, keepdims=True)
    return states, x


def gradient_descent(problem, eta, T):
    x = np.zeros(problem.dim)
    path = []
    for _ in range(T):
        path.append(x.copy())
        x = x - eta * problem.full_gradient(x)
    return path, x
