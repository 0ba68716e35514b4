"""Low-level vector math: unit-sphere geometry, stable softmax machinery,
momentum SGD, seeded RNG streams, and a central-difference gradient oracle.

All arithmetic is float64. The RNG is numpy's counter-based Philox generator,
which produces identical streams for identical seeds on every platform.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVector,
    DimensionMismatch,
    EmptyInput,
    NonFiniteLoss,
    ShapeMismatch,
)

EPS_NORM = 1e-8


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream ids).

    Distinct stream ids give independent substreams of the same seed, so
    components (data generation, init, shuffling) can be reseeded without
    coupling their draw counts.
    """
    mask = 0xFFFFFFFFFFFFFFFF
    word = 0x9E3779B97F4A7C15
    for s in stream:
        # splitmix64-style fold of the stream ids into the second key word
        word = (word + (int(s) & mask)) & mask
        word = ((word ^ (word >> 30)) * 0xBF58476D1CE4E5B9) & mask
        word = ((word ^ (word >> 27)) * 0x94D049BB133111EB) & mask
        word ^= word >> 31
    key = np.array([int(seed) & mask, word], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale v to unit Euclidean norm. Raises DegenerateVector below EPS_NORM."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= EPS_NORM:
        raise DegenerateVector(f"norm {n:g} <= {EPS_NORM:g}")
    return v / n


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def log_sum_exp(logits) -> float:
    """Numerically stable log(sum(exp(s_i)))."""
    s = np.asarray(logits, dtype=np.float64)
    if s.size == 0:
        raise EmptyInput("log_sum_exp of empty sequence")
    m = np.max(s)
    return float(m + np.log(np.sum(np.exp(s - m))))


@dataclass
class OptimizerState:
    """Momentum SGD state; velocity buffers are created lazily per parameter."""

    lr: float
    momentum: float = 0.0
    velocities: dict = field(default_factory=dict)


def sgd_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """In-place update p <- p - lr * v with v <- momentum * v + g.

    params and grads are dicts name -> float64 array with matching shapes.
    Returns params for convenience.
    """
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"{name}: {p.shape} vs {g.shape}")
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v + g
        state.velocities[name] = v
        p -= state.lr * v
    return params


def finite_diff_grad(loss_fn, params: dict, h: float) -> dict:
    """Central-difference gradient of loss_fn(params) per coordinate.

    loss_fn must be a pure scalar function of the parameter dict; params are
    perturbed in place and restored, so aliased views are safe.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            f_plus = loss_fn(params)
            flat_p[i] = orig - h
            f_minus = loss_fn(params)
            flat_p[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteLoss(f"non-finite loss probing {name}[{i}]")
            flat_g[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads


def params_hash(params: dict) -> str:
    """Stable digest of a parameter dict, for freeze/provenance assertions."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype=np.float64).tobytes())
    return h.hexdigest()
