"""Covariance kernels over space-time inputs and their sums/products.

Inputs are ``(n, D)`` arrays; by convention column 0 is the week index and
columns 1-2 are longitude and latitude in degrees.

Kernel trees are immutable. A node object may appear at several places in a
tree (the interaction term of :func:`build_spatiotemporal` reuses the time and
space nodes); such shared nodes carry one set of hyperparameters.

Gram evaluation is written against an array namespace ``xp`` so the same code
runs under numpy and under ``jax.numpy`` when the sampler differentiates
through it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

KINDS = ("exponential", "matern32", "rbf", "periodic", "bias")

SQRT3 = math.sqrt(3.0)


class KernelError(ValueError):
    """Invalid kernel construction or evaluation."""


def _is_concrete(value) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer))


@dataclass(frozen=True, eq=False)
class KernelParams:
    variance: float = 1.0
    lengthscale: float = 1.0
    period: float = 52.0

    def __post_init__(self):
        for name in ("variance", "lengthscale", "period"):
            value = getattr(self, name)
            # traced values (jax) are validated on the unconstrained side
            if _is_concrete(value) and not (math.isfinite(value) and value > 0):
                raise KernelError(f"{name} must be finite and positive, got {value!r}")


@dataclass(frozen=True, eq=False)
class Base:
    kind: str
    params: KernelParams = field(default_factory=KernelParams)
    active_dims: tuple = ()
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "active_dims", tuple(int(d) for d in self.active_dims))
        if self.kind != "bias" and not self.active_dims:
            raise KernelError(f"{self.kind} kernel needs at least one active dimension")
        if len(set(self.active_dims)) != len(self.active_dims):
            raise KernelError(f"repeated active dimension in {self.active_dims}")
        # sin^2 of a Euclidean distance in more than one dimension is not PSD
        if self.kind == "periodic" and len(self.active_dims) != 1:
            raise KernelError("periodic kernel takes exactly one active dimension")

    def __add__(self, other):
        return Sum(self, other)

    def __mul__(self, other):
        return Product(self, other)


@dataclass(frozen=True, eq=False)
class Sum:
    left: "KernelExpr"
    right: "KernelExpr"

    def __add__(self, other):
        return Sum(self, other)

    def __mul__(self, other):
        return Product(self, other)


@dataclass(frozen=True, eq=False)
class Product:
    left: "KernelExpr"
    right: "KernelExpr"

    def __add__(self, other):
        return Sum(self, other)

    def __mul__(self, other):
        return Product(self, other)


KernelExpr = Union[Base, Sum, Product]


# ---------------------------------------------------------------- constructors

def exponential(variance=1.0, lengthscale=1.0, dims=(0,), label=""):
    return Base("exponential", KernelParams(variance, lengthscale), dims, label)


def matern32(variance=1.0, lengthscale=1.0, dims=(0,), label=""):
    return Base("matern32", KernelParams(variance, lengthscale), dims, label)


def rbf(variance=1.0, lengthscale=1.0, dims=(0,), label=""):
    return Base("rbf", KernelParams(variance, lengthscale), dims, label)


def periodic(variance=1.0, lengthscale=1.0, period=52.0, dims=(0,), label=""):
    return Base("periodic", KernelParams(variance, lengthscale, period), dims, label)


def bias(variance=1.0, label="bias"):
    return Base("bias", KernelParams(variance), (), label)


# ------------------------------------------------------------------ evaluation

def profile(kind: str, params: KernelParams, d, xp=np):
    """Kernel value as a function of the distance ``d`` (array or scalar)."""
    s2 = params.variance
    if kind == "exponential":
        # distance over 2l, not l: the convention of the reference software
        return s2 * xp.exp(-d / (2.0 * params.lengthscale))
    if kind == "matern32":
        r = SQRT3 * d / params.lengthscale
        return s2 * (1.0 + r) * xp.exp(-r)
    if kind == "rbf":
        return s2 * xp.exp(-(d**2) / (2.0 * params.lengthscale**2))
    if kind == "periodic":
        s = xp.sin(math.pi * d / params.period)
        return s2 * xp.exp(-(s**2) / (2.0 * params.lengthscale**2))
    if kind == "bias":
        return s2 * xp.ones_like(d)
    raise KernelError(f"unknown kernel kind {kind!r}")


def eval_base(kind: str, params: KernelParams, x, x2, active_dims=None) -> float:
    """Scalar kernel value between two points.

    ``active_dims`` defaults to all coordinates; it is ignored for ``bias``.
    """
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise KernelError("non-finite input coordinates")
    if x.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    if kind == "bias":
        return float(params.variance)
    dims = list(range(x.shape[-1])) if active_dims is None else list(active_dims)
    d = math.sqrt(sum((float(x[k]) - float(x2[k])) ** 2 for k in dims))
    if kind == "exponential":
        return params.variance * math.exp(-d / (2.0 * params.lengthscale))
    if kind == "matern32":
        r = SQRT3 * d / params.lengthscale
        return params.variance * (1.0 + r) * math.exp(-r)
    if kind == "rbf":
        return params.variance * math.exp(-d * d / (2.0 * params.lengthscale**2))
    if kind == "periodic":
        s = math.sin(math.pi * d / params.period)
        return params.variance * math.exp(-s * s / (2.0 * params.lengthscale**2))
    raise KernelError(f"unknown kernel kind {kind!r}")


def _distances(X, X2, dims, cache):
    key = tuple(dims)
    if key not in cache:
        A = X[:, list(dims)]
        B = X2[:, list(dims)]
        diff = A[:, None, :] - B[None, :, :]
        cache[key] = np.sqrt(np.sum(diff**2, axis=-1))
    return cache[key]


def _check_inputs(X, X2, D=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != X2.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(X2))):
        raise KernelError("non-finite input coordinates")
    return X, X2


def eval_gram(expr: KernelExpr, X, X2=None, xp=np, _cache=None):
    """Covariance matrix between the rows of ``X`` and ``X2``.

    Distances are computed once per distinct set of active dimensions with
    numpy (inputs are never differentiated); only the hyperparameters may be
    traced.
    """
    if _cache is None:
        same = X2 is None or X2 is X
        X, X2 = _check_inputs(X, X if X2 is None else X2)
        if same:
            X2 = X
        _cache = {"X": X, "X2": X2, "same": same}
        for node in iter_nodes(expr):
            if node.kind != "bias" and max(node.active_dims) >= X.shape[1]:
                raise KernelError(
                    f"active dims {node.active_dims} out of range for D={X.shape[1]}"
                )
    X, X2 = _cache["X"], _cache["X2"]
    if isinstance(expr, Base):
        if expr.kind == "bias":
            return expr.params.variance * xp.ones((X.shape[0], X2.shape[0]))
        d = _distances(X, X2, expr.active_dims, _cache)
        K = profile(expr.kind, expr.params, xp.asarray(d), xp)
        return K
    if isinstance(expr, Sum):
        return eval_gram(expr.left, X, X2, xp, _cache) + eval_gram(expr.right, X, X2, xp, _cache)
    if isinstance(expr, Product):
        return eval_gram(expr.left, X, X2, xp, _cache) * eval_gram(expr.right, X, X2, xp, _cache)
    raise KernelError(f"not a kernel expression: {expr!r}")


def eval_diag(expr: KernelExpr, X, xp=np):
    """Diagonal of ``eval_gram(expr, X, X)`` without forming the matrix."""
    n = np.atleast_2d(X).shape[0]
    if isinstance(expr, Base):
        # every base kernel is stationary with k(0) = variance
        return expr.params.variance * xp.ones(n)
    if isinstance(expr, Sum):
        return eval_diag(expr.left, X, xp) + eval_diag(expr.right, X, xp)
    if isinstance(expr, Product):
        return eval_diag(expr.left, X, xp) * eval_diag(expr.right, X, xp)
    raise KernelError(f"not a kernel expression: {expr!r}")


# ------------------------------------------------------------- tree structure

def iter_nodes(expr: KernelExpr):
    """Distinct base nodes, depth-first, left to right (shared nodes once)."""
    seen = set()
    stack = [expr]
    out = []
    while stack:
        node = stack.pop()
        if isinstance(node, Base):
            if id(node) not in seen:
                seen.add(id(node))
                out.append(node)
        elif isinstance(node, (Sum, Product)):
            stack.append(node.right)
            stack.append(node.left)
        else:
            raise KernelError(f"not a kernel expression: {node!r}")
    return out


def used_dims(expr: KernelExpr) -> set:
    return {d for node in iter_nodes(expr) for d in node.active_dims}


def build_spatiotemporal(k_time: KernelExpr, k_space: KernelExpr) -> KernelExpr:
    """``k_time + k_space + k_time * k_space`` with shared hyperparameters."""
    overlap = used_dims(k_time) & used_dims(k_space)
    if overlap:
        raise KernelError(f"time and space kernels overlap on dims {sorted(overlap)}")
    return Sum(Sum(k_time, k_space), Product(k_time, k_space))


def n_terms(expr: KernelExpr) -> int:
    """Number of top-level additive terms."""
    if isinstance(expr, Sum):
        return n_terms(expr.left) + n_terms(expr.right)
    return 1


def _free_fields(node: Base):
    if node.kind == "bias":
        return ("sigma",)
    return ("len", "sigma")


def param_names(expr: KernelExpr) -> list:
    """Names of the free hyperparameters in traversal order.

    Base nodes contribute ``len_<label>`` and ``sigma_<label>``; the bias node
    contributes ``bias_var``. Unlabelled or clashing labels get a numeric
    suffix.
    """
    names = []
    counts = {}
    for node in iter_nodes(expr):
        label = node.label or node.kind
        counts[label] = counts.get(label, 0) + 1
        if counts[label] > 1:
            label = f"{label}{counts[label]}"
        if node.kind == "bias":
            names.append("bias_var" if label == "bias" else f"{label}_var")
        else:
            names.extend([f"len_{label}", f"sigma_{label}"])
    return names


def n_params(expr: KernelExpr) -> int:
    return sum(len(_free_fields(node)) for node in iter_nodes(expr))


def param_vector(expr: KernelExpr) -> np.ndarray:
    """Unconstrained parameter vector: log lengthscale and log standard deviation."""
    out = []
    for node in iter_nodes(expr):
        if node.kind != "bias":
            out.append(math.log(node.params.lengthscale))
        out.append(0.5 * math.log(node.params.variance))
    return np.array(out, dtype=float)


def constrained_values(expr: KernelExpr) -> np.ndarray:
    """Reported values matching :func:`param_names` (sd for kernels, variance for bias)."""
    out = []
    for node in iter_nodes(expr):
        if node.kind == "bias":
            out.append(node.params.variance)
        else:
            out.extend([node.params.lengthscale, math.sqrt(node.params.variance)])
    return np.array(out, dtype=float)


def param_unvector(expr: KernelExpr, vec, xp=np) -> KernelExpr:
    """Rebuild ``expr`` with hyperparameters taken from an unconstrained vector.

    Shared nodes stay shared in the result. ``vec`` may hold traced values.
    """
    nodes = iter_nodes(expr)
    expected = sum(len(_free_fields(n)) for n in nodes)
    if len(vec) != expected:
        raise KernelError(f"parameter vector has length {len(vec)}, expected {expected}")
    mapping = {}
    k = 0
    for node in nodes:
        if node.kind == "bias":
            new = replace(node.params, variance=xp.exp(2.0 * vec[k]))
            k += 1
        else:
            new = replace(node.params, lengthscale=xp.exp(vec[k]), variance=xp.exp(2.0 * vec[k + 1]))
            k += 2
        mapping[id(node)] = Base(node.kind, new, node.active_dims, node.label)
    return _rebuild(expr, mapping)


def _rebuild(expr, mapping):
    if isinstance(expr, Base):
        return mapping[id(expr)]
    return type(expr)(_rebuild(expr.left, mapping), _rebuild(expr.right, mapping))


def lengthscale_mask(expr: KernelExpr) -> np.ndarray:
    """Boolean mask over the parameter vector marking lengthscale entries."""
    out = []
    for node in iter_nodes(expr):
        if node.kind != "bias":
            out.append(True)
        out.append(False)
    return np.array(out, dtype=bool)


def bias_mask(expr: KernelExpr) -> np.ndarray:
    out = []
    for node in iter_nodes(expr):
        if node.kind != "bias":
            out.extend([False, False])
        else:
            out.append(True)
    return np.array(out, dtype=bool)


# ---------------------------------------------------------------- text syntax

def parse_terms(text: str, dims, label: str, period: float = 52.0, variance=1.0, lengthscale=1.0):
    """Parse ``"matern32 + periodic"`` into a sum of base kernels on ``dims``.

    Only ``+`` is accepted here; products come from the interaction flag.
    The first term is labelled ``label``, later ones ``<label>_<kind>``.
    """
    parts = [p.strip().lower() for p in text.split("+")]
    if not parts or any(not p for p in parts):
        raise KernelError(f"cannot parse kernel expression {text!r}")
    expr = None
    for i, kind in enumerate(parts):
        if kind not in KINDS or kind == "bias":
            raise KernelError(f"unknown kernel {kind!r} in {text!r}")
        lab = label if i == 0 else f"{label}_{kind}"
        node = Base(kind, KernelParams(variance, lengthscale, period), tuple(dims), lab)
        expr = node if expr is None else Sum(expr, node)
    return expr


def describe(expr: KernelExpr) -> str:
    if isinstance(expr, Base):
        return expr.kind if expr.kind == "bias" else f"{expr.kind}{list(expr.active_dims)}"
    op = " + " if isinstance(expr, Sum) else " * "
    return f"({describe(expr.left)}{op}{describe(expr.right)})"
