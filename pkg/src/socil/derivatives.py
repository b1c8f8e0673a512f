"""First and second derivatives of a problem's callables.

Stage functions are differentiated with respect to the joint variable
``z = (x, u, theta)`` and terminal functions with respect to ``w = (x, theta)``.
Two interchangeable modes exist:

* ``analytic`` -- exact derivatives by forward/reverse-mode autodiff (JAX),
* ``numeric``  -- central differences with step ``1e-5 * (1 + |z_i|)``.

Both return numpy arrays with a leading time axis for stage quantities.
"""

from __future__ import annotations

import functools
import weakref
from dataclasses import dataclass
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from socil.problem import ControlProblem

MODES = ("analytic", "numeric")


@dataclass(frozen=True)
class Derivs:
    """Value, Jacobian and Hessian of one (vector) function, batched over time."""

    value: np.ndarray
    jac: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class StageDerivatives:
    dynamics: Derivs  # (T,n) (T,n,k) (T,n,k,k)
    cost: Derivs  # (T,) (T,k) (T,k,k)
    ineq: Derivs  # (T,q) (T,q,k) (T,q,k,k)
    eq: Derivs  # (T,s) (T,s,k) (T,s,k,k)


@dataclass(frozen=True)
class TerminalDerivatives:
    cost: Derivs  # () (n+p,) (n+p,n+p)
    ineq: Derivs
    eq: Derivs


class Blocks:
    """Index slices of ``x``, ``u`` and ``theta`` inside ``z`` and ``w``."""

    def __init__(self, n: int, m: int, p: int):
        self.x = slice(0, n)
        self.u = slice(n, n + m)
        self.th = slice(n + m, n + m + p)
        self.wx = slice(0, n)
        self.wth = slice(n, n + p)
        self.k = n + m + p
        self.kw = n + p


def _cut(arr: np.ndarray, sizes, axis: int):
    """Split ``arr`` along ``axis`` into consecutive chunks of ``sizes``."""
    bounds = np.cumsum((0,) + tuple(sizes))
    return [np.take(arr, np.arange(a, b), axis=axis) for a, b in zip(bounds[:-1], bounds[1:])]


class DerivativeProvider:
    """Derivative evaluator for one :class:`ControlProblem`.

    Instances are cheap; compiled kernels are shared per problem.
    """

    def __init__(self, problem: ControlProblem, mode: str = "analytic"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.problem = problem
        self.mode = mode
        n, m, p = problem.n, problem.m, problem.p
        self.blocks = Blocks(n, m, p)
        self._stage_sizes = (n, 1, problem.n_ineq, problem.n_eq)
        self._term_sizes = (1, problem.n_ineq_term, problem.n_eq_term)

    def stage(self, xs, us, theta) -> StageDerivatives:
        """Derivatives at stages ``t = 0..T-1`` (``xs`` holds ``x_0..x_{T-1}``)."""
        th = np.asarray(theta, dtype=float).ravel()
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        z = np.concatenate([xs, us, np.broadcast_to(th, (xs.shape[0], th.size))], axis=1)
        kern = _kernels(self.problem)
        if self.mode == "analytic":
            val, jac, hess = (np.asarray(a) for a in kern.stage_all(z))
        else:
            val, jac, hess = _central(kern.stage_value_batch, z)
        v, j, h = (_cut(a, self._stage_sizes, 1) for a in (val, jac, hess))
        v[1], j[1], h[1] = v[1][:, 0], j[1][:, 0], h[1][:, 0]
        return StageDerivatives(*(Derivs(v[i], j[i], h[i]) for i in range(4)))

    def terminal(self, x, theta) -> TerminalDerivatives:
        th = np.asarray(theta, dtype=float).ravel()
        w = np.concatenate([np.asarray(x, dtype=float).ravel(), th])[None, :]
        kern = _kernels(self.problem)
        if self.mode == "analytic":
            val, jac, hess = (np.asarray(a) for a in kern.term_all(w))
        else:
            val, jac, hess = _central(kern.term_value_batch, w)
        v, j, h = (_cut(a[0], self._term_sizes, 0) for a in (val, jac, hess))
        return TerminalDerivatives(
            Derivs(float(v[0][0]), j[0][0], h[0][0]),
            Derivs(v[1], j[1], h[1]),
            Derivs(v[2], j[2], h[2]),
        )


def _central(fn, z: np.ndarray):
    """Central-difference value/Jacobian/Hessian of a batched vector function.

    ``fn`` maps ``(N, k) -> (N, d)``. Returns arrays shaped ``(B, d)``,
    ``(B, d, k)`` and ``(B, d, k, k)`` for ``z`` of shape ``(B, k)``.
    """
    B, k = z.shape
    h = 1e-5 * (1.0 + np.abs(z))  # (B, k)
    eye = np.eye(k)
    val = np.asarray(fn(z))
    d = val.shape[1]

    steps = h[:, :, None] * eye[None, :, :]  # (B, k, k): row i is h_i e_i
    pts = np.concatenate([z[:, None, :] + steps, z[:, None, :] - steps], axis=1)
    out = np.asarray(fn(pts.reshape(-1, k))).reshape(B, 2, k, d)
    jac = (out[:, 0] - out[:, 1]) / (2.0 * h[:, :, None])  # (B, k, d)
    jac = np.moveaxis(jac, 1, 2)

    si = steps[:, :, None, :]
    sj = steps[:, None, :, :]
    zc = z[:, None, None, :]
    quad = np.stack([zc + si + sj, zc + si - sj, zc - si + sj, zc - si - sj], axis=1)
    fq = np.asarray(fn(quad.reshape(-1, k))).reshape(B, 4, k, k, d)
    hess = (fq[:, 0] - fq[:, 1] - fq[:, 2] + fq[:, 3]) / (4.0 * h[:, :, None, None] * h[:, None, :, None])
    hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    hess = np.moveaxis(hess, 3, 1)  # (B, d, k, k)
    return val, jac, hess


class _DerivKernels:
    def __init__(self, problem: ControlProblem):
        n, m = problem.n, problem.m

        def stage_vec(z):
            x, u, th = z[:n], z[n : n + m], z[n + m :]
            return jnp.concatenate(
                [
                    problem.dynamics(x, u, th),
                    jnp.reshape(problem.stage_cost(x, u, th), (1,)),
                    jnp.atleast_1d(problem.ineq_path(x, u, th)),
                    jnp.atleast_1d(problem.eq_path(x, u, th)),
                ]
            )

        def term_vec(w):
            x, th = w[:n], w[n:]
            return jnp.concatenate(
                [
                    jnp.reshape(problem.terminal_cost(x, th), (1,)),
                    jnp.atleast_1d(problem.ineq_term(x, th)),
                    jnp.atleast_1d(problem.eq_term(x, th)),
                ]
            )

        def with_derivs(fn):
            def all_(z):
                return fn(z), jax.jacfwd(fn)(z), jax.jacfwd(jax.jacrev(fn))(z)

            return jax.jit(jax.vmap(all_))

        self.stage_all = with_derivs(stage_vec)
        self.term_all = with_derivs(term_vec)
        self.stage_value_batch = jax.jit(jax.vmap(stage_vec))
        self.term_value_batch = jax.jit(jax.vmap(term_vec))


_KERNEL_CACHE: "weakref.WeakKeyDictionary[ControlProblem, _DerivKernels]" = weakref.WeakKeyDictionary()


def _kernels(problem: ControlProblem) -> _DerivKernels:
    kern = _KERNEL_CACHE.get(problem)
    if kern is None:
        kern = _DerivKernels(problem)
        _KERNEL_CACHE[problem] = kern
    return kern


def relative_error(a, ref, floor: float = 1.0) -> float:
    """Normwise relative error ``max|a - ref| / max(max|ref|, floor)``."""
    a = np.asarray(a, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - ref)) / max(float(np.max(np.abs(ref))), floor))


@functools.lru_cache(maxsize=None)
def _default_provider(problem: ControlProblem) -> DerivativeProvider:
    return DerivativeProvider(problem, "analytic")


def default_provider(problem: ControlProblem, provider: Optional[DerivativeProvider] = None):
    return provider if provider is not None else _default_provider(problem)
