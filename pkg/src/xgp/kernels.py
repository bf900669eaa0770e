"""Kernels and multi-task covariance assembly.

Two kernel families are supported: Brownian motion ``min(t, t')`` and the
exponentiated quadratic ``exp(-|t - t'|^2 / (2 l^2))``. Tasks are combined
through one of three cross-task structures:

* independent (``i``): block diagonal, one variance per task (or shared);
* exchangeable (``x``): shared mean process plus i.i.d. task deviations;
* multiple exchangeable (``mx``): shared mean process plus task deviations
  with task-specific variances.

Stacked vectors are task-major: all times of task 0, then task 1, and so on.
Task indices are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np

MAX_JOINT_DIM = 4096


class KernelFamily(str, Enum):
    BM = "BM"
    EQ = "EQ"


class Structure(str, Enum):
    INDEPENDENT = "i"
    EXCHANGEABLE = "x"
    MULTIPLE_EXCHANGEABLE = "mx"


def bm_kernel(t, t2):
    """Brownian-motion covariance ``min(t, t2)`` on nonnegative times."""
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if np.any(t < 0) or np.any(t2 < 0):
        raise ValueError("BM kernel is defined for nonnegative times only")
    out = np.minimum(t, t2)
    return float(out) if out.ndim == 0 else out


def eq_kernel(t, t2, lengthscale):
    """Exponentiated-quadratic covariance with unit amplitude."""
    if not lengthscale > 0:
        raise ValueError(f"EQ lengthscale must be positive, got {lengthscale}")
    d = np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)
    out = np.exp(-(d * d) / (2.0 * lengthscale * lengthscale))
    return float(out) if out.ndim == 0 else out


def eq_kernel_dl(t, t2, lengthscale):
    """Derivative of :func:`eq_kernel` with respect to the lengthscale."""
    d2 = (np.asarray(t, dtype=float) - np.asarray(t2, dtype=float)) ** 2
    k = np.exp(-d2 / (2.0 * lengthscale * lengthscale))
    return k * d2 / lengthscale**3


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    lengthscale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family is KernelFamily.EQ:
            if self.lengthscale is None or not self.lengthscale > 0:
                raise ValueError("EQ kernel needs a positive lengthscale")
        elif self.lengthscale is not None:
            raise ValueError("BM kernel takes no lengthscale")

    @classmethod
    def bm(cls) -> "KernelSpec":
        return cls(KernelFamily.BM)

    @classmethod
    def eq(cls, lengthscale: float) -> "KernelSpec":
        return cls(KernelFamily.EQ, float(lengthscale))

    def __call__(self, t, t2):
        if self.family is KernelFamily.BM:
            return bm_kernel(t, t2)
        return eq_kernel(t, t2, self.lengthscale)

    def d_lengthscale(self, t, t2):
        if self.family is KernelFamily.BM:
            raise ValueError("BM kernel has no lengthscale")
        return eq_kernel_dl(t, t2, self.lengthscale)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times (any units)."""

    times: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float)).copy()
        if times.ndim != 1 or times.size == 0:
            raise ValueError("time grid must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(times)):
            raise ValueError("time grid contains non-finite values")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        times.flags.writeable = False
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def equidistant(self) -> bool:
        if self.n < 3:
            return True
        d = np.diff(self.times)
        return bool(np.all(np.abs(d - d[0]) <= 1e-12 * abs(d[0])))

    def __len__(self):
        return self.n


def gram(kernel: KernelSpec, grid: TimeGrid | Sequence[float]) -> np.ndarray:
    t = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    return np.asarray(kernel(t[:, None], t[None, :]), dtype=float).reshape(t.size, t.size)


@dataclass(frozen=True)
class VarianceParams:
    """Shared-mean scale and task scale(s); ``sigma_task`` has length 1 or p."""

    sigma_mu: float = 0.0
    sigma_task: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        st = tuple(float(s) for s in np.atleast_1d(self.sigma_task))
        object.__setattr__(self, "sigma_task", st)
        object.__setattr__(self, "sigma_mu", float(self.sigma_mu))
        if self.sigma_mu < 0 or any(s < 0 for s in st) or not st:
            raise ValueError("variance parameters must be nonnegative")


TaskKernels = Union[KernelSpec, Sequence[KernelSpec]]


@dataclass(frozen=True)
class CovStructure:
    kind: Structure
    task_kernel: TaskKernels
    variances: VarianceParams = field(default_factory=VarianceParams)
    mean_kernel: KernelSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Structure(self.kind))
        tk = self.task_kernel
        tk = (tk,) if isinstance(tk, KernelSpec) else tuple(tk)
        object.__setattr__(self, "task_kernel", tk)
        if self.kind is Structure.INDEPENDENT:
            if self.mean_kernel is not None or self.variances.sigma_mu != 0.0:
                raise ValueError("independent structure has no mean process")
        else:
            if self.mean_kernel is None:
                raise ValueError(f"{self.kind.value} structure requires a mean kernel")
        if self.kind is Structure.EXCHANGEABLE and len(self.variances.sigma_task) != 1:
            raise ValueError("exchangeable structure uses a single shared sigma_x")
        n_sig, n_ker = len(self.variances.sigma_task), len(tk)
        if n_sig > 1 and n_ker > 1 and n_sig != n_ker:
            raise ValueError("per-task sigmas and kernels disagree on task count")

    @property
    def sigma_mu(self) -> float:
        return self.variances.sigma_mu

    @property
    def per_task_count(self) -> int | None:
        """Number of tasks fixed by per-task parameters, or None if all shared."""
        n = max(len(self.variances.sigma_task), len(self.task_kernel))
        return n if n > 1 else None

    def check_tasks(self, p: int) -> None:
        fixed = self.per_task_count
        if p < 1:
            raise ValueError("task count must be at least 1")
        if fixed is not None and fixed != p:
            raise ValueError(f"structure carries per-task parameters for {fixed} tasks, not {p}")

    def task_sigma(self, i: int) -> float:
        st = self.variances.sigma_task
        if len(st) == 1:
            return st[0]
        if not 0 <= i < len(st):
            raise ValueError(f"task {i} has no task-specific variance (unseen task)")
        return st[i]

    def task_kernel_for(self, i: int) -> KernelSpec:
        tk = self.task_kernel
        if len(tk) == 1:
            return tk[0]
        if not 0 <= i < len(tk):
            raise ValueError(f"task {i} has no task-specific kernel (unseen task)")
        return tk[i]


def intra_class_rho(sigma_mu: float, sigma_x: float) -> float:
    """Share of task-level variance: ``sigma_x^2 / (sigma_mu^2 + sigma_x^2)``."""
    a, b = float(sigma_mu) ** 2, float(sigma_x) ** 2
    if a + b == 0:
        raise ValueError("intra-class correlation undefined when both scales are zero")
    return b / (a + b)


def multitask_kernel(i, j, t, t2, struct: CovStructure):
    """Covariance between task ``i`` at time ``t`` and task ``j`` at ``t2``.

    Vectorized: ``i, j, t, t2`` broadcast against each other.
    """
    i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    shape = np.broadcast_shapes(i.shape, t.shape, t2.shape)
    out = np.zeros(shape)
    if struct.kind is not Structure.INDEPENDENT and struct.sigma_mu > 0:
        out += struct.sigma_mu**2 * np.asarray(struct.mean_kernel(t, t2))
    same = np.broadcast_to(i == j, shape)
    if np.any(same):
        ib = np.broadcast_to(i, shape)
        tb = np.broadcast_to(t, shape)
        t2b = np.broadcast_to(t2, shape)
        for task in np.unique(ib[same]):
            sel = same & (ib == task)
            s = struct.task_sigma(int(task))
            if s == 0:
                continue
            out[sel] += s**2 * np.asarray(struct.task_kernel_for(int(task))(tb[sel], t2b[sel]))
    return float(out) if out.ndim == 0 else out


def cross_cov(struct: CovStructure, tasks_a, times_a, tasks_b, times_b) -> np.ndarray:
    tasks_a = np.asarray(tasks_a, dtype=int)
    tasks_b = np.asarray(tasks_b, dtype=int)
    times_a = np.asarray(times_a, dtype=float)
    times_b = np.asarray(times_b, dtype=float)
    return np.asarray(
        multitask_kernel(tasks_a[:, None], tasks_b[None, :], times_a[:, None], times_b[None, :], struct),
        dtype=float,
    ).reshape(tasks_a.size, tasks_b.size)


def stacked_index(grid: TimeGrid, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Task ids and times of the task-major stacked vector."""
    return np.repeat(np.arange(p), grid.n), np.tile(grid.times, p)


def assemble_joint_cov(struct: CovStructure, grid: TimeGrid, p: int, max_dim: int = MAX_JOINT_DIM) -> np.ndarray:
    struct.check_tasks(p)
    if grid.n * p > max_dim:
        raise ValueError(f"joint covariance dimension {grid.n * p} exceeds cap {max_dim}")
    tasks, times = stacked_index(grid, p)
    k = cross_cov(struct, tasks, times, tasks, times)
    return 0.5 * (k + k.T)


def assemble_increment_cov(struct: CovStructure, p: int, step: float) -> np.ndarray:
    """Covariance of one increment of the BM-driven latent vector over ``step``."""
    if not step > 0:
        raise ValueError("step must be positive")
    struct.check_tasks(p)
    kernels = list(struct.task_kernel) + ([struct.mean_kernel] if struct.mean_kernel else [])
    if any(k.family is not KernelFamily.BM for k in kernels):
        raise ValueError("increment covariance is defined for BM-driven structures only")
    q = np.diag([struct.task_sigma(i) ** 2 for i in range(p)])
    if struct.kind is not Structure.INDEPENDENT:
        q = q + struct.sigma_mu**2 * np.ones((p, p))
    return q * step


# ---------------------------------------------------------------------------
# Model variants and their parameter layouts.

VARIANTS = ("iBM", "xBM", "mxBM", "iEQ", "xEQ", "mxEQ")


def parse_variant(variant: str) -> tuple[Structure, KernelFamily]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown GP variant {variant!r}; expected one of {VARIANTS}")
    return Structure(variant[:-2]), KernelFamily(variant[-2:])


def variant_param_names(variant: str, p: int) -> list[str]:
    """Covariance parameter names in the published layout order."""
    kind, fam = parse_variant(variant)
    sig = [f"sigma_{k + 1}" for k in range(p)]
    ell = [f"ell_{k + 1}" for k in range(p)]
    if fam is KernelFamily.BM:
        return {
            Structure.INDEPENDENT: sig,
            Structure.EXCHANGEABLE: ["sigma_mu", "sigma_x"],
            Structure.MULTIPLE_EXCHANGEABLE: ["sigma_mu"] + sig,
        }[kind]
    return {
        Structure.INDEPENDENT: sig + ell,
        Structure.EXCHANGEABLE: ["sigma_mu", "ell_mu", "sigma_x", "ell_x"],
        Structure.MULTIPLE_EXCHANGEABLE: ["sigma_mu", "ell_mu"] + sig + ell,
    }[kind]


def variant_structure(variant: str, params: dict[str, float], p: int) -> CovStructure:
    """Build the covariance structure of ``variant`` from named parameters."""
    kind, fam = parse_variant(variant)
    shared = kind is Structure.EXCHANGEABLE
    if shared:
        sig = (params["sigma_x"],)
    else:
        sig = tuple(params[f"sigma_{k + 1}"] for k in range(p))
    if fam is KernelFamily.BM:
        task_kernel = KernelSpec.bm()
        mean_kernel = KernelSpec.bm()
    else:
        if shared:
            task_kernel = KernelSpec.eq(params["ell_x"])
        else:
            task_kernel = tuple(KernelSpec.eq(params[f"ell_{k + 1}"]) for k in range(p))
        mean_kernel = KernelSpec.eq(params["ell_mu"]) if kind is not Structure.INDEPENDENT else None
    if kind is Structure.INDEPENDENT:
        return CovStructure(kind, task_kernel, VarianceParams(0.0, sig))
    return CovStructure(kind, task_kernel, VarianceParams(params["sigma_mu"], sig), mean_kernel)


def joint_cov_grads(struct: CovStructure, tasks, times) -> dict[str, np.ndarray]:
    """Derivatives of the joint covariance over ``(tasks, times)`` points.

    Keys follow :func:`variant_param_names`: ``sigma_mu``, ``ell_mu``,
    ``sigma_x``/``ell_x`` when shared, else ``sigma_k``/``ell_k`` (1-based).
    """
    tasks = np.asarray(tasks, dtype=int)
    times = np.asarray(times, dtype=float)
    ta, tb = times[:, None], times[None, :]
    grads: dict[str, np.ndarray] = {}
    if struct.kind is not Structure.INDEPENDENT:
        cm = np.asarray(struct.mean_kernel(ta, tb), dtype=float)
        grads["sigma_mu"] = 2.0 * struct.sigma_mu * cm
        if struct.mean_kernel.family is KernelFamily.EQ:
            grads["ell_mu"] = struct.sigma_mu**2 * struct.mean_kernel.d_lengthscale(ta, tb)
    same = tasks[:, None] == tasks[None, :]
    shared_sigma = len(struct.variances.sigma_task) == 1
    shared_kernel = len(struct.task_kernel) == 1
    sig_key = (lambda k: "sigma_x") if shared_sigma else (lambda k: f"sigma_{k + 1}")
    ell_key = (lambda k: "ell_x") if shared_kernel else (lambda k: f"ell_{k + 1}")
    for k in np.unique(tasks):
        k = int(k)
        blk = same & (tasks[:, None] == k)
        kk = struct.task_kernel_for(k)
        s = struct.task_sigma(k)
        ck = np.where(blk, kk(ta, tb), 0.0)
        grads[sig_key(k)] = grads.get(sig_key(k), 0.0) + 2.0 * s * ck
        if kk.family is KernelFamily.EQ:
            dk = s**2 * np.where(blk, kk.d_lengthscale(ta, tb), 0.0)
            grads[ell_key(k)] = grads.get(ell_key(k), 0.0) + dk
    return grads
