"""Regularized block-cyclic reconstruction and its convergence diagnostics.

The solver sweeps the per-wavenumber blocks in fixed ascending order; each
inner step projects onto one block with a shifted normal-equation solve:

    q_j = q_{j-1} + A_j^T (reg I + A_j A_j^T)^{-1} (p_j - A_j q_{j-1})

The diagnostics build the dense operators of the equivalent one-matrix
iteration q <- B q + A^T M p, measure the sweep contraction through the
smallest nonzero singular value of a scaled operator, and check the
accumulated-data-error bound both deterministically and in distribution.
Diagnostics are desk-scale only (dense, total rows up to a few hundred);
production reconstruction never builds them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericFailure

RANK_TOLERANCE = 1e-10  # singular values below tol * largest count as zero

DEFAULT_REGULARIZATION = 1e-8
DEFAULT_OUTER_LOOPS = 1


@dataclass
class BlockSystem:
    """Per-wavenumber matrices with co-indexed data vectors."""

    blocks: list
    data: list
    regularization: float = DEFAULT_REGULARIZATION

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("need at least one block")
        if len(self.blocks) != len(self.data):
            raise ValueError("one data vector per block required")
        if not (self.regularization > 0):
            raise ValueError(f"regularization must be positive, got {self.regularization}")
        self.blocks = [np.ascontiguousarray(b, dtype=np.float64) for b in self.blocks]
        self.data = [np.ascontiguousarray(d, dtype=np.float64).ravel() for d in self.data]
        cols = {b.shape[1] for b in self.blocks}
        if len(cols) != 1:
            raise ValueError(f"blocks disagree on column count: {sorted(cols)}")
        for j, (b, d) in enumerate(zip(self.blocks, self.data)):
            if b.shape[0] != d.size:
                raise ValueError(f"block {j}: {b.shape[0]} rows vs data length {d.size}")
            if not (np.all(np.isfinite(b)) and np.all(np.isfinite(d))):
                raise ValueError(f"block {j}: non-finite entries")

    @property
    def n_columns(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def total_rows(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return np.vstack(self.blocks), np.concatenate(self.data)

    def with_data(self, data) -> "BlockSystem":
        return BlockSystem(blocks=self.blocks, data=list(data),
                           regularization=self.regularization)

    @classmethod
    def from_kernels(cls, kernel_matrices, stage_one, regularization=DEFAULT_REGULARIZATION):
        """Blocks from kernel matrices (ascending wavenumber) and reduced data."""
        pairs = sorted(zip(kernel_matrices, stage_one.vectors),
                       key=lambda kv: kv[0].wavenumber)
        for km, _ in pairs:
            if km.kind != stage_one.kind:
                raise ValueError(f"kernel kind {km.kind} != data kind {stage_one.kind}")
        return cls(blocks=[km.entries for km, _ in pairs],
                   data=[vec for _, vec in pairs],
                   regularization=regularization)


class _InnerSolves:
    """Cholesky factors of (reg I + A_j A_j^T), cached per block."""

    def __init__(self, system: BlockSystem):
        self.factors = []
        for j, b in enumerate(system.blocks):
            gram = b @ b.T
            gram[np.diag_indices_from(gram)] += system.regularization
            try:
                self.factors.append(sla.cho_factor(gram, lower=True))
            except np.linalg.LinAlgError as exc:
                raise NumericFailure(f"inner factorization failed on block {j}: {exc}") from exc

    def solve(self, j: int, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self.factors[j], rhs)


def sweep_steps(system: BlockSystem, q: np.ndarray, inner: _InnerSolves):
    """Inner steps of one pass, yielding the iterate after each block.
    Step j reads only block j and its data vector."""
    for j, (block, pj) in enumerate(zip(system.blocks, system.data)):
        residual = pj - block @ q
        q = q + block.T @ inner.solve(j, residual)
        yield q


def sweep(system: BlockSystem, q: np.ndarray, inner: _InnerSolves) -> np.ndarray:
    """One full pass over all blocks in fixed order."""
    for q in sweep_steps(system, q, inner):
        pass
    return q


def kaczmarz_reconstruct(system: BlockSystem, initial: np.ndarray | None = None,
                         outer_loops: int = DEFAULT_OUTER_LOOPS) -> np.ndarray:
    """Run the block-cyclic scheme for the given number of outer loops."""
    if outer_loops < 1:
        raise ValueError(f"need at least one outer loop, got {outer_loops}")
    q = np.zeros(system.n_columns) if initial is None else \
        np.array(initial, dtype=np.float64).ravel().copy()
    if q.size != system.n_columns:
        raise ValueError(f"initial guess length {q.size} != {system.n_columns} columns")
    inner = _InnerSolves(system)
    for _ in range(outer_loops):
        q = sweep(system, q, inner)
    return q


def kaczmarz_trajectory(system: BlockSystem, k_max: int,
                        initial: np.ndarray | None = None) -> np.ndarray:
    """Iterates after each of the first k_max outer loops, stacked (k_max, n)."""
    q = np.zeros(system.n_columns) if initial is None else \
        np.array(initial, dtype=np.float64).ravel().copy()
    inner = _InnerSolves(system)
    out = np.empty((k_max, system.n_columns))
    for k in range(k_max):
        q = sweep(system, q, inner)
        out[k] = q
    return out


# ---------------------------------------------------------------------------
# dense diagnostics


@dataclass(frozen=True)
class IterationOperators:
    """Dense operators of the equivalent formulation q <- B q + A^T M p.

    block_diag + strict_lower + strict_lower^T reconstructs
    reg I + A A^T exactly.  sigma is the smallest nonzero singular value of
    the contraction operator D_2^(1/2) M A, where D_2 is the block diagonal
    with doubled shift; the sweep contracts the row-space component of the
    error by sqrt(1 - sigma^2).
    """

    block_diag: np.ndarray
    strict_lower: np.ndarray
    sweep_inverse: np.ndarray      # (block_diag + strict_lower)^(-1)
    iteration_matrix: np.ndarray   # I - A^T sweep_inverse A
    range_projector: np.ndarray    # orthogonal projector onto row space of A
    contraction_op: np.ndarray
    sigma: float
    data_operator: np.ndarray = field(repr=False, default=None)  # A^T sweep_inverse

    @property
    def contraction_factor(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.sigma ** 2))


def build_iteration_operators(system: BlockSystem,
                              max_rows: int = 600) -> IterationOperators:
    """Construct all diagnostic operators densely.  Refuses systems with more
    stacked rows than max_rows; diagnostics are not meant for production sizes."""
    rows = system.total_rows
    if rows > max_rows:
        raise ValueError(f"{rows} stacked rows exceed the diagnostics limit {max_rows}")
    A, _ = system.stacked()
    reg = system.regularization

    block_diag = np.zeros((rows, rows))
    doubled = np.zeros((rows, rows))
    offsets = np.cumsum([0] + [b.shape[0] for b in system.blocks])
    for j, b in enumerate(system.blocks):
        s = slice(offsets[j], offsets[j + 1])
        gram = b @ b.T
        block_diag[s, s] = gram + reg * np.eye(b.shape[0])
        doubled[s, s] = gram + 2.0 * reg * np.eye(b.shape[0])
    full = A @ A.T + reg * np.eye(rows)
    strict_lower = np.tril(full - block_diag, k=-1)

    sweep_inverse = np.linalg.inv(block_diag + strict_lower)

    iteration_matrix = np.eye(system.n_columns) - A.T @ sweep_inverse @ A

    # Orthogonal projector onto the row space of A.
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > RANK_TOLERANCE * s[0]))
    if rank == 0:
        raise NumericFailure("stacked matrix is numerically zero")
    v = vt[:rank].T
    range_projector = v @ v.T

    # Symmetric square root of the doubled-shift block diagonal, per block.
    doubled_root = np.zeros_like(doubled)
    for j, b in enumerate(system.blocks):
        s_ = slice(offsets[j], offsets[j + 1])
        w, q = np.linalg.eigh(doubled[s_, s_])
        if np.any(w <= 0):
            raise NumericFailure(f"doubled-shift block {j} not positive definite")
        doubled_root[s_, s_] = (q * np.sqrt(w)) @ q.T

    contraction_op = doubled_root @ sweep_inverse @ A
    svals = np.linalg.svd(contraction_op, compute_uv=False)
    nonzero = svals[svals > RANK_TOLERANCE * svals[0]]
    if nonzero.size == 0:
        raise NumericFailure("contraction operator has no nonzero singular values")
    sigma = float(nonzero[-1])

    return IterationOperators(
        block_diag=block_diag,
        strict_lower=strict_lower,
        sweep_inverse=sweep_inverse,
        iteration_matrix=iteration_matrix,
        range_projector=range_projector,
        contraction_op=contraction_op,
        sigma=sigma,
        data_operator=A.T @ sweep_inverse,
    )


def accumulated_error_bound(k: int, sigma: float, injected_error: float) -> float:
    """Worst-case accumulated data error after k outer loops:

        bound(k) = [1 - (1 - sigma^2)^(k/2)] / [1 - (1 - sigma^2)^(1/2)] * injected_error

    where injected_error = ||A^T M (p_noisy - p)|| is the per-sweep push.
    For sigma = 1 the ratio degenerates to 1 for every k >= 1.
    """
    if not (0.0 < sigma <= 1.0):
        raise ValueError(f"sigma must lie in (0, 1], got {sigma}")
    if injected_error < 0:
        raise ValueError("injected_error must be nonnegative")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return 0.0
    beta = math.sqrt(max(0.0, 1.0 - sigma ** 2))
    if beta == 1.0:  # sigma == 0 excluded by the domain check; defensive
        return float(k) * injected_error
    return (1.0 - beta ** k) / (1.0 - beta) * injected_error


@dataclass
class SemiconvergenceReport:
    sigma: float
    injected_error: float
    error_norms: np.ndarray
    bounds: np.ndarray
    within_bound: bool
    limit: float  # uniform cap injected_error / (1 - sqrt(1 - sigma^2))

    def to_json(self) -> str:
        return json.dumps({
            "sigma": self.sigma,
            "injected_error": self.injected_error,
            "error_norms": self.error_norms.tolist(),
            "bounds": self.bounds.tolist(),
            "within_bound": bool(self.within_bound),
            "limit": self.limit,
        }, indent=2)


def verify_semiconvergence(system: BlockSystem, noisy_data, k_max: int) -> SemiconvergenceReport:
    """Run the scheme with clean and perturbed data and compare the gap
    norms against the accumulated-error bound for k = 1..k_max."""
    noisy = system.with_data(noisy_data)
    ops = build_iteration_operators(system)
    _, p = system.stacked()
    _, p_tilde = noisy.stacked()
    injected = float(np.linalg.norm(ops.data_operator @ (p_tilde - p)))

    clean_traj = kaczmarz_trajectory(system, k_max)
    noisy_traj = kaczmarz_trajectory(noisy, k_max)
    errors = np.linalg.norm(noisy_traj - clean_traj, axis=1)
    bounds = np.array([accumulated_error_bound(k, ops.sigma, injected)
                       for k in range(1, k_max + 1)])
    beta = ops.contraction_factor
    limit = injected / (1.0 - beta) if beta < 1.0 else math.inf
    ok = bool(np.all(errors <= bounds * (1.0 + 1e-9) + 1e-300))
    return SemiconvergenceReport(sigma=ops.sigma, injected_error=injected,
                                 error_norms=errors, bounds=bounds,
                                 within_bound=ok, limit=limit)


@dataclass
class DistributionReport:
    realization_counts: list
    total_variances: list        # trace of Cov(e^k) per N
    slope: float                 # d log Var / d log N
    scaled_cov_norms: list       # ||Cov(sqrt(N) e^k)|| per N
    cov_norm_bound: float        # Psi^2 ||A^T M||^2 ||Theta||
    sweeps: int

    def to_json(self) -> str:
        return json.dumps({
            "realization_counts": self.realization_counts,
            "total_variances": self.total_variances,
            "slope": self.slope,
            "scaled_cov_norms": self.scaled_cov_norms,
            "cov_norm_bound": self.cov_norm_bound,
            "sweeps": self.sweeps,
        }, indent=2)


def verify_error_distribution(system: BlockSystem, std_values, noise_level: float,
                              realization_counts, rng: np.random.Generator,
                              repetitions: int = 200, sweeps: int = 5) -> DistributionReport:
    """Monte Carlo check of how the accumulated error scales with the number
    of realizations N.

    For each N, ``repetitions`` independent sample-mean data vectors are
    formed from N realizations of block_j (q + std xi) + measurement noise,
    the scheme is run on clean and perturbed data, and the per-component
    variance of the gap e^k is accumulated.  Returns the log-log slope of
    the total variance versus N and the spectral norm of the covariance of
    sqrt(N) e^k next to its analytic cap.
    """
    if noise_level < 0:
        raise ValueError("noise level must be nonnegative")
    std = np.asarray(std_values, dtype=np.float64).ravel()
    if std.size != system.n_columns:
        raise ValueError("one standard-deviation value per column required")
    ops = build_iteration_operators(system)
    _, p = system.stacked()
    clean = kaczmarz_trajectory(system, sweeps)[-1]
    offsets = np.cumsum([0] + [b.shape[0] for b in system.blocks])

    # Analytic covariance of sqrt(N) (p_noisy - p) and the bound pieces.
    A, _ = system.stacked()
    theta = (A * std[None, :] ** 2) @ A.T + noise_level ** 2 * np.eye(system.total_rows)
    psi = accumulated_error_bound(sweeps, ops.sigma, 1.0)
    data_op_norm = float(np.linalg.norm(ops.data_operator, 2))
    bound = psi ** 2 * data_op_norm ** 2 * float(np.linalg.norm(theta, 2))

    total_variances = []
    scaled_cov_norms = []
    for n_real in realization_counts:
        gaps = np.empty((repetitions, system.n_columns))
        for rep in range(repetitions):
            xi = rng.standard_normal((n_real, system.n_columns))
            mean_fluct = (std[None, :] * xi).mean(axis=0)
            p_tilde = p.copy()
            for j, block in enumerate(system.blocks):
                seg = slice(offsets[j], offsets[j + 1])
                noise = rng.standard_normal((n_real, block.shape[0])).mean(axis=0)
                p_tilde[seg] += block @ mean_fluct + noise_level * noise
            noisy_sys = system.with_data(
                [p_tilde[offsets[j]:offsets[j + 1]] for j in range(len(system.blocks))]
            )
            gaps[rep] = kaczmarz_trajectory(noisy_sys, sweeps)[-1] - clean
        total_variances.append(float(np.var(gaps, axis=0, ddof=1).sum()))
        cov = np.cov(gaps.T * math.sqrt(n_real), ddof=1)
        scaled_cov_norms.append(float(np.linalg.norm(cov, 2)))

    if min(total_variances) > 0.0:
        logs_n = np.log(np.asarray(realization_counts, dtype=np.float64))
        logs_v = np.log(np.asarray(total_variances))
        slope = float(np.polyfit(logs_n, logs_v, 1)[0])
    else:
        slope = float("nan")  # degenerate noise-free case
    return DistributionReport(realization_counts=list(realization_counts),
                              total_variances=total_variances, slope=slope,
                              scaled_cov_norms=scaled_cov_norms,
                              cov_norm_bound=bound, sweeps=sweeps)
