"""Offline construction of local reduced bases.

Per subdomain, the local solution behaviour is captured by a transfer
operator: Dirichlet data on the artificial boundary of the oversampling
patch is mapped to the patch solution restricted to the subdomain.  An
adaptive randomized range finder approximates the dominant range of that
operator to a prescribed tolerance with a prescribed failure probability;
partition-of-unity hats and affine snapshots (source term, inhomogeneous
boundary data) complete the initial basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfinv

from .assembly import BlockVector
from .fom import Discretization, restrict_to_sub, solve_patch
from .grid import DomainPatch, hat_values, oversampling_domain

__all__ = [
    "RangeFinderError",
    "BoundarySample",
    "RangeFinderReport",
    "ReducedBasis",
    "random_boundary_sample",
    "apply_transfer",
    "adaptive_range_finder",
    "source_snapshot",
    "boundary_lift_snapshot",
    "build_initial_rb",
    "test_failure_calibration",
]

DEFLATION_RTOL = 1e-10
GRAM_TOL = 1e-8


class RangeFinderError(RuntimeError):
    """Range finder did not reach the tolerance within the dimension cap."""


def test_failure_calibration(eps_fail: float, n_test: int) -> float:
    """Constant c such that P(norm > c * max-test-estimate) <= eps_fail.

    For a Gaussian probe the estimate of the error operator norm can undershoot
    by at most c with probability erf(1/(c sqrt(2)))**n_test; solving for the
    prescribed failure probability gives c = 1/(sqrt(2) erfinv(eps**(1/n))).
    """
    if not 0.0 < eps_fail < 1.0:
        raise ValueError("failure probability must lie in (0, 1)")
    if n_test < 1:
        raise ValueError("need at least one test vector")
    return float(1.0 / (np.sqrt(2.0) * erfinv(eps_fail ** (1.0 / n_test))))


@dataclass(frozen=True)
class BoundarySample:
    """Random Dirichlet data on a patch boundary.

    ``artificial`` carries i.i.d. standard normal values on the
    artificial-boundary trace DOFs (patch order); ``dirichlet`` is the
    (identically zero) data on the patch's domain-boundary Dirichlet traces.
    """

    artificial: np.ndarray
    dirichlet: np.ndarray
    artificial_dofs: np.ndarray
    dirichlet_dofs: np.ndarray


def dirichlet_trace_dofs(disc: Discretization, patch: DomainPatch) -> np.ndarray:
    """Patch DOFs on domain-boundary Dirichlet segments of the patch."""
    dofs = set()
    dsides = set(disc.problem.dirichlet_sides())
    for seg in patch.boundary:
        if not seg.on_domain_boundary:
            continue
        face = disc.grid.faces[seg.face_index]
        if face.side not in dsides:
            continue
        off = patch.offset(face.minus)
        dofs.update(off + t for t in face.trace("minus"))
    return np.array(sorted(dofs), dtype=int)


def random_boundary_sample(disc: Discretization, patch: DomainPatch,
                           rng: np.random.Generator) -> BoundarySample:
    """Standard normal values on the artificial boundary, zero on Dirichlet parts."""
    art = patch.artificial_trace_dofs
    if len(art) == 0:
        raise ValueError("patch has no artificial boundary")
    dir_dofs = dirichlet_trace_dofs(disc, patch)
    return BoundarySample(rng.standard_normal(len(art)), np.zeros(len(dir_dofs)),
                          art, dir_dofs)


def apply_transfer(disc: Discretization, sub: int, mu, g, patch=None) -> np.ndarray:
    """Transfer operator: artificial boundary data -> local solution on ``sub``.

    Solves the patch problem with data ``g`` on the artificial boundary, zero
    source and homogeneous data on any global Dirichlet segment (affine parts
    are handled by separate snapshots, keeping this operator linear), then
    restricts to the seed subdomain.
    """
    if patch is None:
        patch = oversampling_domain(disc.grid, sub)
    vals = g.artificial if isinstance(g, BoundarySample) else np.asarray(g, dtype=float)
    x = solve_patch(disc, patch, mu, artificial_values=vals, rhs="zero",
                    global_dirichlet="zero")
    return restrict_to_sub(disc, patch, x, sub)


@dataclass
class RangeFinderReport:
    subdomain: int
    mu: list
    dimension: int
    estimates: list
    tol: float
    eps_fail: float
    n_test: int
    seed: list
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "subdomain": self.subdomain, "mu": list(self.mu),
            "dimension": self.dimension, "estimates": list(self.estimates),
            "tol": self.tol, "eps_fail": self.eps_fail, "n_test": self.n_test,
            "seed": list(self.seed), "converged": self.converged,
        }


def _gram_dot(G, x, y):
    return float(x @ (G @ y))


def _orthonormalize(G, basis, vec, rtol=DEFLATION_RTOL):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Returns the normalized vector or None when the post-projection norm drops
    below ``rtol`` times the pre-projection norm (dependent direction).
    """
    v = np.array(vec, dtype=float)
    norm0 = np.sqrt(max(0.0, _gram_dot(G, v, v)))
    if norm0 == 0.0:
        return None
    for _ in range(2):
        for b in basis:
            v -= _gram_dot(G, b, v) * b
    norm = np.sqrt(max(0.0, _gram_dot(G, v, v)))
    if norm < rtol * norm0:
        return None
    return v / norm


def adaptive_range_finder(disc: Discretization, sub: int, mu, tol, eps_fail,
                          n_test, rng, max_dim=None, layers=1):
    """Adaptively approximate the range of the local transfer operator.

    Draws random boundary data, pushes it through the transfer operator and
    orthonormalizes the images (local energy inner product on the subdomain
    interior) until the held-out test estimate certifies the target accuracy:
    ``c * max_i |(I - proj) P w_i| <= tol`` with the calibration constant from
    :func:`test_failure_calibration`.  Returns ``(vectors, report)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mu = disc.problem.validate_mu(mu)
    patch = oversampling_domain(disc.grid, sub, layers)
    G = disc.components.local_gram(sub)
    c_est = test_failure_calibration(eps_fail, n_test)
    seed_rec = [sub, list(mu)]
    if len(patch.artificial_trace_dofs) == 0:
        # transfer operator has an empty domain; nothing to approximate
        report = RangeFinderReport(sub, list(mu), 0, [0.0], tol, eps_fail,
                                   n_test, seed_rec)
        return [], report

    if max_dim is None:
        max_dim = min(disc.grid.n_loc, len(patch.artificial_trace_dofs))
    tests = [apply_transfer(disc, sub, mu, random_boundary_sample(disc, patch, rng),
                            patch) for _ in range(n_test)]
    basis: list[np.ndarray] = []
    estimates = []
    stalled = 0
    while True:
        est = c_est * max(np.sqrt(max(0.0, _gram_dot(G, t, t))) for t in tests)
        estimates.append(float(est))
        if est <= tol:
            break
        if len(basis) >= max_dim or stalled >= 10:
            report = RangeFinderReport(sub, list(mu), len(basis), estimates, tol,
                                       eps_fail, n_test, seed_rec, converged=False)
            raise RangeFinderError(
                f"range finder stalled at dimension {len(basis)} on subdomain {sub} "
                f"(estimate {est:.3e} > tol {tol:.3e}); report: {report.to_dict()}")
        w = apply_transfer(disc, sub, mu, random_boundary_sample(disc, patch, rng),
                           patch)
        b = _orthonormalize(G, basis, w)
        if b is None:
            stalled += 1
            continue
        stalled = 0
        basis.append(b)
        tests = [t - _gram_dot(G, b, t) * b for t in tests]
    report = RangeFinderReport(sub, list(mu), len(basis), estimates, tol,
                               eps_fail, n_test, seed_rec)
    return basis, report


def source_snapshot(disc: Discretization, sub: int, mu, layers=1) -> np.ndarray:
    """Local response to the source term (zero Dirichlet data everywhere)."""
    patch = oversampling_domain(disc.grid, sub, layers)
    x = solve_patch(disc, patch, mu, rhs="source", global_dirichlet="zero")
    return restrict_to_sub(disc, patch, x, sub)


def boundary_lift_snapshot(disc: Discretization, sub: int, mu, layers=1) -> np.ndarray:
    """Local response to the inhomogeneous global Dirichlet data.

    Together with the source snapshot this carries the affine part excluded
    from the (linear) transfer operator; zero whenever the patch sees no
    inhomogeneous Dirichlet segment.
    """
    patch = oversampling_domain(disc.grid, sub, layers)
    x = solve_patch(disc, patch, mu, rhs="zero", global_dirichlet="problem")
    return restrict_to_sub(disc, patch, x, sub)


class ReducedBasis:
    """Per-subdomain orthonormal local bases with provenance tags.

    Vectors are orthonormal in the local energy inner product of their
    subdomain (volume terms at the reference parameter).  Tags are "pou",
    "offline" or "online".  The four partition-of-unity hat restrictions per
    subdomain are required for residual localization and are injected first.
    """

    def __init__(self, disc: Discretization, seed=None, fingerprint=""):
        self.grid = disc.grid
        self.grams = [disc.components.local_gram(s) for s in range(disc.grid.n_sub)]
        self.vectors: list[list[np.ndarray]] = [[] for _ in range(disc.grid.n_sub)]
        self.tags: list[list[str]] = [[] for _ in range(disc.grid.n_sub)]
        self.seed = seed
        self.fingerprint = fingerprint

    def dim(self, sub: int) -> int:
        return len(self.vectors[sub])

    @property
    def dims(self) -> np.ndarray:
        return np.array([len(v) for v in self.vectors])

    @property
    def total_dim(self) -> int:
        return int(self.dims.sum())

    def matrix(self, sub: int) -> np.ndarray:
        """(n_loc, dim) array of the local basis."""
        if not self.vectors[sub]:
            return np.zeros((self.grid.n_loc, 0))
        return np.column_stack(self.vectors[sub])

    def tag_counts(self, sub: int) -> dict[str, int]:
        out = {"pou": 0, "offline": 0, "online": 0}
        for t in self.tags[sub]:
            out[t] += 1
        return out

    def add(self, sub: int, vec, tag: str) -> bool:
        """Orthonormalize ``vec`` into the local basis; False if deflated."""
        if tag not in ("pou", "offline", "online"):
            raise ValueError(f"unknown tag {tag!r}")
        b = _orthonormalize(self.grams[sub], self.vectors[sub], vec)
        if b is None:
            return False
        self.vectors[sub].append(b)
        self.tags[sub].append(tag)
        return True

    def gram_error(self, sub: int) -> float:
        """Max deviation of the local basis Gram matrix from identity."""
        B = self.matrix(sub)
        if B.shape[1] == 0:
            return 0.0
        M = B.T @ (self.grams[sub] @ B)
        return float(np.abs(M - np.eye(B.shape[1])).max())

    def reconstruct(self, coeffs: list[np.ndarray]) -> BlockVector:
        out = np.zeros((self.grid.n_sub, self.grid.n_loc))
        for s in range(self.grid.n_sub):
            if len(coeffs[s]):
                out[s] = self.matrix(s) @ coeffs[s]
        return BlockVector(out)


def pou_vectors(grid, sub: int):
    """Restrictions of the four corner hats, ordered by coarse node index."""
    ix, iy = grid.sub_coords(sub)
    nodes = sorted(grid.node_index(jx, jy)
                   for jx, jy in ((ix, iy), (ix + 1, iy), (ix, iy + 1), (ix + 1, iy + 1)))
    return [(n, hat_values(grid, n, sub)) for n in nodes]


def build_initial_rb(disc: Discretization, training_set, tol, eps_fail, n_test,
                     seed, layers=1, fingerprint=""):
    """Assemble the initial reduced basis over all subdomains.

    Injects the partition-of-unity hats first, then for every training
    parameter the range-finder output plus source and boundary-lift
    snapshots, all orthonormalized into one local basis per subdomain.  The
    per-task random streams derive from ``(seed, subdomain, parameter
    index)`` so results do not depend on scheduling.  Returns ``(basis,
    reports)``.
    """
    training_set = [disc.problem.validate_mu(mu) for mu in training_set]
    if not training_set:
        raise ValueError("training set must be nonempty")
    rb = ReducedBasis(disc, seed=seed, fingerprint=fingerprint)
    reports = []
    for sub in range(disc.grid.n_sub):
        for _, hat in pou_vectors(disc.grid, sub):
            rb.add(sub, hat, "pou")
        for i_mu, mu in enumerate(training_set):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), sub, i_mu]))
            vecs, report = adaptive_range_finder(disc, sub, mu, tol, eps_fail,
                                                 n_test, rng, layers=layers)
            reports.append(report)
            for v in vecs:
                rb.add(sub, v, "offline")
            rb.add(sub, source_snapshot(disc, sub, mu, layers), "offline")
            rb.add(sub, boundary_lift_snapshot(disc, sub, mu, layers), "offline")
    return rb, reports
