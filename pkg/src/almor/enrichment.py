"""Online enrichment: marking, local correction solves, adaptive loop.

Subdomains carrying the dominant share of the squared error indicators are
marked (Dörfler-style bulk criterion), a local correction is solved on each
marked subdomain's oversampling patch with the current residual as
right-hand side, and its restriction extends the local basis.  The loop
alternates reduced solves, localized estimation, marking and enrichment until
the requested stopping criterion is met.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import BlockVector
from .estimator import Estimator, assemble_residual
from .fom import Discretization, solve_fom, solve_patch
from .grid import oversampling_domain
from .rom import ReducedModel
from .training import ReducedBasis

__all__ = ["mark", "enrich", "adaptive_solve", "EnrichmentLog"]


def mark(indicators, theta: float = 0.5, squared: bool = True) -> list[int]:
    """Smallest set of subdomains carrying a ``theta`` share of the indicators.

    With ``squared`` (default) the set is the smallest prefix of the
    descending indicators whose squared sum reaches ``theta**2`` times the
    total squared mass; otherwise plain sums against ``theta`` times the
    total.  Ties break by subdomain index; all-zero indicators mark nothing.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("marking fraction must lie in (0, 1]")
    ind = np.asarray(indicators, dtype=float)
    vals = ind ** 2 if squared else ind
    order = np.lexsort((np.arange(len(vals)), -vals))
    svals = vals[order]
    total = float(svals.sum())
    if total <= 0.0:
        return []
    target = (theta ** 2 if squared else theta) * total
    csum = np.cumsum(svals)
    count = int(np.searchsorted(csum, target - 1e-14 * total) + 1)
    selected = [int(s) for s in order[:count] if vals[s] > 0.0]
    return selected


def enrich(disc: Discretization, rb: ReducedBasis, sub: int, mu,
           residual_flat: np.ndarray, layers: int = 1) -> bool:
    """Extend the local basis of ``sub`` by one residual-driven correction.

    Solves the patch problem on the oversampling domain with the (global)
    residual restricted to the patch as right-hand side and homogeneous
    Dirichlet data, restricts the correction to the subdomain and
    orthonormalizes it into the basis.  Returns False when the correction
    deflates (already representable, e.g. for an exact reduced solution).
    """
    patch = oversampling_domain(disc.grid, sub, layers)
    r_patch = residual_flat[patch.global_dofs(disc.grid)]
    psi = solve_patch(disc, patch, mu, rhs=r_patch, global_dirichlet="zero")
    o = patch.offset(sub)
    local = psi[o:o + disc.grid.n_loc]
    return rb.add(sub, local, "online")


@dataclass
class EnrichmentLog:
    """Per-iteration records of the adaptive loop plus final status."""

    records: list = field(default_factory=list)
    converged: bool = False
    stop: tuple = ("estimator", 0.0)
    mu: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return max(0, len(self.records) - 1)

    def to_records(self) -> list[dict]:
        return list(self.records)


def adaptive_solve(disc: Discretization, rb: ReducedBasis, mu, stop,
                   theta: float = 0.5, max_iter: int = 100, squared: bool = True,
                   estimator: Estimator | None = None, layers: int = 1):
    """Adaptively enrich the reduced space at ``mu`` until ``stop`` is met.

    ``stop`` is ``("estimator", tol)`` — relative estimated error, no
    full-order solves — or ``("true-error", tol)`` — relative energy error
    against one full-order reference solve (validation mode).  Returns
    ``(u_rb, log)``; the basis is enriched in place.
    """
    mode, tol = stop
    if mode not in ("estimator", "true-error"):
        raise ValueError(f"unknown stopping mode {mode!r}")
    mu = disc.problem.validate_mu(mu)
    est = estimator if estimator is not None else Estimator(disc)
    model = ReducedModel(disc, rb)
    log = EnrichmentLog(stop=(mode, float(tol)), mu=[float(v) for v in mu])

    u_h = None
    norm_uh = None
    t_fom = 0.0
    if mode == "true-error":
        t0 = time.perf_counter()
        u_h = solve_fom(disc, mu)
        norm_uh = disc.h_norm(u_h)
        t_fom = time.perf_counter() - t0

    u_rb = None
    for it in range(max_iter + 1):
        t0 = time.perf_counter()
        _, u_rb = model.solve(mu)
        t_rom = time.perf_counter() - t0

        t0 = time.perf_counter()
        breakdown = est.estimate(u_rb, mu)
        t_est = time.perf_counter() - t0

        norm_urb = disc.h_norm(u_rb)
        rel_est = breakdown.total / norm_urb if norm_urb > 0 else np.inf
        rel_true = None
        energy_err = None
        if u_h is not None:
            diff = BlockVector(u_h.blocks - u_rb.blocks)
            rel_true = disc.h_norm(diff) / norm_uh if norm_uh > 0 else np.inf
            energy_err = disc.energy_norm(diff, mu)

        record = {
            "iteration": it,
            "mu": [float(v) for v in mu],
            "delta_loc": breakdown.total,
            "alpha": breakdown.alpha,
            "c_pu": breakdown.c_pu,
            "rel_estimate": rel_est,
            "rel_true_error": rel_true,
            "energy_error": energy_err,
            "indicators": [float(v) for v in breakdown.indicators],
            "basis_dims": [int(d) for d in rb.dims],
            "marked": [],
            "added": [],
            "times": {"rom": t_rom, "estimate": t_est, "enrich": 0.0, "fom": t_fom},
        }
        t_fom = 0.0
        log.records.append(record)

        crit = rel_true if mode == "true-error" else rel_est
        if crit is not None and crit <= tol:
            log.converged = True
            break
        if it == max_iter:
            break

        marked = mark(breakdown.indicators, theta, squared)
        if not marked:
            log.converged = crit is not None and crit <= tol
            break
        t0 = time.perf_counter()
        added = []
        for sub in sorted(marked):
            if enrich(disc, rb, sub, mu, breakdown.residual.vector, layers):
                added.append(sub)
        record["marked"] = sorted(int(s) for s in marked)
        record["added"] = added
        record["times"]["enrich"] = time.perf_counter() - t0
        if not added:
            # every marked correction deflated; further iterations cannot improve
            break
        model.extend()

    return u_rb, log
