"""Shrinking-width sweeps: eigenvalue, eigenfunction and resolvent-difference
convergence of the renormalized layer operator toward the effective surface
Hamiltonian, plus the transverse spectral-gap check and rate fitting."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import t as student_t

from .eigensolve import lowest_eigenpairs, opnorm_estimate, resolvent_apply
from .errors import EmbeddingError, FitError, ThinLayerError
from .geometry import (
    GeometryFamily,
    build_patch,
    check_embedding,
    layer_geometry,
    transverse_nodes,
)
from .magnetics import (
    AmbientField,
    ScalarPotential,
    gauge_fix,
    effective_field,
    pullback,
    zero_layer_potential,
)
from .operators import (
    AssembledOperator,
    TRANSVERSE_GROUND_ENERGY,
    assemble_effective,
    assemble_full,
    comparison_constants,
    potential_grids,
    renormalize,
)

EXACT_TAG = "exact"
INSUFFICIENT_TAG = "insufficient"
DEFAULT_SLOPE_WINDOW = (0.9, 2.3)
DEFAULT_SLOPE_MIN = 0.9


@dataclass(frozen=True)
class TransverseMode:
    """Ground transverse profile cos(pi u / 2) and its rank-one projector."""

    m_u: int
    u: np.ndarray
    h_u: float
    chi: np.ndarray  # physical samples
    chi_scaled: np.ndarray  # sqrt(h_u) * chi; exactly unit two-norm

    @classmethod
    def from_count(cls, m_u: int) -> "TransverseMode":
        u, h = transverse_nodes(m_u)
        chi = np.cos(0.5 * np.pi * u)
        return cls(m_u=m_u, u=u, h_u=h, chi=chi, chi_scaled=np.sqrt(h) * chi)

    def project_ground(self, vec: np.ndarray) -> np.ndarray:
        """Ground-mode coefficients of a scaled product-grid vector."""
        return vec.reshape(-1, self.m_u) @ self.chi_scaled

    def embed(self, surf: np.ndarray) -> np.ndarray:
        """Surface vector times the ground profile, as a product-grid vector."""
        return (surf[:, None] * self.chi_scaled[None, :]).reshape(-1)

    def apply_p1(self, vec: np.ndarray) -> np.ndarray:
        return self.embed(self.project_ground(vec))

    def apply_q(self, vec: np.ndarray) -> np.ndarray:
        return vec - self.apply_p1(vec)

    def leakage(self, vec: np.ndarray) -> float:
        return float(np.linalg.norm(self.apply_q(vec)))


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    band95: tuple[float, float]
    residual_rms: float
    n_used: int
    excluded: tuple[int, ...]
    tag: str = "fit"

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "band95": list(self.band95),
            "residual_rms": self.residual_rms,
            "n_used": self.n_used,
            "excluded": list(self.excluded),
            "tag": self.tag,
        }


def fit_rate(eps_values, values) -> FitResult:
    """Least-squares slope of log(value) against log(eps).

    Nonpositive values are excluded (they carry a flag in the result); fewer
    than three usable points refuse the fit.
    """
    eps_values = np.asarray(eps_values, float)
    values = np.asarray(values, float)
    good = values > 0
    excluded = tuple(int(i) for i in np.nonzero(~good)[0])
    if int(good.sum()) < 3:
        raise FitError(
            f"rate fit needs >= 3 positive values, got {int(good.sum())}"
        )
    x = np.log(eps_values[good])
    y = np.log(values[good])
    n = x.size
    A = np.stack([x, np.ones_like(x)], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    r = y - A @ coef
    rms = float(np.sqrt(np.mean(r * r)))
    denom = float(np.sum((x - x.mean()) ** 2))
    if n > 2 and denom > 0:
        s2 = float(np.sum(r * r)) / (n - 2)
        stderr = float(np.sqrt(s2 / denom))
        half = float(student_t.ppf(0.975, n - 2)) * stderr
    else:
        stderr = 0.0
        half = 0.0
    return FitResult(
        slope=slope,
        intercept=intercept,
        stderr=stderr,
        band95=(slope - half, slope + half),
        residual_rms=rms,
        n_used=n,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# transverse gap bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapBoundReport:
    margin: float  # measured smallest transverse excitation
    bound: float  # 3 pi^2 / (4 eps^2)
    lambda_min: float
    lambda_min_excited: float
    rq_min_sampled: float
    n_samples: int


def gap_bound_report(
    layer, op: AssembledOperator, tol: float = 1e-11, seed: int = 42,
    n_samples: int = 200, dense_cutoff: int | None = None,
) -> GapBoundReport:
    """Measure the energy protecting the lowest transverse branch.

    margin = smallest eigenvalue outside the ground transverse sector minus
    the ground energy; it must stay at or above 3 pi^2 / (4 eps^2) up to the
    spread of the effective surface energies. Random Rayleigh quotients in the
    excited sector provide an independent sampled verification.
    """
    if not op.kind.endswith("-renormalized"):
        raise ThinLayerError("gap bound check expects a renormalized operator")
    mode = TransverseMode.from_count(layer.m_u)
    eps = layer.eps
    bound = 3.0 * np.pi**2 / (4.0 * eps**2)
    spec = lowest_eigenpairs(op, 1, tol=tol, seed=seed, dense_cutoff=dense_cutoff)
    lam1 = float(spec.values[0])
    ns = op.n_dof // mode.m_u
    proj = sp.csr_array(np.outer(mode.chi_scaled, mode.chi_scaled))
    P1 = sp.csr_array(sp.kron(sp.eye_array(ns, format="csr"), proj, format="csr"))
    penalty = 50.0 * (bound + abs(lam1)) + 10.0
    shifted = AssembledOperator.from_matrix(
        sp.csr_array(op.matrix + penalty * P1.astype(op.matrix.dtype)),
        weights=op.weights,
        kind="penalized",
        eps=eps,
    )
    if op.meta.get("spectral_lower_bound") is not None:
        # the rank-one penalty is positive, so the floor carries over
        shifted.meta["spectral_lower_bound"] = op.meta["spectral_lower_bound"]
    spec_q = lowest_eigenpairs(shifted, 1, tol=tol, seed=seed, dense_cutoff=dense_cutoff)
    lam_q = float(spec_q.values[0])
    # the ground sector is only approximately invariant for the coupled
    # operator, so a small residual component is expected
    ground_leak = float(np.linalg.norm(mode.project_ground(spec_q.vectors[:, 0])))
    if ground_leak > 1e-3:
        raise ThinLayerError(
            f"penalized eigenvector leaks into the ground sector ({ground_leak:.1e}); "
            "increase the penalty or refine the grid"
        )
    rng = np.random.default_rng(seed)
    rq_min = np.inf
    H = op.matrix
    for _ in range(n_samples):
        v = rng.standard_normal(op.n_dof)
        if op.is_complex:
            v = v + 1j * rng.standard_normal(op.n_dof)
        v = mode.apply_q(v)
        nrm2 = float(np.real(np.vdot(v, v)))
        if nrm2 == 0.0:
            continue
        rq = float(np.real(np.vdot(v, H @ v))) / nrm2
        rq_min = min(rq_min, rq)
    return GapBoundReport(
        margin=lam_q - lam1,
        bound=bound,
        lambda_min=lam1,
        lambda_min_excited=lam_q,
        rq_min_sampled=float(rq_min),
        n_samples=n_samples,
    )


def gap_bound_check(layer, op: AssembledOperator, **kwargs) -> float:
    """Smallest transverse excitation of the renormalized operator.

    Raises when the measured margin falls below zero, which signals a
    discretization too coarse to separate the transverse branches.
    """
    rep = gap_bound_report(layer, op, **kwargs)
    if rep.margin < 0.0:
        raise ThinLayerError(
            f"transverse gap margin is negative ({rep.margin:.3e}); refine the "
            "surface grid or increase the transverse node count"
        )
    return rep.margin


# ---------------------------------------------------------------------------
# sweep harness
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    family: GeometryFamily
    grid: tuple
    field: AmbientField
    epsilons: tuple
    m_u: int = 17
    n_pairs: int = 1
    electric: ScalarPotential | None = None
    tol: float = 1e-11
    seed: int = 42
    dense_cutoff: int | None = None
    k_override: float | None = None
    order: int | None = None
    slope_window: tuple = DEFAULT_SLOPE_WINDOW
    slope_min: float = DEFAULT_SLOPE_MIN
    grid_doubling: bool = True
    resolvent_iters: int = 60
    threads: int = 1


@dataclass
class SweepRow:
    eps: float
    n: int
    lam: float = np.nan
    mu: float = np.nan
    gap: float = np.nan
    cluster_gap: float = np.nan
    efunc: float = np.nan
    leakage: float = np.nan
    resolvent: float = np.nan
    disc_est: float = np.nan
    overlap: float = np.nan
    flags: list = field(default_factory=list)
    skipped: bool = False
    reason: str = ""


_CSV_COLUMNS = (
    "eps",
    "n",
    "lambda",
    "mu",
    "gap",
    "cluster_gap",
    "efunc_discrepancy",
    "transverse_leakage",
    "resolvent_diff",
    "disc_estimate",
    "overlap",
    "flags",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class ConvergenceReport:
    rows: list
    fits: dict
    k: float
    meta: dict

    def observable_values(self, name: str):
        """(eps, value) arrays of unflagged n=1 rows for one observable."""
        eps, vals = [], []
        for r in self.rows:
            if r.n != 1 or r.skipped or r.flags:
                continue
            eps.append(r.eps)
            vals.append(getattr(r, name))
        return np.asarray(eps), np.asarray(vals)

    def to_csv(self) -> str:
        lines = [",".join(_CSV_COLUMNS)]
        for r in self.rows:
            rec = [
                _fmt(r.eps),
                str(r.n),
                _fmt(r.lam),
                _fmt(r.mu),
                _fmt(r.gap),
                _fmt(r.cluster_gap),
                _fmt(r.efunc),
                _fmt(r.leakage),
                _fmt(r.resolvent),
                _fmt(r.disc_est),
                _fmt(r.overlap),
                ";".join(r.flags) if not r.skipped else f"skipped:{r.reason}",
            ]
            lines.append(",".join(rec))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        fits = {
            name: (fr.as_dict() if isinstance(fr, FitResult) else {"tag": fr})
            for name, fr in self.fits.items()
        }
        return {
            "k": self.k,
            "fits": fits,
            "meta": self.meta,
            "rows": len(self.rows),
            "flagged_rows": sum(1 for r in self.rows if r.flags or r.skipped),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True) + "\n"


def _layer_potential(fieldspec, layer):
    if fieldspec.kind == "zero":
        return zero_layer_potential(layer)
    return gauge_fix(pullback(fieldspec, layer))


def _cluster_indices(values, rtol=1e-8):
    clusters = []
    for i, v in enumerate(values):
        if clusters and abs(v - values[clusters[-1][0]]) <= rtol * max(1.0, abs(v)):
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def _match_pairs(overlaps, eff_vals, full_vals, n_pairs):
    """Greedy maximal-overlap matching with eigenvalue-proximity tie-breaks.

    Returns (assignment, ambiguous): assignment[a] = full index for effective
    index a < n_pairs; ambiguous lists effective indices whose two best
    overlaps were within 1% of each other.
    """
    n_eff, n_full = overlaps.shape
    taken = np.zeros(n_full, bool)
    assignment = np.full(n_pairs, -1)
    ambiguous = []
    for a in range(n_pairs):
        row = np.where(taken, -np.inf, overlaps[a])
        order = np.argsort(row)[::-1]
        best, second = order[0], (order[1] if n_full > 1 else order[0])
        if (
            n_full > 1
            and row[best] > 0
            and (row[best] - row[second]) <= 0.01 * row[best]
        ):
            ambiguous.append(a)
            cand = [best, second]
            best = min(cand, key=lambda b: abs(full_vals[b] - eff_vals[a]))
        assignment[a] = best
        taken[best] = True
    return assignment, ambiguous


def _compute_gaps_only(patch, fieldspec, electric, eps, m_u, n_pairs, tol, seed,
                       dense_cutoff, order):
    """Eigenvalue gaps |lambda_n - mu_n| on a given patch (used at the doubled
    grid for the discretization estimate)."""
    eff = effective_field(fieldspec, patch)
    heff = assemble_effective(patch, eff, electric, order)
    n_solve = min(n_pairs + 3, heff.n_dof)
    eff_spec = lowest_eigenpairs(heff, n_solve, tol=tol, seed=seed,
                                 dense_cutoff=dense_cutoff)
    layer = layer_geometry(patch, eps, m_u)
    pot = _layer_potential(fieldspec, layer)
    pots = potential_grids(layer)
    hren = renormalize(assemble_full(layer, pot, electric, pots, order))
    mode = TransverseMode.from_count(m_u)
    full_solve = min(n_solve + 3, hren.n_dof)
    full_spec = lowest_eigenpairs(hren, full_solve, tol=tol, seed=seed,
                                  dense_cutoff=dense_cutoff)
    emb = (eff_spec.vectors[:, None, :] * mode.chi_scaled[None, :, None]).reshape(
        hren.n_dof, -1
    )
    overlaps = np.abs(emb.conj().T @ full_spec.vectors)
    assignment, _ = _match_pairs(overlaps, eff_spec.values, full_spec.values, n_pairs)
    clusters = _cluster_indices(eff_spec.values)
    gaps = np.full(n_pairs, np.nan)
    for cl in clusters:
        members = [a for a in cl if a < n_pairs]
        if not members:
            continue
        lam_mean = float(np.mean([full_spec.values[assignment[a]] for a in members]))
        for a in members:
            gaps[a] = abs(lam_mean - eff_spec.values[a])
    return gaps


def run_sweep(spec: SweepSpec) -> ConvergenceReport:
    """Run the shrinking-width sweep and collect the convergence report."""
    eps_list = tuple(float(e) for e in spec.epsilons)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ThinLayerError("epsilon list must be strictly decreasing")
    patch = build_patch(spec.family, spec.grid)
    emb0 = check_embedding(patch, max(eps_list))
    if not emb0.passed:
        raise EmbeddingError(
            f"embedding fails at the largest eps: {emb0.reason} "
            f"(pair {emb0.offending_pair})"
        )
    mode = TransverseMode.from_count(spec.m_u)
    eff = effective_field(spec.field, patch)
    heff = assemble_effective(patch, eff, spec.electric, spec.order)
    n_solve = min(spec.n_pairs + 3, heff.n_dof)
    eff_spec = lowest_eigenpairs(
        heff, n_solve, tol=spec.tol, seed=spec.seed, dense_cutoff=spec.dense_cutoff
    )
    clusters = _cluster_indices(eff_spec.values)

    # k policy: evaluated at the largest width, shared across the sweep
    layer0 = layer_geometry(patch, eps_list[0], spec.m_u)
    pot0 = _layer_potential(spec.field, layer0)
    pots0 = potential_grids(layer0)
    consts0 = comparison_constants(layer0, pots0, pot0)
    if spec.k_override is not None:
        k = float(spec.k_override)
    else:
        k = max(1.0, 2.0 * abs(float(np.min(pots0.veff))) + 1.0 + consts0.offset)

    doubling_ok = spec.grid_doubling and spec.family.kind != "user-sampled"
    patch_fine = None
    if doubling_ok:
        fine_grid = tuple(2 * n for n in np.atleast_1d(spec.grid))
        patch_fine = build_patch(spec.family, fine_grid)

    def one_row(eps: float) -> list[SweepRow]:
        emb = check_embedding(patch, eps)
        if not emb.passed:
            return [
                SweepRow(eps=eps, n=n + 1, skipped=True, reason=emb.reason or "embedding")
                for n in range(spec.n_pairs)
            ]
        layer = layer_geometry(patch, eps, spec.m_u)
        pot = _layer_potential(spec.field, layer)
        pots = potential_grids(layer)
        hren = renormalize(assemble_full(layer, pot, spec.electric, pots, spec.order))
        full_solve = min(n_solve + 3, hren.n_dof)
        full_spec = lowest_eigenpairs(
            hren, full_solve, tol=spec.tol, seed=spec.seed, dense_cutoff=spec.dense_cutoff
        )
        emb_vecs = (
            eff_spec.vectors[:, None, :] * mode.chi_scaled[None, :, None]
        ).reshape(hren.n_dof, -1)
        overlaps = np.abs(emb_vecs.conj().T @ full_spec.vectors)
        assignment, ambiguous = _match_pairs(
            overlaps, eff_spec.values, full_spec.values, spec.n_pairs
        )

        def mv(v):
            x = resolvent_apply(hren, k, v)
            y = resolvent_apply(heff, k, mode.project_ground(v))
            return x - mode.embed(y)

        res_norm = opnorm_estimate(
            mv,
            hren.n_dof,
            iters=spec.resolvent_iters,
            seed=spec.seed,
            is_complex=hren.is_complex or heff.is_complex,
        ).value

        cluster_gap = np.full(n_solve, np.nan)
        for cl in clusters:
            members = [a for a in cl if a < spec.n_pairs]
            if not members:
                continue
            lam_mean = float(
                np.mean([full_spec.values[assignment[a]] for a in members])
            )
            for a in members:
                cluster_gap[a] = abs(lam_mean - eff_spec.values[a])

        disc = np.full(spec.n_pairs, np.nan)
        if patch_fine is not None:
            try:
                gaps_fine = _compute_gaps_only(
                    patch_fine, spec.field, spec.electric, eps, spec.m_u,
                    spec.n_pairs, spec.tol, spec.seed, spec.dense_cutoff, spec.order,
                )
                for a in range(spec.n_pairs):
                    disc[a] = abs(cluster_gap[a] - gaps_fine[a])
            except Exception:
                pass  # discretization estimate is advisory

        gap_floor = max(1e-10, 100.0 * spec.tol)
        rows = []
        for a in range(spec.n_pairs):
            b = assignment[a]
            ov = float(overlaps[a, b])
            gap = abs(full_spec.values[b] - eff_spec.values[a])
            flags = []
            if a in ambiguous:
                flags.append("matching-ambiguity")
            if (
                np.isfinite(disc[a])
                and cluster_gap[a] > gap_floor
                and disc[a] > 0.2 * cluster_gap[a]
            ):
                flags.append("discretization")
            rows.append(
                SweepRow(
                    eps=eps,
                    n=a + 1,
                    lam=float(full_spec.values[b]),
                    mu=float(eff_spec.values[a]),
                    gap=float(gap),
                    cluster_gap=float(cluster_gap[a]),
                    efunc=float(np.sqrt(max(0.0, 2.0 * (1.0 - ov)))),
                    leakage=mode.leakage(full_spec.vectors[:, b]),
                    resolvent=float(res_norm),
                    disc_est=float(disc[a]) if np.isfinite(disc[a]) else np.nan,
                    overlap=ov,
                    flags=flags,
                )
            )
        return rows

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            chunks = list(pool.map(one_row, eps_list))
    else:
        chunks = [one_row(e) for e in eps_list]
    rows = [r for chunk in chunks for r in chunk]

    scalar_tol = max(1e-10, 100.0 * spec.tol)
    # eigenfunction-type observables sit at the square root of round-off when
    # the discrete operators coincide (norms of nearly identical unit vectors)
    exact_tols = {
        "cluster_gap": scalar_tol,
        "efunc": max(1e-7, np.sqrt(scalar_tol)),
        "leakage": max(1e-7, np.sqrt(scalar_tol)),
        "resolvent": scalar_tol,
    }
    fits = {}
    for name in ("cluster_gap", "efunc", "leakage", "resolvent"):
        eps_v, vals = [], []
        for r in rows:
            if r.n != 1 or r.skipped or r.flags:
                continue
            eps_v.append(r.eps)
            vals.append(getattr(r, name))
        vals = np.asarray(vals)
        if vals.size and np.all(np.abs(vals) <= exact_tols[name]):
            fits[name] = EXACT_TAG
            continue
        try:
            fits[name] = fit_rate(np.asarray(eps_v), vals)
        except FitError:
            fits[name] = INSUFFICIENT_TAG

    meta = {
        "geometry": patch.label(),
        "field": spec.field.label,
        "grid": [int(n) for n in np.atleast_1d(spec.grid)],
        "m_u": spec.m_u,
        "n_pairs": spec.n_pairs,
        "epsilons": list(eps_list),
        "seed": spec.seed,
        "tol": spec.tol,
        "slope_window": list(spec.slope_window),
        "slope_min": spec.slope_min,
        "transverse_shift_at_largest_eps": TRANSVERSE_GROUND_ENERGY / eps_list[0] ** 2,
        "smallest_resolved_epsilon": min(
            (r.eps for r in rows if r.n == 1 and not (r.skipped or r.flags)),
            default=None,
        ),
    }
    return ConvergenceReport(rows=rows, fits=fits, k=k, meta=meta)


def sweep_acceptance(report: ConvergenceReport) -> tuple[bool, list[str]]:
    """Evaluate fitted slopes against their windows; True when all pass."""
    lo, hi = report.meta.get("slope_window", DEFAULT_SLOPE_WINDOW)
    smin = report.meta.get("slope_min", DEFAULT_SLOPE_MIN)
    problems = []
    for name, fr in report.fits.items():
        if fr == EXACT_TAG:
            continue
        if fr == INSUFFICIENT_TAG:
            problems.append(f"{name}: not enough usable points for a rate fit")
            continue
        s = fr.slope
        if name == "cluster_gap":
            if not (lo <= s <= hi):
                problems.append(f"{name}: slope {s:.3f} outside [{lo}, {hi}]")
        else:
            if s < smin:
                problems.append(f"{name}: slope {s:.3f} below {smin}")
    flagged = [r for r in report.rows if r.flags or r.skipped]
    if flagged:
        problems.append(f"{len(flagged)} flagged or skipped rows")
    return (not problems), problems
