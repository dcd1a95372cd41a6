"""Dense convex QP solver: operator-splitting iteration with active-set polish.

Solves  minimize 1/2 z'Hz + f'z  subject to  G z <= g  for symmetric positive
semidefinite H.  The iteration is an over-relaxed ADMM on the split
(z, y = Gz) with a cached Cholesky factorization of H + sigma*I + rho*G'G,
Ruiz equilibration of (H, G), and periodic residual-balancing updates of the
penalty rho.  A final polish step solves the KKT system restricted to the
detected active set, which typically returns solutions exact to machine
precision.  Everything is deterministic: fixed iteration order, no
randomization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"

_SCALE_CLAMP = (1e-4, 1e4)
_RHO_CLAMP = (1e-6, 1e6)
_DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class QpProblem:
    """Canonical dense QP: minimize 1/2 z'Hz + f'z subject to G z <= g."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        f = np.asarray(self.f, dtype=float).ravel()
        d = f.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H: expected shape ({d}, {d}), got {H.shape}")
        scale = max(1.0, np.abs(H).max())
        if np.abs(H - H.T).max() > 1e-9 * scale:
            raise ValueError("H must be symmetric")
        H = 0.5 * (H + H.T)
        G = np.asarray(self.G, dtype=float)
        g = np.asarray(self.g, dtype=float).ravel()
        if G.ndim != 2 or G.shape[1] != d:
            raise ValueError(f"G: expected shape (c, {d}), got {G.shape}")
        if g.shape[0] != G.shape[0]:
            raise ValueError(f"g: expected length {G.shape[0]}, got {g.shape[0]}")
        for name, arr in (("H", H), ("f", f), ("G", G), ("g", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self):
        return self.f.shape[0]

    @property
    def n_constraints(self):
        return self.g.shape[0]

    def objective(self, z):
        return float(0.5 * z @ (self.H @ z) + self.f @ z)


@dataclass(frozen=True)
class QpSettings:
    eps_primal: float = 1e-6
    eps_dual: float = 1e-6
    max_iterations: int = 20000
    sigma: float = 1e-6
    alpha: float = 1.6
    rho: float = 0.1
    check_interval: int = 25
    rho_update_interval: int = 100
    polish_interval: int = 100
    scaling_iterations: int = 10
    polish: bool = True
    warm_start: bool = True


@dataclass
class QpSolution:
    """Certified solve outcome.

    ``primal_residual`` is the worst absolute constraint violation
    max(0, max_i (Gz - g)_i).  ``dual_residual`` is the relative stationarity
    norm ||Hz + f + G'lam||_inf / max(1, ||Hz||_inf, ||f||_inf, ||G'lam||_inf),
    which keeps tolerances meaningful when slack penalties push the objective
    scale to 1e6 and beyond.
    """

    z: np.ndarray
    duals: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    message: str = ""


def _ruiz_equilibration(H, G, iterations):
    """Symmetric scaling of the stacked matrix [[H, G'], [G, 0]].

    Returns (d, e) with the scaled problem using H' = DHD, G' = EGD.
    """
    n = H.shape[0]
    m = G.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    absH = np.abs(H)
    absG = np.abs(G)
    for _ in range(iterations):
        Hs = absH * np.outer(d, d)
        Gs = absG * (e[:, None] * d[None, :]) if m else absG
        z_norm = Hs.max(axis=0)
        if m:
            z_norm = np.maximum(z_norm, Gs.max(axis=0))
            y_norm = Gs.max(axis=1)
            y_norm[y_norm == 0.0] = 1.0
            e *= 1.0 / np.sqrt(y_norm)
        z_norm[z_norm == 0.0] = 1.0
        d *= 1.0 / np.sqrt(z_norm)
    np.clip(d, *_SCALE_CLAMP, out=d)
    if m:
        np.clip(e, *_SCALE_CLAMP, out=e)
    return d, e


class _Family:
    """Per-(H, G) workspace: scaling, factorizations keyed by rho, warm start.

    Besides Ruiz equilibration, the objective is normalized by the largest
    H entry so that dual variables stay O(1) even for slack-penalty weights
    of 1e6; the duals are unscaled on the way out.
    """

    def __init__(self, problem, settings):
        self.cost_scale = 1.0 / max(1.0, float(np.abs(problem.H).max()))
        H_scaled = self.cost_scale * problem.H
        self.d, self.e = _ruiz_equilibration(
            H_scaled, problem.G, settings.scaling_iterations
        )
        self.Hs = H_scaled * np.outer(self.d, self.d)
        self.Gs = problem.G * (self.e[:, None] * self.d[None, :])
        self.rho = settings.rho
        self._factors = {}
        self.warm = None

    def factor(self, sigma):
        key = (self.rho, sigma)
        if key not in self._factors:
            K = self.Hs + sigma * np.eye(self.Hs.shape[0])
            if self.Gs.shape[0]:
                K = K + self.rho * (self.Gs.T @ self.Gs)
            self._factors[key] = scipy.linalg.cho_factor(
                K, lower=True, check_finite=False
            )
        return self._factors[key]


class QpSolver:
    """Reentrant solver front end.

    Caches equilibration, factorizations, and the last iterate per problem
    family (identical H and G), so receding-horizon solves that only move
    f and g are cheap.  A fresh solver is bitwise deterministic for a fixed
    sequence of calls.
    """

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self._families = {}

    def _family(self, problem, settings):
        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(problem.H.shape, dtype=np.int64).tobytes())
        h.update(problem.H.tobytes())
        h.update(np.asarray(problem.G.shape, dtype=np.int64).tobytes())
        h.update(problem.G.tobytes())
        h.update(np.float64([settings.sigma, settings.rho]).tobytes())
        h.update(np.int64([settings.scaling_iterations]).tobytes())
        key = h.digest()
        fam = self._families.get(key)
        if fam is None:
            fam = _Family(problem, settings)
            self._families[key] = fam
        return fam

    def solve(self, problem: QpProblem, settings: QpSettings | None = None) -> QpSolution:
        settings = settings or self.settings
        if problem.n_constraints == 0:
            return _solve_unconstrained(problem, settings)
        try:
            fam = self._family(problem, settings)
            cho = fam.factor(settings.sigma)
        except np.linalg.LinAlgError:
            return _failure(problem, _psd_diagnostic(problem.H))
        return self._admm(problem, settings, fam, cho)

    def _admm(self, problem, settings, fam, cho):
        H, f, G, g = problem.H, problem.f, problem.G, problem.g
        d_vec, e_vec = fam.d, fam.e
        Hs, Gs = fam.Hs, fam.Gs
        fs = fam.cost_scale * (d_vec * f)
        gs = e_vec * g
        n = problem.dim
        m = problem.n_constraints
        alpha = settings.alpha
        sigma = settings.sigma

        if settings.warm_start and fam.warm is not None:
            z, y, lam = (v.copy() for v in fam.warm)
        else:
            z = np.zeros(n)
            y = np.zeros(m)
            lam = np.zeros(m)

        rho = fam.rho
        best = None
        iters_done = settings.max_iterations
        status = MAX_ITERATIONS
        message = ""
        early_exact = False
        next_rho_update = settings.rho_update_interval
        next_polish = settings.polish_interval

        k = 0
        while k < settings.max_iterations:
            inner = min(settings.check_interval, settings.max_iterations - k)
            for _ in range(inner):
                rhs = sigma * z - fs + Gs.T @ (rho * y - lam)
                zt = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
                Gzt = Gs @ zt
                z = alpha * zt + (1.0 - alpha) * z
                v = alpha * Gzt + (1.0 - alpha) * y + lam / rho
                y = np.minimum(v, gs)
                lam = rho * (v - y)
            k += inner

            z_u = d_vec * z
            lam_u = e_vec * lam / fam.cost_scale
            if not np.isfinite(z_u).all() or np.linalg.norm(z_u) > _DIVERGENCE_NORM:
                return _failure(
                    problem,
                    _psd_diagnostic(problem.H, default="iterates diverged"),
                )
            Hz = H @ z_u
            Gz = G @ z_u
            Gtlam = G.T @ lam_u
            r_prim = max(0.0, float((Gz - g).max()))
            r_dual = _stationarity(Hz, f, Gtlam)
            best = (z_u, lam_u, Hz, Gz, r_prim, r_dual)
            if r_prim <= settings.eps_primal and r_dual <= settings.eps_dual:
                iters_done = k
                status = OPTIMAL
                break
            if settings.polish and k >= next_polish:
                next_polish += settings.polish_interval
                polished = _polish(
                    problem, z_u, lam_u, Gz, r_prim, r_dual,
                    settings.eps_primal, settings.eps_dual,
                )
                if polished is not None:
                    z_u, lam_u, r_prim, r_dual = polished
                    best = (z_u, lam_u, H @ z_u, G @ z_u, r_prim, r_dual)
                    iters_done = k
                    status = OPTIMAL
                    early_exact = True
                    break
            if k >= next_rho_update:
                next_rho_update += settings.rho_update_interval
                rp_rel = r_prim / max(1.0, np.abs(Gz).max(), np.abs(g).max())
                ratio = np.sqrt(max(rp_rel, 1e-16) / max(r_dual, 1e-16))
                rho_new = float(np.clip(rho * ratio, *_RHO_CLAMP))
                if rho_new > 5.0 * rho or rho_new < rho / 5.0:
                    rho = rho_new
                    fam.rho = rho
                    cho = fam.factor(sigma)

        fam.warm = (z.copy(), y.copy(), lam.copy())
        z_u, lam_u, Hz, Gz, r_prim, r_dual = best
        if status == OPTIMAL and settings.polish and not early_exact:
            polished = _polish(
                problem, z_u, lam_u, Gz, r_prim, r_dual,
                settings.eps_primal, settings.eps_dual,
            )
            if polished is not None:
                z_u, lam_u, r_prim, r_dual = polished
        return QpSolution(
            z=z_u,
            duals=lam_u,
            objective=problem.objective(z_u),
            primal_residual=r_prim,
            dual_residual=r_dual,
            iterations=iters_done,
            status=status,
            message=message,
        )


def _stationarity(Hz, f, Gtlam):
    """Relative stationarity norm of the unscaled KKT gradient."""
    num = float(np.abs(Hz + f + Gtlam).max()) if f.size else 0.0
    denom = max(1.0, float(np.abs(Hz).max()), float(np.abs(f).max()))
    if Gtlam.size:
        denom = max(denom, float(np.abs(Gtlam).max()))
    return num / denom


def _kkt_solve(H, A, f, g_act, delta, refine_steps):
    """Equality-constrained solve with regularization and iterative refinement.

    Refinement runs until the KKT residual stops improving (up to the step
    cap); nearly dependent active rows need several rounds.
    """
    n = H.shape[0]
    na = A.shape[0]
    K = np.zeros((n + na, n + na))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-f, g_act])
    scale = max(1.0, float(np.abs(rhs).max()))
    Kreg = K.copy()
    Kreg[:n, :n] += delta * np.eye(n)
    if na:
        Kreg[n:, n:] -= delta * np.eye(na)
    try:
        lu = scipy.linalg.lu_factor(Kreg, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    prev = np.inf
    for _ in range(refine_steps):
        resid = rhs - K @ sol
        err = float(np.abs(resid).max())
        if err >= prev or err <= 1e-14 * scale:
            break
        prev = err
        sol = sol + scipy.linalg.lu_solve(lu, resid, check_finite=False)
    if not np.isfinite(sol).all():
        return None
    return sol[:n], sol[n:]


def _polish(problem, z, lam, Gz, r_prim, r_dual, eps_primal=1e-9, eps_dual=1e-9,
            delta=1e-9, refine_steps=25, max_rounds=40):
    """Active-set refinement seeded from the current iterate.

    Solves the KKT system restricted to the guessed active set, then adds
    violated rows and drops negative-multiplier rows until the point is a
    verified KKT point (or the round cap is hit).  Returns
    (z, lam, r_prim, r_dual) only when the polished point beats both the
    current residuals and the requested tolerances, so accepting it is
    always sound.
    """
    H, f, G, g = problem.H, problem.f, problem.G, problem.g
    m = problem.n_constraints
    slack = g - Gz
    lam_scale = max(1.0, float(lam.max()) if m else 0.0)
    active = (lam > 1e-9 * lam_scale) | (slack < max(1e-8, 10.0 * r_prim))
    for _ in range(max_rounds):
        result = _kkt_solve(H, G[active], f, g[active], delta, refine_steps)
        if result is None:
            return None
        z_pol, lam_act = result
        negative = lam_act < -1e-9
        Gz_pol = G @ z_pol
        resid = Gz_pol - g
        violated = (resid > 1e-12) & ~active
        if not negative.any() and not violated.any():
            lam_pol = np.zeros(m)
            lam_pol[active] = np.maximum(lam_act, 0.0)
            r_prim_pol = max(0.0, float(resid.max())) if m else 0.0
            r_dual_pol = _stationarity(H @ z_pol, f, G.T @ lam_pol)
            ok = (
                r_prim_pol <= eps_primal
                and r_dual_pol <= eps_dual
                and max(r_prim_pol, r_dual_pol) <= max(r_prim, r_dual, 1e-15)
            )
            if ok:
                return z_pol, lam_pol, r_prim_pol, r_dual_pol
            return None
        new_active = active.copy()
        if violated.any():
            new_active[violated] = True
        elif negative.any():
            # Drop one row at a time when only duals misbehave; bulk drops
            # can cycle on degenerate active sets.
            idx = np.flatnonzero(active)
            new_active[idx[int(np.argmin(lam_act))]] = False
        if (new_active == active).all():
            return None
        active = new_active
    return None


def _solve_unconstrained(problem, settings):
    z, residual, rank, _ = np.linalg.lstsq(problem.H, -problem.f, rcond=None)
    r_dual = _stationarity(problem.H @ z, problem.f, np.zeros(0))
    if r_dual > settings.eps_dual:
        return _failure(problem, "unconstrained problem has no stationary point")
    return QpSolution(
        z=z,
        duals=np.zeros(0),
        objective=problem.objective(z),
        primal_residual=0.0,
        dual_residual=r_dual,
        iterations=0,
        status=OPTIMAL,
    )


def _psd_diagnostic(H, default="KKT factorization failed"):
    eigmin = float(np.linalg.eigvalsh(H).min()) if H.size else 0.0
    if eigmin < -1e-8 * max(1.0, np.abs(H).max()):
        return f"H is not positive semidefinite (min eigenvalue {eigmin:.3e})"
    return default


def _failure(problem, message):
    return QpSolution(
        z=np.zeros(problem.dim),
        duals=np.zeros(problem.n_constraints),
        objective=float("nan"),
        primal_residual=float("inf"),
        dual_residual=float("inf"),
        iterations=0,
        status=NUMERICAL_FAILURE,
        message=message,
    )


def solve(problem: QpProblem, settings: QpSettings | None = None) -> QpSolution:
    """One-shot solve with a fresh workspace (no warm start)."""
    return QpSolver(settings).solve(problem)
