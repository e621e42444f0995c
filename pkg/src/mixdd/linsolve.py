"""Interface linear solvers.

* ``bdd_solve``: projected, Neumann-Neumann-preconditioned conjugate gradient
  on the assembled primal interface operator, with a rigid-body coarse space
  and optional deflation by recycled Ritz vectors.
* ``feti2lm_solve``: full-orthogonalization Krylov solver on the mixed
  interface unknown, applied matrix-free through local Robin solves and the
  scaled exchange of traces and reactions.
* ``robin_robin_stationary``: the plain stationary exchange iteration, kept
  as a demonstration/verification path.
* ``srks_extract`` / ``srks_augment``: selective reuse of converged Ritz
  pairs between successive tangent solves.

Operator applications fan out one local solve per subdomain and reduce on
interface vectors; dot products are the only global synchronization points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.linalg as sla

from .errors import KrylovError
from .partition import InterfaceTopology, ScaledAssembly


@dataclass
class KrylovReport:
    """Iteration counts, residual history and Ritz data of one Krylov solve."""

    iterations: int
    residuals: list
    relative_residual: float
    lanczos_alpha: list = field(default_factory=list)
    lanczos_beta: list = field(default_factory=list)
    lanczos_rz: list = field(default_factory=list)
    basis: np.ndarray | None = None  # normalized preconditioned residuals
    next_offdiag: float = 0.0


@dataclass
class RitzStore:
    """Recycled Ritz vectors kept S-orthonormal, oldest evicted beyond the cap."""

    theta: float = 1e-3
    cap: int = 150
    vectors: np.ndarray | None = None
    values: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return 0 if self.vectors is None else self.vectors.shape[1]

    def add(self, values, vectors, s_apply) -> int:
        """Append pairs, re-orthonormalizing in the S-inner product."""
        if vectors is None or vectors.shape[1] == 0:
            return 0
        basis = [] if self.vectors is None else [self.vectors[:, i] for i in range(self.size)]
        s_basis = [s_apply(v) for v in basis]
        kept_vals = list(self.values)
        added = 0
        for i in range(vectors.shape[1]):
            v = vectors[:, i].copy()
            sv = s_apply(v)
            norm0 = np.sqrt(max(v @ sv, 0.0))
            for u, su in zip(basis, s_basis):
                h = su @ v
                v -= h * u
                sv -= h * su
            n2 = v @ sv
            if n2 <= (1e-10 * max(norm0, 1e-300)) ** 2:
                continue
            n = np.sqrt(n2)
            basis.append(v / n)
            s_basis.append(sv / n)
            kept_vals.append(float(values[i]))
            added += 1
        if basis:
            if len(basis) > self.cap:
                basis = basis[-self.cap:]
                kept_vals = kept_vals[-self.cap:]
            self.vectors = np.column_stack(basis)
            self.values = kept_vals
        return added


@dataclass
class CoarseProblem:
    """Scaled rigid-body coarse space with its factorized operator."""

    g: np.ndarray  # (n_A, m)
    sg: np.ndarray  # S applied to the columns of g
    cho: tuple | None  # cho_factor(g^T S g), None when m == 0
    col_slices: list  # per-subdomain column range (lo, hi)

    @property
    def size(self) -> int:
        return self.g.shape[1]

    def solve(self, rhs_m: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self.cho, rhs_m)


def make_s_apply(topology: InterfaceTopology, schurs):
    """Assembled primal interface operator from dense local Schur complements."""

    def s_apply(x):
        return topology.assemble([s @ x[amap] for s, amap in zip(schurs, topology.a_maps)])

    return s_apply


def make_nn_preconditioner(topology: InterfaceTopology, scaled: ScaledAssembly, schurs):
    """Neumann-Neumann: scaled sum of local Schur pseudo-inverses.

    The pseudo-inverses regularize rigid modes by truncating the small end of
    the local spectra, which is consistent because the projected residual is
    balanced against the coarse space.
    """
    pinvs = []
    for s in schurs:
        if s.shape[0] == 0:
            pinvs.append(s)
            continue
        w, v = np.linalg.eigh(0.5 * (s + s.T))
        cut = 1e-10 * max(w.max(initial=0.0), 1e-300)
        inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
        pinvs.append((v * inv) @ v.T)

    def m_apply(r):
        return topology.assemble_weighted(
            [p @ (w * r[amap]) for p, w, amap in zip(pinvs, scaled.a_tilde, topology.a_maps)],
            scaled.a_tilde,
        )

    return m_apply


def build_coarse(topology: InterfaceTopology, scaled: ScaledAssembly, rbm_traces, schurs):
    """Assemble the scaled rigid-body coarse space and factor its operator."""
    cols = []
    col_slices = []
    for s, traces in enumerate(rbm_traces):
        lo = len(cols)
        for i in range(traces.shape[1]):
            vec = np.zeros(topology.n_A)
            np.add.at(vec, topology.a_maps[s], scaled.a_tilde[s] * traces[:, i])
            cols.append(vec)
        col_slices.append((lo, len(cols)))
    if not cols:
        g = np.zeros((topology.n_A, 0))
        return CoarseProblem(g=g, sg=g, cho=None, col_slices=col_slices)
    g = np.column_stack(cols)
    s_apply = make_s_apply(topology, schurs)
    sg = np.column_stack([s_apply(g[:, i]) for i in range(g.shape[1])])
    mat = g.T @ sg
    try:
        cho = sla.cho_factor(0.5 * (mat + mat.T))
    except np.linalg.LinAlgError as exc:
        raise KrylovError("coarse matrix is rank deficient") from exc
    return CoarseProblem(g=g, sg=sg, cho=cho, col_slices=col_slices)


def _prepare_deflation(coarse: CoarseProblem, augmentation, s_apply):
    """S-orthonormalize stored vectors against the coarse space and each other."""
    if augmentation is None or augmentation.size == 0:
        return None, None
    basis, s_basis = [], []
    for i in range(augmentation.size):
        v = augmentation.vectors[:, i].copy()
        if coarse.size:
            v = v - coarse.g @ coarse.solve(coarse.sg.T @ v)
        sv = s_apply(v)
        norm0 = np.sqrt(max(v @ sv, 0.0))
        for u, su in zip(basis, s_basis):
            h = su @ v
            v -= h * u
            sv -= h * su
        n2 = v @ sv
        if n2 <= (1e-10 * max(norm0, 1e-300)) ** 2:
            warnings.warn("rank-deficient augmentation basis: vector pruned", stacklevel=2)
            continue
        n = np.sqrt(n2)
        basis.append(v / n)
        s_basis.append(sv / n)
    if not basis:
        return None, None
    return np.column_stack(basis), np.column_stack(s_basis)


def bdd_solve(
    s_apply,
    m_apply,
    coarse: CoarseProblem,
    b: np.ndarray,
    tol: float,
    max_iters: int | None = None,
    augmentation: RitzStore | None = None,
    collect_basis: bool = True,
):
    """Projected preconditioned conjugate gradient on ``S_A v = b``.

    The initial guess solves the (possibly augmented) coarse problem and all
    search directions are kept S-orthogonal to the deflation space, so the
    coarse residual stays zero throughout. Terminates on
    ``||b - S v|| <= tol * ||b||``.
    """
    n = len(b)
    max_iters = n if max_iters is None else max_iters
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n), KrylovReport(0, [0.0], 0.0)
    u_defl, su_defl = _prepare_deflation(coarse, augmentation, s_apply)

    def coarse_solve(x):
        y = np.zeros(n)
        if coarse.size:
            y += coarse.g @ coarse.solve(coarse.g.T @ x)
        if u_defl is not None:
            y += u_defl @ (u_defl.T @ x)
        return y

    def project(z):
        if coarse.size:
            z = z - coarse.g @ coarse.solve(coarse.sg.T @ z)
        if u_defl is not None:
            z = z - u_defl @ (su_defl.T @ z)
        return z

    v = coarse_solve(b)
    r = b - s_apply(v)
    residuals = [float(np.linalg.norm(r))]
    alphas, betas, rzs = [], [], []
    basis = []
    rz_old = None
    p = None
    it = 0
    while residuals[-1] > tol * norm_b:
        if it >= max_iters:
            report = KrylovReport(it, residuals, residuals[-1] / norm_b, alphas, betas, rzs)
            raise KrylovError(f"projected CG exceeded {max_iters} iterations", report=report)
        z = project(m_apply(r))
        rz = float(r @ z)
        if rz <= 0.0:
            report = KrylovReport(it, residuals, residuals[-1] / norm_b, alphas, betas, rzs)
            raise KrylovError("preconditioner breakdown: nonpositive r.z", report=report)
        if collect_basis:
            basis.append(z / np.sqrt(rz))
        if p is None:
            p = z.copy()
        else:
            beta = rz / rz_old
            betas.append(beta)
            p = z + beta * p
        sp_vec = s_apply(p)
        psp = float(p @ sp_vec)
        if psp <= 0.0:
            report = KrylovReport(it, residuals, residuals[-1] / norm_b, alphas, betas, rzs)
            raise KrylovError("operator breakdown: nonpositive p.S.p", report=report)
        alpha = rz / psp
        alphas.append(alpha)
        rzs.append(rz)
        v = v + alpha * p
        r = r - alpha * sp_vec
        rz_old = rz
        residuals.append(float(np.linalg.norm(r)))
        it += 1
    next_offdiag = 0.0
    if it > 0:
        z = project(m_apply(r))
        rz_final = max(float(r @ z), 0.0)
        rzs.append(rz_final)
        next_offdiag = np.sqrt(rz_final / rzs[-2]) / alphas[-1]
    report = KrylovReport(
        iterations=it,
        residuals=residuals,
        relative_residual=residuals[-1] / norm_b,
        lanczos_alpha=alphas,
        lanczos_beta=betas,
        lanczos_rz=rzs,
        basis=np.column_stack(basis) if (collect_basis and basis) else None,
        next_offdiag=next_offdiag,
    )
    return v, report


def srks_extract(report: KrylovReport, theta: float):
    """Ritz pairs of the preconditioned projected operator from CG coefficients.

    Keeps a pair when its Lanczos residual estimate is below ``theta`` times
    the Ritz value. Returns ``(values, vectors)``; empty selection is valid.
    """
    k = report.iterations
    empty = np.zeros(0), None
    if k == 0 or theta <= 0.0 or report.basis is None:
        return empty
    t = np.zeros((k, k))
    for i in range(k):
        t[i, i] = 1.0 / report.lanczos_alpha[i]
        if i > 0:
            t[i, i] += report.lanczos_beta[i - 1] / report.lanczos_alpha[i - 1]
            off = np.sqrt(report.lanczos_beta[i - 1]) / report.lanczos_alpha[i - 1]
            t[i, i - 1] = t[i - 1, i] = off
    vals, y = np.linalg.eigh(t)
    resid = report.next_offdiag * np.abs(y[k - 1, :])
    keep = resid <= theta * np.abs(vals)
    if not np.any(keep):
        return empty
    vectors = report.basis @ y[:, keep]
    return vals[keep], vectors


def srks_augment(s_apply, m_apply, coarse, b, tol, store: RitzStore, max_iters=None):
    """BDD solve deflated by the recycled Ritz store."""
    return bdd_solve(s_apply, m_apply, coarse, b, tol, max_iters=max_iters, augmentation=store)


def gmres(apply_op, b, tol, max_iters=None, x0=None, stagnation_window=50):
    """Full-orthogonalization GMRES (no restart) with stagnation detection."""
    n = len(b)
    max_iters = n if max_iters is None else min(max_iters, 10 * n)
    x0 = np.zeros(n) if x0 is None else x0
    r0 = b - apply_op(x0) if np.any(x0) else b.copy()
    norm_b = float(np.linalg.norm(b))
    beta = float(np.linalg.norm(r0))
    residuals = [beta]
    if norm_b == 0.0 or beta <= tol * max(norm_b, 1e-300):
        return x0, KrylovReport(0, residuals, 0.0 if norm_b == 0 else beta / norm_b)
    v = [r0 / beta]
    h = np.zeros((max_iters + 1, max_iters))
    cs, sn = np.zeros(max_iters), np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    g[0] = beta
    k = 0
    for k in range(max_iters):
        w = apply_op(v[k])
        for i in range(k + 1):
            h[i, k] = v[i] @ w
            w -= h[i, k] * v[i]
        h[k + 1, k] = np.linalg.norm(w)
        if h[k + 1, k] > 1e-300:
            v.append(w / h[k + 1, k])
        else:
            v.append(np.zeros(n))
        for i in range(k):
            tmp = cs[i] * h[i, k] + sn[i] * h[i + 1, k]
            h[i + 1, k] = -sn[i] * h[i, k] + cs[i] * h[i + 1, k]
            h[i, k] = tmp
        denom = np.hypot(h[k, k], h[k + 1, k])
        cs[k], sn[k] = h[k, k] / denom, h[k + 1, k] / denom
        h[k, k] = denom
        h[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        residuals.append(abs(g[k + 1]))
        if residuals[-1] <= tol * norm_b:
            k += 1
            break
        if len(residuals) > stagnation_window and residuals[-1] >= residuals[
            -1 - stagnation_window
        ] * (1.0 - 1e-12):
            report = KrylovReport(k + 1, residuals, residuals[-1] / norm_b)
            raise KrylovError(
                f"Krylov stagnation: no residual decrease over {stagnation_window} iterations",
                report=report,
            )
    else:
        k = max_iters
    if residuals[-1] > tol * norm_b:
        report = KrylovReport(k, residuals, residuals[-1] / norm_b)
        raise KrylovError(f"GMRES exceeded {max_iters} iterations", report=report)
    y = sla.solve_triangular(h[:k, :k], g[:k])
    x = x0 + np.column_stack(v[:k]) @ y
    return x, KrylovReport(k, residuals, residuals[-1] / norm_b)


class _Stacker:
    """Pack/unpack concatenated per-subdomain boundary vectors."""

    def __init__(self, sizes):
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def total(self):
        return int(self.offsets[-1])

    def split(self, x):
        return [x[self.offsets[s]: self.offsets[s + 1]] for s in range(len(self.offsets) - 1)]

    def join(self, parts):
        return np.concatenate(parts) if parts else np.zeros(0)


def _exchange(topology, impedances, weights, u_b_list, lam_list):
    """Assembly lines of the stationary exchange: averaged traces, balanced
    remainder of the reactions, recombined into the mixed unknown."""
    ubar_a = topology.assemble_weighted(u_b_list, weights)
    lam_a = topology.assemble(lam_list)
    out = []
    for s, imp in enumerate(impedances):
        amap = topology.a_maps[s]
        lam_bar = lam_list[s] - weights[s] * lam_a[amap]
        out.append(imp.apply(ubar_a[amap]) + lam_bar)
    return out


def feti2lm_solve(
    facts,
    bposes,
    impedances,
    topology: InterfaceTopology,
    local_rhs,
    tol: float,
    max_iters: int | None = None,
    weights=None,
    x0=None,
    stagnation_window: int = 50,
):
    """Mono-scale Krylov solver on the mixed interface unknown.

    Solves the fixed point of the Robin exchange map: local Robin solves of
    ``(K + t^T Q t) x = rhs + t^T mu`` followed by the averaged-trace /
    balanced-reaction exchange. With the exact-complement impedance on a
    chain the exchange operator is a nilpotent perturbation of the identity,
    which is what makes the iteration count collapse to the number of
    interfaces.
    """
    n_sub = topology.n_subdomains
    weights = topology.equal_weights() if weights is None else weights
    stack = _Stacker([len(topology.a_maps[s]) for s in range(n_sub)])

    def half_sweep(mu_list, with_rhs):
        u_b = []
        for s in range(n_sub):
            rhs = np.zeros(facts[s].n_free)
            if with_rhs:
                rhs += local_rhs[s]
            rhs[bposes[s]] += mu_list[s]
            u_b.append(facts[s].solve(rhs)[bposes[s]])
        lam = [mu_list[s] - impedances[s].apply(u_b[s]) for s in range(n_sub)]
        return u_b, _exchange(topology, impedances, weights, u_b, lam)

    zero = [np.zeros(len(topology.a_maps[s])) for s in range(n_sub)]
    _, c = half_sweep(zero, with_rhs=True)
    c_vec = stack.join(c)

    def apply_op(x):
        mu_list = stack.split(x)
        _, phi = half_sweep(mu_list, with_rhs=False)
        return x - stack.join(phi)

    mu_vec, report = gmres(
        apply_op, c_vec, tol, max_iters=max_iters, x0=x0,
        stagnation_window=stagnation_window,
    )
    mu_list = stack.split(mu_vec)
    u_b, _ = half_sweep(mu_list, with_rhs=True)
    return mu_list, u_b, report


def robin_robin_stationary(
    solve_local,
    impedances,
    topology: InterfaceTopology,
    mu0=None,
    weights=None,
    max_iters: int = 50,
    tol: float = 1e-10,
    scale: float = 1.0,
):
    """Stationary Robin exchange iteration (demonstration/verification path).

    ``solve_local(s, mu_s)`` returns ``(u_b, lam_b)`` for subdomain ``s``.
    Iterates the exchange until traces are single-valued and reactions are
    balanced (both below ``tol * scale``); raises on a 10x jump growth.
    """
    from .errors import MixddError

    n_sub = topology.n_subdomains
    weights = [w.copy() for w in (weights or topology.equal_weights())]
    mu = [m.copy() for m in mu0] if mu0 is not None else [
        np.zeros(len(topology.a_maps[s])) for s in range(n_sub)
    ]
    history = []
    jump0 = None
    for it in range(1, max_iters + 1):
        u_b, lam = [], []
        for s in range(n_sub):
            ub_s, lam_s = solve_local(s, mu[s])
            u_b.append(ub_s)
            lam.append(lam_s)
        jn = topology.jump_norm(u_b)
        imb = float(np.linalg.norm(topology.assemble(lam)))
        history.append({"iteration": it, "jump": jn, "imbalance": imb,
                        "u_b": [u.copy() for u in u_b]})
        if jn <= tol * scale and imb <= tol * scale:
            return history
        if jump0 is None:
            jump0 = jn
        elif jump0 > 0 and jn > 10.0 * jump0:
            raise MixddError(f"stationary Robin iteration diverging: jump {jn:.3e}")
        mu = _exchange(topology, impedances, weights, u_b, lam)
    return history


def recover_fields(dv, b_m, b_p, schurs, impedances, facts, bposes, topology):
    """Per-subdomain increments recovered from the interface solution.

    Returns ``(dmu, du, du_b, dlam)`` with ``dlam = dmu - Q du_b`` exact; the
    trace update equals the continuous interface increment, and the reactions
    are balanced up to the Krylov residual.
    """
    dmu, du, du_b, dlam = [], [], [], []
    for s in range(topology.n_subdomains):
        advs = dv[topology.a_maps[s]]
        dmu_s = schurs[s] @ advs + impedances[s].apply(advs) + b_p[s]
        rhs = np.zeros(facts[s].n_free)
        rhs[bposes[s]] = dmu_s - b_p[s]
        du_s = facts[s].solve(rhs)
        du_b_s = du_s[bposes[s]]
        dmu.append(dmu_s)
        du.append(du_s)
        du_b.append(du_b_s)
        dlam.append(dmu_s - impedances[s].apply(du_b_s))
    return dmu, du, du_b, dlam
