"""Slow reference solvers used to cross-check the fast paths.

Nothing here shares code with the interior-point solver or the closed-form
power allocations; the point is an independent route to the same numbers.
"""

from __future__ import annotations

import numpy as np

from .sdp import Block, ConicProblem, Constraint, Objective

__all__ = ["dual_first_order", "random_trace_sdp"]


def _as_dense(prob: ConicProblem, terms: dict):
    out = []
    for j, blk in enumerate(prob.blocks):
        dt = complex if blk.hermitian else float
        a = np.asarray(terms.get(j, np.zeros((blk.dim, blk.dim))), dtype=dt)
        out.append(0.5 * (a + a.conj().T))
    return out


def dual_first_order(prob: ConicProblem, trace_row: int = 0, tol: float = 1e-7,
                     max_iter: int = 200_000) -> float:
    """Optimal value of a trace-bounded SDP from its Lagrange dual.

    ``prob`` must have no scalar variables, and constraint ``trace_row``
    must read ``sum_j Tr(X_j) == t`` with ``t > 0``.  The remaining
    constraints are dualized, giving

        g(y) = t * lambda_max(C - sum_i y_i A_i) + b^T y,

    with ``y >= 0`` on ``<=`` rows and ``y <= 0`` on ``>=`` rows.  ``g`` is
    minimized by projected FISTA on its log-sum-exp smoothing with a
    decreasing smoothing parameter.  Returns ``min g`` found, an upper bound
    on the primal optimum that is tight at convergence.
    """
    if prob.num_scalars:
        raise ValueError("oracle handles block-only problems")
    tr = prob.constraints[trace_row]
    for j, blk in enumerate(prob.blocks):
        a = np.asarray(tr.blocks.get(j, 0.0))
        if not np.allclose(a, np.eye(blk.dim)):
            raise ValueError("trace row must have identity coefficients on every block")
    if tr.relation != "==" or tr.bound <= 0:
        raise ValueError("trace row must be an equality with positive bound")
    t = float(tr.bound)

    rows = [c for i, c in enumerate(prob.constraints) if i != trace_row]
    C = _as_dense(prob, prob.objective.blocks)
    A = [_as_dense(prob, c.blocks) for c in rows]
    b = np.array([c.bound for c in rows], dtype=float)
    lo = np.array([0.0 if c.relation == "<=" else -np.inf for c in rows])
    hi = np.array([0.0 if c.relation == ">=" else np.inf for c in rows])
    m = len(rows)

    def shifted(y):
        return [Cj - sum(y[i] * A[i][j] for i in range(m)) for j, Cj in enumerate(C)]

    def g_exact(y):
        return t * max(np.linalg.eigvalsh(M)[-1] for M in shifted(y)) + float(b @ y)

    def smooth(y, mu):
        eig = [np.linalg.eigh(M) for M in shifted(y)]
        top = max(w[-1] for w, _ in eig)
        ex = [np.exp((w - top) / mu) for w, _ in eig]
        z = sum(e.sum() for e in ex)
        val = t * (top + mu * np.log(z)) + float(b @ y)
        grad = b.copy()
        for j, ((w, V), e) in enumerate(zip(eig, ex)):
            Xj = (V * (e / z)) @ V.conj().T
            for i in range(m):
                grad[i] -= t * float(np.real(np.vdot(A[i][j], Xj)))
        return val, grad

    if m == 0:
        return g_exact(np.zeros(0)) + prob.objective.constant

    scale = max(1.0, max(np.abs(np.linalg.eigvalsh(Cj)).max() for Cj in C))
    n_eig = sum(blk.dim for blk in prob.blocks)
    mu_final = tol * scale / max(1.0, np.log(n_eig))
    y = np.clip(np.zeros(m), lo, hi)
    best = g_exact(y)
    mu = scale
    L = 1.0 / mu
    it = 0
    while True:
        # FISTA with backtracking at fixed smoothing mu
        z, y_prev, tk = y.copy(), y.copy(), 1.0
        f_prev = np.inf
        for _ in range(20000):
            it += 1
            fz, gz = smooth(z, mu)
            while True:
                y_new = np.clip(z - gz / L, lo, hi)
                f_new, _ = smooth(y_new, mu)
                d = y_new - z
                if f_new <= fz + gz @ d + 0.5 * L * (d @ d) + 1e-15 * abs(fz):
                    break
                L *= 2.0
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            if f_new > f_prev:
                # adaptive restart
                z, tk = y_prev.copy(), 1.0
                f_prev = np.inf
                continue
            z = y_new + ((tk - 1.0) / t_next) * (y_new - y_prev)
            y_prev, tk = y_new, t_next
            if np.linalg.norm(d) * L <= 0.1 * mu:
                f_prev = f_new
                break
            f_prev = f_new
            L *= 0.9
        y = y_prev
        best = min(best, g_exact(y))
        if mu <= mu_final or it >= max_iter:
            break
        mu = max(mu * 0.2, mu_final)
        L *= 5.0
    return best + prob.objective.constant


def random_trace_sdp(rng: np.random.Generator, max_dim: int = 12, max_blocks: int = 2,
                     max_rows: int = 3) -> ConicProblem:
    """Random strictly feasible SDP with a unit total-trace constraint.

    Extra rows are ``<=``, ``>=`` or ``==`` constraints whose bounds are set
    from the value at the scaled identity, so the identity stays interior.
    """
    nb = int(rng.integers(1, max_blocks + 1))
    dims = [int(rng.integers(2, max_dim + 1)) for _ in range(nb)]
    herm = [bool(rng.integers(2)) for _ in range(nb)]
    blocks = [Block(d, h) for d, h in zip(dims, herm)]

    def rmat(d, h):
        a = rng.standard_normal((d, d))
        if h:
            a = a + 1j * rng.standard_normal((d, d))
        return 0.5 * (a + a.conj().T)

    obj = Objective({j: rmat(d, h) for j, (d, h) in enumerate(zip(dims, herm))})
    cons = [Constraint({j: np.eye(d) for j, d in enumerate(dims)}, {}, "==", 1.0)]
    total = sum(dims)
    for _ in range(int(rng.integers(0, max_rows + 1))):
        rel = ("<=", ">=", "==")[int(rng.integers(3))]
        co = {j: rmat(d, h) for j, (d, h) in enumerate(zip(dims, herm))}
        at_center = sum(float(np.real(np.trace(co[j]))) / total for j in co)
        shift = {"<=": 0.3, ">=": -0.3, "==": 0.0}[rel]
        cons.append(Constraint(co, {}, rel, at_center + shift))
    return ConicProblem(blocks, 0, obj, cons)
