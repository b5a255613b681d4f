"""Dense primal-dual interior-point solver for small block SDPs.

Problems are stated in maximization form over a product of PSD blocks (real
symmetric or complex Hermitian) and nonnegative/free scalars, subject to
linear ``<=``, ``==`` and ``>=`` constraints.  Internally they are rewritten
in standard minimization form and solved with a homogeneous self-dual
embedding, HKM search directions and a Mehrotra predictor-corrector.

Infeasibility is read off the embedding: when ``tau / kappa`` collapses the
iterate carries a Farkas certificate, which is checked explicitly before
``status="infeasible"`` is reported.
"""

from __future__ import annotations

import io
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "Block",
    "Constraint",
    "Objective",
    "ConicProblem",
    "ConicSolution",
    "solve",
    "max_eigpair",
    "rank1_extract",
    "to_real_embedding",
    "from_real_embedding",
    "embed_problem",
    "dump_problem",
    "load_problem",
]

_RELATIONS = ("<=", "==", ">=")


@dataclass(frozen=True)
class Block:
    dim: int
    hermitian: bool = False


@dataclass
class Constraint:
    """``sum_j <A_j, X_j> + sum_s a_s x_s  (relation)  bound``."""

    blocks: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    relation: str = "=="
    bound: float = 0.0


@dataclass
class Objective:
    blocks: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    constant: float = 0.0


@dataclass
class ConicProblem:
    """Maximize a linear objective over PSD blocks and scalars.

    Scalars are nonnegative unless listed in ``free_scalars``.
    """

    blocks: list
    num_scalars: int
    objective: Objective
    constraints: list
    free_scalars: tuple = ()

    def __post_init__(self):
        for con in self.constraints:
            if con.relation not in _RELATIONS:
                raise ValueError(f"unknown relation {con.relation!r}")
            self._check_terms(con.blocks, con.scalars)
        self._check_terms(self.objective.blocks, self.objective.scalars)

    def _check_terms(self, blocks, scalars):
        for j, mat in blocks.items():
            spec = self.blocks[j]
            mat = np.asarray(mat)
            if mat.shape != (spec.dim, spec.dim):
                raise ValueError(f"coefficient for block {j} has shape {mat.shape}, expected {(spec.dim, spec.dim)}")
            if not spec.hermitian and np.iscomplexobj(mat) and np.any(mat.imag):
                raise ValueError(f"complex coefficient on real block {j}")
        for s in scalars:
            if not 0 <= s < self.num_scalars:
                raise ValueError(f"scalar index {s} out of range")

    def evaluate(self, blocks, scalars) -> tuple[float, np.ndarray]:
        """Objective value and signed constraint violations at a point.

        Violations are positive when a constraint is broken.
        """
        def lin(terms_b, terms_s):
            val = sum(float(np.real(np.sum(np.conj(np.asarray(a)) * blocks[j]))) for j, a in terms_b.items())
            return val + sum(a * scalars[s] for s, a in terms_s.items())

        obj = lin(self.objective.blocks, self.objective.scalars) + self.objective.constant
        viol = []
        for con in self.constraints:
            lhs = lin(con.blocks, con.scalars)
            if con.relation == "<=":
                viol.append(lhs - con.bound)
            elif con.relation == ">=":
                viol.append(con.bound - lhs)
            else:
                viol.append(abs(lhs - con.bound))
        return obj, np.array(viol)


@dataclass
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | max_iter
    blocks: list
    scalars: np.ndarray
    objective_value: float
    dual_values: np.ndarray
    kkt_residual: float
    iterations: int
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    certificate_residual: float = np.nan
    trace: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _herm(a):
    return 0.5 * (a + np.swapaxes(a.conj(), -1, -2))


class _StandardForm:
    """``min <c, x>  s.t.  A x = b,  x in K`` with K = PSD groups x R^l_+."""

    def __init__(self, prob: ConicProblem):
        self.prob = prob
        groups = OrderedDict()
        for j, blk in enumerate(prob.blocks):
            groups.setdefault((blk.dim, blk.hermitian), []).append(j)
        self.groups = list(groups.items())
        self.block_pos = {}
        for g, (_, members) in enumerate(self.groups):
            for pos, j in enumerate(members):
                self.block_pos[j] = (g, pos)

        # LP columns: scalars (free ones split) then inequality slacks
        col = 0
        self.scalar_cols = []
        for s in range(prob.num_scalars):
            if s in prob.free_scalars:
                self.scalar_cols.append((col, col + 1))
                col += 2
            else:
                self.scalar_cols.append((col, None))
                col += 1
        slack_of = {}
        for i, con in enumerate(prob.constraints):
            if con.relation != "==":
                slack_of[i] = col
                col += 1
        self.nlp = col
        m = len(prob.constraints)
        self.m = m

        self.A = []
        self.C = []
        for (dim, herm), members in self.groups:
            dt = complex if herm else float
            A = np.zeros((m, len(members), dim, dim), dtype=dt)
            C = np.zeros((len(members), dim, dim), dtype=dt)
            self.A.append(A)
            self.C.append(C)
        self.A_lp = np.zeros((m, self.nlp))
        self.c_lp = np.zeros(self.nlp)
        self.b = np.array([float(con.bound) for con in prob.constraints])

        for i, con in enumerate(prob.constraints):
            for j, mat in con.blocks.items():
                g, pos = self.block_pos[j]
                self.A[g][i, pos] = _herm(np.asarray(mat, dtype=self.A[g].dtype))
            for s, a in con.scalars.items():
                p, n = self.scalar_cols[s]
                self.A_lp[i, p] += a
                if n is not None:
                    self.A_lp[i, n] -= a
            if i in slack_of:
                self.A_lp[i, slack_of[i]] = 1.0 if con.relation == "<=" else -1.0
        for j, mat in prob.objective.blocks.items():
            g, pos = self.block_pos[j]
            self.C[g][pos] = -_herm(np.asarray(mat, dtype=self.C[g].dtype))
        for s, a in prob.objective.scalars.items():
            p, n = self.scalar_cols[s]
            self.c_lp[p] -= a
            if n is not None:
                self.c_lp[n] += a

        # row and objective scaling
        sq = self.A_lp ** 2
        rown = sq.sum(axis=1)
        for A in self.A:
            rown = rown + np.sum(np.abs(A) ** 2, axis=(1, 2, 3))
        rown = np.sqrt(rown)
        self.zero_rows = rown == 0
        self.row_scale = np.where(self.zero_rows, 1.0, rown)
        for A in self.A:
            A /= self.row_scale[:, None, None, None]
        self.A_lp /= self.row_scale[:, None]
        self.b = self.b / self.row_scale
        cn = np.sqrt(sum(np.sum(np.abs(C) ** 2) for C in self.C) + np.sum(self.c_lp ** 2))
        self.c_scale = cn if cn > 0 else 1.0
        self.C = [C / self.c_scale for C in self.C]
        self.c_lp = self.c_lp / self.c_scale

        self.nu = sum(dim * len(mem) for (dim, _), mem in self.groups) + self.nlp
        self.Aflat = [A.reshape(m, -1) for A in self.A]

    # vector-space helpers; a point is (list_of_group_arrays, lp_vector)
    def identity(self):
        mats = [np.broadcast_to(np.eye(dim, dtype=C.dtype), C.shape).copy()
                for ((dim, _), _), C in zip(self.groups, self.C)]
        return mats, np.ones(self.nlp)

    def inner(self, x, y) -> float:
        val = float(np.dot(x[1], y[1]))
        for a, b in zip(x[0], y[0]):
            val += float(np.real(np.vdot(a, b)))
        return val

    def apply_A(self, x) -> np.ndarray:
        out = self.A_lp @ x[1]
        for Af, X in zip(self.Aflat, x[0]):
            out = out + np.real(Af.conj() @ X.reshape(-1))
        return out

    def apply_AT(self, y):
        mats = [np.tensordot(y, A, axes=(0, 0)) for A in self.A]
        return mats, self.A_lp.T @ y

    @property
    def c(self):
        return self.C, self.c_lp


def _lin(a, x, b=None, y=None):
    """``a*x + b*y`` on points."""
    if b is None:
        return [a * X for X in x[0]], a * x[1]
    return [a * X + b * Y for X, Y in zip(x[0], y[0])], a * x[1] + b * y[1]


def _norm(x) -> float:
    return float(np.sqrt(np.sum(x[1] ** 2) + sum(np.sum(np.abs(X) ** 2) for X in x[0])))


def _max_step(X, dX) -> float:
    """Largest ``alpha`` keeping ``X + alpha dX`` PSD for a stack of matrices."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(X)
        w = np.maximum(w, 1e-300)
        L = V * np.sqrt(w)[..., None, :]
    Li = np.linalg.inv(L)
    Q = Li @ dX @ np.swapaxes(Li.conj(), -1, -2)
    lam = np.linalg.eigvalsh(_herm(Q))[..., 0]
    neg = lam < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-1.0 / lam[neg]))


def _max_step_lp(x, dx) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve(problem: ConicProblem, tol: float = 1e-8, max_iter: int = 200,
          record_trace: bool = False) -> ConicSolution:
    """Solve ``problem``; deterministic for identical input."""
    sf = _StandardForm(problem)
    m = sf.m
    c = sf.c
    b = sf.b
    bnorm = float(np.linalg.norm(b))
    cnorm = _norm(c)

    def finish(status, x, y, tau, iters, pres, dres, gap, cert, trace):
        xs = _lin(1.0 / tau, x)
        ys = y / tau
        blocks = [None] * len(problem.blocks)
        for g, ((dim, herm), members) in enumerate(sf.groups):
            for pos, j in enumerate(members):
                blocks[j] = _herm(xs[0][g][pos])
        scal = np.zeros(problem.num_scalars)
        for s, (p, n) in enumerate(sf.scalar_cols):
            scal[s] = xs[1][p] - (xs[1][n] if n is not None else 0.0)
        obj = -sf.inner(c, xs) * sf.c_scale + problem.objective.constant
        duals = -ys * sf.c_scale / sf.row_scale
        kkt = max(pres, dres, gap) if status == "optimal" else np.inf
        return ConicSolution(status, blocks, scal, obj, duals, kkt, iters,
                             pres, dres, gap, cert, trace)

    x = sf.identity()
    s = sf.identity()
    y = np.zeros(m)
    tau = kappa = 1.0

    if np.any(sf.zero_rows & (np.abs(b) > 0)):
        return finish("infeasible", x, y, tau, 0, np.inf, np.inf, np.inf, 0.0, [])

    trace = []
    status = "max_iter"
    pres = dres = gap = cert = np.inf
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        Ax = sf.apply_A(x)
        ATy = sf.apply_AT(y)
        cx = sf.inner(c, x)
        by = float(b @ y)
        rp = tau * b - Ax
        rd = _lin(tau, c, -1.0, ATy)
        rd = _lin(1.0, rd, -1.0, s)
        rg = kappa + cx - by
        mu = (sf.inner(x, s) + tau * kappa) / (sf.nu + 1)

        pres = float(np.linalg.norm(rp)) / tau / (1.0 + bnorm)
        dres = _norm(rd) / tau / (1.0 + cnorm)
        pobj, dobj = cx / tau, by / tau
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if record_trace:
            scale = sf.c_scale
            # dual - primal = scale * (<x,s> + <x,rd> - <rp,y>) / tau^2 holds exactly,
            # so the gap net of the residual terms is nonnegative at every iterate
            resid_term = (sf.inner(x, rd) - float(rp @ y)) / tau ** 2 * scale
            trace.append(dict(primal=-pobj * scale, dual=-dobj * scale, residual_term=resid_term,
                              pres=pres, dres=dres, mu=mu, tau=tau, kappa=kappa))
        if pres <= tol and dres <= tol and gap <= tol:
            status = "optimal"
            break
        score = max(pres, dres, gap)
        if best is None or score < best[0]:
            best = (score, x, y, tau, it, pres, dres, gap)
        elif it - best[4] > 25:
            break  # stalled
        if tau < kappa:
            ATy_s = _lin(1.0, ATy, 1.0, s)
            if by > 0:
                cert = _norm(ATy_s) / by
                if cert <= tol:
                    status = "infeasible"
                    break
            if cx < 0:
                cert_d = float(np.linalg.norm(Ax)) / (-cx)
                if cert_d <= tol:
                    cert = cert_d
                    status = "unbounded"
                    break
        if mu < 1e-300:
            break

        # HKM scaling
        Sinv = [np.linalg.inv(S) for S in s[0]]
        d_lp = x[1] / s[1]

        def W(v):
            mats = [_herm(X @ V @ Si) for X, V, Si in zip(x[0], v[0], Sinv)]
            return mats, d_lp * v[1]

        M = (sf.A_lp * d_lp) @ sf.A_lp.T
        for A, Af, X, Si in zip(sf.A, sf.Aflat, x[0], Sinv):
            T = X[None] @ A @ Si[None]
            M += np.real(Af @ np.swapaxes(T, -1, -2).reshape(m, -1).T)
        M = 0.5 * (M + M.T)
        try:
            fac = sla.cho_factor(M, check_finite=False)
            msolve = lambda r: sla.cho_solve(fac, r, check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            reg = 1e-14 * max(1.0, float(np.max(np.abs(np.diag(M)))))
            Mr = M + reg * np.eye(m)
            msolve = lambda r: np.linalg.lstsq(Mr, r, rcond=None)[0]

        Wc = W(c)
        AWc = sf.apply_A(Wc)
        u_c = msolve(AWc)
        v_b = msolve(b)
        dy2 = u_c + v_b
        # -kappa/tau - <c,Wc> + (AWc-b)^T M^{-1}(AWc+b), written as a sum of
        # nonpositive terms to avoid cancellation near the optimum
        r_c = _lin(1.0, c, -1.0, sf.apply_AT(u_c))
        coef = -kappa / tau - sf.inner(r_c, W(r_c)) - float(b @ v_b)

        def direction(eta, Rx, Rtk):
            rdn = _lin(eta, rd)
            Wrd = W(rdn)
            dy1 = msolve(eta * rp - sf.apply_A(Rx) + sf.apply_A(Wrd))
            Rx_W = _lin(1.0, Rx, -1.0, Wrd)
            rhs = -eta * rg - Rtk / tau - sf.inner(c, Rx_W) - float((AWc - b) @ dy1)
            dtau = rhs / coef
            dy = dy1 + dtau * dy2
            ATdy = sf.apply_AT(dy)
            ds = _lin(dtau, c, -1.0, ATdy)
            ds = _lin(1.0, ds, 1.0, rdn)
            dx = _lin(1.0, Rx, -1.0, W(ds))
            # one refinement pass on A dx - b dtau = eta r_p
            err = eta * rp - sf.apply_A(dx) + b * dtau
            corr = msolve(err)
            ATc = sf.apply_AT(corr)
            dy = dy + corr
            ds = _lin(1.0, ds, -1.0, ATc)
            dx = _lin(1.0, dx, 1.0, W(ATc))
            dkappa = (Rtk - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        def step_len(dx, ds, dtau, dkappa):
            a = np.inf
            for X, dX in zip(x[0], dx[0]):
                a = min(a, _max_step(X, dX))
            for S, dS in zip(s[0], ds[0]):
                a = min(a, _max_step(S, dS))
            a = min(a, _max_step_lp(x[1], dx[1]), _max_step_lp(s[1], ds[1]))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        Rx_aff = (_lin(-1.0, x)[0], -x[1])
        dx, dy, ds, dtau, dkappa = direction(1.0, Rx_aff, -tau * kappa)
        a_aff = min(1.0, step_len(dx, ds, dtau, dkappa))
        x_a = _lin(1.0, x, a_aff, dx)
        s_a = _lin(1.0, s, a_aff, ds)
        mu_aff = (sf.inner(x_a, s_a) + (tau + a_aff * dtau) * (kappa + a_aff * dkappa)) / (sf.nu + 1)
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3))

        # corrector
        smu = sigma * mu
        Rx_mats = [smu * Si - X - _herm(dX @ dS @ Si)
                   for X, Si, dX, dS in zip(x[0], Sinv, dx[0], ds[0])]
        Rx_lp = (smu - x[1] * s[1] - dx[1] * ds[1]) / s[1]
        Rtk = smu - tau * kappa - dtau * dkappa
        dx, dy, ds, dtau, dkappa = direction(1.0 - sigma, (Rx_mats, Rx_lp), Rtk)
        alpha = min(1.0, 0.99 * step_len(dx, ds, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 1e-12:
            break

        x = _lin(1.0, x, alpha, dx)
        s = _lin(1.0, s, alpha, ds)
        y = y + alpha * dy
        tau += alpha * dtau
        kappa += alpha * dkappa
        x = ([_herm(X) for X in x[0]], x[1])
        s = ([_herm(S) for S in s[0]], s[1])

    if status == "max_iter" and best is not None:
        _, x, y, tau, _, pres, dres, gap = best
    return finish(status, x, y, tau, it, pres, dres, gap, cert, trace)


def max_eigpair(M: np.ndarray, rel_tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and a unit eigenvector of a Hermitian matrix.

    A degenerate top eigenspace is resolved by projecting the first standard
    basis vector with a nonzero projection onto it.  The returned vector is
    rotated so that its first nonzero entry is real and positive.
    """
    M = _herm(np.asarray(M))
    w, V = np.linalg.eigh(M)
    lam = float(w[-1])
    scale = max(1.0, float(np.max(np.abs(w))))
    top = V[:, w >= lam - rel_tol * scale]
    if top.shape[1] == 1:
        vec = top[:, 0]
    else:
        P = top @ top.conj().T
        col = int(np.argmax(np.linalg.norm(P, axis=0) > 1e-8))
        vec = P[:, col] / np.linalg.norm(P[:, col])
    nz = np.flatnonzero(np.abs(vec) > 1e-12)
    if nz.size:
        lead = vec[nz[0]]
        vec = vec * (np.conj(lead) / abs(lead))
    if not np.iscomplexobj(M):
        vec = np.real(vec)
    return lam, vec


def rank1_extract(U: np.ndarray) -> tuple[np.ndarray, float]:
    """Best rank-one factor ``sqrt(lam_max) e_max`` and ``||U - u u^H||_F / ||U||_F``."""
    U = np.asarray(U)
    fro = float(np.linalg.norm(U))
    if fro == 0.0:
        return np.zeros(U.shape[0], dtype=U.dtype), 0.0
    lam, vec = max_eigpair(U)
    u = np.sqrt(max(lam, 0.0)) * vec
    resid = float(np.linalg.norm(U - np.outer(u, u.conj()))) / fro
    return u, resid


def to_real_embedding(H: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``; ``<A, X>`` maps to half the embedded inner product."""
    H = np.asarray(H)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def from_real_embedding(X: np.ndarray) -> np.ndarray:
    n = X.shape[0] // 2
    a, bb, cc, d = X[:n, :n], X[:n, n:], X[n:, :n], X[n:, n:]
    return 0.5 * ((a + d) + 1j * (cc - bb))


def embed_problem(problem: ConicProblem) -> ConicProblem:
    """Equivalent problem with every Hermitian block replaced by its real embedding."""
    def conv(terms):
        out = {}
        for j, a in terms.items():
            blk = problem.blocks[j]
            out[j] = 0.5 * to_real_embedding(np.asarray(a, dtype=complex)) if blk.hermitian else np.asarray(a, dtype=float)
        return out

    blocks = [Block(2 * b.dim, False) if b.hermitian else b for b in problem.blocks]
    obj = Objective(conv(problem.objective.blocks), dict(problem.objective.scalars), problem.objective.constant)
    cons = [Constraint(conv(c.blocks), dict(c.scalars), c.relation, c.bound) for c in problem.constraints]
    return ConicProblem(blocks, problem.num_scalars, obj, cons, tuple(problem.free_scalars))


def dump_problem(problem: ConicProblem, fh=None) -> str:
    """Text dump of the real-embedded problem.

    Header lines describe blocks and constraint relations; each nonzero
    coefficient is one line ``<row> <block> <i> <j> <value>`` with row 0 the
    objective and the scalars appearing as block ``s`` on the diagonal.
    Only the upper triangle of symmetric coefficients is written.
    """
    emb = embed_problem(problem)
    out = io.StringIO()
    out.write("# irsma conic problem (maximize)\n")
    out.write("blocks " + " ".join(str(b.dim) for b in emb.blocks) + "\n")
    out.write(f"scalars {emb.num_scalars}\n")
    if emb.free_scalars:
        out.write("free " + " ".join(str(s) for s in emb.free_scalars) + "\n")
    out.write(f"constant {emb.objective.constant!r}\n")
    for i, con in enumerate(emb.constraints, start=1):
        out.write(f"constraint {i} {con.relation} {float(con.bound)!r}\n")

    def terms(row, blocks, scalars):
        for j, a in sorted(blocks.items()):
            a = np.asarray(a, dtype=float)
            ii, jj = np.nonzero(np.triu(a))
            for p, q in zip(ii, jj):
                out.write(f"{row} {j} {p} {q} {float(a[p, q])!r}\n")
        for s, v in sorted(scalars.items()):
            if v != 0:
                out.write(f"{row} s {s} {s} {float(v)!r}\n")

    terms(0, emb.objective.blocks, emb.objective.scalars)
    for i, con in enumerate(emb.constraints, start=1):
        terms(i, con.blocks, con.scalars)
    text = out.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def load_problem(text: str) -> ConicProblem:
    """Parse :func:`dump_problem` output back into a (real) problem."""
    dims, nscal, free, const, rels = [], 0, (), 0.0, {}
    entries = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        tok = line.split()
        if tok[0] == "blocks":
            dims = [int(t) for t in tok[1:]]
        elif tok[0] == "scalars":
            nscal = int(tok[1])
        elif tok[0] == "free":
            free = tuple(int(t) for t in tok[1:])
        elif tok[0] == "constant":
            const = float(tok[1])
        elif tok[0] == "constraint":
            rels[int(tok[1])] = (tok[2], float(tok[3]))
        else:
            entries.append(tok)
    nrow = len(rels) + 1
    bl = [dict() for _ in range(nrow)]
    sc = [dict() for _ in range(nrow)]
    for row, blk, p, q, val in entries:
        row, p, q, val = int(row), int(p), int(q), float(val)
        if blk == "s":
            sc[row][p] = val
            continue
        j = int(blk)
        mat = bl[row].setdefault(j, np.zeros((dims[j], dims[j])))
        mat[p, q] = val
        mat[q, p] = val
    blocks = [Block(d) for d in dims]
    obj = Objective(bl[0], sc[0], const)
    cons = [Constraint(bl[i], sc[i], *rels[i]) for i in range(1, nrow)]
    return ConicProblem(blocks, nscal, obj, cons, free)
