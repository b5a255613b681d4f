import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsma.oracles import dual_first_order, random_trace_sdp
from irsma.sdp import (Block, ConicProblem, Constraint, Objective, dump_problem, embed_problem,
                       from_real_embedding, load_problem, max_eigpair, rank1_extract, solve, to_real_embedding)

FROZEN = json.loads((Path(__file__).parent / "data" / "sdp_dual_oracle.json").read_text())


def eig_program(C, hermitian=False):
    n = C.shape[0]
    return ConicProblem([Block(n, hermitian)], 0, Objective({0: C}), [Constraint({0: np.eye(n)}, {}, "==", 1.0)])


def maxcut_program(C):
    n = C.shape[0]
    cons = [Constraint({0: np.diag(np.eye(n)[i])}, {}, "==", 1.0) for i in range(n)]
    return ConicProblem([Block(n)], 0, Objective({0: C}), cons)


def test_eigenvalue_program_diag():
    sol = solve(eig_program(np.diag([1.0, 2.0])))
    assert sol.optimal
    assert sol.objective_value == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(sol.blocks[0], np.diag([0.0, 1.0]), atol=1e-6)
    assert sol.kkt_residual <= 1e-6


def test_unit_diagonal_program_all_ones():
    sol = solve(maxcut_program(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert sol.optimal
    assert sol.objective_value == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(sol.blocks[0], np.ones((2, 2)), atol=1e-5)


def test_hermitian_eigenvalue_programs():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        C = 0.5 * (a + a.conj().T)
        sol = solve(eig_program(C, True))
        assert sol.optimal
        assert sol.objective_value == pytest.approx(np.linalg.eigvalsh(C)[-1], abs=1e-6)
        assert sol.kkt_residual <= 1e-6


def test_lp_with_scalars():
    # max x0 + 2 x1 s.t. x0 + x1 <= 1, x >= 0 (plus a dummy 1x1 block)
    prob = ConicProblem([Block(1)], 2, Objective({}, {0: 1.0, 1: 2.0}),
                        [Constraint({}, {0: 1.0, 1: 1.0}, "<=", 1.0), Constraint({0: np.eye(1)}, {}, "==", 1.0)])
    sol = solve(prob)
    assert sol.objective_value == pytest.approx(2.0, abs=1e-7)
    np.testing.assert_allclose(sol.scalars, [0.0, 1.0], atol=1e-6)


def test_free_scalar():
    prob = ConicProblem([Block(1)], 1, Objective({}, {0: -1.0}),
                        [Constraint({}, {0: 1.0}, ">=", -3.0), Constraint({0: np.eye(1)}, {}, "==", 1.0)],
                        free_scalars=(0,))
    sol = solve(prob)
    assert sol.objective_value == pytest.approx(3.0, abs=1e-6)


def test_frozen_dual_oracle_values():
    rng = np.random.default_rng(FROZEN["seed"])
    worst_rel, worst_kkt = 0.0, 0.0
    for ref in FROZEN["values"]:
        sol = solve(random_trace_sdp(rng))
        assert sol.optimal
        worst_rel = max(worst_rel, abs(sol.objective_value - ref) / max(1.0, abs(ref)))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    assert worst_rel <= 1e-4
    assert worst_kkt <= 1e-6


def test_live_dual_oracle_small():
    rng = np.random.default_rng(101)
    for _ in range(5):
        prob = random_trace_sdp(rng, max_dim=5)
        assert solve(prob).objective_value == pytest.approx(dual_first_order(prob), rel=1e-4, abs=1e-4)


def test_optimal_solution_feasible_and_psd():
    rng = np.random.default_rng(5)
    for _ in range(10):
        prob = random_trace_sdp(rng, max_dim=8)
        sol = solve(prob)
        obj, viol = prob.evaluate(sol.blocks, sol.scalars)
        assert obj == pytest.approx(sol.objective_value, abs=1e-7)
        assert np.max(viol) <= 1e-6
        for X in sol.blocks:
            assert np.linalg.eigvalsh(X)[0] >= -1e-8 * max(1.0, np.real(np.trace(X)))


def test_weak_duality_along_iterates():
    prob = random_trace_sdp(np.random.default_rng(8), max_dim=6)
    sol = solve(prob, record_trace=True)
    assert sol.trace
    for row in sol.trace:
        # iterates of the embedding are infeasible; net of residuals the gap is complementarity
        assert row["dual"] - row["primal"] - row["residual_term"] >= -1e-9 * max(1.0, abs(row["dual"]))
    last = sol.trace[-1]
    assert last["primal"] <= last["dual"] + 1e-6 * max(1.0, abs(last["dual"]))


def test_row_scaling_invariance():
    prob = random_trace_sdp(np.random.default_rng(9), max_dim=6)
    base = solve(prob).objective_value
    scaled = [Constraint({j: 37.0 * a for j, a in c.blocks.items()}, {}, c.relation, 37.0 * c.bound)
              if c.relation == "==" else c for c in prob.constraints]
    again = solve(ConicProblem(prob.blocks, 0, prob.objective, scaled)).objective_value
    assert again == pytest.approx(base, abs=1e-7)


def test_infeasible_detected():
    prob = ConicProblem([Block(2)], 0, Objective({0: np.eye(2)}),
                        [Constraint({0: np.eye(2)}, {}, "==", 1.0), Constraint({0: np.eye(2)}, {}, ">=", 2.0)])
    sol = solve(prob)
    assert sol.status == "infeasible"
    assert sol.certificate_residual <= 1e-6


def test_unbounded_detected():
    prob = ConicProblem([Block(2)], 0, Objective({0: np.eye(2)}), [Constraint({0: np.diag([1.0, -1.0])}, {}, "==", 0.0)])
    assert solve(prob).status == "unbounded"


def test_deterministic():
    prob = random_trace_sdp(np.random.default_rng(10), max_dim=6)
    a, b = solve(prob), solve(prob)
    assert a.objective_value == b.objective_value
    assert np.array_equal(a.blocks[0], b.blocks[0])


def test_problem_validation():
    with pytest.raises(ValueError):
        ConicProblem([Block(2)], 0, Objective({0: np.eye(3)}), [])
    with pytest.raises(ValueError):
        ConicProblem([Block(2)], 0, Objective({0: 1j * np.eye(2)}), [])
    with pytest.raises(ValueError):
        ConicProblem([Block(2)], 0, Objective(), [Constraint({}, {}, "<>", 0.0)])
    with pytest.raises(ValueError):
        ConicProblem([Block(2)], 1, Objective({}, {3: 1.0}), [])


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-3, 3), t=st.floats(-3, 3))
def test_hyperbolic_block_encoding(x, t):
    psd = np.linalg.eigvalsh(np.array([[x, 1.0], [1.0, t]]))[0] >= 0
    assert psd == (x >= 0 and t >= 0 and x * t >= 1) or abs(x * t - 1) < 1e-9


def test_hyperbolic_block_encoding_grid():
    g = np.linspace(-2, 4, 61)
    for x in g:
        for t in g:
            psd = np.linalg.eigvalsh(np.array([[x, 1.0], [1.0, t]]))[0] >= -1e-12
            assert psd == (x >= 0 and t >= 0 and x * t >= 1 - 1e-12)


def test_hyperbolic_block_in_solver():
    # min x s.t. [[x,1],[1,t]] psd, t <= 4 -> x = 1/4
    e11, e22, e12 = np.diag([1.0, 0]), np.diag([0, 1.0]), np.array([[0, 0.5], [0.5, 0]])
    prob = ConicProblem([Block(2)], 0, Objective({0: -e11}),
                        [Constraint({0: e12}, {}, "==", 1.0), Constraint({0: e22}, {}, "<=", 4.0)])
    assert solve(prob).objective_value == pytest.approx(-0.25, abs=1e-7)


def test_embedding_roundtrip_and_equivalence():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    H = a @ a.conj().T
    np.testing.assert_allclose(from_real_embedding(to_real_embedding(H)), H)
    prob = eig_program(0.5 * (a + a.conj().T), True)
    assert solve(embed_problem(prob)).objective_value == pytest.approx(solve(prob).objective_value, abs=1e-6)


def test_dump_load_roundtrip():
    prob = random_trace_sdp(np.random.default_rng(12), max_dim=4)
    text = dump_problem(prob)
    for line in text.splitlines():
        tok = line.split()
        if tok[0].isdigit():
            assert len(tok) == 5
    again = load_problem(text)
    assert solve(again).objective_value == pytest.approx(solve(prob).objective_value, abs=1e-6)


def test_max_eigpair_examples():
    lam, v = max_eigpair(np.eye(3))
    assert lam == pytest.approx(1.0)
    np.testing.assert_allclose(v, [1, 0, 0])
    lam, v = max_eigpair(np.diag([1.0, 5.0, 2.0]))
    assert lam == pytest.approx(5.0)
    np.testing.assert_allclose(v, [0, 1, 0])


def test_max_eigpair_against_power_iteration():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    M = a @ a.conj().T
    lam, v = max_eigpair(M)
    x = np.ones(8, dtype=complex)
    for _ in range(5000):
        x = M @ x
        x /= np.linalg.norm(x)
    ref = float(np.real(np.conj(x) @ M @ x))
    assert lam == pytest.approx(ref, rel=1e-8)
    assert abs(abs(np.vdot(x, v)) - 1) < 1e-8
    assert np.linalg.norm(M @ v - lam * v) <= 1e-10 * np.linalg.norm(M)
    lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
    assert np.real(lead) >= 0


def test_rank1_extract_cases():
    rng = np.random.default_rng(14)
    w = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    u, res = rank1_extract(np.outer(w, w.conj()))
    assert res < 1e-10
    assert abs(abs(np.vdot(u, w)) - np.linalg.norm(w) ** 2) < 1e-8
    _, res = rank1_extract(np.eye(2))
    assert res == pytest.approx(1 / np.sqrt(2))
    u, res = rank1_extract(np.zeros((3, 3)))
    assert res == 0.0 and not np.any(u)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    U = q @ np.diag([1.0, 1e-3, 0, 0]) @ q.T
    assert rank1_extract(U)[1] <= 0.05
