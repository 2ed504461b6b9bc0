import numpy as np
import pytest
from numpy.testing import assert_allclose

from netcert import lmi


def arrow_problem():
    b = lmi.LmiBuilder()
    b.add_scalar("t")
    expr = lmi.AffineSym.build(2, [[0, 1], [1, 0]], [("t", np.eye(2), np.eye(2))])
    b.add_constraint(expr, lmi.Sense.POS_SEMI, name="arrow")
    b.minimize({"t": 1.0})
    return b.build()


class TestEval:
    def test_constant_only(self):
        expr = lmi.AffineSym.build(2, [[1.0, 0.5], [0.5, 2.0]])
        assert_allclose(expr.eval({}), [[1.0, 0.5], [0.5, 2.0]])

    def test_sym_term_identity_factors(self):
        expr = lmi.AffineSym.build(2, None, [("P", np.eye(2), np.eye(2))])
        assert_allclose(expr.eval({"P": np.eye(2)}), np.eye(2))

    def test_scalar_broadcast(self):
        expr = lmi.AffineSym.build(2, None, [("a", np.diag([1.0, 2.0]), np.eye(2))])
        assert_allclose(expr.eval({"a": 3.0}), np.diag([3.0, 6.0]))

    def test_affine_in_assignment(self):
        rng = np.random.default_rng(0)
        L1 = rng.standard_normal((3, 2))
        R1 = rng.standard_normal((2, 3))
        L2 = rng.standard_normal((3, 4))
        R2 = rng.standard_normal((4, 3))
        expr = lmi.AffineSym.build(3, None, [("X", L1, R1), ("Y", L2, R2)])
        for _ in range(5):
            v1 = {"X": rng.standard_normal((2, 2)), "Y": rng.standard_normal((4, 4))}
            v2 = {"X": rng.standard_normal((2, 2)), "Y": rng.standard_normal((4, 4))}
            a = rng.uniform()
            mix = {k: a * v1[k] + (1 - a) * v2[k] for k in v1}
            lhs = expr.eval(mix)
            rhs = a * expr.eval(v1) + (1 - a) * expr.eval(v2)
            assert_allclose(lhs, rhs, atol=1e-12)

    def test_missing_variable(self):
        expr = lmi.AffineSym.build(2, None, [("P", np.eye(2), np.eye(2))])
        with pytest.raises(lmi.LmiError):
            expr.eval({})


class TestLowering:
    def test_scalar_bound_block(self):
        b = lmi.LmiBuilder()
        b.add_scalar("t")
        expr = lmi.AffineSym.build(1, [[-1.0]], [("t", np.eye(1), np.eye(1))])
        b.add_constraint(expr, lmi.Sense.POS_SEMI)
        low = lmi.lower_to_sdp(b.build())
        assert low.n_scalars == 1
        assert len(low.blocks) == 1 and low.blocks[0].dim == 1

    def test_pd_variable_scalarization(self):
        b = lmi.LmiBuilder()
        b.add_symmetric("P", 2, lmi.VarSign.PD)
        low = lmi.lower_to_sdp(b.build())
        assert low.n_scalars == 3  # dim(dim+1)/2
        assert len(low.blocks) == 1 and low.blocks[0].dim == 2
        assert len(low.blocks[0].var_index) == 3

    def test_unstructured_problem_counts(self, example1):
        # hand count for the three-state benchmark: P gives 6 scalars,
        # alpha and t one each
        from conftest import make_experiment
        from netcert import analysis, datadriven as dd

        exp = make_experiment(example1, 0.05, seed=0)
        dual = dd.dual_qmi(dd.primal_qmi_lumped(exp.trajectory, exp.lumped_bound))
        b = lmi.LmiBuilder()
        analysis.build_dissipativity_lmi(dual, example1.C, example1.D, None,
                                         gamma_var="t", builder=b)
        b.minimize({"t": 1.0})
        low = lmi.lower_to_sdp(b.build())
        assert low.n_scalars == 6 + 1 + 1
        assert low.slices["P"] == slice(0, 6)

    def test_roundtrip_evaluation_identity(self):
        rng = np.random.default_rng(1)
        b = lmi.LmiBuilder()
        b.add_symmetric("P", 3)
        b.add_scalar("a")
        b.add_rect("M", 2, 3)
        terms = [
            ("P", rng.standard_normal((4, 3)), rng.standard_normal((3, 4))),
            ("a", rng.standard_normal((4, 4)), np.eye(4)),
            ("M", rng.standard_normal((4, 2)), rng.standard_normal((3, 4))),
        ]
        G = rng.standard_normal((4, 4))
        expr = lmi.AffineSym.build(4, G + G.T, terms)
        b.add_constraint(expr, lmi.Sense.POS_SEMI)
        low = lmi.lower_to_sdp(b.build(), equilibrate=False)
        y = rng.standard_normal(low.n_scalars)
        asg = low.assignment_from_y(y)
        F = low.blocks[0].const.copy()
        for local, g in enumerate(low.blocks[0].var_index):
            F += y[g] * low.blocks[0].coeffs[local]
        scale = max(np.abs(expr.constant).max(), 1.0)
        assert_allclose(F * scale, expr.eval(asg), atol=1e-12)
        # and the y <-> assignment maps are mutually inverse
        assert_allclose(low.y_from_assignment(asg), y, atol=1e-14)

    def test_equilibrated_lowering_same_feasibility(self):
        rng = np.random.default_rng(2)
        b = lmi.LmiBuilder()
        b.add_symmetric("P", 2)
        big = 1e6 * np.eye(2)
        expr = lmi.AffineSym.build(
            2, big, [("P", -np.eye(2) * 1e3, np.eye(2))]
        )
        b.add_constraint(expr, lmi.Sense.POS_SEMI)
        prob = b.build()
        low = lmi.lower_to_sdp(prob, equilibrate=True)
        for _ in range(20):
            y = rng.standard_normal(low.n_scalars) * rng.uniform(0.1, 1e4)
            asg = low.assignment_from_y(y)
            direct = np.linalg.eigvalsh(expr.eval(asg)).min() >= 0
            F = low.blocks[0].const.copy()
            for local, g in enumerate(low.blocks[0].var_index):
                F += y[g] * low.blocks[0].coeffs[local]
            lowered = np.linalg.eigvalsh(F).min() >= -1e-12 * max(1, abs(F).max())
            assert direct == lowered

    def test_unused_variable_warns(self):
        b = lmi.LmiBuilder()
        b.add_scalar("t")
        b.add_scalar("unused")
        b.add_constraint(
            lmi.AffineSym.build(1, [[-1.0]], [("t", np.eye(1), np.eye(1))]),
            lmi.Sense.POS_SEMI,
        )
        low = lmi.lower_to_sdp(b.build())
        assert any("unused" in w for w in low.warnings)

    def test_undeclared_variable_rejected(self):
        b = lmi.LmiBuilder()
        with pytest.raises(lmi.LmiError):
            b.add_constraint(
                lmi.AffineSym.build(1, None, [("ghost", np.eye(1), np.eye(1))]),
                lmi.Sense.POS_SEMI,
            )


class TestCheckFeasible:
    def test_empty_passes(self):
        b = lmi.LmiBuilder()
        b.add_scalar("t")
        passed, report = lmi.check_feasible_at(b.build(), {"t": 0.0})
        assert passed

    def test_scalar_bound_margin(self):
        b = lmi.LmiBuilder()
        b.add_scalar("t")
        b.add_constraint(
            lmi.AffineSym.build(1, [[-1.0]], [("t", np.eye(1), np.eye(1))]),
            lmi.Sense.POS_SEMI, name="t>=1",
        )
        passed, report = lmi.check_feasible_at(b.build(), {"t": 0.5})
        assert not passed
        (name, margin, scale, ok), = report
        assert name == "t>=1" and not ok
        assert margin == pytest.approx(-0.5)

    def test_missing_variable(self):
        b = lmi.LmiBuilder()
        b.add_scalar("t")
        b.add_constraint(
            lmi.AffineSym.build(1, [[-1.0]], [("t", np.eye(1), np.eye(1))]),
            lmi.Sense.POS_SEMI,
        )
        with pytest.raises(lmi.LmiError):
            lmi.check_feasible_at(b.build(), {})


class TestSdpaDump:
    def test_structure_and_parseback(self):
        low = lmi.lower_to_sdp(arrow_problem(), equilibrate=False)
        text = lmi.dump_sdpa(low)
        lines = text.strip().splitlines()
        assert lines[0] == "1"          # one scalar variable
        assert lines[1] == "1"          # one block
        assert lines[2] == "2"          # block size
        assert [float(v) for v in lines[3].split()] == [1.0]
        entries = [ln.split() for ln in lines[4:]]
        # constant carries the off-diagonal one, variable 1 the diagonal
        assert ["0", "1", "1", "2"] == entries[0][:4]
        assert any(e[0] == "1" for e in entries)
