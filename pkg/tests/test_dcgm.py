"""Constraint-generation driver: seeding, add/drop rules, certification."""

import math

import numpy as np
import pytest
from conftest import (
    dense_A,
    dense_b,
    euclidean_metric_instance,
    tri_instance,
    unit_metric_instance,
)

from metricnear.core import Norm, SolverConfig, pair_index, row_count
from metricnear.dcgm import certify, dcgm_solve, initial_constraints, update_working_set
from metricnear.ingest import Graph, build_instance, gen_random_graph, gen_random_instance
from metricnear.triop import ViolationBatch, build_constraint_set, feasibility_scan

ALL_NORMS = [Norm.L1, Norm.L2, Norm.LINF]


class TestInitialConstraints:
    def test_canonical_three_node(self):
        S = initial_constraints(tri_instance(Norm.L1))
        assert S.row_ids.tolist() == [2]

    def test_unit_metric_empty(self):
        assert len(initial_constraints(unit_metric_instance(4))) == 0

    def test_path_graph_row(self):
        g = Graph(3, np.array([pair_index(1, 2, 3), pair_index(2, 3, 3)]))
        inst = build_instance(g)
        S = initial_constraints(inst)
        assert S.row_ids.tolist() == [1]  # +1 on (1,3): b = 0 + 0 - 1
        assert S.b_vals.tolist() == [-1.0]

    def test_matches_negative_b(self):
        for n in (5, 8, 12):
            inst = gen_random_instance(n, n + 7)
            S = initial_constraints(inst)
            b = dense_b(inst)
            assert S.row_ids.tolist() == np.nonzero(b < 0)[0].tolist()


def make_batch(rows, viols, n_violated=None):
    rows = np.asarray(rows, dtype=np.int64)
    viols = np.asarray(viols, dtype=float)
    order = np.lexsort((rows, -viols))
    return ViolationBatch(rows=rows[order], violations=viols[order],
                          n_violated=n_violated if n_violated is not None else len(rows),
                          max_violation=float(viols.max()) if len(viols) else 0.0,
                          viol_sq_outside=0.0, resid_sq_all=0.0)


class TestUpdateWorkingSet:
    def make_instance(self):
        return gen_random_instance(6, 3)  # n2 = 60, n(n-1)/4 = 7.5

    def test_empty_batch_unchanged(self):
        inst = self.make_instance()
        S = build_constraint_set(np.arange(4), inst)
        batch = make_batch([], [])
        assert update_working_set(S, batch, np.zeros(inst.n1), inst) is S

    def test_add_without_drop(self, rng):
        inst = self.make_instance()
        S = build_constraint_set(np.arange(4), inst)  # |S|=4 <= 7 -> no drop
        cand = np.arange(10, 30)
        batch = make_batch(cand, rng.uniform(0.1, 2.0, len(cand)))
        S2 = update_working_set(S, batch, np.zeros(inst.n1), inst)
        assert len(S2) == 8  # adds min(|S|, |S'|) = 4
        assert set(np.arange(4)).issubset(S2.row_ids)
        top4 = batch.rows[:4]
        assert set(top4).issubset(S2.row_ids)

    def test_drop_rule_arithmetic(self, rng):
        inst = self.make_instance()
        pre_ids = np.arange(10)  # |S| = 10 > 7 = n(n-1)/4
        S = build_constraint_set(pre_ids, inst)
        y = rng.normal(0, 0.5, inst.n1)
        cand = np.arange(20, 40)  # |S'| = 20 > |S|
        batch = make_batch(cand, rng.uniform(0.1, 2.0, len(cand)))
        S2 = update_working_set(S, batch, y, inst)
        # keeps ceil(10/2) = 5 old rows plus min(10, 20) = 10 new rows
        assert len(S2) == 15
        from metricnear.triop import apply_A
        slack = apply_A(y, S) - S.b_vals
        order = np.lexsort((S.row_ids, slack))
        dropped = set(S.row_ids[order[:5]].tolist())
        assert dropped.isdisjoint(S2.row_ids.tolist())

    def test_no_drop_when_sprime_small(self, rng):
        inst = self.make_instance()
        S = build_constraint_set(np.arange(10), inst)
        batch = make_batch(np.arange(20, 25), rng.uniform(0.1, 1.0, 5))
        S2 = update_working_set(S, batch, np.zeros(inst.n1), inst)
        assert len(S2) == 15  # adds min(10, 5) = 5, drops none

    def test_multipliers_preserved_bit_exact(self, rng):
        inst = self.make_instance()
        S = build_constraint_set(np.arange(4), inst)
        S.multipliers[:] = rng.uniform(0, 1, 4)
        saved = S.multipliers.copy()
        batch = make_batch([11, 13], [0.5, 0.9])
        S2 = update_working_set(S, batch, np.zeros(inst.n1), inst)
        pos = np.searchsorted(S2.row_ids, S.row_ids)
        assert np.array_equal(S2.multipliers[pos], saved)
        new_pos = np.searchsorted(S2.row_ids, [11, 13])
        assert np.array_equal(S2.multipliers[new_pos], [0.0, 0.0])

    def test_empty_set_reseed(self, rng):
        from metricnear.core import ConstraintSet
        inst = self.make_instance()
        cand = np.arange(10, 30)
        batch = make_batch(cand, rng.uniform(0.1, 2.0, len(cand)))
        S2 = update_working_set(ConstraintSet.empty(), batch, np.zeros(inst.n1), inst)
        assert len(S2) == min(len(cand), inst.n)


class TestDcgmSolve:
    def test_already_metric_unit(self):
        inst = unit_metric_instance(6)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert np.array_equal(y, np.zeros(inst.n1))
        assert rep.converged and rep.dcgm_iters == 0
        assert rep.working_set_sizes == [] and rep.involved_var_counts == []
        assert rep.pobj == 0.0

    def test_already_metric_complete_graph(self):
        g = Graph(5, np.arange(10))
        inst = build_instance(g)  # x~ = 0 everywhere
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert np.array_equal(y, np.zeros(inst.n1)) and rep.dcgm_iters == 0

    def test_already_metric_euclidean(self):
        inst = euclidean_metric_instance(8, 4)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert np.array_equal(y, np.zeros(inst.n1)) and rep.converged

    @pytest.mark.parametrize("norm,expect", [
        (Norm.L1, 1.0), (Norm.L2, 1 / math.sqrt(3)), (Norm.LINF, 1 / 3)])
    def test_three_node_optima(self, norm, expect):
        y, rep = dcgm_solve(tri_instance(norm), SolverConfig(threads=1))
        assert rep.converged
        assert abs(rep.pobj - expect) < 1e-4

    @pytest.mark.parametrize("norm", ALL_NORMS)
    def test_random_n20_self_certifies(self, norm):
        inst = gen_random_instance(20, 77, norm)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert rep.converged
        assert rep.eta_f < 1e-2 and rep.eta_kkt < 1e-4
        # independent re-scan of the final point
        batch = feasibility_scan(y, inst, None, top_k=None)
        assert batch.max_violation < 1e-2

    def test_report_lists_match_rounds(self):
        g = gen_random_graph(25, 0.15, 3)
        inst = build_instance(g, norm=Norm.LINF)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert rep.converged
        assert len(rep.working_set_sizes) == rep.dcgm_iters
        assert len(rep.involved_var_counts) == rep.dcgm_iters
        ws = rep.working_set
        assert np.all(np.diff(ws.row_ids) > 0)

    def test_multi_round_generation(self):
        g = gen_random_graph(30, 0.15, 7)
        inst = build_instance(g, norm=Norm.LINF)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert rep.converged and rep.dcgm_iters > 1

    def test_palm_cap_polish_path(self):
        # a tiny PALM budget forces the driver through extra rounds (and the
        # tighter-tol polish when the scan comes back empty); whichever way
        # it ends, the certificate must be honest
        inst = gen_random_instance(15, 8, Norm.L1)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1, palm_max_iters=4))
        assert rep.dcgm_iters >= 1
        if rep.converged:
            assert rep.eta_kkt < 1e-4 and rep.eta_f < 1e-2
        else:
            assert rep.eta_kkt >= 1e-4 or rep.eta_f >= 1e-2
        # the reference run with the normal budget does converge
        _, full = dcgm_solve(inst, SolverConfig(threads=1))
        assert full.converged

    @pytest.mark.parametrize("norm", ALL_NORMS)
    def test_weighted_graph_instances(self, norm):
        g = gen_random_graph(20, 0.2, 11)
        inst = build_instance(g, edge_dissim=0.1, nonedge_dissim=1.5,
                              edge_weight=4.0, nonedge_weight=0.25, norm=norm)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert rep.converged
        assert rep.eta_kkt < 1e-4 and rep.eta_f < 1e-2
        batch = feasibility_scan(y, inst, None, top_k=None)
        assert batch.max_violation < 1e-2


class TestSetChange:
    def test_leaving_coordinates_zeroed(self, rng):
        from metricnear.dcgm import apply_set_change
        from metricnear.palm import PalmState
        inst = gen_random_instance(6, 3)
        S_old = build_constraint_set(np.arange(9), inst)
        S_old.multipliers[:] = rng.uniform(0, 1, 9)
        S_new = build_constraint_set(np.arange(3), inst)  # triple (1,2,3) only
        pos = np.searchsorted(S_new.row_ids, S_old.row_ids[:3])
        S_new.multipliers[pos] = S_old.multipliers[:3]
        state = PalmState(y=rng.normal(size=inst.n1), u=S_old.multipliers.copy(),
                          v=rng.normal(size=inst.n1), sigma=1.0)
        apply_set_change(state, S_old, S_new)
        gone = np.setdiff1d(S_old.involved, S_new.involved)
        assert gone.size > 0
        assert np.all(state.y[gone] == 0.0) and np.all(state.v[gone] == 0.0)
        assert np.all(state.y[S_new.involved] != 0.0)
        assert np.array_equal(state.u, S_new.multipliers)

    def test_forced_drops_still_converge(self, monkeypatch):
        # force the 50% drop every round: the driver must re-discover the
        # dropped rows and still reach a certified solution
        import metricnear.dcgm as dcgm_mod
        from metricnear.triop import apply_A
        orig = dcgm_mod.update_working_set

        def always_drop(S, batch, y, inst):
            if batch.n_violated == 0 or len(S) < 4:
                return orig(S, batch, y, inst)
            keep = np.ones(len(S), dtype=bool)
            slack = apply_A(y, S) - S.b_vals
            order = np.lexsort((S.row_ids, slack))
            keep[order[: len(S) // 2]] = False
            kept = build_constraint_set(S.row_ids[keep], inst)
            kept.multipliers[:] = S.multipliers[keep]
            return orig(kept, batch, y, inst)

        monkeypatch.setattr(dcgm_mod, "update_working_set", always_drop)
        inst = gen_random_instance(12, 5, Norm.L1)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        assert rep.converged
        assert rep.eta_kkt < 1e-4 and rep.eta_f < 1e-2


class TestCertify:
    def test_analytic_kkt_point(self):
        inst = tri_instance(Norm.LINF)
        S = build_constraint_set(np.array([2]), inst)
        y = np.array([1 / 3, 1 / 3, -1 / 3])
        cert = certify(y, inst, S=S, u=np.array([1 / 3]), v=y.copy())
        assert cert.eta_kkt <= 1e-10
        assert cert.eta_f <= 1e-12
        assert abs(cert.pobj - 1 / 3) < 1e-15 and abs(cert.dobj - 1 / 3) < 1e-15

    def test_zero_vector_on_violated_instance(self):
        inst = tri_instance(Norm.L1)
        cert = certify(np.zeros(3), inst)
        b = dense_b(inst)
        assert abs(cert.eta_f - (-b).max()) < 1e-15

    def test_feasible_but_suboptimal(self):
        # over-shrinking all distances to zero is feasible yet not stationary
        inst = gen_random_instance(8, 100, Norm.L2)
        y = -inst.dissimilarity.materialize()
        cert = certify(y, inst)
        assert cert.eta_f <= 1e-12
        assert cert.eta_kkt > 1e-2

    def test_matches_dense_reference(self, rng):
        from metricnear.prox import prox_q, q_value
        for n in (5, 8, 12):
            inst = gen_random_instance(n, n, Norm.L2)
            A, b = dense_A(n), dense_b(inst)
            w = inst.weights.materialize()
            rows = np.sort(rng.choice(row_count(n), size=10, replace=False))
            S = build_constraint_set(rows, inst)
            y = rng.normal(0, 0.4, inst.n1)
            u = np.abs(rng.normal(0, 0.5, 10))
            v = rng.normal(0, 0.3, inst.n1)
            cert = certify(y, inst, S=S, u=u, v=v)
            resid = A @ y - b
            ufull = np.zeros(row_count(n))
            ufull[rows] = u
            t1 = np.linalg.norm(A.T @ ufull + w * v) / (1 + np.linalg.norm(w * v))
            t2 = np.linalg.norm(resid - np.minimum(0, resid + ufull)) / (1 + np.linalg.norm(resid))
            dy = w * y
            t3 = np.linalg.norm(dy - prox_q(dy + v, Norm.L2, 1.0)) / (1 + np.linalg.norm(dy))
            assert abs(cert.eta_kkt - max(t1, t2, t3)) < 1e-12
            assert abs(cert.eta_f - resid.max()) < 1e-12
            assert abs(cert.pobj - q_value(dy, Norm.L2)) < 1e-12

    def test_dimension_checked(self):
        inst = tri_instance(Norm.L1)
        with pytest.raises(ValueError):
            certify(np.zeros(5), inst)
        with pytest.raises(ValueError):
            certify(np.array([np.nan, 0.0, 0.0]), inst)

    def test_solver_output_recheck_consistent(self):
        inst = gen_random_instance(12, 9, Norm.LINF)
        y, rep = dcgm_solve(inst, SolverConfig(threads=1))
        st, ws = rep.final_state, rep.working_set
        cert = certify(y, inst, S=ws, u=st.u, v=st.v)
        assert abs(cert.eta_kkt - rep.eta_kkt) < 1e-12
        assert abs(cert.eta_f - rep.eta_f) < 1e-12
        assert cert.pobj == rep.pobj
