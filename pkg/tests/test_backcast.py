import json
import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from oqss.errors import ConsistencyError, ContractError, FormatError, PlanningError, SolverError
from oqss.fock import FockVector, basis_state, couple_and_herald_zero, fidelity, normalize
from oqss.gaussian import DetectionPattern, heralded_state
from oqss.gkp import GkpParams, gkp_coefficients
from oqss.backcast import (
    CircuitParams,
    LayerPlan,
    LeafSpec,
    PlanPolicy,
    SolveSettings,
    forward_verify,
    mesh_pairs,
    plan_layers,
    result_from_json,
    result_to_json,
    solve_first_layer,
    split_target,
    synthesize,
)

FAST = SolveSettings(restarts=10, max_evals=1500, seed=7, polish_rounds=1)


def plus_state(n_upper, cutoff):
    amps = np.zeros(cutoff + 1)
    amps[0] = amps[n_upper] = 1.0
    out, _ = normalize(FockVector(amps))
    return out


@pytest.fixture(scope="module")
def solved_plus4():
    """One (|0>+|4>)/sqrt(2) synthesis shared by the tests that inspect it."""
    target = plus_state(4, 4)
    settings = SolveSettings(restarts=25, max_evals=3000, seed=11, polish_rounds=1)
    return target, synthesize(target, plan_layers(4), settings)


class TestPlanLayers:
    def test_reference_budget_32(self):
        plan = plan_layers(32)
        assert plan.n_layers == 4
        assert len(plan.leaves) == 8
        assert all(leaf.input_count == 3 and leaf.heralds == (2, 2) for leaf in plan.leaves)
        assert plan.root_budget == 32

    def test_single_node_budget_4(self):
        plan = plan_layers(4)
        assert plan.n_layers == 1
        assert len(plan.leaves) == 1

    def test_two_leaves_budget_8(self):
        plan = plan_layers(8)
        assert plan.n_layers == 2
        assert len(plan.leaves) == 2
        assert plan.budget(2, 0) == 8
        assert plan.budget(1, 0) == plan.budget(1, 1) == 4

    def test_infeasible_budget_lists_alternatives(self):
        with pytest.raises(PlanningError, match=r"\[4, 8, 16\]"):
            plan_layers(6)

    def test_layer_override_must_match(self):
        with pytest.raises(PlanningError):
            plan_layers(8, PlanPolicy(n_layers=3))

    def test_capacity_violation_rejected(self):
        # herald sum 8 exceeds the 3-input coefficient capacity 4
        with pytest.raises(PlanningError):
            plan_layers(8, PlanPolicy(leaf_inputs=3, leaf_heralds=(4, 4)))

    def test_herald_bound(self):
        with pytest.raises(PlanningError):
            LeafSpec(3, (5, 0))
        with pytest.raises(PlanningError):
            LeafSpec(5, (1, 1, 1, 1))

    def test_plan_shape_validation(self):
        with pytest.raises(PlanningError):
            LayerPlan(n_layers=2, leaves=(LeafSpec(3, (2, 2)),))

    def test_zero_budget_rejected(self):
        with pytest.raises(ContractError):
            plan_layers(0)


class TestCircuitParams:
    def test_mesh_pairs_triangle(self):
        assert mesh_pairs(3) == [(0, 1), (1, 2), (0, 1)]
        assert mesh_pairs(2) == [(0, 1)]
        assert len(mesh_pairs(4)) == 6

    def test_to_ops_order(self):
        params = CircuitParams(
            squeezes=((0.5, 0.0), (0.3, 1.0)),
            displacements=(0.1 + 0.0j, 0.0 + 0.0j),
            mesh=((0.7, 0.2),),
        )
        ops = params.to_ops()
        assert [op["op"] for op in ops] == ["squeeze", "squeeze", "displace", "displace", "beamsplitter"]
        assert params.state().mode_count == 2

    def test_r_bound_enforced(self):
        with pytest.raises(ContractError):
            CircuitParams(squeezes=((3.0, 0.0),), displacements=(0j,), mesh=(), r_max=2.0)

    def test_mesh_count_enforced(self):
        with pytest.raises(ContractError):
            CircuitParams(squeezes=((0.1, 0.0),) * 3, displacements=(0j,) * 3, mesh=())


class TestSplitTarget:
    def test_vacuum_split(self):
        sol = split_target(basis_state(0, 0), (0, 0), FAST)
        assert sol.fidelity == pytest.approx(1.0, abs=1e-9)
        assert fidelity(sol.sub_a, basis_state(0, 0)) == pytest.approx(1.0)
        assert fidelity(sol.sub_b, basis_state(0, 0)) == pytest.approx(1.0)

    def test_two_photon_hom_split(self):
        sol = split_target(basis_state(2, 2), (1, 1), FAST)
        assert sol.fidelity == pytest.approx(1.0, abs=1e-9)
        assert sol.theta == pytest.approx(math.pi / 4, abs=1e-3)
        assert fidelity(sol.sub_a, basis_state(1, 1)) == pytest.approx(1.0, abs=1e-8)
        assert fidelity(sol.sub_b, basis_state(1, 1)) == pytest.approx(1.0, abs=1e-8)

    def test_gkp_split_regression(self):
        target = gkp_coefficients(GkpParams(10.0), 8)
        settings = SolveSettings(restarts=25, max_evals=3000, seed=3, polish_rounds=1)
        sol = split_target(target, (4, 4), settings)
        assert sol.fidelity >= 0.999

    def test_split_must_sum(self):
        with pytest.raises(ContractError):
            split_target(basis_state(2, 2), (1, 2), FAST)

    def test_floor_violation_carries_trace(self):
        rng = np.random.default_rng(0)
        amps = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        target, _ = normalize(FockVector(amps))
        strict = SolveSettings(
            restarts=2, max_evals=60, seed=1, interior_floor=1.0 - 1e-12, polish_rounds=0
        )
        with pytest.raises(SolverError) as excinfo:
            split_target(target, (2, 2), strict)
        assert excinfo.value.trace is not None


class TestSolveFirstLayer:
    def test_vacuum_leaf(self):
        sol = solve_first_layer(basis_state(0, 0), (0, 0), FAST)
        assert sol.fidelity > 1.0 - 1e-6
        assert sol.herald_probability > 0.999

    def test_identity_circuit_scores_perfectly(self):
        # the all-zero parameter point:vacuum in, nothing detected, |0> out
        params = CircuitParams(
            squeezes=((0.0, 0.0),) * 3,
            displacements=(0j,) * 3,
            mesh=((0.0, 0.0),) * 3,
        )
        state, prob = heralded_state(params.state(), DetectionPattern((0, 0), (1, 2)), 0, 0)
        assert prob == pytest.approx(1.0, abs=1e-12)
        assert fidelity(state, basis_state(0, 0)) == pytest.approx(1.0)

    def test_heralded_single_photon(self):
        settings = SolveSettings(restarts=12, max_evals=2000, seed=5, polish_rounds=1)
        sol = solve_first_layer(basis_state(1, 1), (1, 0), settings)
        assert sol.fidelity >= 0.999
        assert 0.0 < sol.herald_probability <= 1.0

    def test_cutoff_must_match_budget(self):
        with pytest.raises(ContractError):
            solve_first_layer(basis_state(1, 1), (2, 2), FAST)

    def test_gkp_leaf_regression(self):
        # cutoff-4 half of a 10 dB codeword via a (4,4) split
        target = gkp_coefficients(GkpParams(10.0), 8)
        settings = SolveSettings(restarts=25, max_evals=3000, seed=9, polish_rounds=1)
        sub = split_target(target, (4, 4), settings).sub_a
        sol = solve_first_layer(sub, (2, 2), settings)
        assert sol.fidelity >= 0.99


class TestSynthesize:
    def test_vacuum_tree(self):
        plan = LayerPlan(n_layers=1, leaves=(LeafSpec(3, (0, 0)),))
        result = synthesize(basis_state(0, 0), plan, FAST)
        assert result.complete
        assert result.end_to_end_fidelity > 1.0 - 1e-6
        assert result.p_success_total > 0.99

    def test_on_plus_four(self, solved_plus4):
        target, result = solved_plus4
        assert result.complete
        assert result.end_to_end_fidelity >= 0.98
        fid, p_suc = forward_verify(result, target)
        assert fid == pytest.approx(result.end_to_end_fidelity, abs=1e-9)
        assert p_suc == pytest.approx(result.p_success_total, rel=1e-9)

    def test_hom_tree(self):
        # |2> from two heralded single photons through the final beam splitter
        policy = PlanPolicy(leaf_inputs=2, leaf_heralds=(1,))
        plan = plan_layers(2, policy)
        settings = SolveSettings(restarts=10, max_evals=1500, seed=13, polish_rounds=1)
        result = synthesize(basis_state(2, 2), plan, settings)
        assert result.complete
        assert result.end_to_end_fidelity >= 0.99
        final = result.node(2, 0)
        assert final.herald_probability == pytest.approx(0.5, abs=0.05)

    def test_deterministic(self):
        policy = PlanPolicy(leaf_inputs=2, leaf_heralds=(1,))
        plan = plan_layers(2, policy)
        settings = SolveSettings(restarts=6, max_evals=800, seed=17, polish_rounds=1)
        r1 = synthesize(basis_state(2, 2), plan, settings)
        r2 = synthesize(basis_state(2, 2), plan, settings)
        assert r1.end_to_end_fidelity == r2.end_to_end_fidelity
        assert r1.p_success_total == r2.p_success_total
        for a, b in zip(r1.nodes, r2.nodes):
            assert a.local_fidelity == b.local_fidelity
            assert a.herald_probability == b.herald_probability

    def test_target_too_large(self):
        with pytest.raises(ContractError):
            synthesize(basis_state(5, 5), plan_layers(4), FAST)

    def test_partial_result_on_failure(self):
        rng = np.random.default_rng(1)
        amps = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        target, _ = normalize(FockVector(amps))
        strict = SolveSettings(
            restarts=2, max_evals=60, seed=1, leaf_floor=1.0 - 1e-12, polish_rounds=0,
            interior_floor=0.0,
        )
        result = synthesize(target, plan_layers(4), strict)
        assert not result.complete
        assert result.failed_node == (1, 0)
        assert result.end_to_end_fidelity is None
        with pytest.raises(ContractError):
            forward_verify(result, target)


class TestForwardVerify:
    def test_roundtrip_through_json(self, solved_plus4):
        target, result = solved_plus4
        data = json.loads(json.dumps(result_to_json(result)))
        restored = result_from_json(data)
        fid, p_suc = forward_verify(restored, target)
        assert fid == pytest.approx(result.end_to_end_fidelity, abs=1e-9)
        assert p_suc == pytest.approx(result.p_success_total, rel=1e-9)

    def test_tampered_parameters_detected(self, solved_plus4):
        target, result = solved_plus4
        data = result_to_json(result)
        leaf = next(n for n in data["nodes"] if n["kind"] == "leaf")
        leaf["circuit"]["mesh"][0][0] += 0.2
        with pytest.raises(ConsistencyError):
            forward_verify(result_from_json(data), target)

    def test_malformed_document(self):
        with pytest.raises(FormatError):
            result_from_json({"format": "something-else"})
        with pytest.raises(FormatError):
            result_from_json({"format": "oqss-synthesis-result-v1"})


@hyp_settings(max_examples=20, deadline=None)
@given(
    n_layers=st.integers(min_value=1, max_value=3),
    herald_a=st.integers(min_value=0, max_value=2),
    herald_b=st.integers(min_value=0, max_value=2),
    seed=st.integers(0, 2**31 - 1),
)
def test_budget_additivity_on_random_trees(n_layers, herald_a, herald_b, seed):
    """Composing random leaf states through the tree lands exactly on the
    root budget: the Fock-space image of the photon-budget additivity rule."""
    leaf = LeafSpec(3, (herald_a, herald_b))
    plan = LayerPlan(n_layers=n_layers, leaves=(leaf,) * (1 << (n_layers - 1)))
    rng = np.random.default_rng(seed)

    states = {}
    for k in range(len(plan.leaves)):
        amps = rng.standard_normal(leaf.budget + 1) + 1j * rng.standard_normal(leaf.budget + 1)
        states[(1, k)], _ = normalize(FockVector(amps))
    for layer in range(2, n_layers + 1):
        for index in range(1 << (n_layers - layer)):
            theta = rng.uniform(0.2, math.pi / 2 - 0.2)
            out, prob = couple_and_herald_zero(
                states[(layer - 1, 2 * index)], states[(layer - 1, 2 * index + 1)], theta
            )
            assert 0.0 < prob <= 1.0 + 1e-12
            states[(layer, index)] = out
    root = states[(n_layers, 0)]
    assert root.cutoff == plan.root_budget
    assert np.linalg.norm(root.amplitudes) == pytest.approx(1.0, abs=1e-10)
