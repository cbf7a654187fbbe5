"""Layered backcasting synthesis: plan, split, solve leaves, verify forward.

A target superposition with photon budget ``n_max`` is produced by a
balanced binary tree of circuits.  Leaves (the first layer) are small
Gaussian circuits heralded on PNR patterns; every interior node couples two
sub-states on one beam splitter conditioned on detecting nothing.  The
photon budgets obey the additivity rule: a node's budget is the sum of its
children's, and a leaf's budget is the sum of its herald counts, so leaf
heralds sum to ``n_max`` along the whole tree.

Parameters are found backwards.  The root target is split into two
sub-targets and a coupling angle by direct optimization; the sub-targets
are re-bound as targets one layer down; the first layer is then solved as a
constrained Gaussian-circuit fit.  Because the backward pass and the
forward re-simulation share their state arithmetic, the two must agree to
rounding; ``forward_verify`` checks exactly that and treats disagreement as
an internal bug, not as noise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConsistencyError, ContractError, DegenerateHeraldError, PlanningError, SolverError
from .fock import FockVector, couple_and_herald_zero, fidelity, normalize, pad_to
from .gaussian import (
    DetectionPattern,
    GaussianPureState,
    apply_ops,
    heralded_amplitudes,
    heralded_state,
    op_beamsplitter,
    op_displace,
    op_squeeze,
    vacuum,
)
from .optimize import OptimizerConfig, OptTrace, maximize

MAX_HERALD_COUNT = 4
MAX_LEAF_INPUTS = 4
DEFAULT_R_MAX = 2.0  # ~17 dB of single-mode squeezing


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeafSpec:
    """One first-layer circuit: number of inputs and its herald pattern."""

    input_count: int
    heralds: tuple[int, ...]

    def __post_init__(self):
        heralds = tuple(int(h) for h in self.heralds)
        if not 2 <= self.input_count <= MAX_LEAF_INPUTS:
            raise PlanningError(f"leaf input count {self.input_count} outside 2..{MAX_LEAF_INPUTS}")
        if len(heralds) != self.input_count - 1:
            raise PlanningError("a leaf heralds every input mode except the output")
        if any(h < 0 or h > MAX_HERALD_COUNT for h in heralds):
            raise PlanningError(f"herald counts {heralds} outside 0..{MAX_HERALD_COUNT}")
        object.__setattr__(self, "heralds", heralds)

    @property
    def budget(self) -> int:
        return sum(self.heralds)

    @property
    def coefficient_capacity(self) -> int:
        l = self.input_count
        return (l + 2) * (l - 1) // 2 - 1


@dataclass(frozen=True)
class PlanPolicy:
    leaf_inputs: int = 3
    leaf_heralds: tuple[int, ...] = (2, 2)
    n_layers: int | None = None


@dataclass(frozen=True)
class LayerPlan:
    """Balanced binary tree of depth ``n_layers`` over identical-shape leaves.

    Layer 1 holds the ``2^(n_layers-1)`` leaves; node ``(j, k)`` for j >= 2
    couples children ``(j-1, 2k)`` and ``(j-1, 2k+1)``.
    """

    n_layers: int
    leaves: tuple[LeafSpec, ...]

    def __post_init__(self):
        if self.n_layers < 1:
            raise PlanningError("a plan needs at least one layer")
        if len(self.leaves) != 1 << (self.n_layers - 1):
            raise PlanningError(
                f"{self.n_layers} layers need {1 << (self.n_layers - 1)} leaves, got {len(self.leaves)}"
            )
        capacity = sum(leaf.coefficient_capacity for leaf in self.leaves)
        if self.root_budget > capacity:
            raise PlanningError(
                f"budget {self.root_budget} exceeds the independent-coefficient capacity {capacity}"
            )

    @property
    def root_budget(self) -> int:
        return sum(leaf.budget for leaf in self.leaves)

    def leaf_span(self, layer: int, index: int) -> tuple[int, int]:
        if not 1 <= layer <= self.n_layers:
            raise ContractError(f"layer {layer} outside plan")
        width = 1 << (layer - 1)
        if not 0 <= index < (1 << (self.n_layers - layer)):
            raise ContractError(f"node index {index} outside layer {layer}")
        return index * width, (index + 1) * width

    def budget(self, layer: int, index: int) -> int:
        lo, hi = self.leaf_span(layer, index)
        return sum(leaf.budget for leaf in self.leaves[lo:hi])

    def nodes(self):
        """(layer, index) pairs from the root down to the leaves."""
        for layer in range(self.n_layers, 0, -1):
            for index in range(1 << (self.n_layers - layer)):
                yield layer, index


def plan_layers(n_max: int, policy: PlanPolicy = PlanPolicy()) -> LayerPlan:
    """Balanced plan for a photon budget, or a planning error naming near misses.

    The default policy (3-input leaves heralding (2, 2)) reproduces the
    reference workload: budget 32 becomes 4 layers of eight first-layer
    circuits.  Feasible budgets are ``leaf_budget * 2^k``.
    """
    if n_max < 1:
        raise ContractError("n_max must be >= 1")
    leaf = LeafSpec(policy.leaf_inputs, policy.leaf_heralds)
    if leaf.budget < 1:
        raise PlanningError("policy heralds carry no photons")
    if leaf.budget > leaf.coefficient_capacity:
        raise PlanningError(
            f"herald budget {leaf.budget} exceeds per-leaf capacity {leaf.coefficient_capacity}"
        )
    quotient, remainder = divmod(n_max, leaf.budget)
    if remainder or quotient & (quotient - 1):
        feasible = sorted(
            {leaf.budget << k for k in range(8) if abs((leaf.budget << k) - n_max) <= 2 * n_max}
        )
        raise PlanningError(
            f"budget {n_max} is not leaf_budget*2^k for leaf budget {leaf.budget}; "
            f"nearby feasible budgets: {feasible}"
        )
    n_layers = quotient.bit_length()  # quotient = 2^(n_layers - 1)
    if policy.n_layers is not None and policy.n_layers != n_layers:
        raise PlanningError(
            f"requested {policy.n_layers} layers but budget {n_max} needs {n_layers}"
        )
    return LayerPlan(n_layers=n_layers, leaves=(leaf,) * quotient)


# ---------------------------------------------------------------------------
# circuit parameters
# ---------------------------------------------------------------------------


def mesh_pairs(l: int) -> list[tuple[int, int]]:
    """Triangular beam-splitter order over ``l`` modes, l(l-1)/2 pairs."""
    pairs = []
    for i in range(1, l):
        for j in range(i, 0, -1):
            pairs.append((j - 1, j))
    return pairs


@dataclass(frozen=True)
class CircuitParams:
    """First-layer circuit: per-input squeeze and displacement, then a
    triangular interferometer."""

    squeezes: tuple[tuple[float, float], ...]
    displacements: tuple[complex, ...]
    mesh: tuple[tuple[float, float], ...]
    r_max: float = DEFAULT_R_MAX

    def __post_init__(self):
        l = len(self.squeezes)
        if len(self.displacements) != l:
            raise ContractError("one displacement per input required")
        if len(self.mesh) != l * (l - 1) // 2:
            raise ContractError("triangular mesh needs l(l-1)/2 beam splitters")
        if any(abs(r) > self.r_max + 1e-12 for r, _ in self.squeezes):
            raise ContractError(f"squeezing exceeds configured bound {self.r_max}")

    @property
    def mode_count(self) -> int:
        return len(self.squeezes)

    def to_ops(self) -> list[dict]:
        ops = []
        for mode, (r, phi) in enumerate(self.squeezes):
            ops.append(op_squeeze(mode, r, phi))
        for mode, alpha in enumerate(self.displacements):
            ops.append(op_displace(mode, alpha))
        for (a, b), (theta, phi) in zip(mesh_pairs(self.mode_count), self.mesh):
            ops.append(op_beamsplitter(a, b, theta, phi))
        return ops

    def state(self) -> GaussianPureState:
        return apply_ops(vacuum(self.mode_count), self.to_ops())


# ---------------------------------------------------------------------------
# solver settings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveSettings:
    """Knobs shared by the split and first-layer solvers.

    ``probability_weight`` adds a small herald-probability bonus to the
    search score so that, among solutions of equal fidelity, the optimizer
    prefers the likelier circuit; reported fidelities (and the floors) are
    always the pure overlap, recomputed at the selected point.
    """

    restarts: int = 40
    max_evals: int = 2500
    tolerance: float = 1e-10
    seed: int = 0
    workers: int = 1
    r_max: float = DEFAULT_R_MAX
    alpha_max: float = 2.0
    interior_floor: float = 0.999
    leaf_floor: float = 0.99
    guard: int = 4
    probability_weight: float = 0.01
    polish_rounds: int = 2

    def node_seed(self, layer: int, index: int) -> int:
        return int(np.random.SeedSequence((self.seed, layer, index)).generate_state(1)[0])


def _parity_of(amplitudes: np.ndarray, rel_tol: float = 1e-8) -> int | None:
    """0/1 when the vector lives on even/odd indices only, else None."""
    scale = float(np.abs(amplitudes).max())
    if scale == 0.0:
        return None
    even = float(np.abs(amplitudes[0::2]).max(initial=0.0))
    odd = float(np.abs(amplitudes[1::2]).max(initial=0.0))
    if odd <= rel_tol * scale:
        return 0
    if even <= rel_tol * scale:
        return 1
    return None


def _polish(objective, x, bounds, periodic, settings: SolveSettings):
    """Extra simplex descents from the incumbent (fresh simplex each round).

    Phases (periodic dims) run unconstrained; the rest keep their box.
    Deterministic, so results stay reproducible from the seed alone.
    """
    scipy_bounds = [(None, None) if p else b for p, b in zip(periodic, bounds)]
    best_x = np.asarray(x, dtype=float)
    best_val = objective(best_x)
    for _ in range(settings.polish_rounds):
        res = minimize(
            lambda y: -objective(y),
            best_x,
            method="Nelder-Mead",
            bounds=scipy_bounds,
            options={"maxfev": settings.max_evals, "fatol": settings.tolerance, "xatol": 1e-9},
        )
        if -res.fun > best_val:
            best_val = -float(res.fun)
            best_x = res.x
    return best_x


# ---------------------------------------------------------------------------
# step 2: split one target across a zero-herald beam splitter
# ---------------------------------------------------------------------------


class _SplitObjective:
    """Search score for one target split: pure fidelity of
    couple_and_herald_zero(a, b, theta) against the target, plus the
    probability tie-break.

    Free parameters are the interleaved re/im amplitudes of both inputs
    (normalized here, so the search box is unconstrained) plus the angle.
    When the target has definite photon parity the sub-vectors are searched
    on the matching parity support only (index masks), which both shrinks
    the box and hands structurally cleaner targets to the first layer.
    Total on the box: degenerate points score 0 instead of failing.
    """

    def __init__(
        self,
        target: np.ndarray,
        n_a: int,
        n_b: int,
        probability_weight: float,
        a_support: np.ndarray,
        b_support: np.ndarray,
    ):
        self.target = target / np.linalg.norm(target)
        self.n_a = n_a
        self.n_b = n_b
        self.probability_weight = probability_weight
        self.a_support = a_support
        self.b_support = b_support

    @property
    def dimension(self) -> int:
        return 2 * (len(self.a_support) + len(self.b_support)) + 1

    def unpack(self, x: np.ndarray):
        ka = 2 * len(self.a_support)
        kb = 2 * len(self.b_support)
        a = np.zeros(self.n_a + 1, dtype=np.complex128)
        b = np.zeros(self.n_b + 1, dtype=np.complex128)
        a[self.a_support] = x[0:ka:2] + 1j * x[1:ka:2]
        b[self.b_support] = x[ka : ka + kb : 2] + 1j * x[ka + 1 : ka + kb : 2]
        return a, b, float(x[-1])

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        a, b, theta = self.unpack(x)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0, 0.0
        try:
            out, probability = couple_and_herald_zero(
                FockVector(a / na, normalized=True),
                FockVector(b / nb, normalized=True),
                theta,
            )
        except DegenerateHeraldError:
            return 0.0, 0.0
        return float(abs(np.vdot(out.amplitudes, self.target)) ** 2), probability

    def __call__(self, x: np.ndarray) -> float:
        fid, probability = self.evaluate(x)
        return fid + self.probability_weight * probability


@dataclass(frozen=True)
class SplitSolution:
    sub_a: FockVector
    sub_b: FockVector
    theta: float
    fidelity: float
    trace: OptTrace


def split_target(
    target: FockVector,
    split: tuple[int, int],
    settings: SolveSettings,
    seed: int | None = None,
) -> SplitSolution:
    """Optimize two sub-states and a coupling angle to rebuild ``target``.

    ``split`` gives the photon budgets of the two inputs and must sum to
    the target's cutoff.  The achieved fidelity is reported as found; only
    a result below ``settings.interior_floor`` raises.
    """
    n_a, n_b = split
    if not target.normalized:
        raise ContractError("split target must be normalized")
    if n_a < 0 or n_b < 0 or n_a + n_b != target.cutoff:
        raise ContractError(f"split {split} does not sum to target cutoff {target.cutoff}")
    parity = _parity_of(target.amplitudes)
    a_support = np.arange(n_a + 1)
    b_support = np.arange(n_b + 1)
    if parity is not None:
        # arm parities must compose to the target parity; taking n_a%2 for
        # the first arm keeps its top (budget) index reachable
        p_a = n_a % 2
        p_b = (parity - p_a) % 2
        a_masked = np.arange(p_a, n_a + 1, 2)
        b_masked = np.arange(p_b, n_b + 1, 2)
        if a_masked.size and b_masked.size:
            a_support, b_support = a_masked, b_masked
    objective = _SplitObjective(
        target.amplitudes.copy(),
        n_a,
        n_b,
        settings.probability_weight,
        a_support,
        b_support,
    )
    bounds = ((-1.0, 1.0),) * (objective.dimension - 1) + ((0.0, math.pi / 2),)
    periodic = (False,) * objective.dimension
    config = OptimizerConfig(
        bounds=bounds,
        restarts=settings.restarts,
        max_evals=settings.max_evals,
        tolerance=settings.tolerance,
        seed=settings.seed if seed is None else seed,
        workers=settings.workers,
    )
    best_x, _, trace = maximize(objective, config)
    best_x = _polish(objective, best_x, bounds, periodic, settings)
    best_fid, _ = objective.evaluate(best_x)
    if best_fid < settings.interior_floor:
        raise SolverError(
            f"split fidelity {best_fid:.6f} below floor {settings.interior_floor}",
            trace=trace,
        )
    a, b, theta = objective.unpack(best_x)
    sub_a, _ = normalize(FockVector(a))
    sub_b, _ = normalize(FockVector(b))
    return SplitSolution(sub_a=sub_a, sub_b=sub_b, theta=theta, fidelity=best_fid, trace=trace)


# ---------------------------------------------------------------------------
# step 4: solve one first-layer circuit
# ---------------------------------------------------------------------------


class _LeafObjective:
    """Search score for one first-layer circuit.

    The heralded output is compared on a cutoff ``guard`` photons above the
    budget with the target zero-padded, so stray weight above the budget
    costs fidelity instead of hiding behind the truncation.  The captured
    mass |a|^2 (herald probability up to the guarded cutoff) supplies the
    tie-break term.

    For definite-parity targets the displacements are pinned to zero: an
    undisplaced circuit yields output amplitudes of exactly the herald
    parity, which matches the target parity by budget additivity and takes
    six dead parameters out of the search.
    """

    def __init__(
        self,
        target: np.ndarray,
        heralds: tuple[int, ...],
        l: int,
        guard: int,
        r_max: float,
        probability_weight: float,
        with_displacement: bool,
    ):
        self.heralds = heralds
        self.l = l
        self.cutoff = len(target) - 1 + guard
        padded = np.zeros(self.cutoff + 1, dtype=np.complex128)
        padded[: len(target)] = target / np.linalg.norm(target)
        self.target = padded
        self.r_max = r_max
        self.probability_weight = probability_weight
        self.with_displacement = with_displacement
        self.pattern = DetectionPattern(heralds, tuple(range(1, l)))
        self.n_mesh = l * (l - 1) // 2

    def bounds(self, settings: "SolveSettings"):
        l, n_mesh = self.l, self.n_mesh
        box = [(0.0, settings.r_max)] * l + [(0.0, 2 * math.pi)] * l
        periodic = [False] * l + [True] * l
        if self.with_displacement:
            box += [(-settings.alpha_max, settings.alpha_max)] * (2 * l)
            periodic += [False] * (2 * l)
        box += [(0.0, math.pi / 2)] * n_mesh + [(0.0, 2 * math.pi)] * n_mesh
        periodic += [False] * n_mesh + [True] * n_mesh
        return tuple(box), tuple(periodic)

    def unpack(self, x: np.ndarray) -> CircuitParams:
        l = self.l
        rs = x[0:l]
        phis = x[l : 2 * l]
        if self.with_displacement:
            alphas = x[2 * l : 4 * l : 2] + 1j * x[2 * l + 1 : 4 * l : 2]
            rest = x[4 * l :]
        else:
            alphas = np.zeros(l, dtype=np.complex128)
            rest = x[2 * l :]
        thetas = rest[: self.n_mesh]
        bs_phis = rest[self.n_mesh :]
        return CircuitParams(
            squeezes=tuple((float(r), float(p)) for r, p in zip(rs, phis)),
            displacements=tuple(complex(a) for a in alphas),
            mesh=tuple((float(t), float(p)) for t, p in zip(thetas, bs_phis)),
            r_max=self.r_max,
        )

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        params = self.unpack(x)
        try:
            amps = heralded_amplitudes(params.state(), self.pattern, 0, self.cutoff)
        except DegenerateHeraldError:
            return 0.0, 0.0
        mass = float(np.vdot(amps, amps).real)
        if mass < 1e-300:
            return 0.0, 0.0
        fid = float(abs(np.vdot(amps, self.target)) ** 2) / mass
        return fid, min(mass, 1.0)

    def __call__(self, x: np.ndarray) -> float:
        fid, mass = self.evaluate(x)
        return fid + self.probability_weight * mass


@dataclass(frozen=True)
class LeafSolution:
    params: CircuitParams
    fidelity: float
    herald_probability: float
    trace: OptTrace


def solve_first_layer(
    sub_target: FockVector,
    heralds: tuple[int, ...],
    settings: SolveSettings,
    input_count: int | None = None,
    seed: int | None = None,
) -> LeafSolution:
    """Fit a heralded Gaussian circuit to a leaf target.

    The target cutoff must equal the herald photon sum (budget additivity);
    the returned herald probability comes from re-simulating the best
    circuit with its full probability accounting.
    """
    heralds = tuple(int(h) for h in heralds)
    if not sub_target.normalized:
        raise ContractError("leaf target must be normalized")
    if sub_target.cutoff != sum(heralds):
        raise ContractError(
            f"leaf target cutoff {sub_target.cutoff} != herald budget {sum(heralds)}"
        )
    l = len(heralds) + 1 if input_count is None else input_count
    if l != len(heralds) + 1:
        raise ContractError("input count must be one more than the herald count")

    objective = _LeafObjective(
        sub_target.amplitudes.copy(),
        heralds,
        l,
        settings.guard,
        settings.r_max,
        settings.probability_weight,
        with_displacement=_parity_of(sub_target.amplitudes) is None,
    )
    bounds, periodic = objective.bounds(settings)
    config = OptimizerConfig(
        bounds=bounds,
        periodic=periodic,
        restarts=settings.restarts,
        max_evals=settings.max_evals,
        tolerance=settings.tolerance,
        seed=settings.seed if seed is None else seed,
        workers=settings.workers,
    )
    best_x, _, trace = maximize(objective, config)
    best_x = _polish(objective, best_x, bounds, periodic, settings)
    best_fid, _ = objective.evaluate(best_x)
    if best_fid < settings.leaf_floor:
        raise SolverError(
            f"leaf fidelity {best_fid:.6f} below floor {settings.leaf_floor}", trace=trace
        )
    params = objective.unpack(best_x)
    _, probability = heralded_state(
        params.state(), objective.pattern, 0, sub_target.cutoff
    )
    return LeafSolution(
        params=params, fidelity=best_fid, herald_probability=probability, trace=trace
    )


# ---------------------------------------------------------------------------
# the full tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSolution:
    layer: int
    index: int
    budget: int
    kind: str  # "split" or "leaf"
    local_fidelity: float
    seed: int
    wall_time_s: float
    trace: OptTrace
    theta: float | None = None
    circuit: CircuitParams | None = None
    herald_probability: float | None = None
    sub_target: FockVector | None = None
    output: FockVector | None = None

    def __post_init__(self):
        if not 0.0 <= self.local_fidelity <= 1.0 + 1e-12:
            raise ContractError(f"node fidelity {self.local_fidelity} outside [0, 1]")
        if self.herald_probability is not None and not 0.0 < self.herald_probability <= 1.0 + 1e-12:
            raise ContractError(f"herald probability {self.herald_probability} outside (0, 1]")
        if self.kind not in ("split", "leaf"):
            raise ContractError(f"unknown node kind {self.kind!r}")


@dataclass(frozen=True)
class SynthesisResult:
    plan: LayerPlan
    nodes: tuple[NodeSolution, ...]
    seed: int
    wall_time_s: float
    end_to_end_fidelity: float | None = None
    p_success_total: float | None = None
    p_success_first_layer: float | None = None
    failed_node: tuple[int, int] | None = None
    failure_message: str | None = None

    @property
    def complete(self) -> bool:
        return self.failed_node is None

    def node(self, layer: int, index: int) -> NodeSolution:
        for n in self.nodes:
            if n.layer == layer and n.index == index:
                return n
        raise ContractError(f"no solution recorded for node ({layer}, {index})")


def synthesize(target: FockVector, plan: LayerPlan, settings: SolveSettings) -> SynthesisResult:
    """Backcast the whole tree, then price it with one forward composition.

    Splitting walks from the root down (step 2), each split's sub-targets
    becoming the next layer's targets (step 3); leaves are then fitted as
    Gaussian circuits (step 4).  A node failing its fidelity floor stops
    the walk and yields a partial result naming the node.
    """
    t_start = time.perf_counter()
    if not target.normalized:
        raise ContractError("synthesis target must be normalized")
    if target.cutoff > plan.root_budget:
        raise ContractError(
            f"target cutoff {target.cutoff} exceeds plan budget {plan.root_budget}"
        )
    root_target = pad_to(target, plan.root_budget)

    pending: dict[tuple[int, int], FockVector] = {(plan.n_layers, 0): root_target}
    drafts: list[dict] = []

    for layer, index in plan.nodes():
        node_target = pending.pop((layer, index))
        node_seed = settings.node_seed(layer, index)
        t0 = time.perf_counter()
        if layer >= 2:
            budgets = (plan.budget(layer - 1, 2 * index), plan.budget(layer - 1, 2 * index + 1))
            try:
                sol = split_target(node_target, budgets, settings, seed=node_seed)
            except SolverError as exc:
                return _failed_result(plan, drafts, settings, t_start, (layer, index), str(exc))
            pending[(layer - 1, 2 * index)] = sol.sub_a
            pending[(layer - 1, 2 * index + 1)] = sol.sub_b
            drafts.append(
                dict(
                    layer=layer,
                    index=index,
                    budget=node_target.cutoff,
                    kind="split",
                    theta=sol.theta,
                    local_fidelity=sol.fidelity,
                    seed=node_seed,
                    wall_time_s=time.perf_counter() - t0,
                    trace=sol.trace,
                    sub_target=node_target,
                )
            )
        else:
            leaf = plan.leaves[index]
            try:
                sol = solve_first_layer(node_target, leaf.heralds, settings, seed=node_seed)
            except SolverError as exc:
                return _failed_result(plan, drafts, settings, t_start, (layer, index), str(exc))
            drafts.append(
                dict(
                    layer=layer,
                    index=index,
                    budget=node_target.cutoff,
                    kind="leaf",
                    circuit=sol.params,
                    local_fidelity=sol.fidelity,
                    herald_probability=sol.herald_probability,
                    seed=node_seed,
                    wall_time_s=time.perf_counter() - t0,
                    trace=sol.trace,
                    sub_target=node_target,
                )
            )

    nodes, end_fid, p_total, p_first = _compose(plan, drafts, root_target)
    return SynthesisResult(
        plan=plan,
        nodes=tuple(nodes),
        seed=settings.seed,
        wall_time_s=time.perf_counter() - t_start,
        end_to_end_fidelity=end_fid,
        p_success_total=p_total,
        p_success_first_layer=p_first,
    )


def _failed_result(plan, drafts, settings, t_start, node, message):
    nodes = tuple(NodeSolution(**d) for d in drafts)
    return SynthesisResult(
        plan=plan,
        nodes=nodes,
        seed=settings.seed,
        wall_time_s=time.perf_counter() - t_start,
        failed_node=node,
        failure_message=message,
    )


def _compose(plan: LayerPlan, drafts: list[dict], root_target: FockVector):
    """Forward pass over solved drafts: actual outputs, probabilities, fidelity."""
    by_node = {(d["layer"], d["index"]): d for d in drafts}
    states: dict[tuple[int, int], FockVector] = {}
    p_total = 1.0
    p_first = 1.0

    for index, leaf in enumerate(plan.leaves):
        d = by_node[(1, index)]
        pattern = DetectionPattern(leaf.heralds, tuple(range(1, leaf.input_count)))
        state, probability = heralded_state(d["circuit"].state(), pattern, 0, leaf.budget)
        states[(1, index)] = state
        d["output"] = state
        d["herald_probability"] = probability
        p_total *= probability
        p_first *= probability

    for layer in range(2, plan.n_layers + 1):
        for index in range(1 << (plan.n_layers - layer)):
            d = by_node[(layer, index)]
            out, probability = couple_and_herald_zero(
                states[(layer - 1, 2 * index)], states[(layer - 1, 2 * index + 1)], d["theta"]
            )
            states[(layer, index)] = out
            d["output"] = out
            d["herald_probability"] = probability
            p_total *= probability

    root_state = states[(plan.n_layers, 0)]
    end_fid = fidelity(root_state, root_target)
    nodes = [NodeSolution(**d) for d in drafts]
    return nodes, end_fid, p_total, p_first


def forward_verify(result: SynthesisResult, target: FockVector) -> tuple[float, float]:
    """Re-simulate the solved tree from scratch and check it against the record.

    Leaf circuits are re-heralded from their parameters, coupled up the
    tree, and compared with the target; the fidelity and total success
    probability must match the stored result to 1e-6 (same arithmetic,
    opposite traversal), otherwise something is broken internally.
    """
    if not result.complete:
        raise ContractError(f"result is incomplete (failed at {result.failed_node})")
    if not target.normalized:
        raise ContractError("verification target must be normalized")
    plan = result.plan
    if target.cutoff > plan.root_budget:
        raise ContractError("target cutoff exceeds the plan budget")
    root_target = pad_to(target, plan.root_budget)

    states: dict[tuple[int, int], FockVector] = {}
    p_total = 1.0
    for index, leaf in enumerate(plan.leaves):
        node = result.node(1, index)
        pattern = DetectionPattern(leaf.heralds, tuple(range(1, leaf.input_count)))
        state, probability = heralded_state(node.circuit.state(), pattern, 0, leaf.budget)
        states[(1, index)] = state
        p_total *= probability
    for layer in range(2, plan.n_layers + 1):
        for index in range(1 << (plan.n_layers - layer)):
            node = result.node(layer, index)
            out, probability = couple_and_herald_zero(
                states[(layer - 1, 2 * index)], states[(layer - 1, 2 * index + 1)], node.theta
            )
            states[(layer, index)] = out
            p_total *= probability

    fid = fidelity(states[(plan.n_layers, 0)], root_target)
    if abs(fid - result.end_to_end_fidelity) > 1e-6:
        raise ConsistencyError(
            f"forward fidelity {fid:.9f} disagrees with recorded "
            f"{result.end_to_end_fidelity:.9f}"
        )
    if not math.isclose(p_total, result.p_success_total, rel_tol=1e-6, abs_tol=0.0):
        raise ConsistencyError(
            f"forward success probability {p_total:.6e} disagrees with recorded "
            f"{result.p_success_total:.6e}"
        )
    return fid, p_total


# ---------------------------------------------------------------------------
# result serialization (structured text)
# ---------------------------------------------------------------------------


def _vector_to_json(v: FockVector | None):
    if v is None:
        return None
    return [[float(a.real), float(a.imag)] for a in v.amplitudes]


def _vector_from_json(data, normalized):
    if data is None:
        return None
    amps = np.array([complex(re, im) for re, im in data])
    return FockVector(amps, normalized=normalized)


def result_to_json(result: SynthesisResult) -> dict:
    nodes = []
    for n in result.nodes:
        entry = {
            "layer": n.layer,
            "index": n.index,
            "budget": n.budget,
            "kind": n.kind,
            "local_fidelity": n.local_fidelity,
            "herald_probability": n.herald_probability,
            "seed": n.seed,
            "wall_time_s": n.wall_time_s,
            "theta": n.theta,
            "sub_target": _vector_to_json(n.sub_target),
            "output": _vector_to_json(n.output),
            "trace": {
                "restart_best": list(n.trace.restart_best),
                "restart_evals": list(n.trace.restart_evals),
                "restart_converged": list(n.trace.restart_converged),
                "best_index": n.trace.best_index,
            },
        }
        if n.circuit is not None:
            entry["circuit"] = {
                "squeezes": [[r, p] for r, p in n.circuit.squeezes],
                "displacements": [[a.real, a.imag] for a in n.circuit.displacements],
                "mesh": [[t, p] for t, p in n.circuit.mesh],
                "r_max": n.circuit.r_max,
                "ops": n.circuit.to_ops(),
            }
        nodes.append(entry)
    return {
        "format": "oqss-synthesis-result-v1",
        "seed": result.seed,
        "wall_time_s": result.wall_time_s,
        "plan": {
            "n_layers": result.plan.n_layers,
            "leaves": [
                {"input_count": leaf.input_count, "heralds": list(leaf.heralds)}
                for leaf in result.plan.leaves
            ],
        },
        "end_to_end_fidelity": result.end_to_end_fidelity,
        "p_success_total": result.p_success_total,
        "p_success_first_layer": result.p_success_first_layer,
        "failed_node": list(result.failed_node) if result.failed_node else None,
        "failure_message": result.failure_message,
        "nodes": nodes,
    }


def result_from_json(data: dict) -> SynthesisResult:
    from .errors import FormatError

    if not isinstance(data, dict) or data.get("format") != "oqss-synthesis-result-v1":
        raise FormatError("not a synthesis result document")
    try:
        plan = LayerPlan(
            n_layers=data["plan"]["n_layers"],
            leaves=tuple(
                LeafSpec(leaf["input_count"], tuple(leaf["heralds"]))
                for leaf in data["plan"]["leaves"]
            ),
        )
        nodes = []
        for entry in data["nodes"]:
            circuit = None
            if "circuit" in entry:
                c = entry["circuit"]
                circuit = CircuitParams(
                    squeezes=tuple((r, p) for r, p in c["squeezes"]),
                    displacements=tuple(complex(re, im) for re, im in c["displacements"]),
                    mesh=tuple((t, p) for t, p in c["mesh"]),
                    r_max=c["r_max"],
                )
            trace = OptTrace(
                restart_best=tuple(entry["trace"]["restart_best"]),
                restart_evals=tuple(entry["trace"]["restart_evals"]),
                restart_converged=tuple(bool(b) for b in entry["trace"]["restart_converged"]),
                best_index=entry["trace"]["best_index"],
            )
            nodes.append(
                NodeSolution(
                    layer=entry["layer"],
                    index=entry["index"],
                    budget=entry["budget"],
                    kind=entry["kind"],
                    local_fidelity=entry["local_fidelity"],
                    herald_probability=entry["herald_probability"],
                    seed=entry["seed"],
                    wall_time_s=entry["wall_time_s"],
                    trace=trace,
                    theta=entry["theta"],
                    circuit=circuit,
                    sub_target=_vector_from_json(entry["sub_target"], normalized=True),
                    output=_vector_from_json(entry["output"], normalized=True),
                )
            )
        failed = data["failed_node"]
        return SynthesisResult(
            plan=plan,
            nodes=tuple(nodes),
            seed=data["seed"],
            wall_time_s=data["wall_time_s"],
            end_to_end_fidelity=data["end_to_end_fidelity"],
            p_success_total=data["p_success_total"],
            p_success_first_layer=data["p_success_first_layer"],
            failed_node=tuple(failed) if failed else None,
            failure_message=data["failure_message"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed synthesis result: {exc}") from exc
