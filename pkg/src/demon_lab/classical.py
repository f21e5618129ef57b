"""Fully classical measurement-feedback chains and their information measures.

The joint distribution over (b_1, y_1, b_2, y_2, ..., y_N, b_{N+1}) is stored
as one array with that axis order, so every information quantity is an
exact marginalization.
"""

from dataclasses import dataclass, field

import numpy as np

from .channels import ClassicalProcessSpec, embed_classical, windows
from .ensemble import ExperimentConfig, backward_qct, evolve_history_tree, qct_entropy, transfer_entropy
from .errors import EnumerationCapError, ValidationError
from .trajectory.contraction import (
    combine,
    extremes,
    level_tensors,
    probability_factors,
    stochastic_terms,
)
from .trajectory.unraveling import build_bases

MAX_CYCLES = 12
TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ClassicalHistoryTable:
    joint: np.ndarray
    cycles: int

    def b_axis(self, n):
        return 2 * (n - 1)

    def y_axis(self, n):
        return 2 * n - 1

    def y_axes(self, first, last):
        """Axes of y_first..y_last (empty when first > last)."""
        return [self.y_axis(m) for m in range(max(first, 1), last + 1)]

    def marginal(self, axes):
        axes = sorted(set(axes))
        drop = tuple(i for i in range(self.joint.ndim) if i not in axes)
        return self.joint.sum(axis=drop)


def history_table(spec, initial, cycles):
    """Exact joint distribution of the classical chain."""
    if cycles < 1 or cycles > MAX_CYCLES:
        raise EnumerationCapError(f"classical tables support 1..{MAX_CYCLES} cycles")
    p = np.asarray(initial, float)
    d, ny = spec.dim, spec.alphabet
    if p.shape != (d,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise ValidationError("initial distribution must be a probability vector over the states")
    if d ** (cycles + 1) * ny ** cycles > 2 ** 26:
        raise EnumerationCapError("joint table too large")
    q = spec.readout.sum(axis=1)  # q(y|i)
    joint = p
    for n in range(1, cycles + 1):
        joint = joint[..., None] * q.T  # append y_n
        length = min(n, spec.order)
        nxt = np.zeros(joint.shape + (d,))
        for w in windows(ny, length):
            if len(w) != length:
                continue
            idx = [slice(None)] * joint.ndim
            for offset, v in enumerate(w):
                idx[2 * (n - length + offset) + 1] = v
            idx = tuple(idx)
            nxt[idx] = joint[idx][..., None] * spec.feedback[w].T
        joint = nxt
    return ClassicalHistoryTable(joint, cycles)


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def conditional_mutual_information(table, a_axes, b_axes, c_axes=()):
    a, b, c = list(a_axes), list(b_axes), list(c_axes)
    h = lambda ax: _entropy(table.marginal(ax)) if ax else 0.0
    return h(a + c) + h(b + c) - h(a + b + c) - h(c)


def classical_te(table, n):
    """I(b_n : y_n | Y_{n-1})."""
    if not 1 <= n <= table.cycles:
        raise ValidationError(f"cycle {n} out of range")
    return conditional_mutual_information(
        table, [table.b_axis(n)], [table.y_axis(n)], table.y_axes(1, n - 1))


def backward_te(table, k):
    """Backward transfer entropy of order ``k``."""
    N = table.cycles
    total = 0.0
    for n in range(k + 1, N + 1):
        total += conditional_mutual_information(
            table, [table.b_axis(n)], [table.y_axis(n - k)], table.y_axes(n - k + 1, N))
    total += conditional_mutual_information(table, [table.b_axis(N + 1)], table.y_axes(N - k + 1, N))
    return total


def chain_rule_residuals(table, k):
    """Largest values of the two conditional mutual informations that must vanish."""
    N = table.cycles
    first = [conditional_mutual_information(
        table, [table.y_axis(n)], table.y_axes(1, n - k - 1),
        [table.b_axis(n)] + table.y_axes(n - k, n - 1)) for n in range(k + 2, N + 1)]
    second = [conditional_mutual_information(
        table, table.y_axes(n + 1, N), [table.y_axis(n - k)],
        [table.b_axis(n)] + table.y_axes(n - k + 1, n)) for n in range(k + 1, N)]
    return max(first, default=0.0), max(second, default=0.0)


# ---------------------------------------------------------------------------

def classical_config(spec, initial, cycles):
    """Quantum embedding of a classical chain as an ExperimentConfig."""
    measurement, feedback = embed_classical(spec)
    return ExperimentConfig(np.diag(np.asarray(initial, float)).astype(complex), measurement, cycles,
                            feedback=feedback, check_thermal=False)


def classify(cfg):
    """Names of operators that would create coherence in the computational basis."""
    bad = []
    meas = cfg.measurement_array
    for y in range(meas.shape[0]):
        for z in range(meas.shape[1]):
            m = meas[y, z]
            if np.max(np.abs(m - np.diag(np.diag(m)))) > TOL:
                bad.append(f"measurement[y={y}, z={z}]")
    for w, ch in cfg.feedback.items():
        for label, op in zip(ch.kraus.labels, ch.operators):
            if np.any(np.sum(np.abs(op) > TOL, axis=0) > 1):
                bad.append(f"feedback[window={w}, kraus={label}]")
    return bad


def extract_spec(cfg):
    meas = cfg.measurement_array
    q = np.abs(np.einsum("yzii->yzi", meas)) ** 2
    fb = {w: np.sum(np.abs(ch.operators) ** 2, axis=0) for w, ch in cfg.feedback.items()}
    return ClassicalProcessSpec(q, fb, cfg.feedback_order)


@dataclass
class ReductionReport:
    fully_classical: bool
    violations: list = field(default_factory=list)
    diagonal_deviation: float = float("nan")
    label_mismatch: float = float("nan")
    qct_te_trajectory: float = float("nan")
    qct_te_average: float = float("nan")
    backward: dict = field(default_factory=dict)
    chain_rules: dict = field(default_factory=dict)

    @property
    def passed(self):
        if not self.fully_classical:
            return False
        vals = [self.diagonal_deviation, self.label_mismatch, self.qct_te_trajectory, self.qct_te_average]
        vals += [abs(a - b) for a, b in self.backward.values()]
        vals += [max(v) for v in self.chain_rules.values()]
        return all(v <= TOL for v in vals)


def reduction_checks(cfg, orders=(1, 2, 3)):
    """Check that the quantum measures collapse to their classical counterparts."""
    bad = classify(cfg)
    if bad:
        return ReductionReport(False, bad)
    N = cfg.cycles
    tree = evolve_history_tree(cfg)
    diag = 0.0
    for level in tree.rho[1:] + tree.tau[1:]:
        off = level - np.einsum("hii->hi", level)[..., None] * np.eye(cfg.dim)
        diag = max(diag, float(np.max(np.abs(off))))

    bases = build_bases(tree, "fine")
    tensors = level_tensors(bases)
    mismatch = 0.0
    for n in range(1, N + 1):
        bv, _ = bases.b_full(n)
        av, _ = bases.a_full(n)
        H = bv.shape[0]
        av = av.reshape(H, -1, *av.shape[1:])
        overlap = np.abs(np.einsum("hyia,hib->hyab", av.conj(), bv)) ** 2
        live = tensors[n].meas > 1e-14
        gap = np.where(live, 1.0 - overlap[:, :, None, :, :], 0.0)
        mismatch = max(mismatch, float(np.max(np.abs(gap))))

    probs = probability_factors(bases, tensors)
    diff = combine([(1.0, stochastic_terms(bases, "i_qct")), (-1.0, stochastic_terms(bases, "i_te"))])
    lo, hi = extremes(probs, diff)
    per_traj = float(max(np.max(np.abs(lo)), np.max(np.abs(hi))))
    avg = float(np.max(np.abs(qct_entropy(tree).cumulative - transfer_entropy(tree).cumulative)))

    spec = extract_spec(cfg)
    initial = np.real(np.diag(cfg.initial_state))
    table = history_table(spec, initial, N)
    backward = {k: (backward_qct(tree, k).value, backward_te(table, k)) for k in orders}
    chains = {k: chain_rule_residuals(table, k) for k in orders}
    return ReductionReport(True, [], diag, mismatch, per_traj, avg, backward, chains)
