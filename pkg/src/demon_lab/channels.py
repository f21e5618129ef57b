"""Readout instruments, feedback rotations and labeled-Kraus baths."""

from dataclasses import dataclass
from itertools import product
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.stats import poisson

from .errors import ConfigError, ValidationError

TP_TOL = 1e-10

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledKrausSet:
    """Kraus operators, each carrying an outcome label and a bath energy change."""

    operators: np.ndarray
    labels: tuple
    energies: np.ndarray = None

    def __post_init__(self):
        ops = np.asarray(self.operators, dtype=complex)
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2]:
            raise ValidationError(f"Kraus operators must have shape (K, d, d), got {ops.shape}")
        labels = tuple(self.labels)
        if len(labels) != len(ops):
            raise ValidationError("one label per Kraus operator required")
        if len(set(labels)) != len(labels):
            raise ValidationError("Kraus labels must be unique")
        energies = np.zeros(len(ops)) if self.energies is None else np.asarray(self.energies, float)
        if energies.shape != (len(ops),):
            raise ValidationError("one energy per Kraus operator required")
        object.__setattr__(self, "operators", _frozen(ops, complex))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "energies", _frozen(energies, float))

    @property
    def dim(self):
        return self.operators.shape[1]

    def __len__(self):
        return len(self.labels)

    def completeness_deviation(self):
        s = np.einsum("kji,kjl->il", self.operators.conj(), self.operators)
        return float(np.max(np.abs(s - np.eye(self.dim))))

    def require_trace_preserving(self):
        dev = self.completeness_deviation()
        if dev > TP_TOL:
            raise ValidationError(f"Kraus set not trace preserving (deviation {dev:.3e})")
        return self

    def apply(self, rho):
        return np.einsum("kij,jl,kml->im", self.operators, rho, self.operators.conj())

    def then_unitary_before(self, u):
        """Kraus set of ``self o U`` (apply ``u`` first)."""
        return LabeledKrausSet(self.operators @ u, self.labels, self.energies)


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """Two-outcome noisy readout with post-measurement label z."""

    delta0: float
    delta1: float
    kraus: LabeledKrausSet

    def povm(self):
        """POVM elements E_y = sum_z M_yz^dag M_yz keyed by y."""
        out = {}
        for (y, _), m in zip(self.kraus.labels, self.kraus.operators):
            out[y] = out.get(y, 0) + m.conj().T @ m
        return out


def make_readout_povm(delta0, delta1):
    for name, v in (("delta0", delta0), ("delta1", delta1)):
        if not (0.0 <= v <= 1.0):
            raise ValidationError(f"{name}={v!r} outside [0, 1]")
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    ops = [
        np.sqrt(1 - delta0) * p0,
        np.sqrt(delta1) * p1,
        np.sqrt(delta0) * p0,
        np.sqrt(1 - delta1) * p1,
    ]
    labels = ((0, 0), (0, 1), (1, 0), (1, 1))
    kraus = LabeledKrausSet(np.stack(ops), labels).require_trace_preserving()
    return MeasurementModel(float(delta0), float(delta1), kraus)


def poisson_readout_errors(mu_down, mu_up, threshold):
    """Misassignment rates for photon-count thresholding.

    ``delta0 = P(n >= threshold | ground)``, ``delta1 = P(n < threshold | excited)``.
    """
    if mu_down < 0 or mu_up < 0:
        raise ValidationError("Poisson means must be non-negative")
    if int(threshold) != threshold or threshold < 0:
        raise ValidationError("threshold must be a non-negative integer")
    n = int(threshold)
    delta0 = float(poisson.sf(n - 1, mu_down))
    delta1 = float(poisson.cdf(n - 1, mu_up))
    return delta0, delta1


def empirical_deltas(counts):
    """Readout errors from a table of counts keyed by (y, z)."""
    num = {(y, z): int(counts.get((y, z), 0)) for y in (0, 1) for z in (0, 1)}
    if any(v < 0 for v in num.values()):
        raise ValidationError("counts must be non-negative")
    ground = num[0, 0] + num[1, 0]
    excited = num[0, 1] + num[1, 1]
    if ground == 0 or excited == 0:
        raise ValidationError("each post-measurement state needs at least one count")
    return num[1, 0] / ground, num[0, 1] / excited


def bloch_rotation(axis, angle):
    """exp(-i angle/2 sigma_axis)."""
    try:
        sigma = PAULI[axis]
    except KeyError:
        raise ValidationError(f"unknown rotation axis {axis!r}") from None
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sigma


@dataclass(frozen=True, eq=False)
class BathChannel:
    """Labeled Kraus set acting as the heat bath, with inverse temperature."""

    kraus: LabeledKrausSet
    beta: float = 0.0

    @property
    def operators(self):
        return self.kraus.operators

    @property
    def energies(self):
        return self.kraus.energies

    def after_unitary(self, u):
        """Channel applying ``u`` first, then this bath."""
        return BathChannel(self.kraus.then_unitary_before(u), self.beta)


def make_bath_channel(varphi, phi, alpha, *, beta=0.0):
    """U_x(-varphi) o U_z(phi) o pure dephasing(alpha) o U_x(varphi).

    The dephasing keeps coherences with factor exp(-alpha); all three Kraus
    operators carry zero energy exchange.
    """
    if alpha < 0:
        raise ValidationError("alpha must be non-negative")
    keep = np.exp(-alpha)
    dephase = [
        np.sqrt(keep) * np.eye(2),
        np.sqrt(1 - keep) * np.diag([1.0, 0.0]),
        np.sqrt(1 - keep) * np.diag([0.0, 1.0]),
    ]
    pre = bloch_rotation("x", varphi)
    post = bloch_rotation("x", -varphi) @ bloch_rotation("z", phi)
    ops = np.stack([post @ k @ pre for k in dephase])
    kraus = LabeledKrausSet(ops, (0, 1, 2), np.zeros(3)).require_trace_preserving()
    return BathChannel(kraus, float(beta))


@dataclass(frozen=True)
class ThermalReport:
    ok: bool
    trace_deviation: float
    detailed_balance_deviation: float


def validate_thermal(channel):
    """Check sum K^dag K = I and sum K K^dag exp(-beta Delta) = I."""
    ops = channel.operators
    d = ops.shape[1]
    tp = np.einsum("kji,kjl->il", ops.conj(), ops)
    w = np.exp(-channel.beta * channel.energies)
    dual = np.einsum("k,kij,klj->il", w, ops, ops.conj())
    dev_tp = float(np.max(np.abs(tp - np.eye(d))))
    dev_dual = float(np.max(np.abs(dual - np.eye(d))))
    return ThermalReport(dev_tp <= TP_TOL and dev_dual <= TP_TOL, dev_tp, dev_dual)


def windows(alphabet, order):
    """All outcome windows of length 1..order, oldest outcome first."""
    for length in range(1, order + 1):
        yield from product(range(alphabet), repeat=length)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Map from the last ``min(n, order)`` outcomes to an x-rotation angle."""

    order: int
    rule: Mapping
    alphabet: int = 2
    name: str = "table"

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("policy order must be >= 1")
        rule = {tuple(int(v) for v in k): float(theta) for k, theta in dict(self.rule).items()}
        missing = [w for w in windows(self.alphabet, self.order) if w not in rule]
        if missing:
            raise ConfigError(f"policy rule has no angle for windows {missing[:4]}")
        object.__setattr__(self, "rule", MappingProxyType(rule))

    def __eq__(self, other):
        return (isinstance(other, FeedbackPolicy) and self.order == other.order
                and self.alphabet == other.alphabet and dict(self.rule) == dict(other.rule))

    def __hash__(self):
        return hash((self.order, self.alphabet, tuple(sorted(self.rule.items()))))


def policy_angle(policy, history):
    history = tuple(int(v) for v in history)
    if not history:
        raise ValidationError("feedback needs at least one outcome")
    window = history[-policy.order:]
    try:
        return policy.rule[window]
    except KeyError:
        raise ValidationError(f"no angle for window {window}") from None


def markov_ground_policy():
    """Flip after y = 1 so the qubit is driven towards |0>."""
    return FeedbackPolicy(1, {(0,): 0.0, (1,): np.pi}, name="ground")


def excited_state_policy(order):
    """Flip only when every outcome in the window reads 0."""
    rule = {w: (np.pi if all(v == 0 for v in w) else 0.0) for w in windows(2, order)}
    return FeedbackPolicy(order, rule, name="excited")


def constant_policy(theta, order=1):
    return FeedbackPolicy(order, {w: float(theta) for w in windows(2, order)}, name="constant")


@dataclass(frozen=True, eq=False)
class ClassicalProcessSpec:
    """Classical readout kernel and order-k feedback kernels.

    ``readout[y, z, i]`` is q(y, z | i). ``feedback[window][j, i]`` is
    w(j | i, window) for every window of length 1..order.
    """

    readout: np.ndarray
    feedback: Mapping
    order: int = 1

    def __post_init__(self):
        q = np.asarray(self.readout, dtype=float)
        if q.ndim != 3:
            raise ValidationError("readout kernel must have shape (ny, nz, d)")
        if np.any(q < 0) or np.max(np.abs(q.sum(axis=(0, 1)) - 1)) > TP_TOL:
            raise ValidationError("readout kernel must be a stochastic map for each input state")
        ny, _, d = q.shape
        fb = {}
        for w in windows(ny, self.order):
            if w not in self.feedback:
                raise ValidationError(f"feedback kernel missing for window {w}")
            m = np.asarray(self.feedback[w], dtype=float)
            if m.shape != (d, d) or np.any(m < 0) or np.max(np.abs(m.sum(axis=0) - 1)) > TP_TOL:
                raise ValidationError(f"feedback kernel for {w} must be column-stochastic {d}x{d}")
            fb[w] = _frozen(m, float)
        object.__setattr__(self, "readout", _frozen(q, float))
        object.__setattr__(self, "feedback", MappingProxyType(fb))

    @property
    def dim(self):
        return self.readout.shape[2]

    @property
    def alphabet(self):
        return self.readout.shape[0]


def embed_classical(spec):
    """Diagonal measurement and incoherent feedback reproducing ``spec``.

    Returns ``(measurement, feedback)`` where ``measurement`` is a
    LabeledKrausSet labeled by (y, z) and ``feedback`` maps each window to a
    BathChannel whose operators are sqrt(w(j|i)) |j><i|.
    """
    q = spec.readout
    ny, nz, d = q.shape
    ops, labels = [], []
    for y in range(ny):
        for z in range(nz):
            ops.append(np.diag(np.sqrt(q[y, z])).astype(complex))
            labels.append((y, z))
    measurement = LabeledKrausSet(np.stack(ops), labels).require_trace_preserving()
    feedback = {}
    for w, kernel in spec.feedback.items():
        kops, klabels = [], []
        for j in range(d):
            for i in range(d):
                op = np.zeros((d, d), dtype=complex)
                op[j, i] = np.sqrt(kernel[j, i])
                kops.append(op)
                klabels.append((j, i))
        feedback[w] = BathChannel(LabeledKrausSet(np.stack(kops), klabels).require_trace_preserving())
    return measurement, feedback
