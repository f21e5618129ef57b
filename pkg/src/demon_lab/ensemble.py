"""Exact history-tree evolution and ensemble-level thermodynamic bookkeeping.

Outcome histories are encoded as integers with the most recent outcome in
the least significant digit, so appending ``y`` maps ``h -> h * ny + y`` and
the window of the last ``k`` outcomes is ``h % ny**k``.
"""

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from .channels import (
    BathChannel,
    FeedbackPolicy,
    LabeledKrausSet,
    MeasurementModel,
    bloch_rotation,
    policy_angle,
    validate_thermal,
    windows,
)
from .errors import ConfigError, EnumerationCapError, ValidationError
from .qmath import entropies, spectral_decompose_batch, validate_density_matrix

PRUNE = 1e-15
DEFAULT_CAP = 16


def window_index(window, alphabet):
    idx = 0
    for v in window:
        idx = idx * alphabet + int(v)
    return idx


def history_digits(h, length, alphabet):
    """Outcomes of history ``h`` in chronological order."""
    out = []
    for _ in range(length):
        h, r = divmod(h, alphabet)
        out.append(r)
    return tuple(reversed(out))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything needed to evolve the measurement-feedback process.

    ``measurement`` is a (y, z)-labeled Kraus set or a MeasurementModel.
    Feedback comes either from ``policy`` (x-rotation before ``bath``) or from
    an explicit ``feedback`` map window -> BathChannel of a given order.
    """

    initial_state: np.ndarray
    measurement: object
    cycles: int
    policy: Optional[FeedbackPolicy] = None
    bath: Optional[BathChannel] = None
    feedback: Optional[Mapping] = None
    final_basis: Optional[np.ndarray] = None
    initial_basis: Optional[np.ndarray] = None
    samples: int = 0
    seed: int = 0
    enumeration_cap: int = DEFAULT_CAP
    calibration: Mapping = field(default_factory=dict)
    name: str = ""
    check_thermal: bool = True
    meta: object = None

    def __post_init__(self):
        rho = validate_density_matrix(self.initial_state)
        d = rho.shape[0]
        kraus = self.measurement.kraus if isinstance(self.measurement, MeasurementModel) else self.measurement
        if not isinstance(kraus, LabeledKrausSet):
            raise ConfigError("measurement must be a LabeledKrausSet or MeasurementModel")
        if kraus.dim != d:
            raise ConfigError("measurement dimension does not match the initial state")
        kraus.require_trace_preserving()
        if int(self.cycles) != self.cycles or self.cycles < 1:
            raise ConfigError("cycles must be a positive integer")

        ny = 1 + max(lab[0] for lab in kraus.labels)
        nz = 1 + max(lab[1] for lab in kraus.labels)
        meas = np.zeros((ny, nz, d, d), dtype=complex)
        for (y, z), op in zip(kraus.labels, kraus.operators):
            meas[y, z] = op
        meas.setflags(write=False)

        fin = np.eye(d, dtype=complex) if self.final_basis is None else np.asarray(self.final_basis, complex)
        ini = np.eye(d, dtype=complex) if self.initial_basis is None else np.asarray(self.initial_basis, complex)
        for name, b in (("final", fin), ("initial", ini)):
            if b.shape != (d, d) or np.max(np.abs(b.conj().T @ b - np.eye(d))) > 1e-10:
                raise ConfigError(f"{name} basis must be a {d}x{d} unitary (columns)")
        in_basis = ini.conj().T @ rho @ ini
        if np.max(np.abs(in_basis - np.diag(np.diag(in_basis)))) > 1e-12:
            raise ConfigError("initial state must be diagonal in the initial measurement basis")

        if self.feedback is not None:
            table = {tuple(w): ch for w, ch in self.feedback.items()}
            order = max(len(w) for w in table)
            missing = [w for w in windows(ny, order) if w not in table]
            if missing:
                raise ConfigError(f"feedback channel missing for windows {missing[:4]}")
        elif self.policy is not None and self.bath is not None:
            if d != 2:
                raise ConfigError("rotation policies act on qubits only")
            order = self.policy.order
            table = {w: self.bath.after_unitary(bloch_rotation("x", policy_angle(self.policy, w)))
                     for w in windows(ny, order)}
        else:
            raise ConfigError("either a policy with a bath or explicit feedback channels is required")

        betas = {ch.beta for ch in table.values()}
        if len(betas) != 1:
            raise ConfigError("all feedback channels must share one inverse temperature")
        for w, ch in table.items():
            if ch.kraus.dim != d:
                raise ConfigError(f"feedback channel for {w} has wrong dimension")
            ch.kraus.require_trace_preserving()
            if self.check_thermal:
                rep = validate_thermal(ch)
                if not rep.ok:
                    raise ConfigError(
                        f"feedback channel for {w} violates the thermal condition "
                        f"(deviation {rep.detailed_balance_deviation:.3e})")

        kmax = max(len(ch.kraus) for ch in table.values())
        chan_ops, chan_en = [], []
        for length in range(1, order + 1):
            ops = np.zeros((ny ** length, kmax, d, d), dtype=complex)
            en = np.zeros((ny ** length, kmax))
            for w in windows(ny, length):
                ch = table[w]
                i = window_index(w, ny)
                ops[i, :len(ch.kraus)] = ch.operators
                en[i, :len(ch.kraus)] = ch.energies
            ops.setflags(write=False)
            en.setflags(write=False)
            chan_ops.append(ops)
            chan_en.append(en)

        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("initial_state", rho)
        set_("final_basis", fin)
        set_("initial_basis", ini)
        set_("cycles", int(self.cycles))
        set_("feedback", MappingProxyType(table))
        set_("calibration", MappingProxyType(dict(self.calibration)))
        set_("_meas", meas)
        set_("_order", order)
        set_("_chan_ops", tuple(chan_ops))
        set_("_chan_en", tuple(chan_en))
        set_("_beta", betas.pop())

    @property
    def dim(self):
        return self.initial_state.shape[0]

    @property
    def beta(self):
        return self._beta

    @property
    def measurement_array(self):
        """Measurement operators indexed ``[y, z]``."""
        return self._meas

    @property
    def alphabet(self):
        return self._meas.shape[0]

    @property
    def feedback_order(self):
        return self._order

    def channel_tables(self, n, histories):
        """Kraus operators and energies applied after measurement ``n`` for each history."""
        length = min(n, self._order)
        w = np.asarray(histories) % (self.alphabet ** length)
        return self._chan_ops[length - 1][w], self._chan_en[length - 1][w]

    def with_cycles(self, cycles):
        return _replace(self, cycles=cycles)


def _replace(cfg, **changes):
    fields = dict(
        initial_state=cfg.initial_state, measurement=cfg.measurement, cycles=cfg.cycles,
        policy=cfg.policy, bath=cfg.bath,
        feedback=None if cfg.policy is not None and cfg.bath is not None else dict(cfg.feedback),
        final_basis=cfg.final_basis, initial_basis=cfg.initial_basis, samples=cfg.samples,
        seed=cfg.seed, enumeration_cap=cfg.enumeration_cap, calibration=dict(cfg.calibration),
        name=cfg.name, check_thermal=cfg.check_thermal, meta=cfg.meta,
    )
    fields.update(changes)
    return ExperimentConfig(**fields)


def dephase(states, basis):
    """Dephase a stack of states in the basis given by the columns of ``basis``."""
    inb = np.einsum("ai,...ij,jb->...ab", basis.conj().T, states, basis)
    diag = np.einsum("...ii->...i", inb)
    return np.einsum("ia,...a,aj->...ij", basis, diag, basis.conj().T)


@dataclass(frozen=True, eq=False)
class HistoryTree:
    """Exact conditional states for every outcome history.

    Lists are indexed by cycle: ``prob[n]`` and ``tau[n]`` run over Y_n
    (n = 0..N and 1..N), ``rho[n]`` over Y_{n-1} (n = 1..N+1) and
    ``rho_final`` holds the final-basis dephased ``rho[N+1]``.
    ``heat[n-1]`` is the ensemble heat of cycle ``n``.
    """

    cfg: ExperimentConfig
    prob: list
    rho: list
    tau: list
    pruned: list
    heat: np.ndarray
    rho_final: np.ndarray

    @property
    def cycles(self):
        return self.cfg.cycles

    @property
    def alphabet(self):
        return self.cfg.alphabet

    @property
    def dim(self):
        return self.cfg.dim

    def average_state(self, level):
        """Unconditional state before measurement ``level`` (level N+1 is undephased final)."""
        return np.einsum("h,hij->ij", self.prob[level - 1], self.rho[level])

    def dephased_next(self, n):
        """rho_{n+1}^{Y_n} dephased in the final measurement basis."""
        return dephase(self.rho[n + 1], self.cfg.final_basis)


def evolve_history_tree(cfg):
    N, d = cfg.cycles, cfg.dim
    if N > cfg.enumeration_cap:
        raise EnumerationCapError(f"{N} cycles exceed the enumeration cap {cfg.enumeration_cap}")
    meas = cfg.measurement_array
    ny = meas.shape[0]
    prob = [np.ones(1)]
    rho = [None, cfg.initial_state[None].copy()]
    tau = [None]
    pruned = [np.zeros(1, bool)]
    heat = np.zeros(N)
    eye = np.eye(d) / d
    for n in range(1, N + 1):
        r = rho[n]
        unnorm = np.einsum("yzij,hjk,yzlk->hyil", meas, r, meas.conj())
        p_y = np.real(np.einsum("hyii->hy", unnorm))
        joint = (prob[n - 1][:, None] * p_y).reshape(-1)
        ok = (joint > PRUNE).reshape(p_y.shape)
        safe = np.where(ok, p_y, 1.0)
        t = np.where(ok[..., None, None], unnorm / safe[..., None, None], eye)
        t = t.reshape(-1, d, d)
        t = 0.5 * (t + t.conj().transpose(0, 2, 1))
        hist = np.arange(t.shape[0])
        ops, en = cfg.channel_tables(n, hist)
        out = np.einsum("hkij,hjl,hkml->hkim", ops, t, ops.conj())
        weights = np.real(np.einsum("hkii->hk", out))
        heat[n - 1] = -float(np.sum(joint * np.sum(weights * en, axis=1)))
        nxt = out.sum(axis=1)
        nxt = 0.5 * (nxt + nxt.conj().transpose(0, 2, 1))
        prob.append(joint)
        tau.append(t)
        rho.append(nxt)
        pruned.append(~ok.reshape(-1))
    rho_final = dephase(rho[N + 1], cfg.final_basis)
    return HistoryTree(cfg, prob, rho, tau, pruned, heat, rho_final)


# ---------------------------------------------------------------------------
# marginals and conditional entropies

def _group(probs, states, alphabet, length, k):
    """Regroup level arrays by the last ``k`` outcomes (``None`` keeps full histories)."""
    groups = alphabet ** (length if k is None else min(k, length))
    weighted = (probs[:, None, None] * states).reshape(-1, groups, *states.shape[1:]).sum(axis=0)
    p = probs.reshape(-1, groups).sum(axis=0)
    ok = p > PRUNE
    d = states.shape[-1]
    out = np.where(ok[:, None, None], weighted / np.where(ok, p, 1.0)[:, None, None], np.eye(d) / d)
    return p, out, ~ok


@dataclass(frozen=True)
class Marginal:
    """States grouped by the last ``k`` outcomes; ``flagged`` marks zero-probability groups."""

    probs: np.ndarray
    states: np.ndarray
    flagged: np.ndarray

    def as_map(self, alphabet, length):
        return {history_digits(i, length, alphabet): (float(p), s)
                for i, (p, s) in enumerate(zip(self.probs, self.states))}


def marginalize_k(tree, k, n, kind="tau"):
    """Group the states of cycle ``n`` by the last ``k`` outcomes.

    ``kind`` selects tau_n (post-measurement), ``"rho"`` for rho_n (conditioned
    on Y_{n-1}), ``"next"`` for rho_{n+1} and ``"final"`` for the dephased
    rho_{n+1}.
    """
    if k is not None and k < 1:
        raise ValidationError("window order must be >= 1")
    if not 1 <= n <= tree.cycles + (1 if kind == "rho" else 0):
        raise ValidationError(f"cycle {n} out of range")
    if kind == "tau":
        probs, states, length = tree.prob[n], tree.tau[n], n
    elif kind == "rho":
        probs, states, length = tree.prob[n - 1], tree.rho[n], n - 1
    elif kind == "next":
        probs, states, length = tree.prob[n], tree.rho[n + 1], n
    elif kind == "final":
        probs, states, length = tree.prob[n], tree.dephased_next(n), n
    else:
        raise ValidationError(f"unknown state kind {kind!r}")
    return Marginal(*_group(probs, states, tree.alphabet, length, k))


def conditional_entropy(marginal):
    keep = ~marginal.flagged
    return float(np.sum(marginal.probs[keep] * entropies(marginal.states[keep])))


def _holevo(marginal):
    avg = np.einsum("h,hij->ij", marginal.probs, marginal.states)
    return float(entropies(avg)) - conditional_entropy(marginal)


def _cond_s(tree, k, n, kind):
    return conditional_entropy(marginalize_k(tree, k, n, kind))


# ---------------------------------------------------------------------------
# ledger quantities

@dataclass(frozen=True)
class CycleSeries:
    """Per-cycle increments together with their running sum (index n-1 for cycle n)."""

    increments: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_increments(cls, inc):
        inc = np.asarray(inc, float)
        return cls(inc, np.cumsum(inc))

    @classmethod
    def from_cumulative(cls, cum):
        cum = np.asarray(cum, float)
        return cls(np.diff(cum, prepend=0.0), cum)

    @property
    def total(self):
        return float(self.cumulative[-1])


def qct_entropy(tree):
    inc = [_cond_s(tree, None, n, "rho") - _cond_s(tree, None, n, "tau")
           for n in range(1, tree.cycles + 1)]
    return CycleSeries.from_increments(inc)


def _te_increment(tree, n):
    meas = tree.cfg.measurement_array
    probs, states = tree.prob[n - 1], tree.rho[n]
    w, v = spectral_decompose_batch(states)
    w = np.clip(w, 0.0, None)
    # p(y|b) = sum_z |M_yz b|^2
    amp = np.einsum("yzij,hjb->hyzib", meas, v)
    p_yb = np.sum(np.abs(amp) ** 2, axis=(2, 3))
    joint = w[:, None, :] * p_yb
    p_y = joint.sum(axis=2, keepdims=True)
    ratio = np.where(joint > PRUNE, joint / np.where(p_y > 0, p_y, 1.0) / np.where(w[:, None, :] > 0, w[:, None, :], 1.0), 1.0)
    info = np.sum(np.where(joint > PRUNE, joint * np.log(ratio), 0.0), axis=(1, 2))
    return float(np.dot(probs, info))


def transfer_entropy(tree):
    return CycleSeries.from_increments([_te_increment(tree, n) for n in range(1, tree.cycles + 1)])


@dataclass(frozen=True)
class FeedbackInfo:
    """Net feedback information for one window order ``k``.

    ``consumed[n-1]`` is chi(tau_n:Y_n^k) - chi(rho_{n+1}:Y_n^k),
    ``consumed_final[n-1]`` the same with rho_{n+1} dephased in the final
    basis (used when cycle n is the last one) and ``backaction[n-1]`` is
    S(tau_n) - S(rho_n) on unconditional states.
    """

    k: int
    consumed: np.ndarray
    consumed_final: np.ndarray
    backaction: np.ndarray
    series: CycleSeries

    @property
    def cumulative(self):
        return self.series.cumulative

    @property
    def increments(self):
        return self.series.increments


def fb_information(tree, k):
    if k is None or k < 1:
        raise ValidationError("window order must be >= 1")
    N = tree.cycles
    consumed, consumed_final, back = np.zeros(N), np.zeros(N), np.zeros(N)
    for n in range(1, N + 1):
        chi_tau = _holevo(marginalize_k(tree, k, n, "tau"))
        consumed[n - 1] = chi_tau - _holevo(marginalize_k(tree, k, n, "next"))
        consumed_final[n - 1] = chi_tau - _holevo(marginalize_k(tree, k, n, "final"))
        s_tau = float(entropies(np.einsum("h,hij->ij", tree.prob[n], tree.tau[n])))
        s_rho = float(entropies(tree.average_state(n)))
        back[n - 1] = s_tau - s_rho
    interior = np.concatenate([[0.0], np.cumsum(consumed)[:-1]])
    cum = interior + consumed_final - np.cumsum(back)
    return FeedbackInfo(k, consumed, consumed_final, back, CycleSeries.from_cumulative(cum))


@dataclass(frozen=True)
class BackwardInfo:
    """Backward transfer entropy per prefix via two independent routes."""

    k: int
    by_difference: np.ndarray
    by_holevo: np.ndarray

    @property
    def value(self):
        return float(self.by_holevo[-1])

    @property
    def discrepancy(self):
        return float(np.max(np.abs(self.by_difference - self.by_holevo)))


def _cond_holevo_lost(tree, k, n, kind):
    """chi(state : Y_{n-k} | Y_n^k) = S(state | Y_n^k) - S(state | Y_n), Y_{n-k} the older outcomes."""
    return _cond_s(tree, k, n, kind) - _cond_s(tree, None, n, kind)


def backward_qct(tree, k):
    if k is None or k < 1:
        raise ValidationError("window order must be >= 1")
    N = tree.cycles
    route1 = qct_entropy(tree).cumulative - fb_information(tree, k).cumulative
    route2 = np.zeros(N)
    interior = 0.0
    for n in range(1, N + 1):
        final = _holevo(marginalize_k(tree, None, n, "final"))
        last = 0.0
        if n > k:
            tau_term = _cond_holevo_lost(tree, k, n, "tau")
            last = tau_term - _cond_holevo_lost(tree, k, n, "final")
            inter = tau_term - _cond_holevo_lost(tree, k, n, "next")
        else:
            inter = 0.0
        route2[n - 1] = interior + last + final
        interior += inter
    return BackwardInfo(k, route1, route2)


@dataclass(frozen=True)
class Production:
    """Prefix values: ``sigma[n-1]`` and ``heat[n-1]`` for the process stopped after cycle n."""

    sigma: np.ndarray
    heat: np.ndarray

    @property
    def total(self):
        return float(self.sigma[-1]), float(self.heat[-1])


def entropy_production(tree):
    N = tree.cycles
    s1 = float(entropies(tree.cfg.initial_state))
    heat = np.cumsum(tree.heat)
    sigma = np.zeros(N)
    for n in range(1, N + 1):
        final = np.einsum("h,hij->ij", tree.prob[n], tree.dephased_next(n))
        sigma[n - 1] = float(entropies(final)) - s1 - tree.cfg.beta * heat[n - 1]
    return Production(sigma, heat)


def efficiency(tree, n):
    """-<sigma>/<i_QCT> after cycle ``n``; ``None`` when no information was gained."""
    if not 1 <= n <= tree.cycles:
        raise ValidationError(f"cycle {n} out of range")
    info = qct_entropy(tree).cumulative[n - 1]
    if info <= 1e-12:
        return None
    return -float(entropy_production(tree).sigma[n - 1]) / float(info)


def population(tree, level, index):
    """Diagonal element of the unconditional state before measurement ``level``."""
    if not 1 <= level <= tree.cycles + 1:
        raise ValidationError(f"level {level} out of range")
    if not 0 <= index < tree.dim:
        raise ValidationError(f"basis index {index} out of range")
    return float(np.real(tree.average_state(level)[index, index]))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermoLedger:
    """Per-cycle ensemble quantities; every series is indexed by cycle n-1."""

    sigma: CycleSeries
    heat: CycleSeries
    i_qct: CycleSeries
    i_te: CycleSeries
    i_fb: Mapping
    bqc: Mapping
    efficiency: list
    backaction: np.ndarray
    populations: np.ndarray

    @property
    def orders(self):
        return tuple(self.i_fb)


def thermo_ledger(tree, orders=(1,)):
    prod = entropy_production(tree)
    qct = qct_entropy(tree)
    fb = {k: fb_information(tree, k) for k in orders}
    bqc = {k: backward_qct(tree, k) for k in orders}
    eta = [None if qct.cumulative[i] <= 1e-12 else -prod.sigma[i] / qct.cumulative[i]
           for i in range(tree.cycles)]
    back = next(iter(fb.values())).backaction if fb else fb_information(tree, 1).backaction
    pops = np.array([np.real(np.diag(tree.average_state(n + 1))) for n in range(1, tree.cycles + 1)])
    return ThermoLedger(
        sigma=CycleSeries.from_cumulative(prod.sigma),
        heat=CycleSeries.from_cumulative(prod.heat),
        i_qct=qct,
        i_te=transfer_entropy(tree),
        i_fb={k: v.series for k, v in fb.items()},
        bqc={k: CycleSeries.from_cumulative(v.by_holevo) for k, v in bqc.items()},
        efficiency=eta,
        backaction=back,
        populations=pops,
    )
