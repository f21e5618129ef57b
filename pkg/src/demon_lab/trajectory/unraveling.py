"""Fine and coarse unravelings: bases, trajectory probabilities and stochastic quantities."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..ensemble import PRUNE, HistoryTree, marginalize_k, window_index
from ..errors import ValidationError, ZeroProbabilityError
from ..qmath import spectral_decompose_batch


@dataclass(frozen=True)
class TrajectoryLabel:
    """Full unraveling label: b has N+1 entries, the others N."""

    b: tuple
    y: tuple
    z: tuple
    a: tuple
    d: tuple

    def __post_init__(self):
        for name in ("b", "y", "z", "a", "d"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        n = len(self.y)
        if len(self.b) != n + 1 or not (len(self.z) == len(self.a) == len(self.d) == n):
            raise ValidationError("label lengths must be b: N+1 and y, z, a, d: N")

    @property
    def cycles(self):
        return len(self.y)


def _safe_log(p):
    return np.log(np.where(p > PRUNE, p, 1.0))


@dataclass(frozen=True, eq=False)
class UnravelingBases:
    """Measurement bases of an unraveling and their diagonal distributions.

    ``k`` is ``None`` for the fine unraveling (full-history conditioning).
    Lists are indexed by cycle n = 1..N. ``b_vecs[n]`` is grouped by the key of
    Y_{n-1}, ``a_vecs[n]`` by the key of Y_n; vectors are columns.
    ``final_cond[n]`` is p(b_{n+1}|key of Y_n) in the final basis and
    ``final_marg[n]`` the unconditional p(b_{n+1}), for the process stopped
    after cycle n.
    """

    tree: HistoryTree
    k: Optional[int]
    b_vecs: list
    b_probs: list
    b_group: list
    a_vecs: list
    a_probs: list
    a_group: list
    final_cond: list
    final_group: list
    final_marg: list

    @property
    def mode(self):
        return "fine" if self.k is None else "coarse"

    @property
    def cfg(self):
        return self.tree.cfg

    @property
    def cycles(self):
        return self.tree.cycles

    def key(self, h, length):
        """Group index of a history of the given length."""
        if self.k is None:
            return h
        return h % (self.tree.alphabet ** min(self.k, length))

    # per-history views ---------------------------------------------------
    def b_full(self, n):
        """b-basis vectors and probabilities for every Y_{n-1}."""
        h = np.arange(self.tree.prob[n - 1].shape[0])
        g = self.key(h, n - 1)
        return self.b_vecs[n][g], self.b_probs[n][g]

    def a_full(self, n):
        h = np.arange(self.tree.prob[n].shape[0])
        g = self.key(h, n)
        return self.a_vecs[n][g], self.a_probs[n][g]

    def final_full(self, n):
        h = np.arange(self.tree.prob[n].shape[0])
        return self.final_cond[n][self.key(h, n)]


ALIGN_TOL = 1e-9


def _align(w, v, ref):
    """Relabel each group's basis to follow ``ref`` when it is a permutation of it up to phases."""
    overlap = np.abs(np.einsum("gia,ib->gab", v.conj(), ref))
    crisp = np.all((overlap < ALIGN_TOL) | (np.abs(overlap - 1) < ALIGN_TOL), axis=(1, 2))
    for g in np.nonzero(crisp)[0]:
        order = np.argmax(overlap[g], axis=0)
        v[g] = v[g][:, order]
        w[g] = w[g][order]
    return w, v


def build_bases(tree, mode="fine", k=None):
    """Spectral bases for every conditional state of the chosen unraveling.

    Labels follow the canonical spectral order, except that a basis which is
    a relabeling of a reference basis takes the reference labels: a-bases
    refer to the computational basis and b-bases to the first b-basis of
    cycle 2. For the readout presets this makes a_n equal the readout label
    z_n and the b labels history independent.
    """
    if mode == "fine":
        k = None
    elif mode == "coarse":
        if k is None or k < 1:
            raise ValidationError("coarse unraveling needs an order k >= 1")
    else:
        raise ValidationError(f"unknown unraveling mode {mode!r}")
    cfg = tree.cfg
    N, d = tree.cycles, tree.dim
    b_vecs, b_probs, b_group = [None], [None], [None]
    a_vecs, a_probs, a_group = [None], [None], [None]
    final_cond, final_group, final_marg = [None], [None], [None]
    ini = cfg.initial_basis
    b_ref = None
    p1 = np.real(np.einsum("ia,ij,ja->a", ini.conj(), cfg.initial_state, ini))
    for n in range(1, N + 1):
        if n == 1:
            b_vecs.append(ini[None])
            b_probs.append(np.clip(p1, 0, None)[None])
            b_group.append(np.ones(1))
        else:
            m = marginalize_k(tree, k, n, "rho")
            w, v = spectral_decompose_batch(m.states)
            if b_ref is None:
                b_ref = v[int(np.argmax(m.probs))].copy()
            w, v = _align(w, v, b_ref)
            b_vecs.append(v)
            b_probs.append(np.clip(w, 0, None))
            b_group.append(m.probs)
        m = marginalize_k(tree, k, n, "tau")
        w, v = _align(*spectral_decompose_batch(m.states), np.eye(d))
        a_vecs.append(v)
        a_probs.append(np.clip(w, 0, None))
        a_group.append(m.probs)
        m = marginalize_k(tree, k, n, "final")
        fin = cfg.final_basis
        final_cond.append(np.clip(np.real(np.einsum("ia,gij,ja->ga", fin.conj(), m.states, fin)), 0, None))
        final_group.append(m.probs)
        final_marg.append(m.probs @ final_cond[-1])
    return UnravelingBases(tree, k, b_vecs, b_probs, b_group, a_vecs, a_probs, a_group,
                           final_cond, final_group, final_marg)


# ---------------------------------------------------------------------------
# single-trajectory evaluation, written directly from the defining products

def _prefix(y, n, alphabet):
    return window_index(y[:n], alphabet)


def _check_label(psi, bases):
    cfg = bases.cfg
    if psi.cycles != bases.cycles:
        raise ValidationError(f"label has {psi.cycles} cycles, bases have {bases.cycles}")
    meas = cfg.measurement_array
    ny, nz, d = meas.shape[0], meas.shape[1], cfg.dim
    kmax = cfg.channel_tables(1, [0])[0].shape[1]
    for name, vals, size in (("b", psi.b, d), ("y", psi.y, ny), ("z", psi.z, nz),
                             ("a", psi.a, d), ("d", psi.d, kmax)):
        if any(not 0 <= v < size for v in vals):
            raise ValidationError(f"label {name}={vals} outside 0..{size - 1}")


def _vectors(psi, bases, n):
    """(b_n vector, a_n vector, b_{n+1} vector) along the trajectory at cycle n."""
    ny = bases.tree.alphabet
    h_prev = _prefix(psi.y, n - 1, ny)
    h = _prefix(psi.y, n, ny)
    bv = bases.b_vecs[n][bases.key(h_prev, n - 1)][:, psi.b[n - 1]]
    av = bases.a_vecs[n][bases.key(h, n)][:, psi.a[n - 1]]
    if n < bases.cycles:
        cv = bases.b_vecs[n + 1][bases.key(h, n)][:, psi.b[n]]
    else:
        cv = bases.cfg.final_basis[:, psi.b[n]]
    return h, bv, av, cv


def trajectory_probability(psi, bases):
    """p(b_1) times the product of |<b_{n+1}| L_d Pi_a M_yz |b_n>|^2."""
    _check_label(psi, bases)
    cfg = bases.cfg
    meas = cfg.measurement_array
    prob = bases.b_probs[1][0, psi.b[0]]
    for n in range(1, bases.cycles + 1):
        h, bv, av, cv = _vectors(psi, bases, n)
        ops, _ = cfg.channel_tables(n, [h])
        m = meas[psi.y[n - 1], psi.z[n - 1]]
        amp = (cv.conj() @ ops[0, psi.d[n - 1]] @ av) * (av.conj() @ m @ bv)
        prob *= abs(amp) ** 2
    return float(prob)


@dataclass(frozen=True)
class StochasticRecord:
    sigma: float
    probability: float
    i_qct: Optional[float] = None
    i_te: Optional[float] = None
    i_fb_k: Optional[float] = None

    @property
    def info(self):
        return self.i_qct if self.i_fb_k is None else self.i_fb_k

    @property
    def weight(self):
        return float(np.exp(-self.sigma - self.info))


def _log(p, what):
    if p <= PRUNE:
        raise ZeroProbabilityError(
            f"{what} vanishes; the unraveling needs p(b_1) > 0 and p(a_n|Y_n^k) P[Y_n^k] > 0")
    return float(np.log(p))


def stochastic_quantities(psi, bases):
    """sigma together with i_QCT and i_TE (fine) or i_FB^k (coarse) along ``psi``."""
    _check_label(psi, bases)
    cfg = bases.cfg
    ny = bases.tree.alphabet
    N = bases.cycles
    meas = cfg.measurement_array
    prob = trajectory_probability(psi, bases)
    if prob <= 0:
        raise ZeroProbabilityError("trajectory has zero probability under this unraveling")
    ln_b1 = _log(bases.b_probs[1][0, psi.b[0]], "p(b_1)")
    ln_final = _log(bases.final_marg[N][psi.b[N]], "p(b_{N+1})")
    heat = 0.0
    qct = te = fb = 0.0
    for n in range(1, N + 1):
        h_prev = _prefix(psi.y, n - 1, ny)
        h = _prefix(psi.y, n, ny)
        _, en = cfg.channel_tables(n, [h])
        heat -= en[0, psi.d[n - 1]]
        pb = bases.b_probs[n][bases.key(h_prev, n - 1)]
        pa = bases.a_probs[n][bases.key(h, n)][psi.a[n - 1]]
        if n < N:
            pnext = bases.b_probs[n + 1][bases.key(h, n)][psi.b[n]]
        else:
            pnext = bases.final_cond[n][bases.key(h, n)][psi.b[n]]
        fb += _log(pa, "p(a_n|Y_n^k)") - _log(pnext, "p(b_{n+1}|Y_n^k)")
        ln_pb = _log(pb[psi.b[n - 1]], "p(b_n|Y_{n-1})")
        qct += -ln_pb + _log(pa, "p(a_n|Y_n)")
        if bases.k is None:
            vecs = bases.b_vecs[n][h_prev]
            amp = np.einsum("zij,jb->zib", meas[psi.y[n - 1]], vecs)
            p_y_b = np.sum(np.abs(amp) ** 2, axis=(0, 1))
            post = pb * p_y_b / np.dot(pb, p_y_b)
            te += -ln_pb + _log(post[psi.b[n - 1]], "p(b_n|Y_n)")
    fb += ln_final - ln_b1
    sigma = -ln_final + ln_b1 - cfg.beta * heat
    if bases.k is None:
        return StochasticRecord(sigma, prob, i_qct=qct, i_te=te)
    return StochasticRecord(sigma, prob, i_fb_k=fb)
