"""Sequential chain contraction over unraveling labels.

A trajectory weight factorizes into an initial factor over b_1, one
measurement factor per cycle over (Y_{n-1}, y, z, a, b) and one bath factor
per cycle over (Y_n, d, b_{n+1}, a). Summing level by level gives exact
ensemble expectations without listing trajectories. Every sweep also closes
the chain at each cycle with the final readout, yielding the values for the
process stopped after that cycle.
"""

from dataclasses import dataclass

import numpy as np

from ..ensemble import PRUNE, evolve_history_tree
from ..errors import EnumerationCapError, ValidationError
from .unraveling import _safe_log, build_bases

AMP_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class LevelTensors:
    """Squared amplitudes of one cycle.

    ``meas[h, y, z, a, b] = |<a|M_yz|b>|^2`` with b from the basis of Y_{n-1}
    and a from the basis of Y_n = (h, y). ``bath[h', d, c, a]`` maps a to the
    next b-basis (``None`` at the last cycle) and ``bath_final`` to the final
    readout basis.
    """

    meas: np.ndarray
    bath: np.ndarray
    bath_final: np.ndarray
    energies: np.ndarray


def level_tensors(bases):
    cfg = bases.cfg
    meas_ops = cfg.measurement_array
    ny, nz = meas_ops.shape[:2]
    N = bases.cycles
    out = [None]
    for n in range(1, N + 1):
        bv, _ = bases.b_full(n)
        av, _ = bases.a_full(n)
        H = bv.shape[0]
        av = av.reshape(H, ny, *av.shape[1:])
        amp = np.einsum("hyia,yzij,hjb->hyzab", av.conj(), meas_ops, bv)
        meas = np.abs(amp) ** 2
        av = av.reshape(H * ny, *av.shape[2:])
        ops, en = cfg.channel_tables(n, np.arange(H * ny))
        bath_final = np.abs(np.einsum("ic,hkij,hja->hkca", cfg.final_basis.conj(), ops, av)) ** 2
        bath = None
        if n < N:
            cv, _ = bases.b_full(n + 1)
            bath = np.abs(np.einsum("hic,hkij,hja->hkca", cv.conj(), ops, av)) ** 2
        out.append(LevelTensors(meas, bath, bath_final, en))
    return out


@dataclass(frozen=True, eq=False)
class Terms:
    """Additive per-slot contributions of a stochastic functional.

    Arrays broadcast against the amplitude tensors of each level;
    ``None`` means no contribution.
    """

    init: object
    meas: list
    bath: list
    bath_final: list

    def __add__(self, other):
        return combine([(1.0, self), (1.0, other)])


def _add(x, y):
    if x is None:
        return y
    if y is None:
        return x
    return x + y


def _scale(c, x):
    return None if x is None else c * x


def combine(pairs):
    init, meas, bath, fin = None, None, None, None
    for c, t in pairs:
        init = _add(init, _scale(c, t.init))
        meas = [_add(a, _scale(c, b)) for a, b in zip(meas or [None] * len(t.meas), t.meas)]
        bath = [_add(a, _scale(c, b)) for a, b in zip(bath or [None] * len(t.bath), t.bath)]
        fin = [_add(a, _scale(c, b)) for a, b in zip(fin or [None] * len(t.bath_final), t.bath_final)]
    return Terms(init, meas, bath, fin)


def _meas_shape(term, H, ny):
    """Reshape a per-Y_n array (H*ny, x) into measurement-slot broadcast form."""
    return term.reshape(H, ny, 1, *term.shape[1:])


def stochastic_terms(bases, name):
    """Local contributions of ``sigma``, ``i_qct``, ``i_te`` or ``i_fb``."""
    cfg = bases.cfg
    ny = bases.tree.alphabet
    N = bases.cycles
    meas, bath, fin = [None], [None], [None]
    init = None
    for n in range(1, N + 1):
        _, pb = bases.b_full(n)
        _, pa = bases.a_full(n)
        H = pb.shape[0]
        lb = _safe_log(pb)[:, None, None, None, :]
        la = _meas_shape(_safe_log(pa), H, ny)[..., :, None]
        m = b = f = None
        if name == "sigma":
            _, en = cfg.channel_tables(n, np.arange(H * ny))
            b = cfg.beta * en[:, :, None, None]
            f = b - _safe_log(bases.final_marg[n])[None, None, :, None]
            if n == N:
                b = None
        elif name == "i_qct":
            m = la - lb
        elif name == "i_te":
            if bases.k is not None:
                raise ValidationError("transfer entropy is defined on the fine unraveling")
            post = _posterior(bases, n)
            m = _meas_shape(_safe_log(post), H, ny)[..., None, :] - lb
        elif name == "i_fb":
            m = la
            if n < N:
                _, pc = bases.b_full(n + 1)
                b = -_safe_log(pc)[:, None, :, None]
            f = (-_safe_log(bases.final_full(n)) + _safe_log(bases.final_marg[n]))[:, None, :, None]
        else:
            raise ValidationError(f"unknown stochastic quantity {name!r}")
        meas.append(m)
        bath.append(b)
        fin.append(f)
    p1 = bases.b_probs[1][0]
    if name == "sigma":
        init = _safe_log(p1)
    elif name == "i_fb":
        init = -_safe_log(p1)
    return Terms(init, meas, bath, fin)


def _posterior(bases, n):
    """p(b_n | Y_n) in the b-basis of Y_{n-1}, indexed by Y_n."""
    meas = bases.cfg.measurement_array
    bv, pb = bases.b_full(n)
    amp = np.einsum("yzij,hjb->hyzib", meas, bv)
    p_y_b = np.sum(np.abs(amp) ** 2, axis=(2, 3))
    joint = pb[:, None, :] * p_y_b
    tot = joint.sum(axis=2, keepdims=True)
    post = np.where(tot > PRUNE, joint / np.where(tot > PRUNE, tot, 1.0), 0.0)
    return post.reshape(-1, post.shape[-1])


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True, eq=False)
class Factors:
    """Multiplicative weights per slot, same layout as the amplitude tensors."""

    init: np.ndarray
    meas: list
    bath: list
    bath_final: list


def probability_factors(bases, tensors=None):
    tensors = tensors or level_tensors(bases)
    return Factors(
        bases.b_probs[1][0],
        [None] + [t.meas for t in tensors[1:]],
        [None] + [t.bath for t in tensors[1:]],
        [None] + [t.bath_final for t in tensors[1:]],
    )


def exponentiate(factors, terms, coef=1.0):
    """Factors reweighted by exp(-coef * X) for the additive functional ``terms``."""
    def w(f, t):
        return f if t is None else f * np.exp(-coef * t)
    N = len(factors.meas) - 1
    return Factors(
        w(factors.init, terms.init),
        [None] + [w(factors.meas[n], terms.meas[n]) for n in range(1, N + 1)],
        [None] + [None if factors.bath[n] is None else w(factors.bath[n], terms.bath[n])
                  for n in range(1, N + 1)],
        [None] + [w(factors.bath_final[n], terms.bath_final[n]) for n in range(1, N + 1)],
    )


def masked(factors, support):
    """Zero every factor whose companion ``support`` factor vanishes."""
    def m(f, s):
        return None if f is None else np.where(s > AMP_TOL, f, 0.0)
    N = len(factors.meas) - 1
    return Factors(
        m(factors.init, support.init),
        [None] + [m(factors.meas[n], support.meas[n]) for n in range(1, N + 1)],
        [None] + [m(factors.bath[n], support.bath[n]) for n in range(1, N + 1)],
        [None] + [m(factors.bath_final[n], support.bath_final[n]) for n in range(1, N + 1)],
    )


def sweep(factors, terms=None):
    """Sum of trajectory weights for every stopping cycle.

    With ``terms`` also returns the weighted sums of the additive functional.
    """
    N = len(factors.meas) - 1
    m = factors.init[None, :]
    mu = None
    if terms is not None:
        mu = m * (0.0 if terms.init is None else terms.init)
    totals = np.zeros(N)
    moments = np.zeros(N)
    for n in range(1, N + 1):
        F = factors.meas[n]
        H, ny = F.shape[:2]
        x = np.einsum("hyzab,hb->hya", F, m).reshape(H * ny, -1)
        if terms is not None:
            mx = np.einsum("hyzab,hb->hya", F, mu)
            if terms.meas[n] is not None:
                mx = mx + np.einsum("hyzab,hb->hya", F * terms.meas[n], m)
            mux = mx.reshape(H * ny, -1)
        Ff = factors.bath_final[n]
        totals[n - 1] = np.einsum("hkca,ha->", Ff, x)
        if terms is not None:
            val = np.einsum("hkca,ha->", Ff, mux)
            if terms.bath_final[n] is not None:
                val += np.einsum("hkca,ha->", Ff * terms.bath_final[n], x)
            moments[n - 1] = val
        if n < N:
            Fb = factors.bath[n]
            m_new = np.einsum("hkca,ha->hc", Fb, x)
            if terms is not None:
                mu = np.einsum("hkca,ha->hc", Fb, mux)
                if terms.bath[n] is not None:
                    mu = mu + np.einsum("hkca,ha->hc", Fb * terms.bath[n], x)
            m = m_new
    return (totals, moments) if terms is not None else totals


def extremes(support, terms):
    """Minimum and maximum of an additive functional over trajectories with nonzero support weight."""
    N = len(support.meas) - 1
    init = np.zeros_like(support.init) if terms.init is None else np.asarray(terms.init, float)
    alive = (support.init > AMP_TOL)[None, :]
    r_hi = np.where(alive, init, 0.0)
    r_lo = r_hi.copy()
    lo = np.zeros(N)
    hi = np.zeros(N)

    def step(r_hi, r_lo, alive, F, T, expand, axes):
        ok = (F > AMP_TOL) & expand(alive)
        t = 0.0 if T is None else T
        with np.errstate(invalid="ignore"):
            cand_hi = np.where(ok, expand(r_hi) + t, -np.inf)
            cand_lo = np.where(ok, expand(r_lo) + t, np.inf)
        reach = ok.any(axis=axes)
        return (np.where(reach, cand_hi.max(axis=axes), 0.0),
                np.where(reach, cand_lo.min(axis=axes), 0.0), reach)

    for n in range(1, N + 1):
        F = support.meas[n]
        H, ny = F.shape[:2]
        xh, xl, xa = step(r_hi, r_lo, alive, F, terms.meas[n], lambda r: r[:, None, None, None, :], (2, 4))
        xh, xl, xa = (v.reshape(H * ny, -1) for v in (xh, xl, xa))
        fh, fl, fa = step(xh, xl, xa, support.bath_final[n], terms.bath_final[n],
                          lambda r: r[:, None, None, :], (1, 3))
        hi[n - 1] = fh[fa].max() if fa.any() else np.nan
        lo[n - 1] = fl[fa].min() if fa.any() else np.nan
        if n < N:
            r_hi, r_lo, alive = step(xh, xl, xa, support.bath[n], terms.bath[n],
                                     lambda r: r[:, None, None, :], (1, 3))
    return lo, hi


# ---------------------------------------------------------------------------
# public drivers

def _tree_for(cfg_or_tree):
    from ..ensemble import HistoryTree
    return cfg_or_tree if isinstance(cfg_or_tree, HistoryTree) else evolve_history_tree(cfg_or_tree)


@dataclass(frozen=True)
class FTResult:
    """Exact ``<exp(-sigma - i)>`` at the last cycle and for every stopping cycle."""

    value: float
    prefix: np.ndarray
    normalization: np.ndarray


def information_name(bases):
    return "i_qct" if bases.k is None else "i_fb"


def ft_expectation(bases, quantities, tensors=None):
    """Exact <exp(-sum of quantities)> for every stopping cycle."""
    probs = probability_factors(bases, tensors)
    terms = combine([(1.0, stochastic_terms(bases, q)) for q in quantities])
    return sweep(exponentiate(probs, terms)), sweep(probs)


def enumerate_ft(cfg, mode="fine", k=None):
    """Exact fluctuation-theorem expectation by chain contraction."""
    tree = _tree_for(cfg)
    bases = build_bases(tree, mode, k)
    vals, norm = ft_expectation(bases, ("sigma", information_name(bases)))
    return FTResult(float(vals[-1]), vals, norm)


def stochastic_averages(bases, names=None):
    """Ensemble averages of stochastic quantities for every stopping cycle."""
    if names is None:
        names = ("sigma", "i_qct", "i_te") if bases.k is None else ("sigma", "i_fb")
    probs = probability_factors(bases)
    out = {}
    for name in names:
        total, moment = sweep(probs, stochastic_terms(bases, name))
        out[name] = moment
    out["normalization"] = sweep(probs)
    return out


def check_cap(tree):
    if tree.cycles > tree.cfg.enumeration_cap:
        raise EnumerationCapError(f"{tree.cycles} cycles exceed the enumeration cap")
