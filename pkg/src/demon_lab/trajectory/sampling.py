"""Monte Carlo experiment records and the experiment-numerics hybrid estimator.

Random numbers come from counter-based Philox streams: trial ``i`` reads the
block of uniforms starting at counter ``i * blocks`` of the stream keyed by
the seed, so the records do not depend on chunking or thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError, ZeroProbabilityError
from .contraction import (
    _tree_for,
    combine,
    exponentiate,
    information_name,
    probability_factors,
    stochastic_terms,
)
from .unraveling import build_bases

THREADS_ENV = "DEMON_LAB_THREADS"
CHUNK = 4096


def thread_count():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True, eq=False)
class ExperimentRecords:
    """Experimentally accessible labels (b_1, y, z, a, b_{N+1}) of each trial."""

    b_first: np.ndarray
    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    b_last: np.ndarray
    weights: np.ndarray = None

    def __len__(self):
        return len(self.b_first)

    def __getitem__(self, i):
        return (int(self.b_first[i]), tuple(map(int, self.y[i])), tuple(map(int, self.z[i])),
                tuple(map(int, self.a[i])), int(self.b_last[i]))

    @property
    def cycles(self):
        return self.y.shape[1]


def _uniforms(seed, start, stop, width):
    blocks = -(-width // 4)
    gen = np.random.Generator(np.random.Philox(key=seed, counter=start * blocks))
    return gen.random((stop - start, 4 * blocks))[:, :width]


def _pick(u, weights):
    c = np.cumsum(weights, axis=1)
    x = u * c[:, -1]
    return np.minimum((c <= x[:, None]).sum(axis=1), weights.shape[1] - 1)


def _simulate(bases, seed, start, stop):
    """Trials ``start..stop-1`` of the unraveled process, keeping the accessible labels."""
    cfg = bases.cfg
    meas = cfg.measurement_array
    ny, nz, d = meas.shape[0], meas.shape[1], cfg.dim
    N = bases.cycles
    R = stop - start
    u = _uniforms(seed, start, stop, 3 * N + 1)
    rows = np.arange(R)
    b = _pick(u[:, 0], np.broadcast_to(bases.b_probs[1][0], (R, d)))
    vec = cfg.initial_basis[:, b].T
    h = np.zeros(R, dtype=np.int64)
    ys, zs, as_ = (np.zeros((R, N), dtype=np.int64) for _ in range(3))
    for n in range(1, N + 1):
        out = np.einsum("yzij,rj->ryzi", meas, vec)
        p = np.sum(np.abs(out) ** 2, axis=-1).reshape(R, -1)
        yz = _pick(u[:, 3 * n - 2], p)
        y, z = np.divmod(yz, nz)
        post = out[rows, y, z]
        h = h * ny + y
        av = bases.a_vecs[n][bases.key(h, n)]
        pa = np.abs(np.einsum("ria,ri->ra", av.conj(), post)) ** 2
        a = _pick(u[:, 3 * n - 1], pa)
        ops, _ = cfg.channel_tables(n, h)
        moved = np.einsum("rkij,rj->rki", ops, av[rows, :, a])
        if n < N:
            nxt = bases.b_vecs[n + 1][bases.key(h, n)]
            pc = np.sum(np.abs(np.einsum("ric,rki->rkc", nxt.conj(), moved)) ** 2, axis=1)
        else:
            nxt = np.broadcast_to(cfg.final_basis, (R, d, d))
            pc = np.sum(np.abs(np.einsum("ic,rki->rkc", cfg.final_basis.conj(), moved)) ** 2, axis=1)
        c = _pick(u[:, 3 * n], pc)
        vec = nxt[rows, :, c]
        ys[:, n - 1], zs[:, n - 1], as_[:, n - 1] = y, z, a
        if n == 1:
            first = b
        b = c
    return first, ys, zs, as_, b


def sample_experiment(cfg, trials, seed, *, threads=None):
    """Draw ``trials`` experimental records.

    Each trial runs the measurement-feedback loop with projective readouts in
    the fine unraveling bases and keeps (b_1, y, z, a, b_{N+1}). When those
    bases do not depend on the history and every trial state stays diagonal
    in them, as for the readout presets, the inserted readouts leave the
    physical statistics unchanged.
    """
    if trials < 1:
        raise ValidationError("need at least one trial")
    tree = _tree_for(cfg)
    bases = build_bases(tree, "fine")
    chunks = [(s, min(s + CHUNK, trials)) for s in range(0, trials, CHUNK)]
    workers = threads or thread_count()
    if workers == 1 or len(chunks) == 1:
        parts = [_simulate(bases, seed, s, e) for s, e in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _simulate(bases, seed, *c), chunks))
    cols = [np.concatenate([p[i] for p in parts]) for i in range(5)]
    return ExperimentRecords(*cols)


# ---------------------------------------------------------------------------

def _record_sweep(factors, records, stop=None):
    """Weight of each record summed over the labels it does not fix.

    ``stop`` truncates the run after that cycle; the final readout is then
    the next z label.
    """
    N = records.cycles if stop is None else stop
    R = len(records)
    rows = np.arange(R)
    d = factors.init.shape[0]
    m = np.zeros((R, d))
    m[rows, records.b_first] = factors.init[records.b_first]
    h = np.zeros(R, dtype=np.int64)
    for n in range(1, N + 1):
        y, z, a = records.y[:, n - 1], records.z[:, n - 1], records.a[:, n - 1]
        F = factors.meas[n]
        ny = F.shape[1]
        x = np.einsum("rb,rb->r", F[h, y, z, a, :], m)
        h = h * ny + y
        if n < N:
            m = np.einsum("rkc,r->rc", factors.bath[n][h, :, :, a], x)
        else:
            c = records.b_last if stop is None or stop == records.cycles else records.z[:, n]
            return np.einsum("rk,r->r", factors.bath_final[n][h, :, c, a], x)


def readout_follows_z(cfg):
    """True when every M_yz is proportional to the projector on final-basis vector z."""
    meas = cfg.measurement_array
    fin = cfg.final_basis
    for y in range(meas.shape[0]):
        for z in range(meas.shape[1]):
            inb = fin.conj().T @ meas[y, z] @ fin
            inb[z, z] = 0.0
            if np.max(np.abs(inb)) > 1e-12:
                return False
    return True


@dataclass(frozen=True)
class HybridResult:
    mean: float
    stderr: float
    values: np.ndarray
    p_exp: np.ndarray


def _hybrid_bases(cfg, mode, k):
    tree = _tree_for(cfg)
    return build_bases(tree, mode, k)


def hybrid_values(records, bases, quantities=None, *, stop=None, tensors=None):
    """F for each record together with its marginal probability P_exp."""
    if quantities is None:
        quantities = ("sigma", information_name(bases))
    if stop is not None and stop < records.cycles and not readout_follows_z(bases.cfg):
        raise ValidationError("stopping early needs a readout whose z label is the final-basis outcome")
    probs = probability_factors(bases, tensors)
    terms = combine([(1.0, stochastic_terms(bases, q)) for q in quantities])
    weighted = exponentiate(probs, terms)
    p_exp = _record_sweep(probs, records, stop)
    if np.any(p_exp <= 0):
        bad = int(np.argmax(p_exp <= 0))
        raise ZeroProbabilityError(f"record {bad} has zero probability under this configuration")
    return _record_sweep(weighted, records, stop) / p_exp, p_exp


def hybrid_estimate(records, cfg, mode="fine", k=None, quantities=None, *, stop=None):
    """Sample mean and standard error of F over the records."""
    bases = _hybrid_bases(cfg, mode, k)
    if records.cycles != bases.cycles:
        raise ValidationError("records and configuration disagree on the number of cycles")
    f, p_exp = hybrid_values(records, bases, quantities, stop=stop)
    if records.weights is not None:
        mean = float(np.dot(records.weights, f))
        return HybridResult(mean, 0.0, f, p_exp)
    se = float(np.std(f, ddof=1) / np.sqrt(len(f))) if len(f) > 1 else float("nan")
    return HybridResult(float(np.mean(f)), se, f, p_exp)


def exhaustive_records(cfg, mode="fine", k=None, max_rows=20_000_000):
    """Every accessible record with P_exp > 0, weighted by P_exp."""
    bases = _hybrid_bases(cfg, mode, k)
    probs = probability_factors(bases)
    d = bases.cfg.dim
    N = bases.cycles
    # breadth-first over (b_1, y, z, a) prefixes carrying the vector over b_n
    init = probs.init
    live = np.nonzero(init > 0)[0]
    labels = np.empty((len(live), 0), dtype=np.int8)
    first = live
    h = np.zeros(len(live), dtype=np.int64)
    m = np.zeros((len(live), d))
    m[np.arange(len(live)), live] = init[live]
    for n in range(1, N + 1):
        F = probs.meas[n]
        _, ny, nz, da, _ = F.shape
        x = np.stack([np.einsum("rb,rb->r", F[h, y, z, a, :], m)
                      for y in range(ny) for z in range(nz) for a in range(da)], axis=1)
        r, j = np.nonzero(x > 0)
        if len(r) > max_rows:
            raise ValidationError(f"more than {max_rows} accessible records")
        y, z, a = np.unravel_index(j, (ny, nz, da))
        x = x[r, j]
        labels = np.concatenate([labels[r], np.stack([y, z, a], 1).astype(np.int8)], axis=1)
        first = first[r]
        h = h[r] * ny + y
        if n < N:
            m = np.einsum("rkc,r->rc", probs.bath[n][h, :, :, a], x)
        else:
            fin = np.einsum("rkc,r->rc", probs.bath_final[n][h, :, :, a], x)
            r, c = np.nonzero(fin > 0)
            weights = fin[r, c]
            labels, first = labels[r], first[r]
    lab = labels.reshape(len(labels), N, 3).astype(np.int64)
    return ExperimentRecords(first, lab[:, :, 0], lab[:, :, 1], lab[:, :, 2], c, weights)


def p_exp_closed_form(record, cfg):
    """Probability of an accessible record when the inserted readouts do not disturb.

    Uses the product of Tr[Pi_a M L(Pi_a') M^dag Pi_a] factors between
    consecutive cycles, with the initial and final readout probabilities.
    """
    tree = _tree_for(cfg)
    bases = build_bases(tree, "fine")
    cfg = tree.cfg
    meas = cfg.measurement_array
    b1, ys, zs, as_, b_last = record
    ny = tree.alphabet
    vec = cfg.initial_basis[:, b1]
    h = 0
    prob = bases.b_probs[1][0][b1]
    proj = None
    for n in range(1, len(ys) + 1):
        y, z, a = ys[n - 1], zs[n - 1], as_[n - 1]
        m = meas[y, z]
        h = h * ny + y
        av = bases.a_vecs[n][bases.key(h, n)][:, a]
        pa = np.outer(av, av.conj())
        if proj is None:
            prob *= np.linalg.norm(pa @ m @ vec) ** 2
        else:
            prob *= np.real(np.trace(pa @ m @ proj @ m.conj().T @ pa))
        ops, _ = cfg.channel_tables(n, [h])
        proj = np.einsum("kij,jl,kml->im", ops[0], pa, ops[0].conj())
    fb = cfg.final_basis[:, b_last]
    return float(prob * np.real(fb.conj() @ proj @ fb))
