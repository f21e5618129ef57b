"""Explicit listing of every trajectory with nonzero probability.

This grows exponentially with the number of cycles and serves as the
reference for the contraction results on short runs.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import EnumerationCapError
from .unraveling import TrajectoryLabel, _safe_log, build_bases

MAX_ROWS = 5_000_000


@dataclass(frozen=True, eq=False)
class TrajectoryTable:
    """One row per trajectory; label arrays have shape (T, N) or (T, N+1)."""

    b: np.ndarray
    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    d: np.ndarray
    prob: np.ndarray
    sigma: np.ndarray
    info: np.ndarray
    i_te: np.ndarray

    def __len__(self):
        return len(self.prob)

    def label(self, i):
        return TrajectoryLabel(self.b[i], self.y[i], self.z[i], self.a[i], self.d[i])


def enumerate_trajectories(bases, max_rows=MAX_ROWS):
    """All trajectories of ``bases`` with P > 0 together with their stochastic quantities.

    ``info`` holds i_QCT for the fine unraveling and i_FB^k for a coarse one.
    """
    cfg = bases.cfg
    meas = cfg.measurement_array
    ny, nz, d = meas.shape[0], meas.shape[1], cfg.dim
    N = bases.cycles
    fine = bases.k is None

    p1 = bases.b_probs[1][0]
    b_now = np.nonzero(p1 > 0)[0]
    rows = len(b_now)
    hist = np.zeros(rows, dtype=np.int64)
    prob = p1[b_now]
    b_cols = [b_now]
    y_cols, z_cols, a_cols, d_cols = [], [], [], []
    ln_p1 = _safe_log(p1)[b_now]
    heat = np.zeros(rows)
    qct = np.zeros(rows)
    te = np.zeros(rows)
    fb = -ln_p1.copy()
    for n in range(1, N + 1):
        ops_tab = cfg.channel_tables
        K = ops_tab(n, [0])[0].shape[1]
        grid = np.stack(np.meshgrid(np.arange(ny), np.arange(nz), np.arange(d), np.arange(K), np.arange(d),
                                    indexing="ij"), -1).reshape(-1, 5)
        if rows * len(grid) > max_rows:
            raise EnumerationCapError(f"explicit listing would exceed {max_rows} rows")
        src = np.repeat(np.arange(rows), len(grid))
        g = np.tile(grid, (rows, 1))
        y, z, a, kk, c = g.T
        h_prev = hist[src]
        h = h_prev * ny + y
        bvec = bases.b_vecs[n][bases.key(h_prev, n - 1), :, b_now[src]]
        pb_all = bases.b_probs[n][bases.key(h_prev, n - 1)]
        avec = bases.a_vecs[n][bases.key(h, n), :, a]
        pa = bases.a_probs[n][bases.key(h, n), a]
        ops, en = ops_tab(n, h)
        op = ops[np.arange(len(h)), kk]
        if n < N:
            cvec = bases.b_vecs[n + 1][bases.key(h, n), :, c]
            pc = bases.b_probs[n + 1][bases.key(h, n), c]
        else:
            cvec = cfg.final_basis[:, c].T
            pc = bases.final_cond[n][bases.key(h, n), c]
        amp_m = np.einsum("ri,rij,rj->r", avec.conj(), meas[y, z], bvec)
        amp_l = np.einsum("ri,rij,rj->r", cvec.conj(), op, avec)
        step = np.abs(amp_m) ** 2 * np.abs(amp_l) ** 2
        keep = step * prob[src] > 0
        src, y, z, a, kk, c, h, h_prev = (v[keep] for v in (src, y, z, a, kk, c, h, h_prev))
        pb = pb_all[keep, b_now[src]]
        pa, pc = pa[keep], pc[keep]
        prob = prob[src] * step[keep]
        heat = heat[src] - en[keep, kk]
        qct = qct[src] - _safe_log(pb) + _safe_log(pa)
        fb = fb[src] + _safe_log(pa) - _safe_log(pc)
        if fine:
            bv_all = bases.b_vecs[n][h_prev]
            amp = np.einsum("rzij,rjb->rzib", meas[y], bv_all)
            p_y_b = np.sum(np.abs(amp) ** 2, axis=(1, 2))
            pb_row = pb_all[keep]
            post = pb_row * p_y_b / np.sum(pb_row * p_y_b, axis=1, keepdims=True)
            te = te[src] - _safe_log(pb) + _safe_log(post[np.arange(len(src)), b_now[src]])
        else:
            te = te[src]
        b_cols = [col[src] for col in b_cols] + [c]
        y_cols = [col[src] for col in y_cols] + [y]
        z_cols = [col[src] for col in z_cols] + [z]
        a_cols = [col[src] for col in a_cols] + [a]
        d_cols = [col[src] for col in d_cols] + [kk]
        ln_p1 = ln_p1[src]
        hist = h
        b_now = c
        rows = len(prob)
    ln_final = _safe_log(bases.final_marg[N])[b_now]
    sigma = -ln_final + ln_p1 - cfg.beta * heat
    fb = fb + ln_final
    info = qct if fine else fb
    return TrajectoryTable(np.stack(b_cols, 1), np.stack(y_cols, 1), np.stack(z_cols, 1),
                           np.stack(a_cols, 1), np.stack(d_cols, 1), prob, sigma, info,
                           te if fine else np.full(rows, np.nan))
