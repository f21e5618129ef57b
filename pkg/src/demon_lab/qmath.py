"""Finite-dimensional quantum information primitives.

All entropies are in nats. Eigenvalues at or below ``EIG_FLOOR`` are
treated as zero, so ``0 ln 0 = 0``.
"""

from dataclasses import dataclass
from collections import defaultdict

import numpy as np

from .errors import ValidationError

EIG_FLOOR = 1e-12
STATE_TOL = 1e-12
DEGENERACY_TOL = 1e-12
PHASE_TOL = 1e-10


def validate_density_matrix(rho, *, tol=STATE_TOL):
    """Return ``rho`` as a complex array after checking it is a density matrix."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > tol:
        raise ValidationError(f"density matrix not Hermitian (deviation {herm:.3e})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"density matrix trace {tr!r} differs from 1")
    lo = np.linalg.eigvalsh(rho).min()
    if lo < -tol:
        raise ValidationError(f"density matrix has negative eigenvalue {lo:.3e}")
    return rho


def shannon(p):
    """Shannon entropy of a probability vector (nats)."""
    p = np.asarray(p, dtype=float)
    p = p[p > EIG_FLOOR]
    return float(-np.sum(p * np.log(p)))


def entropies(stack):
    """Von Neumann entropies of a stack of Hermitian matrices, no validation."""
    w = np.linalg.eigvalsh(stack)
    safe = np.where(w > EIG_FLOOR, w, 1.0)
    return -np.sum(np.where(w > EIG_FLOOR, w * np.log(safe), 0.0), axis=-1)


def vn_entropy(rho):
    rho = validate_density_matrix(rho)
    return float(entropies(rho))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues sorted descending with eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


def _canonical_block(vecs):
    """Orthonormal basis of span(vecs) built from projected computational vectors."""
    d, m = vecs.shape
    proj = vecs @ vecs.conj().T
    chosen = []
    for j in range(d):
        v = proj[:, j].copy()
        for u in chosen:
            v -= u * (u.conj() @ v)
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            chosen.append(v / nrm)
        if len(chosen) == m:
            break
    return np.stack(chosen, axis=1)


def spectral_decompose_batch(stack):
    """Canonical eigendecomposition of a stack of Hermitian matrices.

    Eigenvalues are sorted descending. Inside a degenerate block the basis is
    obtained by Gram-Schmidt on the projected computational basis vectors, and
    every eigenvector's first component with modulus above 1e-10 is made real
    and positive. Returns ``(values, vectors)`` with vectors as columns.
    """
    stack = np.asarray(stack, dtype=complex)
    w, v = np.linalg.eigh(stack)
    w = w[..., ::-1].copy()
    v = v[..., ::-1].copy()
    gaps = np.abs(np.diff(w, axis=-1)) <= DEGENERACY_TOL
    if gaps.any():
        flat_w = w.reshape(-1, w.shape[-1])
        flat_v = v.reshape(-1, *v.shape[-2:])
        flat_gaps = gaps.reshape(-1, gaps.shape[-1])
        for idx in np.nonzero(flat_gaps.any(axis=-1))[0]:
            start = 0
            d = flat_w.shape[-1]
            for i in range(1, d + 1):
                if i == d or not flat_gaps[idx, i - 1]:
                    if i - start > 1:
                        flat_v[idx, :, start:i] = _canonical_block(flat_v[idx, :, start:i])
                    start = i
        v = flat_v.reshape(v.shape)
    # phase convention
    big = np.abs(v) > PHASE_TOL
    first = np.argmax(big, axis=-2)
    lead = np.take_along_axis(v, first[..., None, :], axis=-2)
    phase = np.where(np.abs(lead) > 0, lead.conj() / np.where(np.abs(lead) > 0, np.abs(lead), 1.0), 1.0)
    v = v * phase
    return w, v


def spectral_decompose(h):
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {h.shape}")
    herm = np.max(np.abs(h - h.conj().T))
    if herm > STATE_TOL:
        raise ValidationError(f"matrix not Hermitian (deviation {herm:.3e})")
    w, v = spectral_decompose_batch(h)
    return SpectralDecomposition(w, v)


def relative_entropy(rho, tau):
    """S(rho||tau) in nats; ``inf`` when supp(rho) is not inside supp(tau)."""
    rho = validate_density_matrix(rho)
    tau = validate_density_matrix(tau)
    p, _ = np.linalg.eigh(rho)
    q, vq = np.linalg.eigh(tau)
    # weight of rho on each eigenvector of tau
    weights = np.real(np.einsum("ij,ik,kj->j", vq.conj(), rho, vq))
    kernel = q <= EIG_FLOOR
    if np.any(weights[kernel] > EIG_FLOOR):
        return float("inf")
    log_q = np.log(np.where(kernel, 1.0, q))
    cross = float(np.sum(np.where(kernel, 0.0, weights * log_q)))
    pos = p[p > EIG_FLOOR]
    return max(float(np.sum(pos * np.log(pos))) - cross, 0.0)


def _check_probs(probs):
    probs = np.asarray(probs, dtype=float)
    if probs.size == 0:
        raise ValidationError("empty ensemble")
    if np.any(probs < -STATE_TOL):
        raise ValidationError("negative probability in ensemble")
    if abs(probs.sum() - 1.0) > STATE_TOL:
        raise ValidationError(f"ensemble probabilities sum to {probs.sum()!r}")
    return probs


def holevo_information(ensemble):
    """Holevo quantity of ``[(p_y, rho_y), ...]``."""
    ensemble = list(ensemble)
    probs = _check_probs([p for p, _ in ensemble])
    states = np.stack([validate_density_matrix(r) for _, r in ensemble])
    avg = np.einsum("y,yij->ij", probs, states)
    return float(entropies(avg) - np.dot(probs, entropies(states)))


def conditional_holevo(ensemble):
    """chi(rho : Y1 | Y2) for ``[((y1, y2), p, rho), ...]`` with a joint distribution over (y1, y2)."""
    ensemble = list(ensemble)
    probs = _check_probs([p for _, p, _ in ensemble])
    groups = defaultdict(list)
    for (label, _, rho), p in zip(ensemble, probs):
        _, y2 = label
        groups[y2].append((p, validate_density_matrix(rho)))
    total = 0.0
    for members in groups.values():
        weight = sum(p for p, _ in members)
        if weight <= 1e-15:
            continue
        sub = [(p / weight, r) for p, r in members]
        avg = sum(p * r for p, r in sub)
        inner = float(entropies(avg)) - sum(p * float(entropies(r)) for p, r in sub)
        total += weight * inner
    return total
