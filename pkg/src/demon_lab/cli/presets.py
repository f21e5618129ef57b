"""Named parameter sets for the experiment figures and the built-in classical chains.

Angles are in units of pi.
"""

import numpy as np

from ..channels import ClassicalProcessSpec

_FIG3_DELTAS = {1: (0.151, 0.505), 2: (0.157, 0.513), 3: (0.155, 0.518), 4: (0.162, 0.516)}


def _fig2():
    return {
        "experiment": {"name": "fig2", "cycles": 10},
        "measurement": {"delta0": 0.089, "delta1": 0.430},
        "policy": {"kind": "ground", "order": 1},
        "bath": {"varphi": 0.133, "phi": 0.280, "alpha": 1.06e-2},
        "sampling": {"samples": 7000},
    }


def _stabilization(name, k):
    d0, d1 = _FIG3_DELTAS[k]
    return {
        "experiment": {"name": name, "cycles": 10},
        "measurement": {"delta0": d0, "delta1": d1},
        "policy": {"kind": "excited", "order": k},
        "bath": {"varphi": 0.151, "phi": 0.269, "alpha": 1.02e-2},
        "sampling": {"samples": 10000},
    }


PRESETS = {"fig2": _fig2}
for _k in range(1, 5):
    PRESETS[f"fig3k{_k}"] = lambda k=_k: _stabilization(f"fig3k{k}", k)
    PRESETS[f"fig4k{_k}"] = lambda k=_k: _stabilization(f"fig4k{k}", k)

FIGURES = {"fig2": ("fig2",), "fig3": tuple(f"fig3k{k}" for k in range(1, 5)),
           "fig4": tuple(f"fig4k{k}" for k in range(1, 5))}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _flip(p):
    return np.array([[1 - p, p], [p, 1 - p]])


def _readout(eps0, eps1):
    q = np.zeros((2, 2, 2))
    q[0, 0, 0], q[1, 0, 0] = 1 - eps0, eps0
    q[0, 1, 1], q[1, 1, 1] = eps1, 1 - eps1
    return q


def classical_specs():
    """Three fully classical chains: (spec, initial distribution, cycles)."""
    return {
        "binary-symmetric": (
            ClassicalProcessSpec(_readout(0.1, 0.1), {(0,): _flip(0.0), (1,): _flip(1.0)}), [0.5, 0.5], 5),
        "asymmetric-mixing": (
            ClassicalProcessSpec(_readout(0.08, 0.3), {(0,): _flip(0.15), (1,): _flip(0.8)}), [0.7, 0.3], 5),
        "uninformative": (
            ClassicalProcessSpec(np.full((2, 1, 2), 0.5), {(0,): _flip(0.25), (1,): _flip(0.6)}), [0.6, 0.4], 5),
    }
