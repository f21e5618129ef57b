"""Command-line entry point: ``demon-lab <subcommand> --config PATH --out DIR``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from ..classical import classical_config, reduction_checks
from ..ensemble import evolve_history_tree, thermo_ledger
from ..errors import ConfigError, EnumerationCapError, ValidationError, ZeroProbabilityError
from ..trajectory import (
    absolute_irreversibility,
    build_bases,
    detailed_ft_check,
    ft_expectation,
    hybrid_estimate,
    inverse_process,
    sample_experiment,
)
from ..trajectory.contraction import check_cap
from .config import build_config, config_from_preset, emit, parse_settings
from .output import RunManifest, content_hash, write_csv
from .presets import FIGURES, PRESETS, classical_specs

ORDERS = (1, 2, 3, 4)
FT_TOL = 1e-8
LEDGER_TOL = 1e-9


def _resolve(config):
    if config is None:
        raise ConfigError("this subcommand needs --config")
    path = Path(config)
    if not path.exists() and config in PRESETS:
        return config_from_preset(config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {config}: {exc.strerror}") from None
    return build_config(parse_settings(text, source=str(path)))


def _coarse_order(cfg, mode, k):
    if mode == "fine":
        return None
    return cfg.feedback_order if k is None else k


class Run:
    def __init__(self, out, manifest):
        self.out = Path(out)
        self.manifest = manifest

    def csv(self, name, header, rows):
        path = write_csv(self.out / name, header, rows)
        self.manifest.add_file(path)
        return path

    def check(self, name, passed, value, tolerance):
        self.manifest.check(name, passed, value, tolerance)


def cmd_ensemble(run, cfg, prefix=""):
    tree = evolve_history_tree(cfg)
    led = thermo_ledger(tree, ORDERS)
    N = tree.cycles
    header = (["cycle", "sigma", "heat", "i_qct", "i_te"] + [f"i_fb_{k}" for k in ORDERS]
              + [f"i_bqc_{k}" for k in ORDERS] + ["efficiency", "p0", "p1"])
    rows = []
    for i in range(N):
        rows.append([i + 1, led.sigma.cumulative[i], led.heat.cumulative[i], led.i_qct.cumulative[i],
                     led.i_te.cumulative[i]] + [led.i_fb[k].cumulative[i] for k in ORDERS]
                    + [led.bqc[k].cumulative[i] for k in ORDERS]
                    + [led.efficiency[i], led.populations[i, 0], led.populations[i, 1]])
    run.csv(f"{prefix}ensemble.csv", header, rows)

    k = cfg.feedback_order
    fb_k = led.i_fb[k].cumulative if k in led.i_fb else thermo_ledger(tree, (k,)).i_fb[k].cumulative
    sigma, qct = led.sigma.cumulative, led.i_qct.cumulative
    margin = float(np.min(sigma + fb_k))
    run.check(f"{prefix}second_law_feedback", margin >= -LEDGER_TOL, margin, LEDGER_TOL)
    margin = float(np.min(qct - fb_k))
    run.check(f"{prefix}feedback_below_qct", margin >= -LEDGER_TOL, margin, LEDGER_TOL)
    # the ordering in k is guaranteed from the policy order upwards
    chain = np.stack([led.i_fb[j].cumulative for j in ORDERS if j >= k] + [qct])
    margin = float(np.min(np.diff(chain, axis=0)))
    run.check(f"{prefix}feedback_order_monotone", margin >= -LEDGER_TOL, margin, LEDGER_TOL)
    return tree, led


def cmd_ft(run, cfg, mode, k, prefix="", tree=None):
    tree = tree or evolve_history_tree(cfg)
    check_cap(tree)
    order = _coarse_order(cfg, mode, k)
    bases = build_bases(tree, mode, order)
    info = "i_qct" if order is None else "i_fb"
    vals, norm = ft_expectation(bases, ("sigma", info))
    run.csv(f"{prefix}ft.csv", ["cycle", "expectation", "normalization"],
            [[n + 1, vals[n], norm[n]] for n in range(tree.cycles)])
    dev = float(np.max(np.abs(vals - 1)))
    run.check(f"{prefix}fluctuation_theorem", dev <= FT_TOL, dev, FT_TOL)
    dev = float(np.max(np.abs(norm - 1)))
    run.check(f"{prefix}normalization", dev <= LEDGER_TOL, dev, LEDGER_TOL)
    return bases, vals


def _samples(cfg):
    if cfg.samples < 1:
        raise ConfigError("set [sampling] samples to a positive number of trials", key="samples")
    return cfg.samples


def _digits(row):
    return "".join(str(int(v)) for v in row)


def cmd_sample(run, cfg, seed, prefix=""):
    records = sample_experiment(cfg, _samples(cfg), seed)
    rows = ([i, int(records.b_first[i]), _digits(records.y[i]), _digits(records.z[i]), _digits(records.a[i]),
             int(records.b_last[i])] for i in range(len(records)))
    run.csv(f"{prefix}records.csv", ["trial", "b_first", "y", "z", "a", "b_last"], rows)
    tree = evolve_history_tree(cfg.with_cycles(1))
    p = float(tree.prob[1][1]) if len(tree.prob[1]) > 1 else 0.0
    freq = float(np.mean(records.y[:, 0] == 1))
    sd = np.sqrt(max(p * (1 - p), 1e-300) / len(records))
    z = abs(freq - p) / sd
    run.check(f"{prefix}first_outcome_frequency", z <= 3.0, z, 3.0)
    return records


def cmd_hybrid(run, cfg, seed, mode, k, prefix=""):
    records = sample_experiment(cfg, _samples(cfg), seed)
    order = _coarse_order(cfg, mode, k)
    info = "i_qct" if order is None else "i_fb"
    mode = "fine" if order is None else "coarse"
    rows = []
    sets = [("sigma", info)] + [("sigma",)] + ([("sigma", "i_te")] if order is None else [])
    for quantities in sets:
        res = hybrid_estimate(records, cfg, mode, order, quantities)
        exact = ft_expectation(build_bases(evolve_history_tree(cfg), mode, order), quantities)[0][-1]
        rows.append(["+".join(quantities), res.mean, res.stderr, len(records), exact])
        if quantities == ("sigma", info):
            z = abs(res.mean - 1) / res.stderr if res.stderr > 0 else float("inf")
            run.check(f"{prefix}hybrid_fluctuation_theorem", z <= 3.0, z, 3.0)
    run.csv(f"{prefix}hybrid.csv", ["quantities", "mean", "stderr", "samples", "exact"], rows)


def cmd_inverse(run, cfg, mode, k, prefix=""):
    order = _coarse_order(cfg, mode, k)
    inv = inverse_process(cfg, order, strict=False)
    detailed = detailed_ft_check(cfg, order)
    lam = absolute_irreversibility(cfg, order)
    # the integral FT paired with the inverse process carries i_FB of the same conditioning
    ft = float(ft_expectation(inv.bases, ("sigma", "i_fb"))[0][-1])
    rows = [
        ["trace_deviation", inv.trace_deviation()],
        ["detailed_ft_deviation", detailed.max_deviation],
        ["detailed_ft_method", detailed.method],
        ["absolute_irreversibility", lam],
        ["ft_expectation", ft],
        ["support_violations", len(inv.violations)],
    ]
    run.csv(f"{prefix}inverse.csv", ["quantity", "value"], rows)
    run.check(f"{prefix}inverse_trace_preserving", inv.trace_deviation() <= LEDGER_TOL,
              inv.trace_deviation(), LEDGER_TOL)
    run.check(f"{prefix}detailed_fluctuation_theorem", detailed.max_deviation <= LEDGER_TOL,
              detailed.max_deviation, LEDGER_TOL)
    dev = abs(ft + lam - 1)
    run.check(f"{prefix}ft_with_absolute_irreversibility", dev <= LEDGER_TOL, dev, LEDGER_TOL)


def cmd_classical(run, names=None):
    specs = classical_specs()
    names = names or list(specs)
    header = (["spec", "fully_classical", "violations", "diagonal_deviation", "label_mismatch",
               "qct_te_trajectory", "qct_te_average"]
              + [f"{q}_{k}" for k in (1, 2, 3) for q in ("bqc", "bte")] + ["chain_rule_max"])
    rows = []
    for name in names:
        if name not in specs:
            raise ConfigError(f"unknown classical spec {name!r}; choose from {sorted(specs)}", key="spec")
        spec, initial, cycles = specs[name]
        rep = reduction_checks(classical_config(spec, initial, cycles))
        pairs = [v for k in (1, 2, 3) for v in rep.backward.get(k, (None, None))]
        chain = max((max(v) for v in rep.chain_rules.values()), default=None)
        rows.append([name, rep.fully_classical, ";".join(rep.violations), rep.diagonal_deviation,
                     rep.label_mismatch, rep.qct_te_trajectory, rep.qct_te_average] + pairs + [chain])
        worst = max([rep.qct_te_trajectory, rep.qct_te_average]
                    + [abs(a - b) for a, b in rep.backward.values()]) if rep.fully_classical else float("nan")
        run.check(f"classical_reduction_{name}", rep.passed, worst, 1e-10)
    run.csv("classical.csv", header, rows)


def reproduce_fig2(run, seed):
    cfg = config_from_preset("fig2")
    tree, led = cmd_ensemble(run, cfg, "fig2_")
    bases = build_bases(tree, "fine")
    curves = {q: ft_expectation(bases, q)[0] for q in (("sigma",), ("sigma", "i_te"), ("sigma", "i_qct"))}
    rows = [[n + 1, led.sigma.cumulative[n], -led.i_te.cumulative[n], -led.i_qct.cumulative[n]]
            + [curves[q][n] for q in curves] for n in range(tree.cycles)]
    run.csv("fig2_panels.csv", ["cycle", "sigma", "neg_i_te", "neg_i_qct", "exp_sigma", "exp_sigma_te",
                                "exp_sigma_qct"], rows)
    dev = float(np.max(np.abs(curves[("sigma", "i_qct")] - 1)))
    run.check("fig2_fluctuation_theorem", dev <= FT_TOL, dev, FT_TOL)


def reproduce_fig3(run, seed):
    rows, p1, eta = [], {}, {}
    for name in FIGURES["fig3"]:
        cfg = config_from_preset(name)
        k = cfg.feedback_order
        led = thermo_ledger(evolve_history_tree(cfg), (k,))
        p1[k] = led.populations[:, 1]
        eta[k] = np.array([np.nan if e is None else e for e in led.efficiency])
        rows += [[n + 1, k, p1[k][n], eta[k][n]] for n in range(cfg.cycles)]
    run.csv("fig3_panels.csv", ["cycle", "k", "p1", "efficiency"], rows)
    ks = sorted(p1)
    step = min(p1[b][-1] - p1[a][-1] for a, b in zip(ks, ks[1:]))
    run.check("fig3_population_increasing_in_k", step > 0, step, 0.0)
    step = min(eta[b][-1] - eta[a][-1] for a, b in zip(ks, ks[1:]))
    run.check("fig3_efficiency_increasing_in_k", step > 0, step, 0.0)
    spread = 0.0
    for n in range(1, len(eta[ks[0]]) + 1):
        same = [eta[j][n - 1] for j in ks if n < j]
        if len(same) > 1:
            spread = max(spread, float(np.max(same) - np.min(same)))
    run.check("fig3_efficiency_matches_before_window_fills", spread <= 2e-2, spread, 2e-2)


def reproduce_fig4(run, seed):
    rows = []
    for name in FIGURES["fig4"]:
        cfg = config_from_preset(name)
        k = cfg.feedback_order
        tree, led = cmd_ensemble(run, cfg, f"{name}_")
        bases, vals = cmd_ft(run, cfg, "coarse", k, f"{name}_", tree)
        bare = ft_expectation(bases, ("sigma",))[0]
        sigma = led.sigma.cumulative
        for n in range(tree.cycles):
            rows.append([n + 1, k, sigma[n], -led.i_fb[1].cumulative[n], -led.i_fb[k].cumulative[n],
                         -led.i_qct.cumulative[n], bare[n], vals[n]])
        if k >= 2:
            gap = float(np.max(-led.i_fb[1].cumulative - sigma))
            run.check(f"{name}_beyond_markov_bound", gap > 1e-6, gap, 1e-6)
    run.csv("fig4_panels.csv", ["cycle", "k", "sigma", "neg_i_fb_1", "neg_i_fb_k", "neg_i_qct", "exp_sigma",
                                "exp_sigma_fb_k"], rows)


REPRODUCERS = {"fig2": reproduce_fig2, "fig3": reproduce_fig3, "fig4": reproduce_fig4}


def build_parser():
    parser = argparse.ArgumentParser(prog="demon-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI file or preset name")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides [sampling] seed")
        p.add_argument("--mode", choices=("fine", "coarse"), default="fine")
        p.add_argument("--k", type=int, default=None, help="coarse unraveling order (default: policy order)")
        return p

    for name, text in (("ensemble", "per-cycle ensemble thermodynamics"),
                       ("ft", "exact fluctuation-theorem expectations"),
                       ("sample", "Monte Carlo experiment records"),
                       ("hybrid", "experiment-numerics hybrid estimator"),
                       ("inverse", "inverse process, detailed FT and absolute irreversibility")):
        common(sub.add_parser(name, help=text))
    common(sub.add_parser("classical-check", help="classical reduction checks"), config_required=False)
    rep = common(sub.add_parser("reproduce", help="data behind a figure"), config_required=False)
    rep.add_argument("figure", choices=sorted(REPRODUCERS))
    return parser


def _classical_names(config):
    if config is None:
        return None
    import configparser
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.read(config, encoding="utf-8")
    name = parser.get("classical", "spec", fallback=None)
    return None if name is None else [name]


def run(args):
    args.out.mkdir(parents=True, exist_ok=True)
    if args.command == "classical-check":
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        seed = args.seed or 0
        cfg = None
    elif args.command == "reproduce":
        text, seed, cfg = f"[experiment]\npreset = {args.figure}\n", args.seed or 0, None
    else:
        cfg = _resolve(args.config)
        text = emit(cfg)
        seed = cfg.seed if args.seed is None else args.seed
    manifest = RunManifest(args.command if args.command != "reproduce" else f"reproduce {args.figure}",
                           text, content_hash(text), seed)
    r = Run(args.out, manifest)
    if args.command == "ensemble":
        cmd_ensemble(r, cfg)
    elif args.command == "ft":
        cmd_ft(r, cfg, args.mode, args.k)
    elif args.command == "sample":
        cmd_sample(r, cfg, seed)
    elif args.command == "hybrid":
        cmd_hybrid(r, cfg, seed, args.mode, args.k)
    elif args.command == "inverse":
        cmd_inverse(r, cfg, args.mode, args.k)
    elif args.command == "classical-check":
        cmd_classical(r, _classical_names(args.config))
    else:
        REPRODUCERS[args.figure](r, seed)
    manifest.write(args.out)
    return manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        manifest = run(args)
    except (ConfigError, ValidationError, EnumerationCapError, ZeroProbabilityError) as exc:
        print(f"demon-lab {args.command}: {exc}", file=sys.stderr)
        return 2
    for c in manifest.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tolerance {c.tolerance:.1e})")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
