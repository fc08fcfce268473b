#!/usr/bin/env python3

# eval.py -- command-line runner for cell-free experiments and acceptance checks.

# Run from the backend/
#     python -m Algorithms.eval run --mode distributed --scheme LP-MMSE --lsfd n-opt
#     python -m Algorithms.eval compare --mode centralized --schemes MMSE P-MMSE P-RZF MR
#     python -m Algorithms.eval check


from __future__ import annotations
import sys, os, time, io, json, argparse, logging
from functools import reduce

# Force UTF-8 output on Windows
if sys.platform == "win32":
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding="utf-8", errors="replace")

# ensure the backend dir is on sys.path so `Algorithms.*` imports work
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

import numpy as np
from dotenv import load_dotenv

from Algorithms.base import write_trace
from services.downlink import centralized_downlink_sinr, distributed_terms, duality_power_allocation
from services.errors import CellFreeError
from services.experiment import (
    ExperimentSpec,
    build_setup,
    emit,
    parse_experiment_spec,
    resolve_network_config,
    run_experiment,
)
from services.linalg import complex_normal, fourth_moment, psd_sqrt
from services.metrics import scalability_flags
from services.estimation import sample_channel_draw
from services.uplink import CENTRALIZED_SCHEMES, LOCAL_SCHEMES, CombinerMoments, distributed_expectations, local_combiner

logger = logging.getLogger("Algorithms.eval")


#  Pretty-printing helpers


CYAN   = "\033[96m"
GREEN  = "\033[92m"
YELLOW = "\033[93m"
RED    = "\033[91m"
BOLD   = "\033[1m"
DIM    = "\033[2m"
RESET  = "\033[0m"


def banner(text):
    w = 64
    print()
    print(f"{CYAN}{'=' * w}{RESET}")
    print(f"{CYAN}|{RESET} {BOLD}{text.center(w - 4)}{RESET} {CYAN}|{RESET}")
    print(f"{CYAN}{'=' * w}{RESET}")


def section(text):
    print(f"\n{YELLOW}-- {text} --{RESET}")


def fmt(v, precision=3):
    if v is None or not np.isfinite(v):
        return f"{RED}     n/a{RESET}"
    return f"{v:>8.{precision}f}"


def print_table(rows):
    """Print a comparison table of CDF summaries; the best median is highlighted."""
    header = (
        f"  {'Scheme':<22} {'5%':>8} {'10%':>8} {'Median':>8} "
        f"{'Mean':>8} {'Stderr':>8} {'Time s':>8}"
    )
    print(f"{DIM}{header}{RESET}")
    print(f"{DIM}  {'-' * 22} {'-' * 8} {'-' * 8} {'-' * 8} {'-' * 8} {'-' * 8} {'-' * 8}{RESET}")

    finished = [r for r in rows if r.get("median") is not None]
    best_median = max((r["median"] for r in finished), default=None)

    for r in rows:
        if r.get("median") is None:
            print(f"  {r['name']:<22} {RED}{r.get('error', 'failed')}{RESET}")
            continue
        color = GREEN if r["median"] >= best_median - 1e-12 else ""
        print(
            f"  {r['name']:<22} {fmt(r['q05'])} {fmt(r['q10'])} "
            f"{color}{fmt(r['median'])}{RESET if color else ''} "
            f"{fmt(r['mean'])} {fmt(r['stderr'], 4)} {r['time_s']:>8.1f}"
        )


def print_checks(rows):
    print(f"{DIM}  {'Check':<34} {'Value':>12} {'Expected':>18} {'Result':>7}{RESET}")
    print(f"{DIM}  {'-' * 34} {'-' * 12} {'-' * 18} {'-' * 7}{RESET}")
    for r in rows:
        verdict = f"{GREEN}  PASS{RESET}" if r["passed"] else f"{RED}  FAIL{RESET}"
        print(f"  {r['name']:<34} {r['value']:>12.5g} {r['expected']:>18} {verdict}")


#  Spec construction


def _spec_from_args(args, **extra) -> ExperimentSpec:
    data = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            data.update(json.load(f))
    fields = {
        "scenario": args.scenario,
        "mode": args.mode,
        "link": args.link,
        "scheme": getattr(args, "scheme", None),
        "lsfd": args.lsfd,
        "bound": args.bound,
        "power": args.power,
        "upsilon": args.upsilon,
        "kappa": args.kappa,
        "expectations": args.expectations,
        "sampling": args.sampling,
        "num_setups": args.setups,
        "draws_per_setup": args.draws,
        "workers": args.workers,
        "seed": args.seed,
        "format": args.format,
    }
    data.update({k: v for k, v in fields.items() if v is not None})
    data.update(extra)
    return parse_experiment_spec(data)


def _default_output(spec: ExperimentSpec, label: str | None = None) -> str:
    out_dir = os.environ.get("CELLFREE_OUTPUT_DIR", "results")
    name = label or f"{spec.mode}-{spec.link}-{spec.scheme or 'snr'}-seed{spec.seed}"
    return os.path.join(out_dir, f"{name}.{spec.format}")


def _summary_row(name, table, elapsed):
    return {
        "name": name,
        "q05": table.quantile(0.05),
        "q10": table.quantile(0.10),
        "median": table.quantile(0.50),
        "mean": float(table.samples.mean()),
        "stderr": float(table.stderr.mean()),
        "time_s": elapsed,
    }


#  Subcommands


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    banner("Cell-Free Experiment")
    print(f"\n  scenario={spec.scenario}  mode={spec.mode}  link={spec.link}  scheme={spec.scheme}")
    print(f"  bound={spec.bound}  power={spec.power}  lsfd={spec.lsfd}  "
          f"setups={spec.num_setups}  draws={spec.draws_per_setup}  seed={spec.seed}")

    t0 = time.perf_counter()
    result = run_experiment(spec)
    elapsed = time.perf_counter() - t0

    section("CDF summary")
    print_table([_summary_row(name, table, elapsed) for name, table in result.tables.items()])

    path = emit(result, spec.format, args.out or _default_output(spec))
    print(f"\n  {DIM}results -> {path}{RESET}")
    if args.trace and result.trace:
        write_trace(result.trace, args.trace)
        print(f"  {DIM}solver trace -> {args.trace}{RESET}")
    print()
    return 0


def cmd_compare(args) -> int:
    base = _spec_from_args(args)
    if base.mode == "snr":
        return cmd_run(args)
    schemes = args.schemes or list(CENTRALIZED_SCHEMES if base.mode == "centralized" else LOCAL_SCHEMES)
    banner(f"Scheme Comparison ({base.mode} {base.link})")
    print(f"\n  Same seed ({base.seed}) for every scheme, so all runs share setups and draws.\n")

    rows = []
    for scheme in schemes:
        t0 = time.perf_counter()
        try:
            spec = _spec_from_args(args, scheme=scheme)
            result = run_experiment(spec)
        except CellFreeError as e:
            rows.append({"name": scheme, "error": str(e)})
            continue
        rows.append(_summary_row(scheme, result.table, time.perf_counter() - t0))
        if args.out:
            emit(result, spec.format, os.path.join(args.out, f"{spec.mode}-{spec.link}-{scheme}.{spec.format}"))

    section("CDF summary")
    print_table(rows)
    print()
    return 0 if all("error" not in r for r in rows) else 1


#  Acceptance checks


def check_intro_benchmark(seed=0, setups=200, draws=500):
    spec = parse_experiment_spec({
        "scenario": "intro-benchmark", "mode": "snr",
        "num_setups": setups, "draws_per_setup": draws, "seed": seed,
    })
    result = run_experiment(spec)
    q = {name: table.quantile(0.05) for name, table in result.tables.items()}
    gap = q["cell-free"] - q["small-cell"]
    return [
        {"name": "intro SNR 5% cell-free [dB]", "value": q["cell-free"], "expected": "24.5 +- 0.5",
         "passed": abs(q["cell-free"] - 24.5) <= 0.5},
        {"name": "intro SNR 5% co-located [dB]", "value": q["co-located"], "expected": "6.5 +- 0.5",
         "passed": abs(q["co-located"] - 6.5) <= 0.5},
        {"name": "intro SNR 5% gap to small-cell", "value": gap, "expected": "4 +- 1",
         "passed": abs(gap - 4.0) <= 1.0},
    ]


def _small_setup(network, seed, scheme):
    spec = ExperimentSpec(scenario=None, network=network, mode="centralized" if scheme == "MR" else "distributed",
                          scheme=scheme, num_setups=1, draws_per_setup=1)
    config = resolve_network_config(spec)
    return config, build_setup(spec, config, 0, np.random.SeedSequence(seed))


def check_duality(seed=0):
    network = {"num_aps": 4, "antennas_per_ap": 2, "num_ues": 3, "pilot_length": 2,
               "ul_data": 99, "dl_data": 99, "area_side": 300.0}
    config, setup = _small_setup(network, seed, "MR")
    expectations = distributed_expectations(
        "closed-form-MR", stats=setup.stats, cluster=setup.cluster, noise_power=config.noise_power_ul
    )
    moments = CombinerMoments.from_expectations(expectations)
    p = np.full(setup.cluster.num_ues, config.max_ul_power)
    duality = duality_power_allocation(moments, p, config.noise_power_ul, config.noise_power_dl)
    sinr = centralized_downlink_sinr(moments, duality.rho, config.noise_power_dl)
    spread = float(np.max(np.abs(sinr - duality.target_sinr) / duality.target_sinr))
    ul_total = p.sum() / config.noise_power_ul
    balance = abs(duality.rho.sum() / config.noise_power_dl - ul_total) / ul_total
    return [
        {"name": "duality SINR mismatch", "value": spread, "expected": "<= 1e-6", "passed": spread <= 1e-6},
        {"name": "duality power balance", "value": balance, "expected": "<= 1e-9", "passed": balance <= 1e-9},
    ]


def _oracle_row(name, pooled, batches, reference, rtol=0.01, z=4.5):
    """An entry passes within rtol relative, or within z batch standard errors of the pooled mean."""
    batches = np.asarray(batches)
    stderr = batches.std(axis=0, ddof=1) / np.sqrt(batches.shape[0])
    mask = np.abs(reference) > 1e-9 * np.abs(reference).max(initial=0.0)
    if not mask.any():
        return {"name": name, "value": 0.0, "expected": "no entries", "passed": True}
    err = np.abs(pooled - reference)[mask]
    rel = err / np.abs(reference[mask])
    passed = bool(np.all((rel <= rtol) | (err <= z * stderr[mask])))
    return {"name": name, "value": float(rel.max()), "expected": f"<= {rtol:g} or {z:g} s.e.", "passed": passed}


def check_mr_oracle(seed=0, draws=100_000, batch=2_000):
    network = {"num_aps": 3, "antennas_per_ap": 2, "num_ues": 4, "pilot_length": 2,
               "ul_data": 99, "dl_data": 99, "area_side": 300.0, "wrap_around": False}
    config, setup = _small_setup(network, seed, "MR-local")
    exact = distributed_expectations(
        "closed-form-MR", stats=setup.stats, cluster=setup.cluster, noise_power=config.noise_power_ul
    )
    exact_mu, exact_var = distributed_terms(CombinerMoments.from_expectations(exact))

    rng = np.random.default_rng(seed + 1)
    parts = []
    for _ in range(draws // batch):
        draw = sample_channel_draw(setup.stats, rng, batch)
        combiner = local_combiner("MR-local", draw, setup.stats, setup.cluster, 1.0, config.noise_power_ul)
        parts.append(CombinerMoments.from_draws(combiner, draw))
    pooled = reduce(lambda a, b: a.merge(b), parts)
    pooled_mu, pooled_var = distributed_terms(pooled)
    terms = [distributed_terms(part) for part in parts]

    K = setup.cluster.num_ues
    own = np.arange(K)
    sharing = setup.cluster.pilot_sharing & ~np.eye(K, dtype=bool)
    return [
        _oracle_row("UL MR own mean", pooled.ap_gain_mean[own, own],
                    [p.ap_gain_mean[own, own] for p in parts], exact.g_mean[own, own]),
        _oracle_row("UL MR contaminated mean", pooled.ap_gain_mean[sharing],
                    [p.ap_gain_mean[sharing] for p in parts], exact.g_mean[sharing]),
        _oracle_row("UL MR gain power", pooled.ap_gain_power,
                    [p.ap_gain_power for p in parts], exact.g_power),
        _oracle_row("DL MR coherent term", pooled_mu, [mu for mu, _ in terms], exact_mu),
        _oracle_row("DL MR spread term", pooled_var, [var for _, var in terms], exact_var),
    ]


def check_fourth_moment(seed=0, samples=1_000_000):
    rng = np.random.default_rng(seed)
    X = complex_normal(rng, (4, 4))
    A = X @ X.conj().T
    B = complex_normal(rng, (4, 4))
    x = complex_normal(rng, (samples, 4)) @ psd_sqrt(A).T
    quad = np.einsum("na,ab,nb->n", x.conj(), B, x)
    mc = float(np.mean(np.abs(quad) ** 2))
    exact = fourth_moment(A, B)
    err = abs(mc - exact) / exact
    return [{"name": "fourth moment rel err", "value": err, "expected": "<= 0.01", "passed": err <= 0.01}]


def check_scalability():
    expected = {"MMSE": False, "P-MMSE": True, "P-RZF": True, "MR": True, "L-MMSE": False,
                "LP-MMSE": True, "MR-local": True, "opt-LSFD": False, "n-opt-LSFD": True}
    flags = scalability_flags(4, 10, 95, 95)
    wrong = sum(flags[k] != v for k, v in expected.items())
    return [{"name": "scalability verdicts wrong", "value": wrong, "expected": "0", "passed": wrong == 0}]


CHECKS = [
    ("Intro SNR benchmark", check_intro_benchmark),
    ("Uplink-downlink duality", check_duality),
    ("Closed-form MR vs Monte Carlo", check_mr_oracle),
    ("Fourth-moment identity", check_fourth_moment),
    ("Scalability accounting", check_scalability),
]


def cmd_check(args) -> int:
    banner("Acceptance Checks")
    rows = []
    for label, check in CHECKS:
        section(label)
        t0 = time.perf_counter()
        try:
            result = check()
        except CellFreeError as e:
            result = [{"name": label, "value": float("nan"), "expected": str(e)[:18], "passed": False}]
        print_checks(result)
        print(f"  {DIM}{time.perf_counter() - t0:.1f}s{RESET}")
        rows.extend(result)

    failed = [r for r in rows if not r["passed"]]
    section("Summary")
    color = GREEN if not failed else RED
    print(f"  {color}{len(rows) - len(failed)}/{len(rows)} checks passed{RESET}\n")
    return 1 if failed else 0


#  Main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m Algorithms.eval", description="Cell-free massive MIMO experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="preset name from data/presets.json")
        p.add_argument("--config", help="JSON file with ExperimentSpec fields")
        p.add_argument("--mode", choices=["centralized", "distributed", "cellular", "small-cell", "snr"])
        p.add_argument("--link", choices=["uplink", "downlink"])
        p.add_argument("--lsfd", choices=["opt", "n-opt", "none"])
        p.add_argument("--bound")
        p.add_argument("--power")
        p.add_argument("--upsilon", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--expectations", choices=["monte-carlo", "closed-form-MR"])
        p.add_argument("--sampling", choices=["direct", "pilot-path"])
        p.add_argument("--setups", type=int)
        p.add_argument("--draws", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=["csv", "json"])
        p.add_argument("--out")
        p.add_argument("--trace", help="write the solver trace of the first setup as CSV")

    run = sub.add_parser("run", help="run one experiment and write its CDF")
    common(run)
    run.add_argument("--scheme")
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="run several schemes with one seed")
    common(compare)
    compare.add_argument("--schemes", nargs="+")
    compare.set_defaults(func=cmd_compare)

    check = sub.add_parser("check", help="fast acceptance checks")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.environ.get("CELLFREE_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CellFreeError as e:
        print(f"\n  {RED}error:{RESET} {e}\n", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
