"""Command-line front end: ``knightwalras {solve,verify,sweep,sample} --scenario FILE``.

Exit codes: 0 success, 1 numerical non-convergence (or a failed verdict),
2 input error. Reports go to ``--out`` as ``report.json`` plus ``sweep.csv``
or ``sample.csv``; a short table is printed to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import SAMPLERS, genericity_experiment, kw_correspondence_sweep
from .equilibrium import (
    VerifyConfig,
    no_trade_certificate,
    solve_ad,
    solve_kw,
    verify_equilibrium,
)
from .expectation import interval_priors, make_prior_set
from .scenario import Scenario, ScenarioError, dumps, load

EXIT_OK, EXIT_NONCONVERGED, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("knightwalras")


def fmt(x) -> str:
    return "%.17g" % x


def _eq_dict(eq) -> dict:
    d = {
        "psi": eq.psi,
        "allocation": eq.allocation,
        "worst_prior": eq.worst_prior,
        "disposal": eq.disposal,
        "residual": eq.residual,
        "converged": eq.converged,
        "convention": eq.convention,
    }
    if eq.welfare_weights is not None:
        d["welfare_weights"] = eq.welfare_weights
    return d


def _report_dict(rep) -> dict:
    return {
        "verdict": rep.verdict,
        "failures": rep.failures,
        "budget_slack": rep.budget_slack,
        "budget_slack_supplied": rep.budget_slack_supplied,
        "price_scale": rep.price_scale,
        "optimality_gap": rep.optimality_gap,
        "feasibility_residual": rep.feasibility_residual,
        "no_arbitrage_gap": rep.no_arbitrage_gap,
        "net_trade_values": rep.net_trade_values,
        "mean_af_flags": rep.mean_af_flags,
        "tolerances": rep.tolerances,
    }


def _cert_dict(cert) -> dict:
    d = {"status": cert.status, "exact": cert.exact, "agents": []}
    if cert.psi is not None:
        d["psi"] = cert.psi
        d["supporting_priors"] = cert.supporting_priors
    for a in cert.diagnostics:
        d["agents"].append({
            "agent": a["agent"],
            "ratio_intervals": a.get("ratio_intervals"),
        })
    return d


def _economy(sc: Scenario, args):
    eco = sc.economy
    if args.convention:
        eco = eco.with_clearing(args.convention)
    cfg = sc.solver
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.tolerance is not None:
        cfg = replace(cfg, residual_tol=args.tolerance)
    return eco, cfg


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _report(sc: Scenario, argv, results: dict, t0: float) -> dict:
    return {
        "tool": "knightwalras",
        "version": __version__,
        "command": list(argv),
        "economy_digest": sc.digest(),
        "results": results,
        "timing": {"seconds": round(time.perf_counter() - t0, 6)},
    }


def cmd_solve(sc: Scenario, args, argv) -> int:
    t0 = time.perf_counter()
    eco, cfg = _economy(sc, args)
    eq = solve_kw(eco, cfg)
    rep = verify_equilibrium(eco, eq.psi, eq.allocation)
    cert = no_trade_certificate(eco)
    results = {"equilibrium": _eq_dict(eq), "verification": _report_dict(rep), "no_trade_certificate": _cert_dict(cert)}
    print(f"residual {fmt(eq.residual)}  converged {eq.converged}  verdict {rep.verdict}")
    print("psi " + " ".join(fmt(x) for x in eq.psi))
    for i, c in enumerate(eq.allocation):
        print(f"agent {i}: " + " ".join(fmt(x) for x in c))
    print("disposal " + " ".join(fmt(x) for x in eq.disposal))
    print(f"no-trade certificate: {cert.status}")
    ad_ok = True
    if eco.priors.is_singleton or args.ad:
        prior = eco.priors.vertices[0] if eco.priors.is_singleton else eco.priors.vertices.mean(axis=0)
        try:
            ad = solve_ad(eco, prior, cfg)
        except ValueError as exc:
            print(f"Arrow-Debreu solve skipped: {exc}", file=sys.stderr)
            results["arrow_debreu"] = {"error": str(exc)}
        else:
            dist = max(float(np.max(np.abs(a - b))) for a, b in zip(eq.allocation, ad.allocation))
            agree = bool(dist <= 1e-6) if eco.priors.is_singleton else None
            results["arrow_debreu"] = {"equilibrium": _eq_dict(ad), "prior": prior, "sup_distance": dist,
                                       "agreement": agree}
            ad_ok = ad.converged
            print(f"Arrow-Debreu distance {fmt(dist)}" + ("" if agree is None else f"  agreement {agree}"))
    _write(args.out, "report.json", dumps(_report(sc, argv, results, t0)))
    return EXIT_OK if eq.converged and ad_ok else EXIT_NONCONVERGED


def _read_candidate(path, eco):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError("candidate", f"cannot read candidate: {exc}") from None
    if isinstance(data, dict) and "results" in data:
        data = data["results"].get("equilibrium", {})
    if not isinstance(data, dict) or "psi" not in data or "allocation" not in data:
        raise ScenarioError("candidate", "needs 'psi' and 'allocation'")
    try:
        psi = np.array(data["psi"], dtype=float)
        alloc = np.array(data["allocation"], dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError("candidate", "psi and allocation must be numeric") from None
    if psi.shape != (eco.n_states,):
        raise ScenarioError("candidate.psi", f"expected {eco.n_states} entries")
    if alloc.shape != (eco.n_agents, eco.n_states):
        raise ScenarioError("candidate.allocation", f"expected shape ({eco.n_agents}, {eco.n_states})")
    if np.any(psi < 0) or psi.sum() <= 0:
        raise ScenarioError("candidate.psi", "must be nonnegative and nonzero")
    return psi, list(alloc)


def cmd_verify(sc: Scenario, args, argv) -> int:
    t0 = time.perf_counter()
    eco, _ = _economy(sc, args)
    if not args.candidate:
        raise ScenarioError("candidate", "verify needs --candidate")
    psi, alloc = _read_candidate(args.candidate, eco)
    vc = VerifyConfig()
    if args.tolerance is not None:
        vc = VerifyConfig(args.tolerance, args.tolerance, args.tolerance)
    rep = verify_equilibrium(eco, psi, alloc, vc)
    print(f"verdict {rep.verdict}")
    for i, (s, s2, g) in enumerate(zip(rep.budget_slack, rep.budget_slack_supplied, rep.optimality_gap)):
        print(f"agent {i}: budget slack {fmt(s2)} (normalized {fmt(s)})  optimality gap {fmt(g)}")
    print(f"feasibility {fmt(rep.feasibility_residual)}  no-arbitrage gap {fmt(rep.no_arbitrage_gap)}")
    for f in rep.failures:
        print(f"  fail: {f}")
    _write(args.out, "report.json", dumps(_report(sc, argv, {"verification": _report_dict(rep)}, t0)))
    return EXIT_OK if rep.passed else EXIT_NONCONVERGED


def sweep_csv(records, n_states: int, n_agents: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["epsilon", "converged", "residual", "trade_volume", "disposal_l1", "dist_to_eps0_allocation",
            "no_trade_certificate", "convention"]
    head += [f"psi_{s}" for s in range(n_states)]
    head += [f"c_{i}_{s}" for i in range(n_agents) for s in range(n_states)]
    w.writerow(head)
    for r in records:
        row = [fmt(r.epsilon), str(r.converged).lower(), fmt(r.residual), fmt(r.trade_volume), fmt(r.disposal_l1),
               fmt(r.dist_to_eps0_allocation), r.no_trade_certificate, r.convention]
        if r.equilibrium is None:
            row += ["nan"] * (n_states + n_agents * n_states)
        else:
            row += [fmt(x) for x in r.equilibrium.psi]
            row += [fmt(x) for c in r.equilibrium.allocation for x in c]
        w.writerow(row)
    return buf.getvalue()


def cmd_sweep(sc: Scenario, args, argv) -> int:
    t0 = time.perf_counter()
    eco, cfg = _economy(sc, args)
    grid = sc.experiment.get("sweep_grid")
    if not grid:
        raise ScenarioError("experiment.sweep_grid", "sweep needs a nonempty grid")
    if 0 not in grid:
        raise ScenarioError("experiment.sweep_grid", "grid must include 0")
    kind = sc.experiment.get("family", "interval")
    if kind == "interval":
        if sc.interval is None:
            raise ScenarioError("priors", "interval family needs priors given as {center, epsilon}")
        center = sc.interval["center"]

        def family(e):
            return interval_priors(center, e)
    else:
        base = eco.priors.vertices.mean(axis=0)

        def family(e):
            return make_prior_set([base])
    try:
        family(max(grid))
    except ValueError as exc:
        raise ScenarioError("experiment.sweep_grid", str(exc)) from None
    records = kw_correspondence_sweep(eco, family, grid, cfg)
    text = sweep_csv(records, eco.n_states, eco.n_agents)
    _write(args.out, "sweep.csv", text)
    results = {"records": [{
        "epsilon": r.epsilon, "converged": r.converged, "residual": r.residual, "trade_volume": r.trade_volume,
        "disposal_l1": r.disposal_l1, "dist_to_eps0_allocation": r.dist_to_eps0_allocation,
        "no_trade_certificate": r.no_trade_certificate, "convention": r.convention, "error": r.error,
        "equilibrium": None if r.equilibrium is None else _eq_dict(r.equilibrium),
    } for r in records]}
    _write(args.out, "report.json", dumps(_report(sc, argv, results, t0)))
    print(f"{'epsilon':>10} {'conv':>5} {'residual':>10} {'trade':>10} {'disposal':>10} {'dist0':>10}  certificate")
    for r in records:
        print(f"{r.epsilon:10.4g} {str(r.converged):>5} {r.residual:10.3g} {r.trade_volume:10.4g} "
              f"{r.disposal_l1:10.4g} {r.dist_to_eps0_allocation:10.4g}  {r.no_trade_certificate}")
    return EXIT_OK if all(r.converged for r in records) else EXIT_NONCONVERGED


def cmd_sample(sc: Scenario, args, argv) -> int:
    t0 = time.perf_counter()
    eco, _ = _economy(sc, args)
    spec = sc.experiment.get("sampler")
    if not spec:
        raise ScenarioError("experiment.sampler", "sample needs a sampler block")
    seed = args.seed if args.seed is not None else sc.experiment.get("seed", 0)
    sampler = SAMPLERS[spec["kind"]](spec.get("concentration", 1.0))
    try:
        res = genericity_experiment(eco, sampler, spec["n"], seed=seed, prior=sc.experiment.get("prior"))
    except ValueError as exc:
        raise ScenarioError("experiment", str(exc)) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["draw", "verdict", "max_spread"]
               + [f"e_{i}_{s}" for i in range(eco.n_agents) for s in range(eco.n_states)])
    for r in res.records:
        w.writerow([r["draw"], str(r["verdict"]).lower(), fmt(r["max_spread"])]
                   + [fmt(x) for x in np.ravel(r["endowments"])])
    _write(args.out, "sample.csv", buf.getvalue())
    results = {"fraction": res.fraction, "n": res.n, "seed": seed}
    _write(args.out, "report.json", dumps(_report(sc, argv, results, t0)))
    print(f"fraction {fmt(res.fraction)} ({sum(r['verdict'] for r in res.records)}/{res.n})")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep, "sample": cmd_sample}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="knightwalras", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--convention", choices=["disposal", "equality"], help="override the clearing convention")
    p.add_argument("--seed", type=int, help="override the solver / sampler seed")
    p.add_argument("--ad", action="store_true", help="also solve the linear economy at the vertex centroid")
    p.add_argument("--tolerance", type=float, help="residual tolerance (solve) or verification tolerance")
    p.add_argument("--candidate", help="verify: JSON with 'psi' and 'allocation' (or a solve report)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_INPUT
    if args.tolerance is not None and not args.tolerance > 0:
        print("error: --tolerance must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        sc = load(args.scenario)
        return COMMANDS[args.command](sc, args, argv)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
