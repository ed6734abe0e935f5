"""Command line entry point: ``procure-bfm {run,sweep,verify,gen,summary}``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .baselines import BASELINES, budget_truncate
from .market import CostModel, Market, gen_costs, write_costs
from .mechanisms import MechanismParams, bfm_swm, bfm_vm, preset
from .harness import (
    BUNDLED_POWERLAW,
    MECHANISMS,
    ExperimentConfig,
    default_params,
    gen_instance,
    instance_costs,
    load_dataset,
    report_summary,
    run_sweep,
    write_edge_list,
)
from .valuation import CoverageValuation
from .verification import (
    GUARANTEES,
    guarantees,
    audit_run,
    brute_force_opt,
    check_guarantee,
    corpus,
    default_policies,
    truthfulness_probe,
)


def _budgets(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _cost_model(args) -> tuple[CostModel, str | None]:
    spec = args.cost_model
    if spec.startswith("file:"):
        return CostModel(), spec[5:]
    if spec == "uniform":
        return CostModel("uniform", args.cost_lo, args.cost_hi), None
    if spec in ("stddev", "stddev-proportional"):
        return CostModel("stddev-proportional", target_mean=args.cost_mean), None
    raise SystemExit(f"unknown cost model {spec!r}")


def _params(args) -> MechanismParams | None:
    """Explicit overrides on top of the chosen (or default) preset."""
    if all(getattr(args, k) is None for k in ("alpha", "beta", "ell", "eps")):
        return None
    if args.preset:
        base = preset(args.preset)
    elif "bfm-vm" in args.mechanism.split(","):
        base = preset("vm")
    else:
        base = preset("swm-nonmonotone")
    return MechanismParams(
        ell=base.ell if args.ell is None else args.ell,
        alpha=base.alpha if args.alpha is None else args.alpha,
        beta=base.beta if args.beta is None else args.beta,
        eps=base.eps if args.eps is None else args.eps,
    )


def _config(args, budgets, mechanisms) -> ExperimentConfig:
    model, cost_file = _cost_model(args)
    return ExperimentConfig(
        dataset=args.dataset or str(BUNDLED_POWERLAW),
        budgets=budgets,
        mechanisms=mechanisms,
        preset=args.preset,
        params=_params(args),
        cost_model=model,
        cost_file=cost_file,
        objective=args.objective,
        seed=args.seed,
        repetitions=getattr(args, "repetitions", 1),
        out=args.out,
        symmetrize=args.symmetrize,
        large=args.large,
        threads=getattr(args, "threads", None),
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default=None,
                   help="edge-list path, vectors (.csv/.f32/.bin), or gen:<kind>:n=...; "
                        "defaults to the bundled 2000-node power-law graph")
    p.add_argument("--preset", choices=sorted(["swm-nonmonotone", "swm-monotone", "vm"]))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--ell", type=int, choices=[1, 2])
    p.add_argument("--eps", type=float)
    p.add_argument("--budget", required=True, help="comma-separated budgets")
    p.add_argument("--cost-model", default="uniform", help="uniform | stddev | file:<id,cost csv>")
    p.add_argument("--cost-lo", type=float, default=0.0)
    p.add_argument("--cost-hi", type=float, default=1.0)
    p.add_argument("--cost-mean", type=float, default=0.1)
    p.add_argument("--objective", choices=["welfare", "valuation"], default="welfare")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--symmetrize", action="store_true", help="add the reverse of every edge")
    p.add_argument("--large", action="store_true", help="allow datasets above 20000 nodes")


def cmd_run(args) -> int:
    cfg = _config(args, _budgets(args.budget), [args.mechanism])
    inst = load_dataset(cfg.dataset, cfg.symmetrize, cfg.seed, cfg.large)
    costs = instance_costs(inst, cfg, 0)
    out = []
    for budget in cfg.budgets:
        oracle = inst.oracle.clone()
        if args.mechanism in ("bfm-swm", "bfm-vm"):
            params = default_params(args.mechanism, oracle, cfg)
            market = Market(costs, budget)
            result = (bfm_swm if args.mechanism == "bfm-swm" else bfm_vm)(oracle, market, params)
            report = audit_run(result, market, inst.oracle)
            result.with_costs(costs)
            out.append({
                "budget": budget, "winners": list(result.winners),
                "payments": {str(k): v for k, v in result.payments.items()},
                "total_payment": result.total_payment, "valuation": result.valuation,
                "welfare": result.welfare, "rounds": result.rounds, "queries": result.queries,
                "audit": {c.name: c.status for c in report.checks},
            })
        else:
            seq = BASELINES[args.mechanism](oracle, costs)
            winners = budget_truncate(seq, costs, budget)
            value = inst.oracle.peek(winners)
            out.append({
                "budget": budget, "winners": winners, "valuation": value,
                "welfare": value - math.fsum(costs[u] for u in winners), "queries": oracle.queries,
            })
    text = json.dumps({"dataset": inst.name, "mechanism": args.mechanism, "runs": out}, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_sweep(args) -> int:
    mechanisms = [m.strip() for m in args.mechanism.split(",") if m.strip()]
    cfg = _config(args, _budgets(args.budget), mechanisms)
    rows = run_sweep(cfg)
    if not args.out:
        for row in rows:
            print(row)
    else:
        print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_verify(args) -> int:
    name = args.preset
    params = preset(name)
    if args.eps is not None:
        params = MechanismParams(params.ell, params.alpha, params.beta, args.eps)
    spec = guarantees(params.eps)[name]
    kinds = ("coverage",) if name == "swm-monotone" else ("coverage", "similarity")
    run = bfm_vm if name == "vm" else bfm_swm
    rows = []
    failures = 0
    for inst in corpus(args.instances, args.seed, kinds=kinds, n_range=(args.min_n, args.max_n)):
        market = inst.market()
        result = run(inst.oracle, market, params)
        cert = brute_force_opt(inst.oracle, inst.costs, inst.budget, spec.objective)
        report = audit_run(result, market, inst.oracle, cert=cert)
        for c in report.checks:
            rows.append((inst.id, c.name, c.status, "" if c.margin is None else repr(c.margin)))
            failures += c.status == "fail"
        g = check_guarantee(result, cert, spec, inst.costs)
        rows.append((inst.id, "guarantee", "pass" if g.passed else "fail", repr(g.margin)))
        failures += not g.passed
        if args.truthfulness and inst.oracle.n <= 8:
            probe = truthfulness_probe(inst.oracle, market, params, "vm" if name == "vm" else "swm",
                                       default_policies(inst.budget))
            worst = max((e.deviant_utility - e.truthful_utility for e in probe.entries), default=0.0)
            rows.append((inst.id, "truthfulness", "pass" if probe.ok else "fail", repr(-worst)))
            failures += not probe.ok
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["instance_id", "check", "pass", "margin"])
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    print(f"{args.instances} instances, {failures} failed checks", file=sys.stderr)
    return 1 if failures else 0


def cmd_gen(args) -> int:
    inst = gen_instance(args.spec, args.seed)
    out = Path(args.out)
    if isinstance(inst.oracle, CoverageValuation):
        write_edge_list(inst.oracle, out, f"{args.spec} seed={args.seed}")
    else:
        V = inst.oracle._vectors
        with out.open("w", newline="") as fh:
            csv.writer(fh).writerows([[repr(float(x)) for x in row] for row in V])
    if args.costs_out:
        model = CostModel("uniform", args.cost_lo, args.cost_hi, seed=args.seed)
        if inst.aux is not None and args.cost_model == "stddev":
            model = CostModel("stddev-proportional", target_mean=args.cost_mean)
        write_costs(args.costs_out, gen_costs(model, inst.oracle.n, inst.aux))
    print(f"wrote {inst.name} ({inst.oracle.n} sellers) to {out}")
    return 0


def cmd_summary(args) -> int:
    print(report_summary(args.csv))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="procure-bfm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one mechanism at one or more budgets")
    _add_common(p)
    p.add_argument("--mechanism", choices=MECHANISMS, default="bfm-swm")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="budget x repetition sweep to CSV")
    _add_common(p)
    p.add_argument("--mechanism", default="bfm-swm,distorted,roi,cost-scaled",
                   help=f"comma-separated subset of {','.join(MECHANISMS)}")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--threads", type=int, help="overrides PROCURE_BFM_THREADS")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="audit a seeded random corpus against brute force")
    p.add_argument("--preset", choices=sorted(GUARANTEES), default="swm-nonmonotone")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--min-n", type=int, default=4)
    p.add_argument("--max-n", type=int, default=12)
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truthfulness", action="store_true", help="also probe scripted deviations (n <= 8)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a synthetic instance")
    p.add_argument("spec", help="e.g. power-law-digraph:n=2000,exponent=2.5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--costs-out")
    p.add_argument("--cost-model", choices=["uniform", "stddev"], default="uniform")
    p.add_argument("--cost-lo", type=float, default=0.0)
    p.add_argument("--cost-hi", type=float, default=1.0)
    p.add_argument("--cost-mean", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("summary", help="ratio of our mechanism to the best baseline per budget")
    p.add_argument("csv")
    p.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
