import math

import pytest

from procure_bfm.market import AlwaysReject, Market
from procure_bfm.mechanisms import MechanismResult, bfm_swm, bfm_vm, preset
from procure_bfm.valuation import CoverageValuation, load_coverage_graph
from procure_bfm.verification import (
    GUARANTEES,
    GuaranteeSpec,
    PropertyViolation,
    audit_run,
    brute_force_opt,
    check_guarantee,
    corpus,
    default_policies,
    guarantees,
    swm_round_bound,
    truthfulness_probe,
    vm_round_bound,
)


def cycle():
    return load_coverage_graph("1 2\n2 3\n3 1")


def test_brute_force_cycle():
    cert = brute_force_opt(cycle(), [0.2] * 3, 0.5)
    assert cert.opt_set == (0, 1)
    assert cert.opt_value == pytest.approx(1.6)
    assert cert.value == 2 and cert.cost == pytest.approx(0.4)
    assert cert.enumerated_count == 8


def test_brute_force_valuation_objective():
    cert = brute_force_opt(cycle(), [0.2] * 3, 0.5, objective="valuation")
    assert cert.opt_set == (0, 1) and cert.opt_value == 2


def test_brute_force_nothing_affordable():
    cert = brute_force_opt(cycle(), [0.6] * 3, 0.5)
    assert cert.opt_set == () and cert.opt_value == 0


def test_brute_force_limits():
    big = CoverageValuation([set() for _ in range(23)])
    with pytest.raises(ValueError):
        brute_force_opt(big, [0.0] * 23, 1.0)
    with pytest.raises(ValueError):
        brute_force_opt(cycle(), [0.1, 0.1], 1.0)
    with pytest.raises(ValueError):
        brute_force_opt(cycle(), [0.1] * 3, 1.0, objective="profit")


def test_guarantee_presets():
    g = guarantees(0.2)
    assert g["swm-nonmonotone"].additive_slack == pytest.approx(0.05)
    assert g["swm-monotone"].additive_slack == pytest.approx(0.2 / 3)
    assert GUARANTEES["vm"].gamma == pytest.approx(1 / (12 + 4 * math.sqrt(3)))
    with pytest.raises(ValueError):
        GuaranteeSpec(1.5, 0.0, "welfare")


def empty_result():
    from procure_bfm.mechanisms import AuctionTrace

    return MechanismResult("bfm-swm", (), {}, 0.0, 0.0, 1, 0, AuctionTrace(), preset("swm-nonmonotone"))


def test_check_guarantee_margin():
    cert = brute_force_opt(cycle(), [0.2] * 3, 0.5)
    out = check_guarantee(empty_result(), cert, GUARANTEES["swm-nonmonotone"], [0.2] * 3)
    assert out.passed
    assert out.margin == pytest.approx(0.0 - (0.0328 * 2 - 0.4 - 0.025))
    with pytest.raises(ValueError):
        check_guarantee(empty_result(), cert, GUARANTEES["vm"], [0.2] * 3)


def test_round_bounds():
    p = preset("swm-monotone")
    assert swm_round_bound(0.0, p) is None
    assert swm_round_bound(0.05, p) == 2  # log of 1 is exactly zero
    assert swm_round_bound(0.001, p) == 2  # negative log term clamped
    assert swm_round_bound(1.0, p) == 2 + math.ceil(math.log(20) / math.log(p.alpha))
    vm = preset("vm")
    assert vm_round_bound(1, vm) == 2 + math.ceil(math.log(2) / math.log(vm.alpha))


def test_audit_passes_on_real_runs():
    for inst in corpus(20, 4):
        for run, name in ((bfm_swm, "swm-nonmonotone"), (bfm_vm, "vm")):
            market = inst.market()
            res = run(inst.oracle, market, preset(name))
            cert = brute_force_opt(inst.oracle, inst.costs, inst.budget)
            assert audit_run(res, market, inst.oracle, cert=cert).ok, inst.id


def test_audit_flags_budget_overrun():
    o = CoverageValuation([{0}])
    market = Market([0.0], 1.0)
    res = bfm_swm(o, market, preset("swm-monotone"))
    bad = MechanismResult(res.mechanism, (0,), {0: 1.01}, 1.01, res.valuation, res.rounds,
                          res.queries, res.trace, res.params)
    rep = audit_run(bad, market, o)
    assert rep.status("budget") == "fail"
    assert rep.status("surplus") == "fail"
    assert rep.status("individual-rationality") == "pass"
    err = PropertyViolation(rep, "unit")
    assert "budget" in str(err)


def test_audit_vm_skips_surplus():
    o = CoverageValuation([{0, 1}, {2}])
    market = Market([0.1, 0.1], 1.0)
    rep = audit_run(bfm_vm(o, market, preset("vm")), market, o)
    assert rep.ok
    assert rep.status("surplus") == "skip"
    assert rep.status("round-bound") == "pass"


def test_audit_rejects_mismatched_instance():
    o = CoverageValuation([{0}])
    market = Market([0.0], 1.0)
    res = bfm_swm(o, market, preset("swm-monotone"))
    with pytest.raises(ValueError):
        audit_run(res, Market([0.0, 0.0], 1.0), o)


def test_probe_single_seller_reject():
    o = CoverageValuation([{0}])
    rep = truthfulness_probe(o, Market([0.0], 1.0), preset("swm-monotone"), "swm", [AlwaysReject()])
    assert rep.ok and len(rep.entries) == 1
    e = rep.entries[0]
    assert e.truthful_utility == pytest.approx(10 / 31) and e.deviant_utility == 0


def test_probe_without_policies_is_vacuous():
    rep = truthfulness_probe(cycle(), Market([0.1] * 3, 1.0), preset("vm"), "vm", [])
    assert rep.ok and rep.entries == []


def test_probe_limits():
    o = CoverageValuation([set() for _ in range(3)])
    with pytest.raises(ValueError):
        truthfulness_probe(o, Market([0.1] * 3, 1.0), preset("vm"), "vm", default_policies(1.0), max_n=2)
    with pytest.raises(ValueError):
        truthfulness_probe(o, Market([0.1] * 3, 1.0), preset("vm"), "greedy", default_policies(1.0))


def test_corpus_is_deterministic():
    a = [(i.id, i.costs, i.budget) for i in corpus(6, 1)]
    b = [(i.id, i.costs, i.budget) for i in corpus(6, 1)]
    assert a == b
    assert [i.id.split("-")[0] for i in corpus(4, 1)] == ["coverage", "similarity"] * 2
    with pytest.raises(ValueError):
        next(corpus(1, 0, kinds=("grid",)))
