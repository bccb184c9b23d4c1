import pytest

from pactight import UnknownScenario, Verdict, run_scenario
from pactight.scenarios import MODES, REGISTRY, UnknownMode, build, get, matrix, run_scenario_trace

S, B = Verdict.ATTACK_SUCCEEDED, Verdict.ATTACK_BLOCKED

MUST_BLOCK = ["fakevt", "fakevt_sig", "vtxchg", "vtxchg_hier", "coop", "noncopy", "store_leak",
              "ret_swap", "fptr_forge", "dangling_uaf", "double_free"]


@pytest.mark.parametrize("name", MUST_BLOCK)
def test_blocked_under_pactight(name):
    assert run_scenario(name, "pactight") is B


@pytest.mark.parametrize("name", MUST_BLOCK)
def test_succeeds_unprotected(name):
    assert run_scenario(name, "none") is S


def test_expected_tables_hold():
    for name, scn in REGISTRY.items():
        for mode, want in scn.expected.items():
            assert run_scenario(name, mode) is want, (name, mode)


def test_reuse_and_return_contrast():
    assert run_scenario("noncopy", "parts_typeid") is S
    assert run_scenario("ret_swap", "sp_modifier") is S


@pytest.mark.parametrize("seed", range(5))
def test_verdicts_stable_across_seeds(seed):
    for name in ("noncopy", "ret_swap", "fakevt"):
        assert run_scenario(name, "pactight", seed) is B


@pytest.mark.parametrize("name,reason", [("fakevt", "MissingTag"), ("fptr_forge", "AuthFail"),
                                         ("dangling_uaf", "MissingTag"), ("double_free", "DoubleFree"),
                                         ("ret_swap", "AuthFail")])
def test_abort_reasons(name, reason):
    r = run_scenario_trace(name, "pactight")
    assert r.aborts[0]["reason"] == reason


def test_store_leak_reads_tag_but_still_blocked():
    r = run_scenario_trace("store_leak", "pactight")
    assert r.attacker[0]["result"] == "done"
    assert r.verdict == B.value


def test_unknown_names():
    with pytest.raises(UnknownScenario):
        get("nope")
    with pytest.raises(UnknownScenario):
        run_scenario("nope")
    with pytest.raises(UnknownMode):
        build(get("coop"), "cfi_only")


def test_matrix_shape():
    m = matrix()
    assert set(m) == set(REGISTRY)
    assert all(set(row) == set(MODES) for row in m.values())


def test_ovwrt_does_not_change_verdicts():
    for name in MUST_BLOCK:
        assert run_scenario(name, "pactight", ovwrt=True) is B
