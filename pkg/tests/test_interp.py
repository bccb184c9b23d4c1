import pytest

from pactight import MachineConfig, Verdict, bundled, run
from pactight.interp import Machine
from pactight.ir import InstrumentOptions, instrument, parse_program
from pactight.memory import RODATA_BASE

HANDLER = """
(type Handler funcptr)
(type Box (struct (h Handler)))
(global hook Handler @bad)
(func good () (out 1) (ret 0))
(func bad () :gadget (out 666) (ret 0))
(func main ()
  (malloc %b Box)
  (field %h %b Box h)
  (store %h @good Handler)
  (point p)
  (icall %h Handler)
  (free %b Box)
  (ret 0))
"""


def prog(attack="", protect=True, **opts):
    p = parse_program(HANDLER + attack, "handler")
    return instrument(p, level="cfi", opts=InstrumentOptions(**opts)) if protect else p


def test_clean_run_outputs_and_verdict():
    r = run(prog())
    assert r.verdict == Verdict.CLEAN.value and r.outputs == [1] and r.status == "exited"
    # global initializer, the store, and the re-seal after the call
    assert (r.counts["pct_sign"], r.counts["pct_auth"]) == (3, 1)


def test_same_seed_same_trace():
    a = run(prog("(attack (at p (write %h @bad)))"), MachineConfig(seed=4)).to_json()
    b = run(prog("(attack (at p (write %h @bad)))"), MachineConfig(seed=4)).to_json()
    assert a == b


def test_trace_serializes():
    d = run(prog(), MachineConfig(seed=1)).to_dict()
    assert set(d) >= {"program", "config", "status", "verdict", "outputs", "counts", "aborts",
                      "trap", "attacker", "events", "steps", "exit_value"}
    assert d["config"]["seed"] == 1


def test_overwrite_blocked_when_protected_and_succeeds_otherwise():
    atk = "(attack (goal bad) (at p (write %h @bad)))"
    assert run(prog(atk, protect=False)).verdict == Verdict.ATTACK_SUCCEEDED.value
    r = run(prog(atk))
    assert r.verdict == Verdict.ATTACK_BLOCKED.value
    assert r.aborts[0]["reason"] == "AuthFail"
    assert 666 not in r.outputs


def test_poisoned_pointer_traps_without_abort():
    r = run(prog("(attack (at p (write %h @bad)))"), MachineConfig(abort_on_auth_fail=False))
    assert r.status == "trapped" and r.trap["kind"] == "PoisonedDeref"
    assert r.verdict == Verdict.ATTACK_BLOCKED.value


def test_untagged_target_is_missing_tag():
    src = HANDLER.replace("(global hook Handler @bad)", "")
    p = instrument(parse_program(src + "(attack (at p (write %h @bad)))"), level="cfi")
    assert run(p).aborts[0]["reason"] == "MissingTag"


def test_fpac_faults_at_auth():
    r = run(prog("(attack (at p (write %h @bad)))"), MachineConfig(fpac=True, abort_on_auth_fail=False))
    assert r.status == "aborted" and r.aborts[0]["reason"] == "AuthFail"


def test_branch_to_data_traps():
    r = run(prog("(attack (at p (write %h 0x12345)))", protect=False))
    assert r.status == "trapped" and r.trap["kind"] == "ExecFault"
    assert r.verdict == Verdict.ATTACK_FAILED.value


def test_denied_write_to_code_and_rodata():
    atk = f"(attack (at p (write @good 0) (write {RODATA_BASE} 0)))"
    r = run(prog(atk))
    assert [a["result"] for a in r.attacker] == ["denied", "denied"]
    assert r.verdict == Verdict.ATTACK_FAILED.value and r.outputs == [1]


def test_store_window_hidden_unless_exposed():
    atk = "(attack (at p (read $t (store_slot %b))))"
    hidden = run(prog(atk))
    assert hidden.attacker[0]["result"] == "denied"
    shown = run(prog(atk), MachineConfig(expose_store=True))
    assert shown.attacker[0]["result"] == "done"


def test_attacker_arithmetic_and_vars():
    atk = "(attack (at p (read $v %h) (let $w (xor (strip $v) 0)) (write %h $v)))"
    r = run(prog(atk))
    assert r.verdict == Verdict.ATTACK_FAILED.value and r.outputs == [1]


def test_step_limit():
    loop = "(func main () (label top) (br top))"
    r = run(parse_program(loop), MachineConfig(max_steps=100))
    assert r.status == "trapped" and r.trap["kind"] == "StepLimit"


def test_undefined_register_traps():
    r = run(parse_program("(func main () (out %nope) (ret 0))"))
    assert r.status == "trapped"


@pytest.mark.parametrize("mode", ["pactight", "sp", "zero"])
def test_return_signing_balanced(mode):
    p = instrument(bundled.load("c09_recursion"), opts=InstrumentOptions(ret_mode=mode))
    r = run(p, MachineConfig(ret_mode=mode))
    assert r.verdict == Verdict.CLEAN.value
    assert r.counts["ret_sign"] == r.counts["ret_auth"] > 1


def test_keys_never_in_attacker_memory():
    for name in bundled.corpus_names():
        for expose in (False, True):
            m = Machine(instrument(bundled.load(name)), MachineConfig(seed=2, expose_store=expose))
            m.run()
            assert m.audit_keys()


def test_ovwrt_keeps_outputs():
    a = run(prog(), MachineConfig(seed=3))
    b = run(prog(ovwrt=True), MachineConfig(seed=3))
    assert a.outputs == b.outputs and a.verdict == b.verdict
