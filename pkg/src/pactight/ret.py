"""Return-address signing.

``pactight`` chains frames: the modifier of a frame is its function id XOR
the signed return address saved by the caller's frame, so every signature
depends on the whole call path.  ``sp`` is the stack-pointer modifier used
by earlier schemes; two frames at the same depth share a modifier, which is
what makes their signed return addresses interchangeable.  ``zero`` signs
with a constant modifier.
"""
from __future__ import annotations

from dataclasses import dataclass

from .pa import KeyId, PointerAuth
from .runtime import AbortReason, AbortRecord, PactightAbort

RET_MODES = ("none", "pactight", "sp", "zero")
CHAIN_BASE = 0


@dataclass(frozen=True)
class FrameRecord:
    function_id: int
    signed_ret: int
    prev_signed_ret: int


class ReturnProtector:
    def __init__(self, pa: PointerAuth, mode: str = "pactight", key: KeyId = KeyId.IB):
        if mode not in RET_MODES:
            raise ValueError(f"unknown return-protection mode {mode!r}")
        self.pa = pa
        self.mode = mode
        self.key = key
        self.signs = 0
        self.auths = 0

    def modifier(self, function_id: int, prev_signed_ret: int, sp: int) -> int:
        if self.mode == "sp":
            return sp
        if self.mode == "zero":
            return 0
        return (function_id ^ prev_signed_ret) & 0xFFFFFFFFFFFFFFFF

    def sign_prologue(self, ret_addr: int, function_id: int, prev_signed_ret: int = CHAIN_BASE,
                      sp: int = 0) -> int:
        if self.mode == "none":
            return ret_addr
        self.signs += 1
        return self.pa.sign(ret_addr, self.modifier(function_id, prev_signed_ret, sp), self.key)

    def auth_epilogue(self, signed_ret: int, function_id: int, prev_signed_ret: int = CHAIN_BASE,
                      sp: int = 0, site=None) -> int:
        if self.mode == "none":
            return signed_ret
        self.auths += 1
        ok, addr = self.pa.auth(signed_ret, self.modifier(function_id, prev_signed_ret, sp), self.key)
        if not ok:
            raise PactightAbort(AbortRecord(AbortReason.AUTH_FAIL, site, signed_ret))
        return addr


def ret_sign_prologue(pa: PointerAuth, ret_addr: int, function_id: int, prev_signed_ret: int) -> int:
    return ReturnProtector(pa).sign_prologue(ret_addr, function_id, prev_signed_ret)


def ret_auth_epilogue(pa: PointerAuth, signed_ret: int, function_id: int, prev_signed_ret: int) -> int:
    return ReturnProtector(pa).auth_epilogue(signed_ret, function_id, prev_signed_ret)
