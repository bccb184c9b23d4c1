"""ARMv8.3 pointer authentication, emulated in software.

A PAC is the truncated output of a keyed 64-bit MAC over (canonical address,
modifier).  It lives in the otherwise-unused upper bits of a pointer.  Failed
authentication does not fault; it returns the canonical address with its two
top bits flipped ("poisoned"), and the first dereference traps.

The MAC is keyed BLAKE2b cut to 8 bytes.  ``mac64`` is the only place that
knows this, so a QARMA-64 implementation can replace it without touching the
callers.
"""
from __future__ import annotations

import enum
import hashlib
import secrets
import struct
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional

from .rng import derive_rng

MASK64 = (1 << 64) - 1
POISON_BITS = 0b11 << 62

_pack_qq = struct.Struct("<QQ").pack


class KeyId(enum.Enum):
    IA = "IA"
    IB = "IB"
    DA = "DA"
    DB = "DB"
    GA = "GA"


class NonCanonicalInput(ValueError):
    """Raised when signing an address that already carries PAC bits."""


class AuthFault(RuntimeError):
    """Authentication mismatch with ``fpac`` enabled (hard fault)."""

    def __init__(self, address: int, key_id: KeyId):
        super().__init__(f"PAC authentication fault on {address:#018x} ({key_id.value})")
        self.address = address
        self.key_id = key_id


@dataclass(frozen=True)
class AddressLayout:
    va_bits: int = 48
    pac_bits: int = 16
    pac_shift: Optional[int] = None

    def __post_init__(self):
        if self.pac_shift is None:
            object.__setattr__(self, "pac_shift", self.va_bits)
        if self.pac_bits < 1:
            raise ValueError("pac_bits must be >= 1")
        if self.va_bits < 2 or self.va_bits + self.pac_bits > 64:
            raise ValueError("va_bits + pac_bits must be <= 64")
        if self.pac_shift < self.va_bits or self.pac_shift + self.pac_bits > 64:
            raise ValueError("PAC field must sit between va_bits and bit 63")

    @property
    def va_mask(self) -> int:
        return (1 << self.va_bits) - 1

    @property
    def upper_mask(self) -> int:
        return MASK64 ^ self.va_mask

    @property
    def pac_mask(self) -> int:
        return ((1 << self.pac_bits) - 1) << self.pac_shift


@dataclass(frozen=True)
class PaKey:
    id: KeyId
    material: int = field(repr=False)

    def __post_init__(self):
        if not 0 <= self.material < (1 << 128):
            raise ValueError("key material must be 128 bits")


class KeyVault:
    """The five PA keys.  Immutable after construction."""

    def __init__(self, seed: Optional[int] = None, materials: Optional[Dict[KeyId, int]] = None):
        if materials is None:
            if seed is None:
                materials = {k: secrets.randbits(128) for k in KeyId}
            else:
                rng = derive_rng(seed, "keyvault")
                materials = {k: rng.getrandbits(128) for k in KeyId}
        self._keys = {k: PaKey(k, materials[k]) for k in KeyId}
        # keyed hash states, copied per MAC
        self._states = {
            k: hashlib.blake2b(key=key.material.to_bytes(16, "little"), digest_size=8)
            for k, key in self._keys.items()
        }

    def __getitem__(self, key_id: KeyId) -> PaKey:
        return self._keys[key_id]

    def __repr__(self):
        return "KeyVault(<5 keys>)"

    def mac64(self, key_id: KeyId, canonical_address: int, modifier: int) -> int:
        h = self._states[key_id].copy()
        h.update(_pack_qq(canonical_address & MASK64, modifier & MASK64))
        return int.from_bytes(h.digest(), "little")


def mac64(key: PaKey, canonical_address: int, modifier: int) -> int:
    """Keyed 64-bit PRF over (address, modifier) under a 128-bit key."""
    h = hashlib.blake2b(key=key.material.to_bytes(16, "little"), digest_size=8)
    h.update(_pack_qq(canonical_address & MASK64, modifier & MASK64))
    return int.from_bytes(h.digest(), "little")


class AuthResult(NamedTuple):
    ok: bool
    address: int


class PointerAuth:
    """PAC*, AUT* and XPAC* over one key vault and address layout."""

    def __init__(self, vault: KeyVault, layout: AddressLayout = AddressLayout(),
                 fpac: bool = False, pac_placement: str = "v8_3"):
        if pac_placement != "v8_3":
            # ARMv8.6 EnhancedPAC XORs the PAC into the upper bits; not modelled.
            raise NotImplementedError(f"pac_placement={pac_placement!r}")
        self.vault = vault
        self.layout = layout
        self.fpac = fpac
        self._va_mask = layout.va_mask
        self._upper = layout.upper_mask
        self._sign_bit = 1 << (layout.va_bits - 1)
        self._pac_shift = layout.pac_shift
        self._pac_low = (1 << layout.pac_bits) - 1
        self._pac_mask = layout.pac_mask

    def strip(self, addr: int) -> int:
        low = addr & self._va_mask
        if low & self._sign_bit:
            return low | self._upper
        return low

    def is_canonical(self, addr: int) -> bool:
        return self.strip(addr) == addr

    def is_poisoned(self, addr: int) -> bool:
        return addr != self.strip(addr) and (addr ^ self.strip(addr)) == POISON_BITS

    def pac(self, canonical: int, modifier: int, key_id: KeyId) -> int:
        return self.vault.mac64(key_id, canonical, modifier) & self._pac_low

    def sign(self, addr: int, modifier: int, key_id: KeyId) -> int:
        canonical = self.strip(addr)
        if canonical != addr:
            raise NonCanonicalInput(f"{addr:#018x} already carries PAC bits")
        code = self.pac(canonical, modifier, key_id)
        return (canonical & ~self._pac_mask & MASK64) | (code << self._pac_shift)

    def auth(self, addr: int, modifier: int, key_id: KeyId) -> AuthResult:
        canonical = self.strip(addr)
        expected = (canonical & ~self._pac_mask & MASK64) | (
            self.pac(canonical, modifier, key_id) << self._pac_shift)
        if addr == expected:
            return AuthResult(True, canonical)
        if self.fpac:
            raise AuthFault(addr, key_id)
        return AuthResult(False, canonical ^ POISON_BITS)

    def poison(self, canonical: int) -> int:
        return canonical ^ POISON_BITS
