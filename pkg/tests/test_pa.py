import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pactight.pa import (POISON_BITS, AddressLayout, AuthFault, KeyId, KeyVault, NonCanonicalInput,
                         PointerAuth, mac64)

VAULT = KeyVault(seed=1)
PA = PointerAuth(VAULT)

user_addr = st.integers(0, (1 << 47) - 1)
kernel_addr = st.integers((1 << 64) - (1 << 47), (1 << 64) - 1)
canonical = st.one_of(user_addr, kernel_addr)
u64 = st.integers(0, (1 << 64) - 1)
keys = st.sampled_from(list(KeyId))


def oracle_pac(key_material: int, addr: int, mod: int, bits: int) -> int:
    # independent recomputation straight from hashlib
    h = hashlib.blake2b(addr.to_bytes(8, "little") + mod.to_bytes(8, "little"),
                        key=key_material.to_bytes(16, "little"), digest_size=8)
    return int.from_bytes(h.digest(), "little") & ((1 << bits) - 1)


def test_layout_defaults():
    lay = AddressLayout()
    assert lay.pac_shift == 48
    assert lay.pac_mask == 0xFFFF << 48
    assert lay.va_mask == (1 << 48) - 1


@pytest.mark.parametrize("kw", [dict(pac_bits=0), dict(va_bits=60, pac_bits=8), dict(pac_shift=40)])
def test_layout_rejects_bad(kw):
    with pytest.raises(ValueError):
        AddressLayout(**kw)


@given(canonical, u64, keys)
def test_sign_matches_oracle(addr, mod, key):
    signed = PA.sign(addr, mod, key)
    pac = (signed >> 48) & 0xFFFF
    assert pac == oracle_pac(VAULT[key].material, addr, mod, 16)
    assert signed & ((1 << 48) - 1) == addr & ((1 << 48) - 1)


@given(canonical, u64, keys)
def test_round_trip(addr, mod, key):
    ok, out = PA.auth(PA.sign(addr, mod, key), mod, key)
    assert ok and out == addr


@given(canonical, u64, keys)
def test_strip_inverts_sign(addr, mod, key):
    assert PA.strip(PA.sign(addr, mod, key)) == addr


@given(canonical)
def test_canonical_fixed_points(addr):
    assert PA.is_canonical(addr)
    assert PA.strip(addr) == addr


@given(canonical, u64, u64)
@settings(max_examples=300)
def test_wrong_modifier_poisons(addr, mod, other):
    signed = PA.sign(addr, mod, KeyId.IA)
    ok, out = PA.auth(signed, other, KeyId.IA)
    if ok:
        # only a genuine PAC collision may pass
        assert PA.pac(addr, other, KeyId.IA) == PA.pac(addr, mod, KeyId.IA)
    else:
        assert out == addr ^ POISON_BITS
        assert PA.is_poisoned(out)


def test_keys_are_independent():
    addr, mod = 0x4000_1000, 77
    pacs = {PA.pac(addr, mod, k) for k in KeyId}
    assert len(pacs) > 1


def test_sign_rejects_non_canonical():
    with pytest.raises(NonCanonicalInput):
        PA.sign(0x0001_0000_0000_1000, 0, KeyId.IA)


def test_fpac_raises():
    pa = PointerAuth(VAULT, fpac=True)
    signed = pa.sign(0x1000, 1, KeyId.DA)
    with pytest.raises(AuthFault):
        pa.auth(signed, 2, KeyId.DA)


def test_pac_placement_other_than_v83_rejected():
    with pytest.raises(NotImplementedError):
        PointerAuth(VAULT, pac_placement="v8_6")


def test_module_mac_matches_vault():
    assert mac64(VAULT[KeyId.GA], 5, 6) == VAULT.mac64(KeyId.GA, 5, 6)


def test_vault_seeded_is_deterministic_and_hidden():
    a, b = KeyVault(seed=9), KeyVault(seed=9)
    assert all(a[k].material == b[k].material for k in KeyId)
    assert str(a[KeyId.IA].material) not in repr(a[KeyId.IA])
    assert repr(a) == "KeyVault(<5 keys>)"
    assert KeyVault(seed=10)[KeyId.IA].material != a[KeyId.IA].material


@pytest.mark.parametrize("bits", [1, 4, 8, 16])
def test_narrow_pac_layouts_round_trip(bits):
    pa = PointerAuth(VAULT, AddressLayout(pac_bits=bits))
    rng = random.Random(bits)
    for _ in range(200):
        addr, mod = rng.getrandbits(47), rng.getrandbits(64)
        signed = pa.sign(addr, mod, KeyId.IB)
        assert signed >> (48 + bits) == 0
        assert pa.auth(signed, mod, KeyId.IB).ok
