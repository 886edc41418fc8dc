import random

import pytest

from jje import crypto
from jje.custodian import CustodianNode, custodian_consensus
from jje.device import DelegationParams, Enclave
from jje.registry import DeviceId, luhn_digit
from jje.simharness import World, WorldConfig


def make_imei(rng: random.Random) -> str:
    body = "35" + "".join(str(rng.randrange(10)) for _ in range(12))
    return body + luhn_digit(body)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def entropy(rng):
    return rng.randbytes


@pytest.fixture
def keys(entropy):
    return crypto.threshold_keygen(3, entropy)


@pytest.fixture
def manufacturer(entropy):
    return crypto.keygen(entropy)


@pytest.fixture
def custodians(keys, manufacturer):
    return [CustodianNode(s.index, s, manufacturer.verify_key) for s in keys.shares]


def make_enclaves(n, keys, entropy, rng, D=3, t=2):
    params = DelegationParams(D, t)
    return [
        Enclave(DeviceId(make_imei(rng)), params, keys.group_verify_key, keys.public_enc_key,
                entropy=entropy)
        for _ in range(n)
    ]


def register_all(enclaves, custodians, manufacturer, epoch):
    entries = [e.delegate_register(epoch, manufacturer.sign) for e in enclaves]
    for entry in entries:
        for c in custodians:
            c.receive_registration(entry)
    return entries


@pytest.fixture
def published(keys, manufacturer, custodians, entropy, rng):
    """Twelve enclaves registered and a published epoch 0."""
    enclaves = make_enclaves(12, keys, entropy, rng)
    entries = register_all(enclaves, custodians, manufacturer, 0)
    outcome = custodian_consensus(custodians, 0, entropy)
    return enclaves, entries, outcome


@pytest.fixture(scope="module")
def small_world():
    return World(WorldConfig(N=40, k=3, D=6, t=4, seed=99))
