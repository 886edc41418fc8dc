import json

import pytest

from jje.errors import AccessFailed, Forbidden, ProtocolOrderError
from jje.lawenforcement import AccessCase, CaseStatus
from jje.simharness import World, WorldConfig


@pytest.fixture
def world():
    return World(WorldConfig(N=30, k=3, D=6, t=4, seed=21))


def _run(world, case, authorization=b"warrant"):
    ch = case.step1_read_challenge(world.step)
    case.step2_request_decryption(world.custodians, authorization, world.archive.db(ch.epoch), world.step)
    case.step3_build_proofs(step=world.step)
    case.step4_collect_signatures(world.locate, world.config.t, step=world.step)
    return case.step5_submit(world.step)


def test_full_case(world):
    case = AccessCase(world.devices[3].enclave, case_id="c1")
    assert _run(world, case) == world.tokens[3]
    assert case.status is CaseStatus.COMPLETE
    assert case.effort_counter == world.config.t
    assert len(case.delegation_ids) == world.config.D
    events = [json.loads(line)["event"] for line in case.transcript_jsonl().splitlines()]
    assert events[0] == "challenge_read" and events[-1] == "complete"


def test_possession_required(world):
    case = AccessCase(world.devices[0].enclave, possession=False)
    with pytest.raises(Forbidden):
        case.step1_read_challenge()


def test_steps_in_order(world):
    case = AccessCase(world.devices[0].enclave)
    with pytest.raises(ProtocolOrderError):
        case.step3_build_proofs()
    with pytest.raises(ProtocolOrderError):
        case.step5_submit()
    case.step1_read_challenge()
    with pytest.raises(ProtocolOrderError):
        case.step4_collect_signatures(world.locate, 4)


def test_rereading_challenge_changes_request_id(world):
    case = AccessCase(world.devices[0].enclave, case_id="c")
    case.step1_read_challenge()
    first = case.request_id
    case.step1_read_challenge()
    assert case.request_id != first


def test_veto_fails_case():
    world = World(WorldConfig(N=30, seed=22), policies={2: lambda a: a == b"ok"})
    case = AccessCase(world.devices[0].enclave)
    with pytest.raises(AccessFailed) as info:
        _run(world, case, authorization=b"no")
    assert info.value.reason == "refused"
    assert case.status is CaseStatus.FAILED and case.failure_reason == "refused"
    assert case.delegation_ids is None


def test_insufficient_when_delegates_missing(world):
    case = AccessCase(world.devices[0].enclave)
    ch = case.step1_read_challenge()
    ids = case.step2_request_decryption(world.custodians, b"w", world.archive.db(ch.epoch))
    for dev_id in list(ids.values())[:3]:
        world.devices[world.ownership[dev_id.imei]].reachable = False
    case.step3_build_proofs()
    with pytest.raises(AccessFailed) as info:
        case.step4_collect_signatures(world.locate, world.config.t)
    assert info.value.reason == "insufficient"
    assert case.effort_counter == world.config.D


def test_uncooperative_delegate_counts_effort(world):
    case = AccessCase(world.devices[0].enclave)
    ch = case.step1_read_challenge()
    ids = case.step2_request_decryption(world.custodians, b"w", world.archive.db(ch.epoch))
    first = min(ids)
    world.devices[world.ownership[ids[first].imei]].cooperative = False
    case.step3_build_proofs()
    case.step4_collect_signatures(world.locate, world.config.t)
    assert case.effort_counter == world.config.t + 1
    assert any(e["event"] == "delegate_refused" for e in case.transcript)
    assert case.step5_submit() == world.tokens[0]


def test_device_rejects_tampered_collection(world):
    case = AccessCase(world.devices[0].enclave)
    ch = case.step1_read_challenge()
    case.step2_request_decryption(world.custodians, b"w", world.archive.db(ch.epoch))
    case.step3_build_proofs()
    case.step4_collect_signatures(world.locate, world.config.t)
    # a fresh challenge invalidates the collected nonce
    world.devices[0].enclave.reveal_challenge()
    with pytest.raises(AccessFailed) as info:
        case.step5_submit()
    assert info.value.reason == "rejected" and case.token is None
