"""Deterministic world simulation and adversary experiments.

A :class:`World` owns a device population, the custodians, a manufacturer,
a step clock and a lockstep message queue. All randomness, including key
material, is drawn from one ``random.Random`` seeded by the config, so equal
configs give byte-identical transcripts.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from . import crypto
from .analysis import corrupted_count
from .custodian import (
    Aborted,
    CustodianNode,
    MaliciousCustodian,
    Published,
    PublishedJurisdictions,
    custodian_consensus,
    jurisdiction_consensus,
)
from .device import EPOCH_STEPS, DelegationParams, Enclave, Selection
from .errors import AccessFailed, InvalidParameter, Refused
from .lawenforcement import AccessCase, Strategy, greedy_nearest_index
from .messages import SignedDelegate, UnlockResponse, decode_selection, unlock_message
from .registry import DelegateEntry, DeviceId, EpochArchive, JurisdictionRegistry, KeyDbHeader, entry_at, luhn_digit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldConfig:
    N: int
    k: int = 3
    D: int = 6
    t: int = 4
    epochs: int = 1
    corruption_fraction: float = 0.0
    dropout_fraction: float = 0.0
    honest_custodians: Optional[int] = None
    seed: int = 0
    jurisdictions: tuple[str, ...] = ()
    epoch_length: int = EPOCH_STEPS

    def __post_init__(self):
        if not 1 <= self.t <= self.D <= self.N:
            raise InvalidParameter(f"need 1 <= t <= D <= N, got t={self.t} D={self.D} N={self.N}")
        if self.k < 1:
            raise InvalidParameter("need at least one custodian")
        if self.honest_custodians is not None and not 0 <= self.honest_custodians <= self.k:
            raise InvalidParameter("honest_custodians must lie in [0, k]")
        for name in ("corruption_fraction", "dropout_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidParameter(f"{name} must lie in [0, 1]")

    @property
    def honest(self) -> int:
        return self.k if self.honest_custodians is None else self.honest_custodians

    @property
    def corrupted(self) -> int:
        return corrupted_count(self.N, self.corruption_fraction)

    @classmethod
    def from_text(cls, text: str) -> "WorldConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "WorldConfig":
        kwargs: dict[str, Any] = {}
        for f in dataclasses.fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.name == "jurisdictions":
                kwargs[f.name] = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif f.name == "honest_custodians":
                kwargs[f.name] = None if raw.lower() == "none" else int(raw)
            elif f.name.endswith("fraction"):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        if "N" not in kwargs:
            raise InvalidParameter("config needs N")
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(v) if f.name == 'jurisdictions' else v}")
        return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


# -- network ------------------------------------------------------------------


class Message(NamedTuple):
    step: int
    seq: int
    src: str
    dst: str
    kind: str
    payload: Any


class Network:
    """Synchronous queue; delivery order is (step, send order)."""

    def __init__(self):
        self._queue: list[Message] = []
        self._seq = 0
        self.delivered = 0

    def send(self, step: int, src: str, dst: str, kind: str, payload: Any) -> None:
        self._queue.append(Message(step, self._seq, src, dst, kind, payload))
        self._seq += 1

    def deliver(self, step: int) -> Iterator[Message]:
        ready = sorted(m for m in self._queue if m.step <= step)
        self._queue = [m for m in self._queue if m.step > step]
        self.delivered += len(ready)
        return iter(ready)

    def __len__(self) -> int:
        return len(self._queue)


# -- world --------------------------------------------------------------------


@dataclass
class SimDevice:
    position: int
    enclave: Enclave
    corrupted: bool = False
    reachable: bool = True
    cooperative: bool = True
    active: bool = True
    jurisdiction: Optional[str] = None

    @property
    def imei(self) -> str:
        return self.enclave.device_id.imei


class _Uncooperative:
    def delegate_sign_request(self, nonce: bytes, epoch: int) -> bytes:
        raise Refused("uncooperative")


class World:
    """Devices, custodians, manufacturer and the published epochs."""

    def __init__(
        self,
        config: WorldConfig,
        *,
        custodian_behaviour: Optional[dict[int, dict]] = None,
        policies: Optional[dict[int, Callable[[bytes], bool]]] = None,
        bootstrap: bool = True,
    ):
        self.config = config
        self.rng = random.Random(config.seed)
        self.entropy = self.rng.randbytes
        self.step = 0
        self.network = Network()
        self.archive = EpochArchive()
        self.jurisdiction_archive: dict[int, tuple[JurisdictionRegistry, KeyDbHeader]] = {}
        self.transcript: list[dict] = []
        self.outcomes: list[Published | PublishedJurisdictions | Aborted] = []

        self.keys = crypto.threshold_keygen(config.k, self.entropy)
        self.manufacturer = crypto.keygen(self.entropy)
        self.params = DelegationParams(config.D, config.t)
        behaviour = custodian_behaviour or {}
        policies = policies or {}
        self.custodians: list[CustodianNode] = []
        for share in self.keys.shares:
            i = share.index
            kwargs = {"policy": policies[i]} if i in policies else {}
            if i > config.honest or i in behaviour:
                node = MaliciousCustodian(i, share, self.manufacturer.verify_key, **kwargs, **behaviour.get(i, {}))
            else:
                node = CustodianNode(i, share, self.manufacturer.verify_key, **kwargs)
            self.custodians.append(node)

        self.devices: list[SimDevice] = []
        self.ownership: dict[str, int] = {}
        self.tokens: dict[int, bytes] = {}
        for _ in range(config.N):
            self.add_device()
        for pos in self.rng.sample(range(config.N), config.corrupted):
            self.devices[pos].corrupted = True
        self.log("world_created", N=config.N, k=config.k, D=config.D, t=config.t,
                 corrupted=config.corrupted, group_vk=self.keys.group_verify_key.hex())
        if bootstrap:
            self.run_epoch_cycle()

    # -- population -----------------------------------------------------------

    def _new_imei(self) -> str:
        while True:
            body = "35" + "".join(str(self.rng.randrange(10)) for _ in range(12))
            imei = body + luhn_digit(body)
            if imei not in self.ownership:
                return imei

    def add_device(self, jurisdiction: Optional[str] = None) -> SimDevice:
        pos = len(self.devices)
        imei = self._new_imei()
        token = self.entropy(32)
        enclave = Enclave(
            DeviceId(imei),
            self.params,
            self.keys.group_verify_key,
            self.keys.public_enc_key,
            token=token,
            entropy=self.entropy,
            freeze_period=self.config.epoch_length,
            created_step=self.step,
        )
        if jurisdiction is None and self.config.jurisdictions:
            names = self.config.jurisdictions
            jurisdiction = names[pos % len(names)]
        dev = SimDevice(pos, enclave, jurisdiction=jurisdiction)
        self.devices.append(dev)
        self.ownership[imei] = pos
        self.tokens[pos] = token
        return dev

    def log(self, event: str, **detail) -> None:
        self.transcript.append({"step": self.step, "event": event, **detail})

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.transcript)

    @property
    def latest_epoch(self) -> int:
        if self.config.jurisdictions:
            return max(self.jurisdiction_archive)
        return self.archive.latest_epoch

    def manufacturer_sign(self, verify_key: bytes) -> bytes:
        return self.manufacturer.sign(verify_key)

    # -- epochs ---------------------------------------------------------------

    def _next_epoch(self) -> int:
        published = self.jurisdiction_archive if self.config.jurisdictions else self.archive
        try:
            return (max(published) if self.config.jurisdictions else published.latest_epoch) + 1
        except (LookupError, ValueError):
            return 0

    def run_epoch_cycle(self, extra_entries: Sequence[DelegateEntry] = (), offline: Iterable[int] = ()):
        """Register active devices, run consensus, move devices to the new header.

        ``extra_entries`` are pushed to every custodian alongside the devices'
        own registrations (used to script sybil floods). Positions in
        ``offline`` sit the epoch out, on top of the configured dropout.
        """
        cfg = self.config
        epoch = self._next_epoch()
        inactive = set(self.rng.sample(range(len(self.devices)), int(cfg.dropout_fraction * len(self.devices))))
        inactive.update(offline)
        for dev in self.devices:
            dev.active = dev.position not in inactive

        for dev in self.devices:
            if not dev.active:
                continue
            entry = dev.enclave.delegate_register(epoch, self.manufacturer_sign)
            for c in self.custodians:
                self.network.send(self.step, dev.imei, f"custodian-{c.id}", "register", (entry, dev.jurisdiction))
        for entry in extra_entries:
            for c in self.custodians:
                self.network.send(self.step, "sybil", f"custodian-{c.id}", "register", (entry, None))
        by_name = {f"custodian-{c.id}": c for c in self.custodians}
        rejected = 0
        for msg in self.network.deliver(self.step):
            entry, jurisdiction = msg.payload
            if by_name[msg.dst].receive_registration(entry, jurisdiction).value != "accepted":
                rejected += 1

        if cfg.jurisdictions:
            outcome = jurisdiction_consensus(self.custodians, epoch, cfg.jurisdictions, self.entropy, self.step)
        else:
            outcome = custodian_consensus(self.custodians, epoch, self.entropy, self.step)
        self.outcomes.append(outcome)

        if isinstance(outcome, Aborted):
            self.log("epoch_aborted", epoch=epoch, reason=outcome.reason, offenders=list(outcome.offenders))
        else:
            updated = self._publish(outcome)
            self.log("epoch_published", epoch=epoch, N=outcome.header.device_count,
                     root=outcome.header.merkle_root.hex(), rejected=rejected, updated=updated)
        self.step += cfg.epoch_length
        return outcome

    def _publish(self, outcome) -> int:
        if isinstance(outcome, PublishedJurisdictions):
            self.jurisdiction_archive[outcome.header.epoch] = (outcome.registry, outcome.header)
            select = lambda enc: enc.select_delegation_seeded(outcome.header, self.rng, self.step)
        else:
            self.archive.publish(outcome.db, outcome.header)
            select = lambda enc: enc.select_delegation(outcome.header, self.rng, self.step)
        updated = 0
        for dev in self.devices:
            if dev.active and select(dev.enclave) is Selection.OK:
                updated += 1
        return updated

    def run(self, epochs: Optional[int] = None) -> None:
        for _ in range(self.config.epochs if epochs is None else epochs):
            self.run_epoch_cycle()

    def advance(self, steps: int) -> None:
        self.step += steps

    # -- warranted access -----------------------------------------------------

    def locate(self, device_id: DeviceId):
        dev = self.devices[self.ownership[device_id.imei]]
        if not dev.reachable:
            return None
        return dev.enclave if dev.cooperative else _Uncooperative()

    def list_for(self, epoch: int):
        if self.config.jurisdictions:
            return self.jurisdiction_archive[epoch][0]
        return self.archive.db(epoch)

    def unlock(
        self,
        position: int,
        *,
        authorization: bytes = b"warrant",
        case_id: Optional[str] = None,
        possession: bool = True,
        strategy: Strategy = greedy_nearest_index,
        jurisdiction: Optional[str] = None,
    ) -> AccessCase:
        """Run all five steps; a failed case is returned, not raised."""
        case = AccessCase(
            self.devices[position].enclave,
            possession=possession,
            case_id=case_id or f"case-{position}",
            jurisdiction=jurisdiction,
        )
        try:
            challenge = case.step1_read_challenge(self.step)
            case.step2_request_decryption(self.custodians, authorization, self.list_for(challenge.epoch), self.step)
            case.step3_build_proofs(step=self.step)
            case.step4_collect_signatures(self.locate, self.config.t, strategy, self.step)
            case.step5_submit(self.step)
        except AccessFailed:
            pass
        self.transcript.extend(case.transcript)
        return case

    # -- adversary ------------------------------------------------------------

    def adversary_keys(self, epoch: int) -> dict[bytes, crypto.SigKeyPair]:
        """Delegate keys for ``epoch`` held by the adversary (corrupted devices)."""
        out = {}
        for dev in self.devices:
            if dev.corrupted:
                kp = dev.enclave.extract_keys().get(epoch)
                if kp is not None:
                    out[kp.verify_key] = kp
        return out


# -- adversary experiments ------------------------------------------------------


def _distinct_rows(rng: np.random.Generator, rows: int, N: int, D: int) -> np.ndarray:
    """``rows`` independent uniform D-subsets of range(N), one per row."""
    if N <= 4 * D * D:
        keys = rng.random((rows, N))
        return np.argpartition(keys, D - 1, axis=1)[:, :D]
    out = rng.integers(0, N, size=(rows, D))
    while True:
        s = np.sort(out, axis=1)
        bad = np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))
        if bad.size == 0:
            return out
        out[bad] = rng.integers(0, N, size=(bad.size, D))


def monte_carlo_unlock_without_honest(
    config: WorldConfig, trials: int, seed: Optional[int] = None, chunk: int = 20_000
) -> float:
    """Fraction of trials in which a device's delegation holds >= t corrupted devices.

    The adversary fixes its corrupted set first; each trial is a fresh
    uniform delegation of D distinct indices, as the enclave draws it.
    """
    if trials < 1:
        raise InvalidParameter("trials must be >= 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    corrupted = np.zeros(config.N, dtype=bool)
    corrupted[rng.choice(config.N, size=config.corrupted, replace=False)] = True
    hits = 0
    done = 0
    while done < trials:
        rows = min(chunk, trials - done)
        sel = _distinct_rows(rng, rows, config.N, config.D)
        hits += int((corrupted[sel].sum(axis=1) >= config.t).sum())
        done += rows
    return hits / trials


class AttackOutcome(NamedTuple):
    position: int
    corrupted_selected: int
    unlocked: bool


def adversary_unlock_attempt(
    world: World, position: int, stolen: Optional[dict[bytes, crypto.SigKeyPair]] = None
) -> AttackOutcome:
    """Attack one honest device without any honest delegate.

    The adversary is handed the decrypted challenge and signs with every
    selected delegate key it stole from a corrupted device.
    """
    dev = world.devices[position]
    challenge = dev.enclave.reveal_challenge(world.step)
    selection = decode_selection(crypto.decrypt_with_shares(world.keys.shares, challenge.ciphertext))
    db = world.archive.db(challenge.epoch)
    if stolen is None:
        stolen = world.adversary_keys(challenge.epoch)
    message = unlock_message(challenge.epoch, selection.nonce)
    items = []
    for j in selection.indices:
        entry = db.entries[j - 1]
        kp = stolen.get(entry.verify_key)
        if kp is not None:
            items.append(SignedDelegate(j, entry, kp.sign(message), entry_at(db, j)[1]))
    unlocked = dev.enclave.device_unlock(UnlockResponse(tuple(items[: world.config.t]))) is not None
    return AttackOutcome(position, len(items), unlocked)


def theorem5_experiment(world: World) -> list[AttackOutcome]:
    """Attack every honest device of the latest epoch in turn."""
    stolen = world.adversary_keys(world.latest_epoch)
    return [
        adversary_unlock_attempt(world, dev.position, stolen)
        for dev in world.devices
        if not dev.corrupted and dev.enclave.current_epoch is not None
    ]


def theorem5_outcomes(world: World) -> list[bool]:
    """Per honest device: could the adversary unlock it without honest delegates?"""
    return [o.unlocked for o in theorem5_experiment(world)]


# -- scenarios ------------------------------------------------------------------


class ScenarioFailed(Exception):
    def __init__(self, result: "ScenarioResult"):
        failed = [name for name, ok in result.assertions if not ok]
        super().__init__(f"scenario {result.name} failed: {failed}")
        self.result = result


@dataclass
class ScenarioResult:
    name: str
    config: WorldConfig
    transcript: list[dict] = field(default_factory=list)
    assertions: list[tuple[str, bool]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.assertions)

    def check(self, name: str, ok: bool) -> bool:
        self.assertions.append((name, bool(ok)))
        self.transcript.append({"event": "assert", "name": name, "ok": bool(ok)})
        return bool(ok)

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.transcript)


def _honest_unlock(world: World, opts: dict, res: ScenarioResult) -> None:
    case = world.unlock(0)
    res.check("status is Complete", case.status.value == "Complete")
    res.check("released token is the device's token", case.token == world.tokens[0])
    res.check("effort equals threshold", case.effort_counter == world.config.t)


def _custodian_veto(world: World, opts: dict, res: ScenarioResult) -> None:
    case = world.unlock(0, authorization=b"weak warrant")
    res.check("status is Failed", case.status.value == "Failed")
    res.check("failure reason is refused", case.failure_reason == "refused")
    res.check("no token released", case.token is None)


def _sybil_spike(world: World, opts: dict, res: ScenarioResult) -> None:
    from .custodian import audit_epoch_growth

    world.run_epoch_cycle()
    normal = audit_epoch_growth(world.archive.headers())
    res.check("organic epoch raises no alarm", not normal.alarm)
    factor = float(opts.get("sybil_factor", 2.0))
    sybils = []
    for _ in range(int(world.config.N * (factor - 1))):
        kp = crypto.keygen(world.entropy)
        ct = crypto.threshold_encrypt(world.keys.public_enc_key, b"350000000000000", world.entropy)
        sybils.append(DelegateEntry(kp.verify_key, ct, world.manufacturer_sign(kp.verify_key)))
    world.run_epoch_cycle(extra_entries=sybils)
    audit = audit_epoch_growth(world.archive.headers())
    world.log("growth_audit", alarm=audit.alarm, ratios=list(audit.ratios))
    res.check("sybil epoch raises alarm", audit.alarm)
    res.check("alarm names the sybil epoch", audit.flagged_epochs == (world.archive.latest_epoch,))


def _swapped_delegation(world: World, opts: dict, res: ScenarioResult) -> None:
    """Law enforcement swaps in delegates of its own choosing, with valid proofs."""
    target = world.devices[0].enclave
    case = AccessCase(target, case_id="swap")
    challenge = case.step1_read_challenge(world.step)
    case.step2_request_decryption(world.custodians, b"warrant", world.archive.db(challenge.epoch), world.step)
    db = world.archive.db(challenge.epoch)
    outside = [j for j in range(1, len(db) + 1) if j not in case.delegation_ids][: world.config.t]
    items = []
    for j in outside:
        entry, proof = entry_at(db, j)
        dev = world.devices[world.ownership[_imei_at(world, db, j)]]
        sig = dev.enclave.delegate_sign_request(case.selection.nonce, challenge.epoch)
        items.append(SignedDelegate(j, entry, sig, proof))
    swapped = target.device_unlock(UnlockResponse(tuple(items)))
    res.check("swapped delegation rejected", swapped is None)
    world.log("swapped_attempt", indices=outside, released=swapped is not None)


def _imei_at(world: World, db, j: int) -> str:
    return crypto.decrypt_with_shares(world.keys.shares, db.entries[j - 1].enc_device_id).decode()


def _replay(world: World, opts: dict, res: ScenarioResult) -> None:
    first = world.unlock(0, case_id="first")
    res.check("first unlock completes", first.status.value == "Complete")
    # the same device re-challenged: the old response carries the old nonce
    world.devices[0].enclave.reveal_challenge(world.step)
    res.check("stale response rejected after re-challenge",
              world.devices[0].enclave.device_unlock(first.collected) is None)
    # signatures gathered for device 0 replayed at device 1
    other = world.devices[1].enclave
    other.reveal_challenge(world.step)
    res.check("cross-device replay rejected", other.device_unlock(first.collected) is None)


def _jurisdiction_cross_border(world: World, opts: dict, res: ScenarioResult) -> None:
    names = world.config.jurisdictions
    target = next(d.position for d in world.devices if d.jurisdiction == names[0])
    for name in names:
        case = world.unlock(target, case_id=f"case-{name}", jurisdiction=name)
        res.check(f"unlock via {name} list completes", case.status.value == "Complete")
        registry = world.jurisdiction_archive[case.challenge.epoch][0]
        ids = case.delegation_ids.values()
        res.check(f"{name} delegates belong to {name}",
                  all(world.devices[world.ownership[i.imei]].jurisdiction == name for i in ids))
        world.log("jurisdiction_case", jurisdiction=name, N=len(registry.lists[name]))


def _failsafe(world: World, opts: dict, res: ScenarioResult) -> None:
    from .device import STEPS_PER_MONTH
    from .messages import FailsafeRequest

    enclave = world.devices[0].enclave
    enclave.record_password_use(world.step + 1)

    def request(step: int, forge: bool = False) -> FailsafeRequest:
        msg = FailsafeRequest.message(enclave.device_id.imei, step)
        shares = world.keys.shares
        if forge:
            sig = crypto.group_sign(crypto.threshold_keygen(len(shares), world.entropy).shares, msg, world.entropy)
        else:
            sig = crypto.group_sign(shares, msg, world.entropy)
        return FailsafeRequest(enclave.device_id.imei, step, sig)

    base = world.step - world.config.epoch_length
    one_month = base + STEPS_PER_MONTH
    seven = base + 7 * STEPS_PER_MONTH
    res.check("1 month stale rejected", enclave.failsafe_unlock(request(one_month), one_month) is None)
    res.check("7 months stale with forged signature rejected",
              enclave.failsafe_unlock(request(seven, forge=True), seven) is None)
    token = enclave.failsafe_unlock(request(seven), seven)
    res.check("7 months stale releases token", token == world.tokens[0])


def _lost_delegates(world: World, opts: dict, res: ScenarioResult) -> None:
    D, t = world.config.D, world.config.t
    extra = int(opts.get("extra_lost", 0))
    lost = D - t + extra
    target = world.devices[0].enclave
    # learn the delegation through a first (authorised) decryption, then lose some
    probe = AccessCase(target, case_id="probe")
    ch = probe.step1_read_challenge(world.step)
    probe.step2_request_decryption(world.custodians, b"warrant", world.archive.db(ch.epoch), world.step)
    for dev_id in list(probe.delegation_ids.values())[:lost]:
        world.devices[world.ownership[dev_id.imei]].reachable = False
    case = world.unlock(0, case_id="lost")
    world.log("lost_delegates", lost=lost, status=case.status.value)
    if extra <= 0:
        res.check(f"{lost} lost delegates: unlock completes", case.status.value == "Complete")
        res.check("effort counts every approach", case.effort_counter == D)
    else:
        res.check(f"{lost} lost delegates: unlock fails", case.status.value == "Failed")
        res.check("failure reason is insufficient", case.failure_reason == "insufficient")


def _mass_unlock(world: World, opts: dict, res: ScenarioResult) -> None:
    m = int(opts.get("cases", 50))
    t = world.config.t
    cases = [world.unlock(i, case_id=f"mass-{i}") for i in range(m)]
    total = sum(c.effort_counter for c in cases)
    complete = sum(c.status.value == "Complete" for c in cases)
    world.log("effort_report", cases=m, complete=complete, total_effort=total, floor=m * t)
    res.check(f"all {m} cases complete", complete == m)
    res.check("every complete case costs at least t", all(c.effort_counter >= t for c in cases))
    res.check("total effort >= m*t", total >= m * t)


def _partial_epoch(world: World, opts: dict, res: ScenarioResult) -> None:
    # device 0 misses the next epoch and keeps the old header
    old_epoch = world.devices[0].enclave.current_epoch
    world.run_epoch_cycle(offline={0})
    res.check("device 0 still on previous epoch", world.devices[0].enclave.current_epoch == old_epoch)
    res.check("newer epoch published", world.archive.latest_epoch == old_epoch + 1)
    case = world.unlock(0)
    res.check("unlock via last valid header completes", case.status.value == "Complete")


def _consensus_abort(world: World, opts: dict, res: ScenarioResult) -> None:
    before = world.archive.latest_epoch
    bogus = crypto.keygen(world.entropy)
    ct = crypto.threshold_encrypt(world.keys.public_enc_key, b"359999999999999", world.entropy)
    offender = world.custodians[-1]
    if isinstance(offender, MaliciousCustodian):
        offender.inject = [DelegateEntry(bogus.verify_key, ct, b"\x30\x00")]
    outcome = world.run_epoch_cycle()
    res.check("consensus aborted", isinstance(outcome, Aborted))
    res.check("offender named", isinstance(outcome, Aborted) and offender.id in outcome.offenders)
    res.check("offender's list published",
              isinstance(outcome, Aborted) and any(e.verify_key == bogus.verify_key
                                                   for e in outcome.proposals[offender.id]))
    res.check("prior epoch remains in force", world.archive.latest_epoch == before)
    case = world.unlock(0)
    res.check("devices still unlockable under prior epoch", case.status.value == "Complete")


@dataclass(frozen=True)
class _Scenario:
    run: Callable[[World, dict, ScenarioResult], None]
    script: str
    world_kwargs: Callable[[WorldConfig], dict] = lambda cfg: {}


def _veto_policies(cfg: WorldConfig) -> dict:
    return {"policies": {1: lambda auth: auth == b"warrant"}}


def _malicious_last(cfg: WorldConfig) -> dict:
    return {"custodian_behaviour": {cfg.k: {}}}


SCENARIOS: dict[str, _Scenario] = {
    "honest_unlock": _Scenario(_honest_unlock, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 1\n"),
    "custodian_veto": _Scenario(_custodian_veto, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 2\n", _veto_policies),
    "sybil_spike": _Scenario(_sybil_spike, "N = 200\nk = 3\nD = 6\nt = 4\nseed = 3\nsybil_factor = 2\n"),
    "swapped_delegation": _Scenario(_swapped_delegation, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 4\n"),
    "replay": _Scenario(_replay, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 5\n"),
    "jurisdiction_cross_border": _Scenario(
        _jurisdiction_cross_border, "N = 96\nk = 3\nD = 6\nt = 4\nseed = 6\njurisdictions = US,AU\n"
    ),
    "failsafe": _Scenario(_failsafe, "N = 32\nk = 3\nD = 6\nt = 4\nseed = 7\n"),
    "lost_delegates_tolerated": _Scenario(_lost_delegates, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 8\nextra_lost = 0\n"),
    "lost_delegates_excess": _Scenario(_lost_delegates, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 8\nextra_lost = 1\n"),
    "mass_unlock": _Scenario(_mass_unlock, "N = 256\nk = 3\nD = 6\nt = 4\nseed = 9\ncases = 50\n"),
    "partial_epoch": _Scenario(_partial_epoch, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 10\n"),
    "consensus_abort": _Scenario(_consensus_abort, "N = 64\nk = 3\nD = 6\nt = 4\nseed = 11\n", _malicious_last),
}


def run_scenario(script: str, *, strict: bool = True) -> ScenarioResult:
    """Run a bundled scenario by name, or a key-value script naming one.

    A script's keys override the bundled defaults; unknown keys become
    scenario options.
    """
    if "=" not in script:
        values = {"scenario": script.strip()}
    else:
        values = parse_key_values(script)
    name = values.get("scenario")
    if name not in SCENARIOS:
        raise InvalidParameter(f"unknown scenario {name!r}; bundled: {sorted(SCENARIOS)}")
    scenario = SCENARIOS[name]
    merged = {**parse_key_values(scenario.script), **values}
    config_keys = {f.name for f in dataclasses.fields(WorldConfig)}
    config = WorldConfig.from_mapping({k: v for k, v in merged.items() if k in config_keys})
    opts = {k: v for k, v in merged.items() if k not in config_keys and k != "scenario"}

    world = World(config, **scenario.world_kwargs(config))
    result = ScenarioResult(name, config)
    scenario.run(world, opts, result)
    result.transcript = world.transcript + result.transcript
    if strict and not result.passed:
        raise ScenarioFailed(result)
    return result
