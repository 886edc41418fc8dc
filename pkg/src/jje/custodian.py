"""Custodian nodes: registration intake, epoch consensus, challenge
decryption and the audit trail."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import secrets
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import crypto
from .crypto import Ciphertext, Entropy, KeyShare, PartialDecryption
from .errors import CombineError, InvalidParameter, Refused
from .messages import Challenge, SealedSelection, decode_selection
from .registry import (
    DelegateEntry,
    DeviceId,
    JurisdictionRegistry,
    KeyDb,
    KeyDbHeader,
    build_header,
    manufacturer_signed,
)

log = logging.getLogger(__name__)

AuthorizationPolicy = Callable[[bytes], bool]
DEFAULT_SPIKE_FACTOR = 1.5


class Registration(enum.Enum):
    ACCEPTED = "accepted"
    UNSIGNED = "unsigned"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class AuditEvent:
    epoch: int
    event_type: str
    request_id: str
    timestamp_step: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _approve_all(authorization: bytes) -> bool:
    return True


class CustodianNode:
    """An honest custodian. Subclasses override the hooks to misbehave."""

    honest = True

    def __init__(
        self,
        node_id: int,
        share: KeyShare,
        manufacturer_vk: bytes,
        policy: AuthorizationPolicy = _approve_all,
    ):
        self.id = node_id
        self.share = share
        self.manufacturer_vk = manufacturer_vk
        self.policy = policy
        self.pending: dict[bytes, DelegateEntry] = {}
        self.jurisdiction_of: dict[bytes, str] = {}
        self.audit_log: list[AuditEvent] = []
        # entries whose manufacturer signature this node has already checked
        self._valid: set[tuple[bytes, bytes]] = set()
        self._approved_requests: set[str] = set()
        self._nonces: dict[str, int] = {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(id={self.id})"

    # -- audit ----------------------------------------------------------------

    def record(self, epoch: int, event_type: str, request_id: str = "", step: int = 0) -> None:
        self.audit_log.append(AuditEvent(epoch, event_type, request_id, step))

    def audit_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.audit_log)

    # -- registration ---------------------------------------------------------

    def is_valid(self, entry: DelegateEntry) -> bool:
        # the signature covers only the verify key, so that pair is the cache key
        key = (entry.verify_key, entry.manufacturer_sig)
        if key in self._valid:
            return True
        if manufacturer_signed(entry, self.manufacturer_vk):
            self._valid.add(key)
            return True
        return False

    def receive_registration(
        self, entry: DelegateEntry, jurisdiction: Optional[str] = None
    ) -> Registration:
        if not self.is_valid(entry):
            return Registration.UNSIGNED
        if entry.verify_key in self.pending:
            return Registration.DUPLICATE
        self.pending[entry.verify_key] = entry
        if jurisdiction is not None:
            self.jurisdiction_of[entry.verify_key] = jurisdiction
        return Registration.ACCEPTED

    # -- consensus hooks ------------------------------------------------------

    def prospective_list(self, jurisdiction: Optional[str] = None) -> list[DelegateEntry]:
        entries = self.pending.values()
        if jurisdiction is not None:
            entries = [e for e in entries if self.jurisdiction_of.get(e.verify_key) == jurisdiction]
        return sorted(entries, key=lambda e: e.verify_key)

    def proposal_for(self, receiver_id: int, jurisdiction: Optional[str] = None) -> list[DelegateEntry]:
        return self.prospective_list(jurisdiction)

    def validate_list(self, entries: Sequence[DelegateEntry]) -> bool:
        vks = {e.verify_key for e in entries}
        return len(vks) == len(entries) and all(self.is_valid(e) for e in entries)

    def union_digest(self, lists: Iterable[Sequence[DelegateEntry]], epoch: int) -> Optional[bytes]:
        """Root of the union this node would publish; None on conflicting entries."""
        union: dict[bytes, DelegateEntry] = {}
        for entries in lists:
            for e in entries:
                if union.setdefault(e.verify_key, e) != e:
                    return None
        if not union:
            return None
        h = hashlib.sha256(struct.pack(">Q", epoch))
        for i, vk in enumerate(sorted(union), 1):
            h.update(union[vk].to_record(i))
        return h.digest()

    def sign_commit(self, message: bytes, entropy: Entropy) -> Optional[bytes]:
        nonce, commitment = crypto.signing_commitment(entropy)
        self._nonces[message.hex()] = nonce
        return commitment

    def sign_share(self, message: bytes, commitment: bytes) -> Optional[int]:
        nonce = self._nonces.pop(message.hex())
        return crypto.signature_share(self.share, nonce, commitment, message)

    def start_registration(self) -> None:
        self.pending.clear()
        self.jurisdiction_of.clear()
        self._valid.clear()

    # -- warranted access -----------------------------------------------------

    def authorize(self, authorization: bytes, request_id: str) -> bool:
        ok = bool(self.policy(authorization))
        if ok:
            self._approved_requests.add(request_id)
        return ok

    def partial_decrypt(
        self, ciphertext: Ciphertext, request_id: str, epoch: int, step: int, event: str
    ) -> PartialDecryption:
        if request_id not in self._approved_requests:
            raise Refused("unauthorized", f"custodian {self.id} has not approved {request_id}")
        self.record(epoch, event, request_id, step)
        return crypto.partial_decrypt(self.share, ciphertext)


class MaliciousCustodian(CustodianNode):
    """A corrupted custodian with configurable misbehaviour.

    ``inject`` entries are slipped into its prospective list;
    ``equivocate`` sends a different (valid) list to every other custodian;
    ``refuse_sign`` withholds its group-signature contribution;
    ``bad_share`` contributes a garbage signature share;
    ``approve_anything`` skips validation of other lists;
    ``withhold`` refuses every decryption request.
    """

    honest = False

    def __init__(
        self,
        node_id: int,
        share: KeyShare,
        manufacturer_vk: bytes,
        policy: AuthorizationPolicy = _approve_all,
        *,
        inject: Sequence[DelegateEntry] = (),
        equivocate: bool = False,
        refuse_sign: bool = False,
        bad_share: bool = False,
        approve_anything: bool = False,
        withhold: bool = False,
    ):
        super().__init__(node_id, share, manufacturer_vk, policy)
        self.inject = list(inject)
        self.equivocate = equivocate
        self.refuse_sign = refuse_sign
        self.bad_share = bad_share
        self.approve_anything = approve_anything
        self.withhold = withhold

    def prospective_list(self, jurisdiction: Optional[str] = None) -> list[DelegateEntry]:
        entries = {e.verify_key: e for e in super().prospective_list(jurisdiction)}
        for e in self.inject:
            entries.setdefault(e.verify_key, e)
        return sorted(entries.values(), key=lambda e: e.verify_key)

    def proposal_for(self, receiver_id: int, jurisdiction: Optional[str] = None) -> list[DelegateEntry]:
        entries = self.prospective_list(jurisdiction)
        if self.equivocate and entries:
            # drop a different entry for each receiver
            del entries[receiver_id % len(entries)]
        return entries

    def validate_list(self, entries: Sequence[DelegateEntry]) -> bool:
        return True if self.approve_anything else super().validate_list(entries)

    def sign_commit(self, message: bytes, entropy: Entropy) -> Optional[bytes]:
        return None if self.refuse_sign else super().sign_commit(message, entropy)

    def sign_share(self, message: bytes, commitment: bytes) -> Optional[int]:
        share = super().sign_share(message, commitment)
        return (share + 1) % crypto.CURVE_ORDER if self.bad_share else share

    def authorize(self, authorization: bytes, request_id: str) -> bool:
        return False if self.withhold else super().authorize(authorization, request_id)


# -- consensus ----------------------------------------------------------------


@dataclass(frozen=True)
class Published:
    db: KeyDb
    header: KeyDbHeader


@dataclass(frozen=True)
class PublishedJurisdictions:
    registry: JurisdictionRegistry
    header: KeyDbHeader
    headers: Mapping[str, KeyDbHeader]


@dataclass(frozen=True)
class Aborted:
    """Every custodian's own prospective list, published for inspection."""

    reason: str
    proposals: Mapping[int, tuple[DelegateEntry, ...]]
    offenders: tuple[int, ...] = ()
    # (accuser, accused, list the accuser received)
    evidence: tuple[tuple[int, int, tuple[DelegateEntry, ...]], ...] = field(default=(), repr=False)


ConsensusOutcome = Union[Published, Aborted]


class _Abort(Exception):
    def __init__(self, reason: str, offenders: Iterable[int] = (), evidence=()):
        super().__init__(reason)
        self.reason = reason
        self.offenders = tuple(sorted(set(offenders)))
        self.evidence = tuple(evidence)


def _group_sign(nodes: Sequence[CustodianNode], message: bytes, entropy: Entropy) -> bytes:
    """Two-round n-of-n Schnorr signing; any missing or bad share aborts."""
    commitments = {n.id: n.sign_commit(message, entropy) for n in nodes}
    refusing = [i for i, c in commitments.items() if c is None]
    if refusing:
        raise _Abort("refused-to-sign", refusing)
    try:
        commitment = crypto.aggregate_commitments(list(commitments.values()))
    except Exception as exc:
        raise _Abort("bad-commitment") from exc
    shares = {n.id: n.sign_share(message, commitment) for n in nodes}
    refusing = [i for i, s in shares.items() if s is None]
    if refusing:
        raise _Abort("refused-to-sign", refusing)
    signature = crypto.aggregate_signature(commitment, shares.values())
    if not crypto.verify_group(nodes[0].share.group_verify_key, message, signature):
        raise _Abort("bad-signature-share")
    return signature


def _agree_on_list(
    nodes: Sequence[CustodianNode], epoch: int, jurisdiction: Optional[str]
) -> KeyDb:
    received = {
        r.id: {s.id: tuple(s.proposal_for(r.id, jurisdiction)) for s in nodes} for r in nodes
    }
    evidence = [
        (r.id, s_id, lst)
        for r in nodes
        for s_id, lst in received[r.id].items()
        if not r.validate_list(lst)
    ]
    if evidence:
        raise _Abort("invalid-list", (s for _, s, _ in evidence), evidence)

    digests = {r.id: r.union_digest(received[r.id].values(), epoch) for r in nodes}
    values = list(digests.values())
    if None in values or len(set(values)) != 1:
        # the most common digest is presumed honest; the rest are named
        common = max(set(values), key=values.count)
        raise _Abort("disagreement", (i for i, d in digests.items() if d != common or d is None))

    union = {e.verify_key: e for lst in received[nodes[0].id].values() for e in lst}
    return KeyDb.from_union(epoch, union.values())


def custodian_consensus(
    nodes: Sequence[CustodianNode],
    epoch: int,
    entropy: Entropy = secrets.token_bytes,
    step: int = 0,
    jurisdiction: Optional[str] = None,
    finalize: bool = True,
) -> ConsensusOutcome:
    """Broadcast prospective lists, cross-validate, agree on the union and
    group-sign its header. Any dissent aborts the epoch."""
    if not nodes:
        raise InvalidParameter("consensus needs at least one custodian")
    try:
        db = _agree_on_list(nodes, epoch, jurisdiction)
        header = build_header(db, lambda msg: _group_sign(nodes, msg, entropy))
    except _Abort as abort:
        return _aborted(nodes, epoch, step, abort, jurisdiction)
    for n in nodes:
        n.record(epoch, "consensus_published", db.root.hex(), step)
        if finalize:
            n.start_registration()
    return Published(db, header)


def jurisdiction_consensus(
    nodes: Sequence[CustodianNode],
    epoch: int,
    names: Sequence[str],
    entropy: Entropy = secrets.token_bytes,
    step: int = 0,
) -> Union[PublishedJurisdictions, Aborted]:
    """One list per jurisdiction plus a group-signed header over their super-root."""
    lists, headers = {}, {}
    for name in names:
        outcome = custodian_consensus(nodes, epoch, entropy, step, jurisdiction=name, finalize=False)
        if isinstance(outcome, Aborted):
            return outcome
        lists[name], headers[name] = outcome.db, outcome.header
    registry = JurisdictionRegistry(epoch, lists)
    try:
        header = registry.build_header(lambda msg: _group_sign(nodes, msg, entropy))
    except _Abort as abort:
        return _aborted(nodes, epoch, step, abort, None)
    for n in nodes:
        n.start_registration()
    return PublishedJurisdictions(registry, header, headers)


def _aborted(nodes, epoch, step, abort: _Abort, jurisdiction: Optional[str]) -> Aborted:
    for n in nodes:
        n.record(epoch, "consensus_aborted", abort.reason, step)
    log.info("epoch %d aborted: %s (offenders %s)", epoch, abort.reason, list(abort.offenders))
    proposals = {n.id: tuple(n.prospective_list(jurisdiction)) for n in nodes}
    return Aborted(abort.reason, proposals, abort.offenders, abort.evidence)



# -- warranted access ---------------------------------------------------------


def decrypt_challenge(
    nodes: Sequence[CustodianNode],
    challenge: Challenge,
    authorization: bytes,
    request_id: str,
    step: int = 0,
) -> SealedSelection:
    """Jointly open a challenge. Raises Refused on any veto or on garbage."""
    vetoes = [n.id for n in nodes if not n.authorize(authorization, request_id)]
    if vetoes:
        for n in nodes:
            n.record(challenge.epoch, "decryption_refused", request_id, step)
        raise Refused("refused", f"custodians {vetoes} declined {request_id}")
    try:
        partials = [
            n.partial_decrypt(challenge.ciphertext, request_id, challenge.epoch, step, "decrypt_challenge")
            for n in nodes
        ]
        return decode_selection(crypto.combine(partials, challenge.ciphertext))
    except (CombineError, InvalidParameter) as exc:
        raise Refused("malformed", str(exc)) from exc


def reveal_delegate_ids(
    nodes: Sequence[CustodianNode],
    db: KeyDb,
    indices: Iterable[int],
    request_id: str,
    step: int = 0,
) -> dict[int, DeviceId]:
    """Decrypt the device identifiers stored at ``indices`` of ``db``."""
    out: dict[int, DeviceId] = {}
    for j in sorted(set(indices)):
        if not 1 <= j <= len(db):
            raise InvalidParameter(f"index {j} outside [1, {len(db)}]")
        ct = db.entries[j - 1].enc_device_id
        partials = [n.partial_decrypt(ct, request_id, db.epoch, step, "reveal_id") for n in nodes]
        try:
            out[j] = DeviceId.from_bytes(crypto.combine(partials, ct))
        except (CombineError, InvalidParameter) as exc:
            raise Refused("malformed", f"entry {j}: {exc}") from exc
    return out


# -- auditing -----------------------------------------------------------------


@dataclass(frozen=True)
class GrowthAudit:
    alarm: bool
    ratios: tuple[float, ...]
    flagged_epochs: tuple[int, ...]


def audit_epoch_growth(
    headers: Sequence[KeyDbHeader], spike_factor: float = DEFAULT_SPIKE_FACTOR
) -> GrowthAudit:
    """Flag any epoch whose device count jumps by more than ``spike_factor``."""
    if len(headers) < 2:
        raise InvalidParameter("growth audit needs at least two headers")
    ratios, flagged = [], []
    for prev, cur in zip(headers, headers[1:]):
        ratio = cur.device_count / prev.device_count
        ratios.append(ratio)
        if ratio > spike_factor:
            flagged.append(cur.epoch)
    return GrowthAudit(bool(flagged), tuple(ratios), tuple(flagged))
