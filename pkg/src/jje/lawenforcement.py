"""The five-step warranted access procedure as a per-case state machine."""

from __future__ import annotations

import enum
import json
from typing import Callable, Optional, Sequence, Union

from . import crypto
from .custodian import CustodianNode, decrypt_challenge, reveal_delegate_ids
from .device import Enclave
from .errors import AccessFailed, Forbidden, ProtocolOrderError, Refused
from .merkle import MerklePathProof
from .messages import Challenge, SealedSelection, SignedDelegate, UnlockResponse
from .registry import (
    DelegateEntry,
    DeviceId,
    JurisdictionProof,
    JurisdictionRegistry,
    KeyDb,
    entry_at,
)

Locator = Callable[[DeviceId], Optional[Enclave]]
Strategy = Callable[[Sequence[int], dict], list]


class CaseStatus(enum.Enum):
    INIT = "Init"
    CHALLENGE_READ = "ChallengeRead"
    DELEGATION_REVEALED = "DelegationRevealed"
    COLLECTING = "Collecting"
    COMPLETE = "Complete"
    FAILED = "Failed"


def greedy_nearest_index(indices: Sequence[int], ids: dict) -> list[int]:
    """Default approach order: ascending registry index."""
    return sorted(indices)


class AccessCase:
    """One warranted unlock attempt against one seized device.

    ``effort_counter`` counts delegates law enforcement tried to locate in
    person, whether or not the attempt produced a signature.
    """

    def __init__(
        self,
        target: Enclave,
        *,
        possession: bool = True,
        case_id: str = "case",
        jurisdiction: Optional[str] = None,
    ):
        self.target = target
        self.possession = possession
        self.case_id = case_id
        self.jurisdiction = jurisdiction
        self.status = CaseStatus.INIT
        self.failure_reason: Optional[str] = None
        self.challenge: Optional[Challenge] = None
        self.selection: Optional[SealedSelection] = None
        self.delegation_ids: Optional[dict[int, DeviceId]] = None
        self.proofs: Optional[dict[int, tuple[DelegateEntry, MerklePathProof]]] = None
        self.collected: Optional[UnlockResponse] = None
        self.token: Optional[bytes] = None
        self.effort_counter = 0
        self.transcript: list[dict] = []
        self._db: Optional[KeyDb] = None
        self._jurisdiction_proof: Optional[JurisdictionProof] = None
        self._challenges_read = 0

    def _log(self, event: str, step: int = 0, **detail) -> None:
        self.transcript.append({"case": self.case_id, "event": event, "step": step, **detail})

    def _require(self, *allowed: CaseStatus) -> None:
        if self.status not in allowed:
            raise ProtocolOrderError(
                f"{self.case_id}: status {self.status.value}, expected one of "
                f"{[s.value for s in allowed]}"
            )

    def _fail(self, reason: str, detail: str = "", step: int = 0) -> AccessFailed:
        self.status = CaseStatus.FAILED
        self.failure_reason = reason
        self._log("failed", step, reason=reason, detail=detail)
        return AccessFailed(reason, detail)

    @property
    def request_id(self) -> str:
        return f"{self.case_id}#{self._challenges_read}"

    def step1_read_challenge(self, step: int = 0) -> Challenge:
        self._require(CaseStatus.INIT, CaseStatus.CHALLENGE_READ)
        if not self.possession:
            raise Forbidden("physical possession of the device is required")
        self.challenge = self.target.reveal_challenge(step)
        self._challenges_read += 1
        self.status = CaseStatus.CHALLENGE_READ
        self._log("challenge_read", step, epoch=self.challenge.epoch,
                  challenge=self.challenge.to_bytes().hex())
        return self.challenge

    def step2_request_decryption(
        self,
        custodians: Sequence[CustodianNode],
        authorization: bytes,
        db: Union[KeyDb, JurisdictionRegistry],
        step: int = 0,
    ) -> dict[int, DeviceId]:
        """Custodians open the challenge and decrypt the selected IMEIs.

        In jurisdiction mode ``db`` is the registry and the case's own
        jurisdiction picks the list the seed is expanded over.
        """
        self._require(CaseStatus.CHALLENGE_READ)
        try:
            self.selection = decrypt_challenge(
                custodians, self.challenge, authorization, self.request_id, step
            )
        except Refused as exc:
            raise self._fail(exc.reason, str(exc), step) from exc

        if self.selection.seeded:
            if not isinstance(db, JurisdictionRegistry) or self.jurisdiction is None:
                raise self._fail("malformed", "seeded challenge needs a jurisdiction", step)
            self._jurisdiction_proof = db.jurisdiction_proof(self.jurisdiction)
            self._db = db.lists[self.jurisdiction]
            indices = crypto.distinct_expand(
                self.selection.seed, self._db.root, self.selection.delegation_size, len(self._db)
            )
        else:
            if isinstance(db, JurisdictionRegistry):
                raise self._fail("malformed", "explicit selection against a jurisdiction registry", step)
            self._db = db
            indices = list(self.selection.indices)
        try:
            self.delegation_ids = reveal_delegate_ids(custodians, self._db, indices, self.request_id, step)
        except Refused as exc:
            raise self._fail(exc.reason, str(exc), step) from exc
        self.status = CaseStatus.DELEGATION_REVEALED
        self._log("delegation_revealed", step, count=len(self.delegation_ids))
        return self.delegation_ids

    def step3_build_proofs(self, db: Optional[KeyDb] = None, step: int = 0):
        self._require(CaseStatus.DELEGATION_REVEALED)
        db = db or self._db
        self.proofs = {j: entry_at(db, j) for j in self.delegation_ids}
        self.status = CaseStatus.COLLECTING
        self._log("proofs_built", step, count=len(self.proofs))
        return self.proofs

    def step4_collect_signatures(
        self,
        locate: Locator,
        threshold: int,
        strategy: Strategy = greedy_nearest_index,
        step: int = 0,
    ) -> UnlockResponse:
        """Visit delegates in ``strategy`` order until ``threshold`` have signed."""
        self._require(CaseStatus.COLLECTING)
        if self.proofs is None or self.collected is not None:
            raise ProtocolOrderError("proofs must be built exactly once before collecting")
        items: list[SignedDelegate] = []
        for j in strategy(list(self.delegation_ids), self.delegation_ids):
            if len(items) >= threshold:
                break
            self.effort_counter += 1
            delegate = locate(self.delegation_ids[j])
            if delegate is None:
                self._log("delegate_unreachable", step, index=j)
                continue
            try:
                sig = delegate.delegate_sign_request(self.selection.nonce, self.challenge.epoch)
            except Refused as exc:
                self._log("delegate_refused", step, index=j, reason=exc.reason)
                continue
            entry, proof = self.proofs[j]
            items.append(SignedDelegate(j, entry, sig, proof))
            self._log("delegate_signed", step, index=j)
        if len(items) < threshold:
            raise self._fail("insufficient", f"{len(items)} of {threshold} signatures", step)
        self.collected = UnlockResponse(tuple(items), self._jurisdiction_proof)
        self._log("signatures_collected", step, count=len(items), effort=self.effort_counter)
        return self.collected

    def step5_submit(self, step: int = 0) -> bytes:
        self._require(CaseStatus.COLLECTING)
        if self.collected is None:
            raise ProtocolOrderError("no response collected")
        token = self.target.device_unlock(self.collected)
        if token is None:
            raise self._fail("rejected", "device rejected the response", step)
        self.token = token
        self.status = CaseStatus.COMPLETE
        self._log("complete", step, effort=self.effort_counter)
        return token

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.transcript)
