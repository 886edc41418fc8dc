"""Software model of a device's secure enclave.

The :class:`Enclave` methods are the mailbox: nothing else reads or writes
its state. The delegation selection, nonce and unlock token never leave it
except, for the first two, inside a threshold ciphertext.

Time is counted in simulation steps; one step is one day.
"""

from __future__ import annotations

import enum
import random
import secrets
from dataclasses import dataclass
from typing import Callable, Optional

from . import crypto
from .crypto import Entropy, SigKeyPair
from .errors import InvalidParameter, ProtocolOrderError, Refused
from .merkle import merkle_verify
from .messages import (
    Challenge,
    FailsafeRequest,
    UnlockResponse,
    encode_seeded_selection,
    encode_selection,
    unlock_message,
)
from .registry import DelegateEntry, DeviceId, KeyDbHeader, verify_header

STEPS_PER_MONTH = 30
EPOCH_STEPS = 7
FAILSAFE_TIMEOUT = 6 * STEPS_PER_MONTH
KEY_RETENTION = 8  # epochs of old delegate keys kept for late unlocks

ManufacturerSigner = Callable[[bytes], bytes]


@dataclass(frozen=True)
class DelegationParams:
    D: int
    t: int

    def __post_init__(self):
        if not 1 <= self.t <= self.D:
            raise InvalidParameter(f"need 1 <= t <= D, got D={self.D}, t={self.t}")


class Selection(enum.Enum):
    OK = "ok"
    REJECTED_HEADER = "rejected(header)"
    REJECTED_POPULATION = "rejected(population)"
    REJECTED_FROZEN = "rejected(frozen)"
    REJECTED_STALE = "rejected(stale)"


class Enclave:
    def __init__(
        self,
        device_id: DeviceId,
        params: DelegationParams,
        group_verify_key: bytes,
        public_enc_key: bytes,
        *,
        token: Optional[bytes] = None,
        entropy: Entropy = secrets.token_bytes,
        freeze_period: int = EPOCH_STEPS,
        failsafe_timeout: int = FAILSAFE_TIMEOUT,
        created_step: int = 0,
    ):
        self.device_id = device_id
        self.params = params
        self._vk_j = group_verify_key
        self._pk_j = public_enc_key
        self._entropy = entropy
        self._token = token if token is not None else entropy(32)
        self._freeze_period = freeze_period
        self._failsafe_timeout = failsafe_timeout
        self._keys: dict[int, SigKeyPair] = {}
        self._header: Optional[KeyDbHeader] = None
        self._selection: Optional[tuple[int, ...]] = None
        self._seed: Optional[bytes] = None
        self._nonce: Optional[bytes] = None
        self._challenge_header: Optional[KeyDbHeader] = None
        self._frozen_until = -1
        self._last_update_step = created_step
        self._last_password_step: Optional[int] = None

    def __repr__(self) -> str:
        return f"Enclave({self.device_id.imei})"

    @property
    def current_epoch(self) -> Optional[int]:
        return None if self._header is None else self._header.epoch

    # -- delegate role --------------------------------------------------------

    def delegate_register(self, epoch: int, manufacturer_sign: ManufacturerSigner) -> DelegateEntry:
        """Fresh key pair for ``epoch``; the entry carries our encrypted IMEI."""
        keypair = crypto.keygen(self._entropy)
        self._keys[epoch] = keypair
        for old in [e for e in self._keys if e <= epoch - KEY_RETENTION]:
            del self._keys[old]
        ct = crypto.threshold_encrypt(self._pk_j, self.device_id.to_bytes(), self._entropy)
        return DelegateEntry(keypair.verify_key, ct, manufacturer_sign(keypair.verify_key))

    def delegate_sign_request(self, nonce: bytes, epoch: int) -> bytes:
        keypair = self._keys.get(epoch)
        if keypair is None:
            raise Refused("unknown-epoch", f"no delegate key for epoch {epoch}")
        if len(nonce) != crypto.NONCE_LEN:
            raise Refused("malformed", "nonce must be 32 bytes")
        return keypair.sign(unlock_message(epoch, nonce))

    def extract_keys(self) -> dict[int, SigKeyPair]:
        """Simulation hook: what an adversary holds after corrupting this device."""
        return dict(self._keys)

    # -- locked-device role ---------------------------------------------------

    def _accept_header(self, header: KeyDbHeader, step: int) -> Selection:
        if step < self._frozen_until:
            return Selection.REJECTED_FROZEN
        if not verify_header(header, self._vk_j):
            return Selection.REJECTED_HEADER
        if self._header is not None and header.epoch < self._header.epoch:
            return Selection.REJECTED_STALE
        if header.device_count < self.params.D:
            return Selection.REJECTED_POPULATION
        return Selection.OK

    def select_delegation(
        self, header: KeyDbHeader, rng: random.Random | None = None, step: int = 0
    ) -> Selection:
        """Adopt ``header`` and draw D distinct indices uniformly from [1, N]."""
        status = self._accept_header(header, step)
        if status is not Selection.OK:
            return status
        rng = rng or secrets.SystemRandom()
        self._selection = tuple(sorted(rng.sample(range(1, header.device_count + 1), self.params.D)))
        self._seed = None
        self._adopt(header, step)
        return Selection.OK

    def select_delegation_seeded(
        self, super_header: KeyDbHeader, rng: random.Random | None = None, step: int = 0
    ) -> Selection:
        """Jurisdiction mode: keep a secret seed; indices are derived per list at unlock."""
        status = self._accept_header(super_header, step)
        if status is not Selection.OK:
            return status
        rng = rng or secrets.SystemRandom()
        self._seed = rng.randbytes(32)
        self._selection = None
        self._adopt(super_header, step)
        return Selection.OK

    def _adopt(self, header: KeyDbHeader, step: int) -> None:
        self._header = header
        self._nonce = None
        self._challenge_header = None
        self._last_update_step = step

    def reveal_challenge(self, step: int = 0) -> Challenge:
        if self._header is None or (self._selection is None and self._seed is None):
            raise ProtocolOrderError("no delegation selected yet")
        self._nonce = crypto.new_nonce(self._entropy)
        self._challenge_header = self._header
        if self._seed is not None:
            plaintext = encode_seeded_selection(self._seed, self.params.D, self._nonce)
        else:
            plaintext = encode_selection(self._selection, self._nonce)
        self._frozen_until = step + self._freeze_period
        ct = crypto.threshold_encrypt(self._pk_j, plaintext, self._entropy)
        return Challenge(self._header.epoch, ct)

    def device_unlock(self, response: UnlockResponse) -> Optional[bytes]:
        """Release the token iff the response passes all three checks."""
        header, nonce = self._challenge_header, self._nonce
        if header is None or nonce is None:
            return None
        root, n = header.merkle_root, header.device_count
        if self._seed is not None:
            jp = response.jurisdiction
            if jp is None or not merkle_verify(jp.proof, jp.leaf(), header.merkle_root):
                return None
            if jp.device_count < self.params.D:
                return None
            root, n = jp.root, jp.device_count
            selection = set(crypto.distinct_expand(self._seed, jp.root, self.params.D, n))
        else:
            selection = set(self._selection)

        items = response.items
        # (1) enough distinct signers
        indices = [item.index for item in items]
        if len(items) < self.params.t or len(set(indices)) != len(indices):
            return None
        # (2) each entry sits at its claimed index under the header's root
        for item in items:
            if item.index not in selection or not 1 <= item.index <= n:
                return None
            if item.proof.leaf_index != item.index:
                return None
            if not merkle_verify(item.proof, item.entry.leaf(item.index), root):
                return None
        # (3) each signature is over this challenge's nonce
        message = unlock_message(header.epoch, nonce)
        for item in items:
            if not crypto.verify(item.entry.verify_key, message, item.signature):
                return None
        self._nonce = None
        return self._token

    # -- participation failsafe -----------------------------------------------

    def record_password_use(self, step: int) -> None:
        self._last_password_step = step

    def failsafe_unlock(self, request: FailsafeRequest, current_step: int) -> Optional[bytes]:
        if current_step - self._last_update_step <= self._failsafe_timeout:
            return None
        if self._last_password_step is None or self._last_password_step < self._last_update_step:
            return None
        if request.imei != self.device_id.imei or request.issued_step > current_step:
            return None
        message = FailsafeRequest.message(request.imei, request.issued_step)
        if not crypto.verify_group(self._vk_j, message, request.signature):
            return None
        return self._token
