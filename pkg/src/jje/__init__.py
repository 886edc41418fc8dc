"""Exceptional access to locked devices gated by custodians and randomly chosen peer devices."""

from .analysis import exact_corruption_probability, search_parameters
from .custodian import Aborted, CustodianNode, Published, custodian_consensus
from .device import DelegationParams, Enclave
from .errors import AccessFailed, InvalidParameter, JJEError, Refused
from .lawenforcement import AccessCase, CaseStatus
from .registry import DeviceId, KeyDb, KeyDbHeader
from .simharness import World, WorldConfig, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AccessCase",
    "AccessFailed",
    "Aborted",
    "CaseStatus",
    "CustodianNode",
    "DelegationParams",
    "DeviceId",
    "Enclave",
    "InvalidParameter",
    "JJEError",
    "KeyDb",
    "KeyDbHeader",
    "Published",
    "Refused",
    "World",
    "WorldConfig",
    "custodian_consensus",
    "exact_corruption_probability",
    "run_scenario",
    "search_parameters",
]
