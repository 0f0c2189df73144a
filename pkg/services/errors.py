from __future__ import annotations


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ChainError(LabError):
    pass


class InsufficientBalance(ChainError):
    pass


class FutureBlock(ChainError):
    pass


class UnknownFunction(ChainError):
    pass


class UnknownContract(ChainError):
    pass


class CryptoError(LabError):
    pass


class NotAUnit(CryptoError):
    pass


class OutOfRange(CryptoError):
    pass


class ProofError(LabError):
    pass


class UnknownToken(ProofError):
    pass


class ScenarioError(LabError):
    pass


class InvalidScenario(ScenarioError):
    pass


class IncompatibleSequences(ScenarioError):
    pass


class ContractError(LabError):
    """Rejection raised inside contract execution.

    The class name is the rejection reason recorded on the transaction.
    """

    @property
    def reason(self) -> str:
        return type(self).__name__


class BadConfig(ContractError):
    pass


class WrongVariant(ContractError):
    pass


class WindowClosed(ContractError):
    pass


class WrongDeposit(ContractError):
    pass


class TooManyVoters(ContractError):
    pass


class NotAdmin(ContractError):
    pass


class NotVoter(ContractError):
    pass


class AlreadyInitiated(ContractError):
    pass


class AlreadyDelegated(ContractError):
    pass


class InvalidSignature(ContractError):
    pass


class NoDelegation(ContractError):
    pass


class BadAdminSig(ContractError):
    pass


class BadSelfSig(ContractError):
    pass


class BadKey(ContractError):
    pass


class Reuse(ContractError):
    pass


class UnknownCommitment(ContractError):
    pass


class AlreadyRevealed(ContractError):
    pass


class BadOpening(ContractError):
    pass


class NotEligible(ContractError):
    pass


class AlreadyRefunded(ContractError):
    pass


class Cancelled(ContractError):
    pass


class NotCancelled(ContractError):
    pass


class BadAuthSignature(ContractError):
    pass


class DuplicateIdentity(ContractError):
    pass


class NotRegistered(ContractError):
    pass


class HashMismatch(ContractError):
    pass


class Concluded(ContractError):
    pass


class StaleInterval(ContractError):
    pass


class AtLeaf(ContractError):
    pass


class Leaf(ContractError):
    pass


class NoLeafYet(ContractError):
    pass


class NothingToBlame(ContractError):
    pass


class BadProof(ContractError):
    pass


class NotFakeBidder(ContractError):
    pass


class OverLeafWithoutCalls(ContractError):
    pass


class TooFewBidders(ContractError):
    pass


class BadValue(ContractError):
    pass


class NotInitiated(ContractError):
    pass
