"""The triage MDP: states, the three-action space, dynamics, and rewards.

Episodes are at most two steps: the agent may fuzz once, after which
classification is mandatory. Fuzz outcomes are folded into the state as a
six-slot one-hot; backends never raise into the agent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import IllegalAction, LengthMismatch
from .fuzz import CRASH_GRADE, FUZZ_SLOTS, FuzzKind, FuzzOutcome, run_fuzz
from .warnings import Label, WarningRecord

FUZZ_STATE_SLOTS = len(FUZZ_SLOTS)


class TriageAction(IntEnum):
    # Fixed order; greedy ties resolve to the lowest value.
    CLASSIFY_TP = 0
    CLASSIFY_FP = 1
    FUZZ = 2


ACTION_COUNT = len(TriageAction)


@dataclass
class RewardSpec:
    """Reward constants for triage decisions; see class defaults."""

    correct: float = 15.0
    incorrect: float = -15.0
    fuzz_cost: float = -5.0
    bonus_crash_tp: float = 10.0
    bonus_clean_fp: float = 8.0
    bonus_inconclusive: float = 3.0
    discount: float = 1.0


@dataclass
class TriageState:
    features: np.ndarray
    fuzz: FuzzKind = FuzzKind.NOT_RUN

    @property
    def fuzz_encoding(self) -> np.ndarray:
        enc = np.zeros(FUZZ_STATE_SLOTS)
        enc[FUZZ_SLOTS.index(self.fuzz)] = 1.0
        return enc

    def vector(self) -> np.ndarray:
        return np.concatenate([self.features, self.fuzz_encoding])

    def __len__(self) -> int:
        return len(self.features) + FUZZ_STATE_SLOTS


@dataclass
class Terminal:
    prediction: Label


def _prior_kind(prior_fuzz: FuzzOutcome | FuzzKind | None) -> FuzzKind:
    if prior_fuzz is None:
        return FuzzKind.NOT_RUN
    if isinstance(prior_fuzz, FuzzOutcome):
        return prior_fuzz.kind
    return prior_fuzz


def reward_of(
    action: TriageAction,
    true_label: Label,
    prior_fuzz: FuzzOutcome | FuzzKind | None = None,
    spec: RewardSpec | None = None,
) -> float:
    """Reward for one step under the configured constants.

    Fuzzing costs fuzz_cost. Classification pays correct/incorrect; a bonus
    is added only when the classification is correct and consistent with the
    fuzz evidence: crash-grade evidence plus ClassifyTP, a clean run plus
    ClassifyFP, or any correct call after an inconclusive run. Infrastructure
    failures and evidence-inconsistent calls earn no bonus.
    """
    spec = spec or RewardSpec()
    prior = _prior_kind(prior_fuzz)
    if action is TriageAction.FUZZ:
        if prior is not FuzzKind.NOT_RUN:
            raise IllegalAction("fuzz may run at most once per warning")
        return spec.fuzz_cost

    predicted = Label.TRUE_POSITIVE if action is TriageAction.CLASSIFY_TP else Label.FALSE_POSITIVE
    if predicted is not true_label:
        return spec.incorrect
    reward = spec.correct
    if prior in CRASH_GRADE and predicted is Label.TRUE_POSITIVE:
        reward += spec.bonus_crash_tp
    elif prior is FuzzKind.CLEAN and predicted is Label.FALSE_POSITIVE:
        reward += spec.bonus_clean_fp
    elif prior is FuzzKind.INCONCLUSIVE:
        reward += spec.bonus_inconclusive
    return reward


@dataclass
class TriageEnv:
    """Per-warning episode dynamics over normalized feature vectors."""

    feature_dim: int
    reward_spec: RewardSpec = field(default_factory=RewardSpec)

    @property
    def state_dim(self) -> int:
        return self.feature_dim + FUZZ_STATE_SLOTS

    def reset(self, warning_features: np.ndarray) -> TriageState:
        if len(warning_features) != self.feature_dim:
            raise LengthMismatch(
                f"features have length {len(warning_features)}, expected {self.feature_dim}"
            )
        return TriageState(np.asarray(warning_features, dtype=np.float64))

    def step(
        self,
        state: TriageState,
        action: TriageAction,
        true_label: Label,
        backend=None,
        warning: WarningRecord | None = None,
        budget: float = 45.0,
    ) -> tuple[TriageState | Terminal, float]:
        """Apply one action; fuzzing returns a successor state, classifying ends.

        Backend failures of any kind become an InfrastructureFailure outcome
        in the successor state, never an exception.
        """
        if action is TriageAction.FUZZ:
            if state.fuzz is not FuzzKind.NOT_RUN:
                raise IllegalAction("fuzz may run at most once per warning")
            try:
                outcome = run_fuzz(backend, warning, true_label, budget)
            except Exception as exc:  # noqa: BLE001 - contract: never raise to the agent
                outcome = FuzzOutcome(
                    FuzzKind.INFRASTRUCTURE_FAILURE, 0.0, f"backend error: {exc}"
                )
            return TriageState(state.features, outcome.kind), self.reward_spec.fuzz_cost

        reward = reward_of(action, true_label, state.fuzz, self.reward_spec)
        prediction = (
            Label.TRUE_POSITIVE if action is TriageAction.CLASSIFY_TP else Label.FALSE_POSITIVE
        )
        return Terminal(prediction), reward
