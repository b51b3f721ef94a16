"""Step/reset patient simulation environment.

Composes a trained state model, termination and outcome heads, an optional
encoder/decoder pair, a reward formulation, and a sampling temperature into a
gym-style environment: reset() -> observation, step(action) ->
(observation, reward, done, info).

Internals run in the state model's representation (latent for encoder
variants, raw features otherwise); observations are always decoded back to
the 46 clinical features.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import (
    ACTION_COUNT,
    N_FEATURES,
    NormalizationStats,
    Outcome,
    PatientEpisode,
    action_intensity,
    decode_action,
)
from .dynamics import VARIANTS, HistoryWindow, StateModel, sample_next
from .heads import BinaryHead

REWARD_FORMULATIONS = ("terminal_only", "terminal_minus_intensity",
                       "sofa_lactate_shaped")

TERMINATION_MODES = ("bernoulli", "threshold")

DEFAULT_MAX_STEPS = 50


@dataclass(frozen=True)
class RewardSpec:
    """Reward formulation and its constants.

    terminal_only: +/-magnitude (default 15) at episode end, 0 otherwise.
    terminal_minus_intensity: -(iv_bin + vaso_bin) each step, +/-magnitude
        (default 1000) added at episode end.
    sofa_lactate_shaped: per-step shaping from SOFA and lactate deltas plus
        the +/-magnitude (default 15) terminal reward; deltas are computed on
        de-normalized (clinical-scale) values.
    """

    formulation: str = "terminal_only"
    terminal_magnitude: float | None = None
    c0: float = -0.025
    c1: float = -0.125
    c2: float = -2.0
    sofa_index: int | None = None
    lactate_index: int | None = None

    def __post_init__(self):
        if self.formulation not in REWARD_FORMULATIONS:
            raise ValueError(f"formulation must be one of {REWARD_FORMULATIONS}, "
                             f"got {self.formulation!r}")
        if self.terminal_magnitude is None:
            default = 1000.0 if self.formulation == "terminal_minus_intensity" else 15.0
            object.__setattr__(self, "terminal_magnitude", default)
        if self.terminal_magnitude <= 0:
            raise ValueError("terminal_magnitude must be positive")
        if self.formulation == "sofa_lactate_shaped":
            for name, idx in (("sofa_index", self.sofa_index),
                              ("lactate_index", self.lactate_index)):
                if idx is None or not 0 <= idx < N_FEATURES:
                    raise ValueError(f"{name} must be a feature index in "
                                     f"[0, {N_FEATURES - 1}], got {idx}")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "RewardSpec":
        return cls(**d)


def shaped_reward(prev_state: np.ndarray, next_state: np.ndarray,
                  spec: RewardSpec) -> float:
    """SOFA/lactate shaping on clinical-scale state vectors:

    r = c0 * 1[sofa unchanged and > 0] + c1 * (sofa delta) + c2 * tanh(lactate delta)
    """
    if spec.formulation != "sofa_lactate_shaped":
        raise ValueError("shaped_reward requires the sofa_lactate_shaped formulation")
    prev_state = np.asarray(prev_state, dtype=np.float64)
    next_state = np.asarray(next_state, dtype=np.float64)
    sofa_prev = prev_state[spec.sofa_index]
    sofa_next = next_state[spec.sofa_index]
    lact_prev = prev_state[spec.lactate_index]
    lact_next = next_state[spec.lactate_index]
    r = 0.0
    if sofa_next == sofa_prev and sofa_next > 0:
        r += spec.c0
    r += spec.c1 * (sofa_next - sofa_prev)
    r += spec.c2 * np.tanh(lact_next - lact_prev)
    return float(r)


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass(frozen=True)
class SimConfig:
    """JSON-able description of a full simulator: checkpoints + knobs."""

    variant: str
    checkpoints: dict
    temperature: float = 1.0
    reward: RewardSpec = field(default_factory=RewardSpec)
    max_steps: int = DEFAULT_MAX_STEPS
    termination_mode: str = "bernoulli"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.termination_mode not in TERMINATION_MODES:
            raise ValueError(f"termination_mode must be one of {TERMINATION_MODES}")
        required = {"state", "termination", "outcome"}
        latent = self.variant in ("ae_rnn", "vae_rnn", "vae_mdn_rnn")
        if latent:
            required.add("encoder")
        missing = required - set(self.checkpoints)
        if missing:
            raise ValueError(f"missing checkpoints for {sorted(missing)}")
        if not latent and "encoder" in self.checkpoints:
            raise ValueError(f"variant {self.variant!r} does not take an encoder")

    def to_json(self, path) -> None:
        doc = {"variant": self.variant, "checkpoints": dict(self.checkpoints),
               "temperature": self.temperature,
               "reward": self.reward.to_json_dict(),
               "max_steps": self.max_steps,
               "termination_mode": self.termination_mode, "seed": self.seed}
        Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        doc["reward"] = RewardSpec.from_json_dict(doc["reward"])
        return cls(**doc)


class PatientEnv:
    """Mutable step/reset state machine over frozen models.

    All stochasticity (initial-state choice, mixture sampling, Bernoulli
    termination/outcome draws) flows through one seeded generator, so a fixed
    (seed, config, action sequence) reproduces trajectories bit for bit.
    """

    def __init__(self, state_model: StateModel, termination: BinaryHead,
                 outcome: BinaryHead, initial_pool: np.ndarray,
                 reward_spec: RewardSpec | None = None, encoder=None,
                 stats: NormalizationStats | None = None,
                 temperature: float = 1.0, max_steps: int = DEFAULT_MAX_STEPS,
                 termination_mode: str = "bernoulli", seed: int = 0):
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if termination_mode not in TERMINATION_MODES:
            raise ValueError(f"termination_mode must be one of {TERMINATION_MODES}")
        initial_pool = np.atleast_2d(np.asarray(initial_pool, dtype=np.float64))
        if initial_pool.shape[0] < 1 or initial_pool.shape[1] != N_FEATURES:
            raise ValueError(f"initial pool must be (n, {N_FEATURES}) with n >= 1")
        if state_model.config.uses_encoder and encoder is None:
            raise ValueError(f"variant {state_model.config.variant!r} needs an encoder")
        reward_spec = reward_spec or RewardSpec()
        if reward_spec.formulation == "sofa_lactate_shaped" and stats is None:
            raise ValueError("shaped rewards need normalization stats to recover "
                             "clinical-scale values")

        self.state_model = state_model
        self.termination = termination
        self.outcome = outcome
        self.encoder = encoder
        self.initial_pool = initial_pool
        self.reward_spec = reward_spec
        self.stats = stats
        self.temperature = float(temperature)
        self.max_steps = int(max_steps)
        self.termination_mode = termination_mode
        self.seed = int(seed)
        self.action_count = ACTION_COUNT
        self._rng = np.random.default_rng(seed)
        self._done = True
        self._step_count = 0
        self._internal: np.ndarray | None = None
        self._last_obs: np.ndarray | None = None
        self._hist_states: list[np.ndarray] = []
        self._hist_actions: list[int] = []

    # representation helpers

    def _to_internal(self, observation: np.ndarray) -> np.ndarray:
        if self.encoder is not None:
            return self.encoder.encode_mean(observation)
        return np.asarray(observation, dtype=np.float64)

    def _to_observation(self, internal: np.ndarray) -> np.ndarray:
        if self.encoder is not None:
            return self.encoder.decode(internal)
        return np.asarray(internal, dtype=np.float64)

    # gym-style interface

    def reset(self, rng: np.random.Generator | None = None,
              initial_state: np.ndarray | None = None) -> np.ndarray:
        """Start a fresh episode from a pool state (or the given state)."""
        if rng is not None:
            self._rng = rng
        if initial_state is None:
            idx = int(self._rng.integers(self.initial_pool.shape[0]))
            obs = self.initial_pool[idx].copy()
        else:
            obs = np.asarray(initial_state, dtype=np.float64).copy()
            if obs.shape != (N_FEATURES,):
                raise ValueError(f"initial state must have {N_FEATURES} entries")
        self._done = False
        self._step_count = 0
        self._internal = self._to_internal(obs)
        self._last_obs = obs
        self._hist_states = []
        self._hist_actions = []
        return obs.copy()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        decode_action(action)  # range check
        action = int(action)
        t = self._step_count

        # (1) extend history with the current (state, action) pair
        self._hist_states.append(self._internal.copy())
        self._hist_actions.append(action)
        window = HistoryWindow.from_history(
            np.stack(self._hist_states), np.array(self._hist_actions),
            self.state_model.config.window)

        # (2) next internal state: mixture sample or point prediction
        pred = self.state_model.predict(window)
        if self.state_model.config.uses_mdn:
            next_internal = sample_next(pred, self.temperature, self._rng)
            mixture_entropy = pred.entropy()
        else:
            next_internal = pred
            mixture_entropy = None

        # (3) termination queried exactly as trained: (state, action, step)
        p_term = self.termination.predict_proba(self._internal, action, t)
        if self.termination_mode == "bernoulli":
            done = bool(self._rng.random() < p_term)
        else:
            done = bool(p_term >= 0.5)
        self._step_count += 1
        hit_cap = self._step_count >= self.max_steps
        done = done or hit_cap

        # (4) terminal outcome and reward
        p_death = None
        outcome = None
        reward = 0.0
        if done:
            p_death = self.outcome.predict_proba(self._internal, action, t)
            if self.termination_mode == "bernoulli":
                died = bool(self._rng.random() < p_death)
            else:
                died = bool(p_death >= 0.5)
            outcome = Outcome.DEATH if died else Outcome.RELEASE
            magnitude = self.reward_spec.terminal_magnitude
            reward += -magnitude if died else magnitude

        # (5) per-step reward
        next_obs = self._to_observation(next_internal)
        if self.reward_spec.formulation == "terminal_minus_intensity":
            reward -= action_intensity(action)
        elif self.reward_spec.formulation == "sofa_lactate_shaped":
            reward += shaped_reward(self.stats.denormalize(self._last_obs),
                                    self.stats.denormalize(next_obs),
                                    self.reward_spec)

        # (6) advance and emit
        self._internal = next_internal
        self._last_obs = next_obs
        self._done = done
        info = {"p_terminate": float(p_term),
                "p_death": None if p_death is None else float(p_death),
                "outcome": None if outcome is None else int(outcome),
                "mixture_entropy": mixture_entropy,
                "step": self._step_count,
                "hit_max_steps": hit_cap}
        if not np.all(np.isfinite(next_obs)):
            raise FloatingPointError("environment produced a non-finite observation")
        return StepResult(next_obs.copy(), float(reward), done, info)

    @property
    def done(self) -> bool:
        return self._done


@dataclass(frozen=True)
class ReplayTrajectory:
    """Model-generated states from replaying recorded actions."""

    observations: np.ndarray   # (steps, 46)
    rewards: np.ndarray        # (steps,)
    dones: np.ndarray          # (steps,) bool
    infos: tuple[dict, ...]

    @property
    def n_steps(self) -> int:
        return self.rewards.shape[0]


def replay_physician(env: PatientEnv, episode: PatientEpisode) -> ReplayTrajectory:
    """Reset to the episode's first state and feed its recorded actions.

    Feeds the first length-1 actions (the final recorded action has no
    successor to compare against); stops early if the model ends the episode.
    Returned observations are model-generated only; the real initial state is
    not included.
    """
    if episode.length < 1:
        raise ValueError("episode has no steps")
    env.reset(initial_state=episode.states[0])
    observations, rewards, dones, infos = [], [], [], []
    for action in episode.actions[:-1]:
        result = env.step(int(action))
        observations.append(result.observation)
        rewards.append(result.reward)
        dones.append(result.done)
        infos.append(result.info)
        if result.done:
            break
    if observations:
        obs_arr = np.stack(observations)
    else:
        obs_arr = np.zeros((0, N_FEATURES))
    return ReplayTrajectory(obs_arr, np.array(rewards, dtype=np.float64),
                            np.array(dones, dtype=bool), tuple(infos))
