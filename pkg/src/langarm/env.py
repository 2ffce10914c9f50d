"""Episode environment: instruction sampling, rewards, observation stacking.

One episode runs a fixed number of steps (horizon). At reset an instruction
is drawn uniformly from the instruction set; it stays fixed for the episode.
Each observation bundles the instruction, one rendered image per camera, the
joint angles, and the tactile bits; the policy state stacks the three most
recent observations (newest first), with the reset observation replicated.

Per-step rewards are the raw designed reward divided by the horizon, so the
best possible episodic return equals the raw per-step maximum (1.0 for the
binary touch tasks, 6.0 for the per-finger task).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instructions import Instruction, InstructionSet, RewardSpec
from .raster import CameraSpec, Table, render_scene
from .sim import (ContactReport, JointState, RobotModel, SceneObject,
                  apply_action, detect_touches)

N_STACK = 3


@dataclass(frozen=True)
class Observation:
    instruction: Instruction
    images: tuple[np.ndarray, ...]  # one (H, W, 3) image per camera
    proprio: np.ndarray  # joint angles, radians (dof,)
    tactile: np.ndarray  # bool (n_fingertips,)


@dataclass(frozen=True)
class State:
    frames: tuple[Observation, Observation, Observation]  # newest first

    @property
    def instruction(self) -> Instruction:
        return self.frames[0].instruction


@dataclass(frozen=True)
class StepResult:
    state: State
    reward: float
    done: bool
    # extra diagnostics in the gym-info idiom; not part of the policy input
    info: dict = field(default_factory=dict)


def compute_reward(spec: RewardSpec, report: ContactReport, objects) -> float:
    """Raw (unscaled) designed reward for one contact snapshot."""
    target = np.array([obj.color == spec.target_color for obj in objects])
    if spec.kind == "touch_binary":
        return spec.correct_gain if report.touches[:, target].any() else 0.0
    on_target = report.touches[:, target].any(axis=1).sum()
    wrong_pairs = report.touches[:, ~target].sum()
    return float(on_target) * spec.correct_gain + float(wrong_pairs) * spec.wrong_penalty


class TouchEnv:
    """Desk-scale touch environment around one robot and a set of cubes."""

    def __init__(self, robot: RobotModel, objects: list[SceneObject], table: Table,
                 instruction_set: InstructionSet, cameras: list[CameraSpec],
                 horizon: int = 32, contact_radius: float = 0.01):
        colors = {obj.color for obj in objects}
        for spec in instruction_set.reward_specs:
            if spec.target_color not in colors:
                raise ValueError(
                    f"reward targets {spec.target_color!r} but scene has {sorted(colors)}"
                )
        self.robot = robot
        self.objects = list(objects)
        self.table = table
        self.instruction_set = instruction_set
        self.cameras = list(cameras)
        self.horizon = horizon
        self.contact_radius = contact_radius
        self._state: JointState | None = None
        self._instruction: Instruction | None = None
        self._spec: RewardSpec | None = None
        self._step_idx = 0
        self._frames: tuple[Observation, ...] | None = None

    # -- helpers ------------------------------------------------------------

    def _observe(self) -> Observation:
        report = detect_touches(self.robot, self._state, self.objects, self.contact_radius)
        images = tuple(
            render_scene(self.robot, self._state, self.objects, cam, self.table)
            for cam in self.cameras
        )
        return Observation(
            instruction=self._instruction,
            images=images,
            proprio=self._state.angles.copy(),
            tactile=report.tactile_bits.copy(),
        )

    # -- episode API ----------------------------------------------------------

    def reset(self, rng: np.random.Generator | None = None,
              instruction_id: int | None = None) -> State:
        """Start an episode at the home pose with a fresh instruction.

        The instruction is drawn uniformly with ``rng`` unless
        ``instruction_id`` pins it (used by round-robin evaluation).
        """
        if instruction_id is None:
            if rng is None:
                raise ValueError("reset needs an rng when instruction_id is not pinned")
            instruction_id = int(rng.integers(len(self.instruction_set)))
        self._instruction = self.instruction_set.instructions[instruction_id]
        self._spec = self.instruction_set.reward_specs[instruction_id]
        self._state = JointState(self.robot.home_pose())
        self._step_idx = 0
        obs = self._observe()
        self._frames = (obs, obs, obs)
        return State(frames=self._frames)

    def step(self, action) -> StepResult:
        if self._frames is None:
            raise RuntimeError("step called before reset")
        if self._step_idx >= self.horizon:
            raise RuntimeError("step called on a finished episode")
        self._state = apply_action(self.robot, self._state, action)
        report = detect_touches(self.robot, self._state, self.objects, self.contact_radius)
        raw = compute_reward(self._spec, report, self.objects)
        reward = raw / self.horizon
        obs = self._observe()
        self._frames = (obs, self._frames[0], self._frames[1])
        self._step_idx += 1
        target = np.array([o.color == self._spec.target_color for o in self.objects])
        info = {
            "raw_reward": raw,
            "target_touched": bool(report.touches[:, target].any()),
            "wrong_touched": bool(report.touches[:, ~target].any()),
            "wrong_pairs": int(report.touches[:, ~target].sum()),
        }
        return StepResult(
            state=State(frames=self._frames),
            reward=reward,
            done=self._step_idx >= self.horizon,
            info=info,
        )


# -- policy-facing feature extraction -----------------------------------------


def state_features(state: State):
    """Flatten a stacked state into policy inputs.

    Returns (tokens, pixels, motor):
      tokens: (max_len,) int64 instruction ids;
      pixels: (n_stack * n_cameras * 3, H, W) float64, frames newest first,
              cameras in env order, RGB planes;
      motor:  (n_stack * (dof + n_fingertips),) float64, per frame the joint
              angles followed by the tactile bits.
    """
    tokens = np.asarray(state.instruction.tokens, dtype=np.int64)
    planes = []
    motor = []
    for obs in state.frames:
        for img in obs.images:
            planes.append(img.transpose(2, 0, 1))
        motor.append(obs.proprio)
        motor.append(obs.tactile.astype(np.float64))
    return tokens, np.concatenate(planes, axis=0), np.concatenate(motor)


def feature_dims(env: TouchEnv) -> tuple[int, int, int, int]:
    """(n_channels, height, width, motor_dim) for building the policy."""
    n_channels = N_STACK * len(env.cameras) * 3
    h = env.cameras[0].height
    w = env.cameras[0].width
    motor_dim = N_STACK * (env.robot.dof + env.robot.n_fingertips)
    return n_channels, h, w, motor_dim
