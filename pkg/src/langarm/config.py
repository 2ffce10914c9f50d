"""Experiment configuration: a small sectioned key/value text format.

Syntax: ``[section]`` headers, ``key = value`` lines, ``#`` comments, blank
lines ignored. Values are plain strings; typed accessors parse them when the
experiment is built, and every parse error is reported with its line number.

The three shipped experiments are pure data in this format; changing the
scene, the instruction set, or the reward design requires no code edits.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .env import N_STACK, TouchEnv
from .instructions import Instruction, InstructionSet, RewardSpec
from .networks import PolicyConfig
from .ppo import TrainerConfig
from .raster import CameraSpec, Table
from .sim import SceneObject, make_robot


class ConfigError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ConfigValue:
    raw: str
    line: int


def parse_config(text: str) -> dict[str, dict[str, ConfigValue]]:
    """Parse sectioned key/value text; raises ConfigError with line numbers."""
    sections: dict[str, dict[str, ConfigValue]] = {}
    current: dict[str, ConfigValue] | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {line!r}", lineno)
            name = line[1:-1].strip()
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if current is None:
            raise ConfigError("key/value pair before any [section] header", lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        current[key] = ConfigValue(raw=value.strip(), line=lineno)
    return sections


def serialize_config(sections: dict[str, dict[str, ConfigValue]]) -> str:
    """Canonical text form; parse(serialize(parse(t))) == parse(t) contents."""
    chunks = []
    for name, body in sections.items():
        lines = [f"[{name}]"]
        lines += [f"{k} = {v.raw}" for k, v in body.items()]
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def _section(parsed, name: str) -> dict[str, ConfigValue]:
    if name not in parsed:
        raise ConfigError(f"missing required section [{name}]")
    return parsed[name]


_REQUIRED = object()


def _get(section: dict[str, ConfigValue], sec_name: str, key: str,
         conv, default=_REQUIRED):
    if key not in section:
        if default is not _REQUIRED:
            return default
        raise ConfigError(f"missing key {key!r} in section [{sec_name}]")
    v = section[key]
    try:
        return conv(v.raw)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"bad value for {sec_name}.{key}: {err}", v.line) from err


def _pair(raw: str) -> tuple[float, float]:
    parts = raw.split()
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {raw!r}")
    lo, hi = float(parts[0]), float(parts[1])
    return lo, hi


def _cube(raw: str) -> tuple[str, float, float]:
    parts = raw.split()
    if len(parts) != 3:
        raise ValueError(f"expected 'color x y', got {raw!r}")
    return parts[0], float(parts[1]), float(parts[2])


@dataclass(frozen=True)
class ExperimentConfig:
    robot_name: str
    half_extent: float
    contact_radius: float
    table: Table
    cubes: tuple[SceneObject, ...]
    instruction_set: InstructionSet
    cameras: tuple[CameraSpec, ...]
    trainer: TrainerConfig
    seed: int
    out: str
    sigma: float = 0.36


def build_experiment(parsed) -> ExperimentConfig:
    """Typed ExperimentConfig from a parsed file, with full validation."""
    robot_sec = _section(parsed, "robot")
    robot_name = _get(robot_sec, "robot", "config", str)
    try:
        make_robot(robot_name)
    except ValueError as err:
        raise ConfigError(str(err), robot_sec["config"].line) from err

    scene = _section(parsed, "scene")
    half = _get(scene, "scene", "half_extent", float)
    radius = _get(scene, "scene", "contact_radius", float, 0.01)
    if half <= 0:
        raise ConfigError("half_extent must be positive", scene["half_extent"].line)
    if radius <= 0:
        raise ConfigError("contact_radius must be positive",
                          scene["contact_radius"].line if "contact_radius" in scene else None)
    table = Table(
        x_range=_get(scene, "scene", "table_x", _pair),
        y_range=_get(scene, "scene", "table_y", _pair),
        z_range=_get(scene, "scene", "table_z", _pair),
    )
    n_cubes = _get(scene, "scene", "cubes", int)
    cubes = []
    for i in range(n_cubes):
        color, x, y = _get(scene, "scene", f"cube{i}", _cube)
        try:
            cubes.append(SceneObject(id=f"cube{i}", color=color,
                                     center=(x, y, half), half_extent=half))
        except ValueError as err:
            raise ConfigError(str(err), scene[f"cube{i}"].line) from err
    for i in range(len(cubes)):
        for j in range(i + 1, len(cubes)):
            gap = np.abs(np.array(cubes[i].center) - np.array(cubes[j].center))
            if np.all(gap < 2 * half):
                raise ConfigError(f"cube{i} and cube{j} interpenetrate",
                                  scene[f"cube{j}"].line)

    instr_sec = _section(parsed, "instructions")
    count = _get(instr_sec, "instructions", "count", int)
    if count < 1:
        raise ConfigError("instruction count must be >= 1", instr_sec["count"].line)
    instructions, specs = [], []
    colors = {c.color for c in cubes}
    for i in range(count):
        text = _get(instr_sec, "instructions", f"inst{i}_text", str)
        kind = _get(instr_sec, "instructions", f"inst{i}_kind", str)
        target = _get(instr_sec, "instructions", f"inst{i}_target", str)
        gain = _get(instr_sec, "instructions", f"inst{i}_gain", float, 1.0)
        penalty = _get(instr_sec, "instructions", f"inst{i}_penalty", float, 0.0)
        if target not in colors:
            raise ConfigError(
                f"inst{i} targets {target!r} but scene colors are {sorted(colors)}",
                instr_sec[f"inst{i}_target"].line)
        try:
            instructions.append(Instruction.make(i, text))
            specs.append(RewardSpec(kind=kind, target_color=target,
                                    correct_gain=gain, wrong_penalty=penalty))
        except ValueError as err:
            raise ConfigError(str(err), instr_sec[f"inst{i}_text"].line) from err

    cam_sec = _section(parsed, "cameras")
    width = _get(cam_sec, "cameras", "width", int)
    height = _get(cam_sec, "cameras", "height", int)
    try:
        cameras = (
            CameraSpec("front", width, height,
                       window_h=_get(cam_sec, "cameras", "front_x", _pair),
                       window_v=_get(cam_sec, "cameras", "front_z", _pair)),
            CameraSpec("top", width, height,
                       window_h=_get(cam_sec, "cameras", "top_x", _pair),
                       window_v=_get(cam_sec, "cameras", "top_y", _pair)),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    run_sec = _section(parsed, "run")
    seed = _get(run_sec, "run", "seed", int)
    out = _get(run_sec, "run", "out", str)

    tr = parsed.get("trainer", {})
    defaults = TrainerConfig()
    try:
        trainer = TrainerConfig(
            lr=_get(tr, "trainer", "lr", float, defaults.lr),
            epochs=_get(tr, "trainer", "epochs", int, defaults.epochs),
            clip_eps=_get(tr, "trainer", "clip_eps", float, defaults.clip_eps),
            gamma=_get(tr, "trainer", "gamma", float, defaults.gamma),
            value_coef=_get(tr, "trainer", "value_coef", float, defaults.value_coef),
            entropy_coef=_get(tr, "trainer", "entropy_coef", float, defaults.entropy_coef),
            rollouts=_get(tr, "trainer", "rollouts", int, defaults.rollouts),
            horizon=_get(tr, "trainer", "horizon", int, defaults.horizon),
            total_steps=_get(tr, "trainer", "total_steps", int, defaults.total_steps),
            eval_every=_get(tr, "trainer", "eval_every", int, defaults.eval_every),
            eval_episodes=_get(tr, "trainer", "eval_episodes", int, defaults.eval_episodes),
            seed=seed,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    return ExperimentConfig(
        robot_name=robot_name,
        half_extent=half,
        contact_radius=radius,
        table=table,
        cubes=tuple(cubes),
        instruction_set=InstructionSet(tuple(instructions), tuple(specs)),
        cameras=cameras,
        trainer=trainer,
        seed=seed,
        out=out,
    )


def load_experiment(path) -> ExperimentConfig:
    with open(path) as fh:
        return build_experiment(parse_config(fh.read()))


def build_env(cfg: ExperimentConfig) -> TouchEnv:
    return TouchEnv(
        robot=make_robot(cfg.robot_name),
        objects=list(cfg.cubes),
        table=cfg.table,
        instruction_set=cfg.instruction_set,
        cameras=list(cfg.cameras),
        horizon=cfg.trainer.horizon,
        contact_radius=cfg.contact_radius,
    )


def build_policy_config(cfg: ExperimentConfig) -> PolicyConfig:
    robot = make_robot(cfg.robot_name)
    n_channels = N_STACK * len(cfg.cameras) * 3
    motor_dim = N_STACK * (robot.dof + robot.n_fingertips)
    try:
        return PolicyConfig(
            dof=robot.dof,
            n_channels=n_channels,
            img_h=cfg.cameras[0].height,
            img_w=cfg.cameras[0].width,
            motor_dim=motor_dim,
            action_low=tuple(robot.limits_low),
            action_high=tuple(robot.limits_high),
            sigma=cfg.sigma,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err


def override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return dataclasses.replace(
        cfg, seed=seed, trainer=dataclasses.replace(cfg.trainer, seed=seed))
