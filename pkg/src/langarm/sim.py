"""Kinematic simulation of articulated arms with fingertip contact sensing.

The robot is a forest of revolute joints. Each joint's frame is the parent
frame composed with a fixed translation (mount offset) and a rotation about a
fixed axis; link geometry hangs off the joint frame along its local x axis.
Contact sensing is point-vs-box: a fingertip touches a cube when its world
position lies inside the cube's axis-aligned box expanded by a contact radius
on every axis (closed boundary).

Everything here is a pure function of its inputs; there is no hidden state and
no dynamics (actions are absolute joint poses applied instantly).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int  # index of the parent joint, -1 for the world frame
    rotation_axis: tuple[float, float, float]
    mount_offset: tuple[float, float, float]
    limit_min: float
    limit_max: float


@dataclass(frozen=True)
class RobotModel:
    """Joint chain plus link geometry and fingertip anchor points.

    fingertip_groups holds one tuple per end-effector; each entry is a
    (joint index, local offset) pair giving a sensing point in that joint's
    frame. Fingertip ordering is groups flattened in order.
    """

    name: str
    joints: tuple[JointSpec, ...]
    link_lengths: tuple[float, ...]
    fingertip_groups: tuple[tuple[tuple[int, tuple[float, float, float]], ...], ...]

    def __post_init__(self):
        if len(self.link_lengths) != len(self.joints):
            raise ValueError(
                f"{len(self.joints)} joints but {len(self.link_lengths)} link lengths"
            )
        for i, j in enumerate(self.joints):
            if not -1 <= j.parent < i:
                raise ValueError(f"joint {j.name!r} has invalid parent {j.parent}")
            if not j.limit_min < j.limit_max:
                raise ValueError(f"joint {j.name!r} has empty limit range")
            if abs(np.linalg.norm(j.rotation_axis) - 1.0) > 1e-9:
                raise ValueError(f"joint {j.name!r} rotation axis is not unit length")
        for group in self.fingertip_groups:
            for joint_idx, _ in group:
                if not 0 <= joint_idx < len(self.joints):
                    raise ValueError(f"fingertip anchored to unknown joint {joint_idx}")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def n_fingertips(self) -> int:
        return sum(len(g) for g in self.fingertip_groups)

    @property
    def limits_low(self) -> np.ndarray:
        return np.array([j.limit_min for j in self.joints])

    @property
    def limits_high(self) -> np.ndarray:
        return np.array([j.limit_max for j in self.joints])

    def home_pose(self) -> np.ndarray:
        return 0.5 * (self.limits_low + self.limits_high)


@dataclass(frozen=True)
class JointState:
    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=np.float64))


@dataclass(frozen=True)
class SceneObject:
    id: str
    color: str  # one of {"blue", "red", "green"}
    center: tuple[float, float, float]
    half_extent: float

    def __post_init__(self):
        if self.color not in ("blue", "red", "green"):
            raise ValueError(f"unknown cube color {self.color!r}")
        if not self.half_extent > 0:
            raise ValueError("half_extent must be positive")


@dataclass(frozen=True)
class ContactReport:
    touches: np.ndarray  # bool (n_fingertips, n_objects)
    tactile_bits: np.ndarray  # bool (n_fingertips,)


def rotation_about_axis(axis, theta: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis and angle in radians."""
    k = np.asarray(axis, dtype=np.float64)
    kx, ky, kz = k
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    c, s = np.cos(theta), np.sin(theta)
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(k, k)


def forward_kinematics(model: RobotModel, state: JointState):
    """World frames for every joint plus fingertip world positions.

    Returns (frames, fingertips): frames is (dof, 4, 4) homogeneous transforms,
    fingertips is (n_fingertips, 3) in group-flattened order.
    """
    angles = state.angles
    if angles.shape != (model.dof,):
        raise ValueError(f"state has shape {angles.shape}, model dof is {model.dof}")
    frames = np.empty((model.dof, 4, 4))
    for i, joint in enumerate(model.joints):
        local = np.eye(4)
        local[:3, :3] = rotation_about_axis(joint.rotation_axis, angles[i])
        local[:3, 3] = joint.mount_offset
        if joint.parent < 0:
            frames[i] = local
        else:
            frames[i] = frames[joint.parent] @ local
    tips = []
    for group in model.fingertip_groups:
        for joint_idx, offset in group:
            p = frames[joint_idx] @ np.array([offset[0], offset[1], offset[2], 1.0])
            tips.append(p[:3])
    return frames, np.array(tips).reshape(model.n_fingertips, 3)


def link_segments(model: RobotModel, frames: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """World-space (start, end) of each link: joint origin to link tip."""
    segs = []
    for i in range(model.dof):
        start = frames[i, :3, 3]
        end = (frames[i] @ np.array([model.link_lengths[i], 0.0, 0.0, 1.0]))[:3]
        segs.append((start, end))
    return segs


def apply_action(model: RobotModel, state: JointState, action) -> JointState:
    """Clamp an absolute joint-pose command to the limits; instant move."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (model.dof,):
        raise ValueError(f"action has shape {action.shape}, model dof is {model.dof}")
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains NaN or Inf")
    return JointState(np.clip(action, model.limits_low, model.limits_high))


def detect_touches(model: RobotModel, state: JointState, objects,
                   contact_radius: float = 0.01) -> ContactReport:
    """Fingertip-vs-cube contacts with the boxes grown by contact_radius."""
    if not contact_radius > 0:
        raise ValueError("contact_radius must be positive")
    _, tips = forward_kinematics(model, state)
    touches = np.zeros((model.n_fingertips, len(objects)), dtype=bool)
    for o, obj in enumerate(objects):
        center = np.asarray(obj.center)
        reach = obj.half_extent + contact_radius
        inside = np.abs(tips - center) <= reach
        touches[:, o] = inside.all(axis=1)
    return ContactReport(touches=touches, tactile_bits=touches.any(axis=1))


# -- shipped robot configurations ---------------------------------------------

ARM_PLANE_Z = 0.06


def build_planar_2x3() -> RobotModel:
    """Two planar 3-joint arms over the desk, six fingertips total.

    Arms are mounted at (+/-0.15, 0.30) in the z = ARM_PLANE_Z plane and rotate
    about z only. The right arm's home points along +x, the left arm's along
    -x, so the home pose hovers away from the cube row. Each end effector has
    three sensing points at the last link's tip, spread 0.05 m sideways, so an
    open hand spans 0.10 m and can lie across two adjacent cubes.
    """
    right = [
        JointSpec("r0", -1, (0, 0, 1), (0.15, 0.30, ARM_PLANE_Z), -np.pi / 2, np.pi / 2),
        JointSpec("r1", 0, (0, 0, 1), (0.30, 0.0, 0.0), -np.pi / 2, np.pi / 2),
        JointSpec("r2", 1, (0, 0, 1), (0.25, 0.0, 0.0), -np.pi / 2, np.pi / 2),
    ]
    left = [
        JointSpec("l0", -1, (0, 0, 1), (-0.15, 0.30, ARM_PLANE_Z), np.pi / 2, 3 * np.pi / 2),
        JointSpec("l1", 3, (0, 0, 1), (0.30, 0.0, 0.0), -np.pi / 2, np.pi / 2),
        JointSpec("l2", 4, (0, 0, 1), (0.25, 0.0, 0.0), -np.pi / 2, np.pi / 2),
    ]
    tips = lambda j: tuple((j, (0.10, dy, 0.0)) for dy in (-0.05, 0.0, 0.05))
    return RobotModel(
        name="planar-2x3",
        joints=tuple(right + left),
        link_lengths=(0.30, 0.25, 0.10, 0.30, 0.25, 0.10),
        fingertip_groups=(tips(2), tips(5)),
    )


def build_nao26() -> RobotModel:
    """26-joint placeholder with symmetric limits, for shape testing only.

    The reference humanoid's joint table is not public here; this descriptor
    exists so that code paths parameterized by dof can be exercised at the
    full joint count. Geometry: two 13-joint chains with alternating axes.
    """
    joints = []
    lengths = []
    for arm, sx in (("a", 1.0), ("b", -1.0)):
        base = len(joints)
        for i in range(13):
            parent = -1 if i == 0 else base + i - 1
            axis = (0, 0, 1) if i % 2 == 0 else (0, 1, 0)
            mount = (sx * 0.10, 0.0, 0.30) if i == 0 else (0.05, 0.0, 0.0)
            joints.append(JointSpec(f"{arm}{i}", parent, axis, mount, -np.pi / 2, np.pi / 2))
            lengths.append(0.05)
    tips = lambda j: tuple((j, (0.05, dy, 0.0)) for dy in (-0.02, 0.0, 0.02))
    return RobotModel(
        name="nao26",
        joints=tuple(joints),
        link_lengths=tuple(lengths),
        fingertip_groups=(tips(12), tips(25)),
    )


_BUILDERS = {"planar-2x3": build_planar_2x3, "nao26": build_nao26}


def make_robot(name: str) -> RobotModel:
    if name not in _BUILDERS:
        raise ValueError(f"unknown robot config {name!r}; have {sorted(_BUILDERS)}")
    return _BUILDERS[name]()
