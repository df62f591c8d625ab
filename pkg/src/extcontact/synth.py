"""Synthetic multimodal contact episodes with known ground truth.

A kinematic stand-in for a robot data collection rig: a grasped object
(stick, box or L-shape) is posed against a table (optionally through a second
box), a camera is dropped at a random pose on a spherical cap, and the point
cloud, end-effector rotation, wrist wrench and two fingertip shear fields are
synthesised per frame. Physics is deliberately minimal; the signals only carry
the correlations a real rig would plausibly carry.

World frame: table top is the plane z = 0, +z up. Object frame: origin at the
grasp, long axis along -z, fingertip pads on the +/-x faces.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .geometry import CropBox, axis_angle, crop, downsample, matrix_to_quat

MODES = ("none", "point", "line", "patch", "chained")
OBJECT_KINDS = ("stick", "box", "lshape")
FRAME_RATE_HZ = 10.0

_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class SceneConfig:
    object_kind: str = "stick"
    # stick: (length, width, -); box: (x, y, z) edge lengths; lshape: (length, width, foot)
    object_dims: tuple[float, float, float] = (0.20, 0.03, 0.06)
    dims_jitter: float = 0.15
    mode: str = "point"
    support_dims: tuple[float, float, float] = (0.10, 0.10, 0.05)
    table_half_extent: float = 0.12
    camera_radius: tuple[float, float] = (0.5, 0.8)
    camera_elevation_deg: tuple[float, float] = (35.0, 65.0)
    camera_azimuth_deg: tuple[float, float] = (-180.0, 180.0)
    camera_roll_deg: float = 10.0
    camera_target_jitter: float = 0.02
    crop_lo: tuple[float, float, float] = (-1.0, -1.0, 0.05)
    crop_hi: tuple[float, float, float] = (1.0, 1.0, 2.5)
    num_points: int = 1024
    oversample: float = 1.5
    sigma_pc: float = 0.002
    sigma_ft: float = 0.5
    sigma_tac: float = 0.02
    frames: int = 4
    tactile_h: int = 8
    tactile_w: int = 8
    force_range: tuple[float, float] = (1.0, 20.0)
    friction: float = 0.4
    tilt_deg: tuple[float, float] = (20.0, 60.0)
    rotation_step_deg: float = 3.0
    hover_gap: tuple[float, float] = (0.003, 0.015)
    free_gap: tuple[float, float] = (0.02, 0.08)
    hover_prob: float = 0.5
    wrist_offset: float = 0.05
    unseen: bool = False

    def validate(self) -> None:
        if self.object_kind not in OBJECT_KINDS:
            raise DataError(f"unknown object kind {self.object_kind!r}")
        if self.mode not in MODES:
            raise DataError(f"unknown contact mode {self.mode!r}")
        if min(self.object_dims) <= 0 or min(self.support_dims) <= 0:
            raise DataError("object dimensions must be > 0")
        if self.frames < 1:
            raise DataError("frames must be >= 1")
        if self.num_points < 1:
            raise DataError("num_points must be >= 1")
        if self.tactile_h < 2 or self.tactile_w < 2:
            raise DataError("tactile grid must be at least 2x2")
        if self.hover_gap[0] <= 0 or self.free_gap[0] <= 0:
            raise DataError("object below table: no-contact gaps must be > 0")
        lo, hi = self.force_range
        if not 0 < lo <= hi:
            raise DataError("force range must be positive")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DataError(f"unknown scene config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class FrameSample:
    cloud: np.ndarray          # (M, 3) float32, camera frame
    rotation: np.ndarray       # (4,) float32 unit quaternion (w, x, y, z)
    wrench: np.ndarray         # (6,) float32, sensor frame
    tactile_left: np.ndarray   # (H, W, 2) float32
    tactile_right: np.ndarray  # (H, W, 2) float32
    annotation: np.ndarray     # (N, 3) float32, camera frame
    contact: bool


@dataclass
class Episode:
    id: str
    frames: list[FrameSample]
    annotation: np.ndarray
    contact: bool
    mode: str
    object_kind: str
    unseen: bool = False
    config_digest: str = ""
    rate_hz: float = FRAME_RATE_HZ
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


# -- scene primitives ---------------------------------------------------------
@dataclass
class Box:
    center: np.ndarray   # world
    rotation: np.ndarray  # box-to-world
    half: np.ndarray

    def vertices(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.center + (signs * self.half) @ self.rotation.T

    def faces(self):
        """Yield (center, normal, axis_u, axis_v, half_u, half_v) for the six faces."""
        for k in range(3):
            u, v = [i for i in range(3) if i != k]
            for sign in (-1.0, 1.0):
                n = sign * self.rotation[:, k]
                c = self.center + n * self.half[k]
                yield c, n, self.rotation[:, u], self.rotation[:, v], self.half[u], self.half[v]

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        q = (np.asarray(points) - self.center) @ self.rotation
        excess = np.abs(q) - self.half
        outside = np.linalg.norm(np.maximum(excess, 0.0), axis=-1)
        inside = np.minimum(excess.max(axis=-1), 0.0)
        return np.abs(outside + inside)


@dataclass
class Plane:
    center: np.ndarray
    half: float

    def faces(self):
        yield self.center, _UP.copy(), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), self.half, self.half


@dataclass
class SceneState:
    table: Plane
    boxes: list[Box]

    def primitives(self):
        return [self.table, *self.boxes]


@dataclass
class CameraPose:
    position: np.ndarray   # world
    rotation: np.ndarray   # camera-to-world, columns = camera x (right), y (down), z (optical axis)

    def world_to_camera(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.position) @ self.rotation

    def camera_to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position


@dataclass
class ContactGeometry:
    """Where and how hard the environment pushes on the grasped object (world frame)."""
    point: np.ndarray
    force: np.ndarray
    wrist: np.ndarray
    rotation: np.ndarray  # sensor-to-world


@dataclass
class GraspParams:
    force_gain: float = 0.04      # marker units per N of in-plane force
    torque_gain: float = 0.3      # marker units per N*m about the pad normal
    normal_gain: float = 0.02     # radial spread per N along the pad normal
    window: float = 0.6           # Gaussian window width in normalised pad coords


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# -- object model ---------------------------------------------------------------
def object_boxes_local(kind: str, dims) -> list[tuple[np.ndarray, np.ndarray]]:
    """(center, half-extent) pairs of the object's boxes in the object frame."""
    a, b, c = (float(x) for x in dims)
    if kind == "stick":
        return [(np.array([0.0, 0.0, -a / 2]), np.array([b / 2, b / 2, a / 2]))]
    if kind == "box":
        return [(np.array([0.0, 0.0, -c / 2]), np.array([a / 2, b / 2, c / 2]))]
    if kind == "lshape":
        arm = (np.array([0.0, 0.0, -a / 2]), np.array([b / 2, b / 2, a / 2]))
        foot = (np.array([0.0, c / 2 - b / 2, -a + b / 2]), np.array([b / 2, c / 2, b / 2]))
        return [arm, foot]
    raise DataError(f"unknown object kind {kind!r}")


def _place(local_boxes, R, t) -> list[Box]:
    return [Box(R @ c + t, R.copy(), h.copy()) for c, h in local_boxes]


def _local_vertices(local_boxes) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return np.concatenate([c + signs * h for c, h in local_boxes])


def _random_rotation(rng, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    return axis_angle(axis, rng.uniform(-max_angle, max_angle))


def _yaw(angle: float) -> np.ndarray:
    return axis_angle(_UP, angle)


# -- physics-lite signals ---------------------------------------------------
def synth_wrench(contact: bool, geometry: ContactGeometry | None, seed, sigma: float = 0.0) -> np.ndarray:
    """Wrist wrench (Fx, Fy, Fz, Tx, Ty, Tz) in the sensor frame.

    In contact, the environment force acts at ``geometry.point`` and the
    torque about the wrist is ``r x f`` with ``r`` from wrist to contact.
    Without contact only zero-mean Gaussian noise remains.
    """
    rng = _rng(seed)
    w = np.zeros(6)
    if contact:
        if geometry is None:
            raise DataError("contact wrench needs a contact geometry")
        r = geometry.point - geometry.wrist
        f = geometry.force
        Rt = geometry.rotation.T
        w[:3] = Rt @ f
        w[3:] = Rt @ np.cross(r, f)
    if sigma > 0:
        w = w + rng.normal(0.0, sigma, size=6)
    return w


def _pad_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    gy = np.linspace(-1.0, 1.0, h)
    gz = np.linspace(-1.0, 1.0, w)
    return np.meshgrid(gy, gz, indexing="ij")


def synth_tactile(contact: bool, wrench, grasp: GraspParams, h: int, w: int, seed,
                  sigma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Marker displacement fields (H, W, 2) for the +x (left) and -x (right) pads.

    The noiseless field is a windowed sum of a uniform shear proportional to
    the in-pad force, a rotational swirl proportional to the torque about the
    pad normal and a radial spread proportional to the normal force. Only the
    uniform term survives averaging over the symmetric grid, so the mean
    displacement is linear in the tangential force.
    """
    if h < 2 or w < 2:
        raise DataError("tactile grid must be at least 2x2")
    rng = _rng(seed)
    left = np.zeros((h, w, 2))
    right = np.zeros((h, w, 2))
    if contact:
        fx, fy, fz, tx, _, _ = np.asarray(wrench, dtype=float)
        u, v = _pad_grid(h, w)
        win = np.exp(-(u * u + v * v) / (2.0 * grasp.window ** 2))
        for out, side in ((left, 1.0), (right, -1.0)):
            # the right pad faces the other way: its first axis and swirl sense flip
            shear = np.array([side * fy, fz]) * (0.5 * grasp.force_gain)
            swirl = side * grasp.torque_gain * tx
            spread = side * grasp.normal_gain * fx
            out[..., 0] = win * (shear[0] - swirl * v + spread * u)
            out[..., 1] = win * (shear[1] + swirl * u + spread * v)
    if sigma > 0:
        left = left + rng.normal(0.0, sigma, size=left.shape)
        right = right + rng.normal(0.0, sigma, size=right.shape)
    return left, right


# -- rendering ------------------------------------------------------------------
def sample_camera(cfg: SceneConfig, target: np.ndarray, rng) -> CameraPose:
    r = rng.uniform(*cfg.camera_radius)
    el = np.deg2rad(rng.uniform(*cfg.camera_elevation_deg))
    az = np.deg2rad(rng.uniform(*cfg.camera_azimuth_deg))
    aim = target + rng.normal(0.0, cfg.camera_target_jitter, size=3)
    pos = aim + r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return look_at(pos, aim, np.deg2rad(rng.uniform(-cfg.camera_roll_deg, cfg.camera_roll_deg)))


def look_at(position, target, roll: float = 0.0) -> CameraPose:
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, _UP)
    if np.linalg.norm(x) < 1e-9:
        raise DataError("camera looks straight down the vertical axis")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    if roll:
        R = axis_angle(z, roll) @ R
    return CameraPose(np.asarray(position, dtype=float), R)


def render_pointcloud(scene: SceneState, camera: CameraPose, m: int, seed,
                      sigma: float = 0.0) -> np.ndarray:
    """Area-uniform samples of the camera-facing primitive faces, camera frame."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = _rng(seed)
    faces = []
    for prim in scene.primitives():
        for c, n, au, av, hu, hv in prim.faces():
            if hu * hv > 0 and np.dot(n, camera.position - c) > 0:
                faces.append((c, au, av, hu, hv))
    if not faces:
        raise DataError("no visible surface")
    areas = np.array([4.0 * hu * hv for _, _, _, hu, hv in faces])
    which = rng.choice(len(faces), size=m, p=areas / areas.sum())
    s = rng.uniform(-1.0, 1.0, size=(m, 2))
    centers = np.array([f[0] for f in faces])[which]
    au = np.array([f[1] * f[3] for f in faces])[which]
    av = np.array([f[2] * f[4] for f in faces])[which]
    world = centers + s[:, :1] * au + s[:, 1:] * av
    cam = camera.world_to_camera(world)
    if sigma > 0:
        cam = cam + rng.normal(0.0, sigma, size=cam.shape)
    return cam


# -- episode generation -----------------------------------------------------
@dataclass
class _Pose:
    R: np.ndarray
    t: np.ndarray


def _tilted_pose(local, cfg: SceneConfig, anchor: np.ndarray, rng) -> tuple[_Pose, np.ndarray]:
    """Pose whose lowest vertex touches ``anchor``; returns the pose and that vertex (local)."""
    verts = _local_vertices(local)
    tilt_axis = np.array([np.cos(a := rng.uniform(0, 2 * np.pi)), np.sin(a), 0.0])
    R = _yaw(rng.uniform(0, 2 * np.pi)) @ axis_angle(tilt_axis, np.deg2rad(rng.uniform(*cfg.tilt_deg)))
    z = (verts @ R.T)[:, 2]
    v = verts[np.argmin(z)]
    return _Pose(R, anchor - R @ v), v


def _edge_pose(local, cfg: SceneConfig, anchor: np.ndarray, rng):
    """Pose with one long edge of the first box lying on the plane through ``anchor``."""
    for _ in range(50):
        heading = rng.uniform(0, 2 * np.pi)
        # local -z (long axis) -> horizontal heading
        R0 = axis_angle(np.array([np.sin(heading), -np.cos(heading), 0.0]), np.pi / 2)
        axis_w = R0 @ np.array([0.0, 0.0, -1.0])
        roll = np.deg2rad(rng.uniform(15.0, 75.0)) * rng.choice([-1.0, 1.0])
        R = axis_angle(axis_w, roll) @ R0
        verts = _local_vertices(local)
        z = (verts @ R.T)[:, 2]
        zmin = z.min()
        box_verts = _local_vertices([local[0]])
        bz = (box_verts @ R.T)[:, 2]
        low = box_verts[np.abs(bz - bz.min()) < 1e-9]
        if len(low) == 2 and abs(bz.min() - zmin) < 1e-12:
            mid_local = low.mean(axis=0)
            t = anchor - R @ mid_local
            return _Pose(R, t), low, axis_w
    raise DataError("could not place an edge contact")


def _face_pose(local, anchor: np.ndarray, rng):
    """Pose with the object's bottom (-z) face flat on the plane through ``anchor``."""
    c0, h0 = local[-1] if len(local) > 1 else local[0]
    R = _yaw(rng.uniform(0, 2 * np.pi))
    verts = _local_vertices(local)
    zmin = verts[:, 2].min()
    bottom_center = np.array([c0[0], c0[1], zmin])
    return _Pose(R, anchor - R @ bottom_center), bottom_center, h0


def _grid_on_face(center, half_u, half_v, au, av, rng, n_max: int = 9) -> np.ndarray:
    k = int(rng.integers(2, 4))
    g = np.linspace(-0.8, 0.8, k)
    pts = np.array([center + gu * half_u * au + gv * half_v * av for gu in g for gv in g])
    return pts[: n_max]


def generate_episode(cfg: SceneConfig, seed, episode_id: str | None = None) -> Episode:
    """Synthesize one episode; deterministic in ``(cfg, seed)``."""
    cfg.validate()
    rng = _rng(seed)
    jitter = rng.uniform(1 - cfg.dims_jitter, 1 + cfg.dims_jitter, size=3)
    dims = np.asarray(cfg.object_dims) * jitter
    local = object_boxes_local(cfg.object_kind, dims)
    wrist_local = np.array([0.0, 0.0, cfg.wrist_offset])

    contact = cfg.mode != "none"
    geom_mode = cfg.mode if contact else str(rng.choice(["point", "line", "patch"]))
    anchor = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0])
    extra_boxes: list[Box] = []
    annotation_world: list[np.ndarray] = []

    if cfg.mode == "chained":
        sd = np.asarray(cfg.support_dims) * rng.uniform(1 - cfg.dims_jitter, 1 + cfg.dims_jitter, size=3)
        support = Box(np.array([anchor[0], anchor[1], sd[2] / 2]), _yaw(rng.uniform(0, 2 * np.pi)), sd / 2)
        extra_boxes.append(support)
        on_top = np.array([rng.uniform(-0.6, 0.6) * sd[0] / 2, rng.uniform(-0.6, 0.6) * sd[1] / 2, sd[2] / 2])
        anchor = support.center + support.rotation @ on_top
        geom_mode = "point"
        foot = _grid_on_face(support.center - np.array([0, 0, sd[2] / 2]), sd[0] / 2, sd[1] / 2,
                             support.rotation[:, 0], support.rotation[:, 1], rng)
        annotation_world.extend(foot)

    pivot_local = None
    if geom_mode == "point":
        pose, pivot_local = _tilted_pose(local, cfg, anchor, rng)
        contact_points = [anchor.copy()]
    elif geom_mode == "line":
        pose, pivot_local, _ = _edge_pose(local, cfg, anchor, rng)
        edge_local = pivot_local
        ends = edge_local @ pose.R.T + pose.t
        n_ann = int(rng.integers(4, 9))
        contact_points = [ends[0] + s * (ends[1] - ends[0]) for s in np.linspace(0.05, 0.95, n_ann)]
    else:
        pose, bottom_local, half = _face_pose(local, anchor, rng)
        contact_points = list(_grid_on_face(anchor, half[0], half[1], pose.R[:, 0], pose.R[:, 1], rng))

    if contact:
        annotation_world.extend(contact_points)
    else:
        gap_range = cfg.hover_gap if rng.uniform() < cfg.hover_prob else cfg.free_gap
        pose.t = pose.t + np.array([0.0, 0.0, rng.uniform(*gap_range)])

    table_center = np.array([anchor[0], anchor[1], 0.0]) + np.append(rng.uniform(-0.03, 0.03, 2), 0.0)
    table = Plane(table_center, cfg.table_half_extent)
    camera = sample_camera(cfg, np.array([anchor[0], anchor[1], 0.02]), rng)
    crop_box = CropBox(tuple(cfg.crop_lo), tuple(cfg.crop_hi))
    grasp = GraspParams()

    fn = rng.uniform(cfg.force_range[0] + 1.0, 0.75 * cfg.force_range[1])
    theta = rng.uniform(0, 2 * np.pi)
    step = np.deg2rad(cfg.rotation_step_deg)
    verts_local = _local_vertices(local)
    floor = max((b.center[2] + b.half[2] for b in extra_boxes), default=0.0)

    frames: list[FrameSample] = []
    normal_forces: list[float] = []
    annotation_cam = (camera.world_to_camera(np.array(annotation_world)) if annotation_world
                      else np.zeros((0, 3))).astype(np.float32)
    for i in range(cfg.frames):
        if i > 0:
            pose = _perturb(pose, geom_mode if contact else "none", cfg, rng, step, anchor,
                            verts_local, floor, pivot_local)
        boxes = _place(local, pose.R, pose.t)
        zmin = min(b.vertices()[:, 2].min() for b in boxes)
        if zmin < -1e-9:
            raise DataError("degenerate geometry: object below table")
        scene = SceneState(table, boxes + extra_boxes)
        m_raw = int(np.ceil(cfg.num_points * cfg.oversample))
        cloud = render_pointcloud(scene, camera, m_raw, rng, cfg.sigma_pc)
        cloud = downsample(crop(cloud, crop_box), cfg.num_points, rng)

        wrist = pose.R @ wrist_local + pose.t
        if contact:
            fn = float(np.clip(fn + rng.normal(0.0, 1.5), *cfg.force_range))
            theta += rng.normal(0.0, 0.3)
            mu = cfg.friction * rng.uniform(0.0, 1.0)
            force = fn * _UP + fn * mu * np.array([np.cos(theta), np.sin(theta), 0.0])
            cop = _center_of_pressure(contact_points, rng)
            geo = ContactGeometry(cop, force, wrist, pose.R)
            clean = synth_wrench(True, geo, rng)
            normal_forces.append(fn)
        else:
            clean = np.zeros(6)
            normal_forces.append(0.0)
        wrench = clean + rng.normal(0.0, cfg.sigma_ft, size=6) if cfg.sigma_ft > 0 else clean
        tl, tr = synth_tactile(contact, clean, grasp, cfg.tactile_h, cfg.tactile_w, rng, cfg.sigma_tac)
        frames.append(FrameSample(
            cloud=cloud.astype(np.float32),
            rotation=matrix_to_quat(pose.R).astype(np.float32),
            wrench=wrench.astype(np.float32),
            tactile_left=tl.astype(np.float32),
            tactile_right=tr.astype(np.float32),
            annotation=annotation_cam,
            contact=contact,
        ))

    meta = {
        "normal_forces": normal_forces,
        "camera_position": camera.position.tolist(),
        "camera_rotation": camera.rotation.tolist(),
        "geometry": geom_mode,
    }
    return Episode(
        id=episode_id or f"ep-{cfg.digest()}-{int(rng.integers(0, 2**31))}",
        frames=frames,
        annotation=annotation_cam,
        contact=contact,
        mode=cfg.mode,
        object_kind=cfg.object_kind,
        unseen=cfg.unseen,
        config_digest=cfg.digest(),
        meta=meta,
    )


def _center_of_pressure(points, rng) -> np.ndarray:
    pts = np.asarray(points)
    if len(pts) == 1:
        return pts[0]
    w = rng.dirichlet(np.ones(len(pts)))
    return w @ pts


def _perturb(pose: _Pose, mode: str, cfg: SceneConfig, rng, step: float, anchor, verts_local,
             floor: float, pivot_local) -> _Pose:
    """Next-frame pose keeping the contact fixed (or moving freely without contact).

    ``pivot_local`` is the touching vertex (point mode) or the two endpoints of
    the resting edge (line mode) in the object frame.
    """
    if mode == "point":
        for _ in range(10):
            R = _random_rotation(rng, step) @ pose.R
            t = anchor - R @ pivot_local
            z = (verts_local @ R.T + t)[:, 2]
            if z.min() >= anchor[2] - 1e-9:
                return _Pose(R, t)
        return pose
    if mode == "line":
        # roll about the resting edge
        a_w, b_w = pivot_local @ pose.R.T + pose.t
        for _ in range(10):
            dR = axis_angle(b_w - a_w, rng.uniform(-step, step))
            R = dR @ pose.R
            t = a_w - dR @ a_w + dR @ pose.t
            z = (verts_local @ R.T + t)[:, 2]
            if z.min() >= a_w[2] - 1e-9:
                return _Pose(R, t)
        return pose
    if mode == "patch":
        dR = _yaw(rng.uniform(-1.0, 1.0) * np.deg2rad(1.0))
        return _Pose(dR @ pose.R, anchor - dR @ (anchor - pose.t))
    # free motion: small rotation about the grasp plus bounded drift, never touching below
    for _ in range(10):
        R = _random_rotation(rng, step) @ pose.R
        t = pose.t + rng.normal(0.0, 0.003, size=3)
        z = (verts_local @ R.T + t)[:, 2]
        if z.min() > floor + cfg.hover_gap[0] * 0.5:
            return _Pose(R, t)
    return pose


# -- dataset-level synthesis ------------------------------------------------
@dataclass
class DatasetSpec:
    episodes: int = 200
    mode_weights: dict = field(default_factory=lambda: {
        "none": 0.3, "point": 0.3, "line": 0.15, "patch": 0.1, "chained": 0.15})
    object_weights: dict = field(default_factory=lambda: {"stick": 0.6, "box": 0.4})
    object_dims: dict = field(default_factory=lambda: {
        "stick": (0.20, 0.03, 0.06), "box": (0.06, 0.05, 0.08), "lshape": (0.16, 0.03, 0.08)})
    unseen_kinds: tuple = ()
    unseen_episodes: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        scene = SceneConfig.from_dict(d.pop("scene", {}))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DataError(f"unknown dataset spec keys: {sorted(unknown)}")
        if "object_dims" in d:
            d["object_dims"] = {k: tuple(v) for k, v in d["object_dims"].items()}
        if "unseen_kinds" in d:
            d["unseen_kinds"] = tuple(d["unseen_kinds"])
        return cls(scene=scene, **d)


def episode_configs(spec: DatasetSpec, seed: int) -> list[tuple[SceneConfig, np.random.SeedSequence]]:
    rng = np.random.default_rng(seed)
    children = np.random.SeedSequence(seed).spawn(spec.episodes + spec.unseen_episodes)
    modes = list(spec.mode_weights)
    mp = np.array([spec.mode_weights[m] for m in modes], dtype=float)
    kinds = list(spec.object_weights)
    kp = np.array([spec.object_weights[k] for k in kinds], dtype=float)
    out = []
    for i in range(spec.episodes + spec.unseen_episodes):
        unseen = i >= spec.episodes
        mode = modes[rng.choice(len(modes), p=mp / mp.sum())]
        if unseen:
            kind = spec.unseen_kinds[int(rng.integers(len(spec.unseen_kinds)))]
        else:
            kind = kinds[rng.choice(len(kinds), p=kp / kp.sum())]
        cfg = dataclasses.replace(spec.scene, object_kind=kind, mode=mode,
                                  object_dims=tuple(spec.object_dims[kind]), unseen=unseen)
        out.append((cfg, children[i]))
    return out


def generate_dataset(spec: DatasetSpec, seed: int) -> list[Episode]:
    if spec.unseen_episodes and not spec.unseen_kinds:
        raise DataError("unseen episodes requested without unseen object kinds")
    return [generate_episode(cfg, ss, episode_id=f"ep{i:05d}")
            for i, (cfg, ss) in enumerate(episode_configs(spec, seed))]
