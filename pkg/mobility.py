"""
UE placements and trajectories inside a square cell centred on the BS.

Design choices:
- Coordinates are metres with the BS at bs_position; the cell spans bs +/- side/2
- SMS trajectories are integrated on sub-steps and sampled once per sample period
- Output positions are snapped to the grid, deduplicated and crossing-limited
"""

from collections import Counter
from dataclasses import dataclass
from typing import Tuple
import logging
import math

import numpy as np

from channel import D_MIN
from errors import DomainError
from strings import Strings as S

# Integration sub-steps per sample period
SUBSTEPS = 4


@dataclass(frozen=True)
class CellGeometry:
    side: float = 500.0
    grid_spacing: float = 5.0
    bs_position: Tuple[float, float] = (0.0, 0.0)
    min_dist: float = D_MIN

    def __post_init__(self):
        if self.side <= 0 or self.grid_spacing <= 0:
            raise DomainError(S.GEOMETRY_INVALID.format(side=self.side, spacing=self.grid_spacing))

    @property
    def half(self) -> float:
        return self.side / 2.0

    @property
    def max_index(self) -> int:
        return int(math.floor(self.half / self.grid_spacing + 1e-9))

    def snap_index(self, points: np.ndarray) -> np.ndarray:
        """Integer grid index of the nearest node, clipped to the cell."""
        rel = (np.asarray(points, dtype=float) - np.asarray(self.bs_position)) / self.grid_spacing
        return np.clip(np.rint(rel), -self.max_index, self.max_index).astype(int)

    def node_position(self, index: np.ndarray) -> np.ndarray:
        return np.asarray(self.bs_position) + np.asarray(index, dtype=float) * self.grid_spacing

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points, dtype=float) - np.asarray(self.bs_position), axis=-1)

    def angle(self, points: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, dtype=float) - np.asarray(self.bs_position)
        return np.arctan2(rel[..., 1], rel[..., 0])

    def grid_nodes(self) -> np.ndarray:
        """All grid nodes at least min_dist away from the BS."""
        k = np.arange(-self.max_index, self.max_index + 1)
        idx = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1).reshape(-1, 2)
        nodes = self.node_position(idx)
        return nodes[self.distance(nodes) >= self.min_dist]


@dataclass(frozen=True)
class SmsParams:
    sim_duration: float = 900.0
    sample_period: float = 4.0
    max_speed: float = 1.5
    accel_duration: Tuple[float, float] = (4.0, 20.0)
    decel_duration: Tuple[float, float] = (4.0, 20.0)
    pause_duration: Tuple[float, float] = (0.0, 8.0)
    steady_min_fraction: float = 0.5
    direction_hold_prob: float = 0.95
    turn_max: float = math.pi / 6
    max_crossings: int = 3

    def __post_init__(self):
        durations = (self.sim_duration, *self.accel_duration, *self.decel_duration, *self.pause_duration)
        if min(durations) < 0 or self.sample_period <= 0:
            raise DomainError(S.SMS_INVALID.format(what="durations"))
        if self.max_speed < 0:
            raise DomainError(S.SMS_INVALID.format(what="max_speed"))
        if not 0.0 <= self.direction_hold_prob <= 1.0:
            raise DomainError(S.SMS_INVALID.format(what="direction_hold_prob"))
        if self.max_crossings < 1:
            raise DomainError(S.SMS_INVALID.format(what="max_crossings"))


@dataclass(frozen=True)
class Trajectory:
    positions: np.ndarray
    frame_times: np.ndarray
    seed: int

    def __len__(self) -> int:
        return int(self.positions.shape[0])


# ----------------- One-shot placements -----------------

def gen_uniform_points(geom: CellGeometry, n: int, seed: int) -> np.ndarray:
    """n i.i.d. uniform positions in the cell, none closer than min_dist to the BS."""
    if n < 1:
        raise DomainError(S.COUNT_INVALID.format(n=n))
    rng = np.random.default_rng(seed)
    lo = np.asarray(geom.bs_position) - geom.half
    out = np.empty((0, 2))
    while out.shape[0] < n:
        batch = lo + geom.side * rng.random((n - out.shape[0], 2))
        out = np.vstack([out, batch[geom.distance(batch) >= geom.min_dist]])
    return out[:n]


# ----------------- SMS trajectories -----------------

def _new_cycle(rng: np.random.Generator, params: SmsParams):
    """Target speed, heading and the four state durations of one cycle."""
    speed = rng.uniform(0.0, params.max_speed)
    heading = rng.uniform(-math.pi, math.pi)
    phases = [
        ("accel", rng.uniform(*params.accel_duration)),
        ("steady", rng.uniform(params.steady_min_fraction * params.sim_duration, params.sim_duration)),
        ("decel", rng.uniform(*params.decel_duration)),
        ("pause", rng.uniform(*params.pause_duration)),
    ]
    return speed, heading, phases


def _phase_speed(name: str, elapsed: float, duration: float, target: float) -> float:
    if name == "steady":
        return target
    if name == "pause" or duration <= 0.0:
        return 0.0
    frac = min(elapsed / duration, 1.0)
    return target * frac if name == "accel" else target * (1.0 - frac)


def _reflect(pos: np.ndarray, heading: float, lo: np.ndarray, hi: np.ndarray):
    x, y = pos
    if x < lo[0]:
        x, heading = 2 * lo[0] - x, math.pi - heading
    elif x > hi[0]:
        x, heading = 2 * hi[0] - x, math.pi - heading
    if y < lo[1]:
        y, heading = 2 * lo[1] - y, -heading
    elif y > hi[1]:
        y, heading = 2 * hi[1] - y, -heading
    return np.array([x, y]), heading


def _dedupe_and_limit(index: np.ndarray, max_crossings: int) -> np.ndarray:
    """Rows to keep: drop immediate repeats, stop before a node's extra crossing."""
    keep = [0] + [i for i in range(1, len(index)) if not np.array_equal(index[i], index[i - 1])]
    visits: Counter = Counter()
    rows = []
    for i in keep:
        node = (int(index[i, 0]), int(index[i, 1]))
        visits[node] += 1
        if visits[node] > max_crossings:
            break
        rows.append(i)
    return np.asarray(rows, dtype=int)


def gen_sms_trajectory(geom: CellGeometry, params: SmsParams, seed: int) -> Trajectory:
    """Semi-Markov smooth trajectory snapped to the grid."""
    rng = np.random.default_rng(seed)
    nodes = geom.grid_nodes()
    pos = nodes[rng.integers(len(nodes))].copy()
    lo = np.asarray(geom.bs_position) - geom.half
    hi = np.asarray(geom.bs_position) + geom.half

    n_raw = max(int(params.sim_duration / params.sample_period), 1)
    dt = params.sample_period / SUBSTEPS
    raw = np.empty((n_raw, 2))

    target, heading, phases = _new_cycle(rng, params)
    phase_idx, elapsed = 0, 0.0
    for k in range(n_raw):
        raw[k] = pos
        for sub in range(SUBSTEPS):
            name, duration = phases[phase_idx]
            # 1. Steady state keeps its heading with high probability per sample
            if sub == 0 and name == "steady" and rng.random() >= params.direction_hold_prob:
                heading += rng.uniform(-params.turn_max, params.turn_max)
            # 2. Move with the speed at the middle of the sub-step
            speed = _phase_speed(name, elapsed + dt / 2, duration, target)
            step = speed * dt * np.array([math.cos(heading), math.sin(heading)])
            candidate, new_heading = _reflect(pos + step, heading, lo, hi)
            if geom.distance(geom.node_position(geom.snap_index(candidate))) < geom.min_dist:
                heading += math.pi
            else:
                pos, heading = candidate, new_heading
            # 3. Advance the state machine
            elapsed += dt
            while elapsed >= phases[phase_idx][1]:
                elapsed -= phases[phase_idx][1]
                phase_idx += 1
                if phase_idx == len(phases):
                    if sum(d for _, d in phases) <= 0.0:
                        elapsed = 0.0
                        phase_idx = len(phases) - 1
                        break
                    target, heading, phases = _new_cycle(rng, params)
                    phase_idx = 0

    index = geom.snap_index(raw)
    rows = _dedupe_and_limit(index, params.max_crossings)
    logging.debug(f"SMS seed={seed}: {n_raw} raw frames, {len(rows)} kept")
    return Trajectory(
        positions=geom.node_position(index[rows]),
        frame_times=rows * params.sample_period,
        seed=seed,
    )


# ----------------- Circular trajectories -----------------

def gen_circular_trajectory(radius: float, n_frames: int, geom: CellGeometry,
                            sample_period: float = 4.0, phase: float = 0.0) -> Trajectory:
    """n_frames equally spaced points on a circle around the BS."""
    if not geom.min_dist <= radius <= geom.half:
        raise DomainError(S.RADIUS_OUT_OF_RANGE.format(radius=radius, lo=geom.min_dist, hi=geom.half))
    if n_frames < 1:
        raise DomainError(S.COUNT_INVALID.format(n=n_frames))
    angles = phase + 2.0 * math.pi * np.arange(n_frames) / n_frames
    positions = np.asarray(geom.bs_position) + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Trajectory(positions=positions, frame_times=np.arange(n_frames) * sample_period, seed=0)


def geometry_from_config(cfg) -> CellGeometry:
    return CellGeometry(side=cfg.cell.side_m, grid_spacing=cfg.cell.grid_spacing_m,
                        min_dist=cfg.pathloss.min_dist_m)


def sms_from_config(cfg) -> SmsParams:
    sms = cfg.sms
    return SmsParams(
        sim_duration=sms.duration_s,
        sample_period=sms.sample_period_s,
        max_speed=sms.max_speed_mps,
        accel_duration=tuple(sms.accel_s),
        decel_duration=tuple(sms.decel_s),
        pause_duration=tuple(sms.pause_s),
        steady_min_fraction=sms.steady_min_fraction,
        direction_hold_prob=sms.direction_hold_prob,
        turn_max=sms.turn_max_rad,
        max_crossings=sms.max_crossings,
    )
