"""Two-direction multi-lane freeway engine.

One shared road coordinate x runs from 0 to the road length.  Direction 1
drives toward increasing x, direction 2 toward decreasing x.  Internally
each direction keeps its own driving coordinate s (distance traveled since
the entry point), so both directions run the same update code; s and x
coincide for direction 1 and are mirrored for direction 2.

Per step: accelerations, ballistic advance with stop clamping, re-sort by
position, lane changes on their own cadence, collision audit, crossing
probes and state hooks (these see aligned before/after positions), exit
removal, then arrivals and insertion.  Inflow is a thinned Poisson stream
per lane, so time-varying demand keeps the per-direction random streams
aligned: all draws for one direction come from its own generator, which
makes each direction's evolution independent of the other's configuration.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .idm import IdmParams, idm_acceleration
from .mobil import MobilParams, propose_lane_changes, revalidate_change

_FREE_GAP = 1.0e9
_MIN_ENTRY_SPEED = 1.0


def _entry_speed(v0, gap0, lead_speed, idm):
    """Fastest speed at which a vehicle can join behind `lead_speed` at
    `gap0` without braking harder than the comfortable limit.

    Joining drivers adapt their speed to the room ahead instead of
    matching the leader; rejecting too many candidates at the boundary
    would bunch the admitted ones into artificial convoys.
    """
    gap0 = max(gap0, 1e-6)
    if idm_acceleration(v0, v0, gap0, lead_speed, idm) >= -idm.comfort_decel:
        return v0
    lo, hi = 0.0, v0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if idm_acceleration(mid, v0, gap0, lead_speed, idm) >= -idm.comfort_decel:
            lo = mid
        else:
            hi = mid
    return lo


class CollisionError(RuntimeError):
    """Two vehicles in the same lane overlap; the state is unphysical."""


@dataclass(frozen=True)
class BottleneckSpec:
    """Local driving-style change over a stretch of road.

    The effective time headway inside [s_start, s_start + width) of the
    given direction's driving coordinate is raised by extra_headway.
    """

    direction: int
    s_start: float
    width: float
    extra_headway: float

    def __post_init__(self):
        if self.direction not in (1, 2):
            raise ValueError("direction must be 1 or 2")
        if self.width <= 0.0:
            raise ValueError("width must be positive")
        if self.extra_headway < 0.0:
            raise ValueError("extra_headway must be non-negative")


class InflowProfile:
    """Per-lane demand in vehicles per second, piecewise linear in time."""

    def __init__(self, points):
        if np.isscalar(points):
            points = [(0.0, float(points))]
        ts = np.asarray([p[0] for p in points], dtype=float)
        qs = np.asarray([p[1] for p in points], dtype=float)
        if ts.size == 0 or np.any(np.diff(ts) <= 0.0) or np.any(qs < 0.0):
            raise ValueError("profile needs increasing times and non-negative rates")
        self.ts = ts
        self.qs = qs
        self.q_max = float(qs.max())

    def value(self, t: float) -> float:
        return float(np.interp(t, self.ts, self.qs))


@dataclass
class RoadConfig:
    length: float = 20000.0
    n_lanes: int = 1
    dt: float = 0.25
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    desired_speed_mean: float = 120.0 / 3.6
    desired_speed_std: float = 18.0 / 3.6
    desired_speed_floor: float = 50.0 / 3.6
    inflow1: InflowProfile = field(default_factory=lambda: InflowProfile(1200.0 / 3600.0))
    inflow2: InflowProfile = field(default_factory=lambda: InflowProfile(1200.0 / 3600.0))
    equipped_fraction: float = 0.0
    bottlenecks: tuple = ()

    def __post_init__(self):
        if self.length <= 0.0 or self.dt <= 0.0:
            raise ValueError("length and dt must be positive")
        if self.n_lanes < 1:
            raise ValueError("need at least one lane per direction")
        if not 0.0 <= self.equipped_fraction <= 1.0:
            raise ValueError("equipped_fraction must lie in [0, 1]")
        if self.desired_speed_floor <= 0.0 or self.desired_speed_mean <= 0.0:
            raise ValueError("desired speeds must be positive")


@dataclass(frozen=True)
class Vehicle:
    """Read-only snapshot of one vehicle in shared road coordinates."""

    vid: int
    direction: int
    lane: int
    x: float
    speed: float
    desired_speed: float
    equipped: bool


@dataclass(frozen=True)
class DetectorReading:
    """Aggregated cross-section measurement over a time window.

    flow counts all lanes of the direction; mean_speed is the harmonic mean
    of crossing speeds (space mean), and density = flow / mean_speed.
    """

    x: float
    direction: int
    t_start: float
    t_end: float
    count: int
    flow: float
    mean_speed: float
    density: float


class CrossingProbe:
    """Records every vehicle of one direction crossing a fixed position."""

    def __init__(self, x: float, direction: int, s_pos: float):
        self.x = x
        self.direction = direction
        self.s_pos = s_pos
        self.times = []
        self.vids = []
        self.lanes = []
        self.speeds = []
        self.equipped = []
        self._drained = 0

    def _observe(self, state: "DirectionState", t: float):
        hit = np.flatnonzero((state.prev_s < self.s_pos) & (state.s >= self.s_pos))
        for i in hit:
            self.times.append(t)
            self.vids.append(int(state.vid[i]))
            self.lanes.append(int(state.lane[i]))
            self.speeds.append(float(state.v[i]))
            self.equipped.append(bool(state.equipped[i]))

    def drain(self):
        """New crossings since the previous drain, as (t, vid, lane, v, equipped)."""
        lo = self._drained
        hi = len(self.times)
        self._drained = hi
        return [
            (self.times[i], self.vids[i], self.lanes[i], self.speeds[i], self.equipped[i])
            for i in range(lo, hi)
        ]


def detector_reading(probe: CrossingProbe, t_start: float, t_end: float):
    """Reading over (t_start, t_end], or None if nothing crossed."""
    if t_end <= t_start:
        raise ValueError("empty measurement window")
    times = np.asarray(probe.times, dtype=float)
    sel = (times > t_start) & (times <= t_end)
    n = int(np.count_nonzero(sel))
    if n == 0:
        return None
    speeds = np.maximum(np.asarray(probe.speeds, dtype=float)[sel], 0.01)
    flow = n / (t_end - t_start)
    mean_speed = n / float(np.sum(1.0 / speeds))
    return DetectorReading(
        x=probe.x,
        direction=probe.direction,
        t_start=t_start,
        t_end=t_end,
        count=n,
        flow=flow,
        mean_speed=mean_speed,
        density=flow / mean_speed,
    )


class DirectionState:
    """Struct-of-arrays state for one driving direction.

    Arrays stay sorted by (s, vid) between steps.  prev_s holds each
    vehicle's position before the latest advance, aligned with the current
    arrays, so probes can detect crossings after sorting.
    """

    def __init__(self, direction: int, cfg: RoadConfig, seed: int):
        self.direction = direction
        self.cfg = cfg
        self.rng = np.random.default_rng([seed, direction])
        self.s = np.empty(0, dtype=float)
        self.prev_s = np.empty(0, dtype=float)
        self.v = np.empty(0, dtype=float)
        self.v0 = np.empty(0, dtype=float)
        self.lane = np.empty(0, dtype=np.int64)
        self.vid = np.empty(0, dtype=np.int64)
        self.equipped = np.empty(0, dtype=bool)
        self.ema_speed = np.empty(0, dtype=float)
        self.congested = np.empty(0, dtype=bool)
        self._vid_counter = 0
        self._pending = deque()
        profile = cfg.inflow1 if direction == 1 else cfg.inflow2
        self._profile = profile
        self._next_candidate = self._exp_gap() if profile.q_max > 0.0 else math.inf
        self.inserted = 0
        self.exited = 0
        self.arrivals = 0
        self.blocked_steps = 0
        self.lane_changes = 0
        self._bottlenecks = [b for b in cfg.bottlenecks if b.direction == direction]

    # -- coordinates ---------------------------------------------------

    def x_of(self, s):
        return s if self.direction == 1 else self.cfg.length - s

    def s_of(self, x):
        return x if self.direction == 1 else self.cfg.length - x

    @property
    def x(self):
        return self.x_of(self.s)

    @property
    def n(self) -> int:
        return int(self.s.size)

    # -- dynamics ------------------------------------------------------

    def effective_headway(self) -> np.ndarray:
        headway = np.full(self.n, self.cfg.idm.time_headway)
        for b in self._bottlenecks:
            inside = (self.s >= b.s_start) & (self.s < b.s_start + b.width)
            headway[inside] += b.extra_headway
        return headway

    def _accel(self) -> np.ndarray:
        n = self.n
        if n == 0:
            return np.empty(0, dtype=float)
        gap = np.full(n, _FREE_GAP)
        lead_v = self.v.copy()
        for k in range(self.cfg.n_lanes):
            m = np.flatnonzero(self.lane == k)
            if m.size >= 2:
                gap[m[:-1]] = self.s[m[1:]] - self.s[m[:-1]] - self.cfg.idm.vehicle_length
                lead_v[m[:-1]] = self.v[m[1:]]
        return idm_acceleration(
            self.v, self.v0, gap, lead_v, self.cfg.idm, self.effective_headway()
        )

    def _advance(self, acc: np.ndarray, dt: float):
        self.prev_s = self.s.copy()
        v_before = self.v
        v_after = v_before + acc * dt
        stopping = v_after < 0.0
        travel = np.where(
            stopping,
            v_before * v_before / (2.0 * np.maximum(-acc, 1e-12)),
            0.5 * (v_before + np.maximum(v_after, 0.0)) * dt,
        )
        self.s = self.s + np.maximum(travel, 0.0)
        self.v = np.maximum(v_after, 0.0)

    def _permute(self, perm: np.ndarray):
        self.s = self.s[perm]
        self.prev_s = self.prev_s[perm]
        self.v = self.v[perm]
        self.v0 = self.v0[perm]
        self.lane = self.lane[perm]
        self.vid = self.vid[perm]
        self.equipped = self.equipped[perm]
        self.ema_speed = self.ema_speed[perm]
        self.congested = self.congested[perm]

    def _resort(self):
        perm = np.lexsort((self.vid, self.s))
        if not np.all(perm[:-1] < perm[1:]):
            self._permute(perm)

    def _check_collisions(self, t: float):
        for k in range(self.cfg.n_lanes):
            m = np.flatnonzero(self.lane == k)
            if m.size < 2:
                continue
            gaps = np.diff(self.s[m]) - self.cfg.idm.vehicle_length
            bad = np.flatnonzero(gaps < 0.0)
            if bad.size:
                i = m[bad[0]]
                j = m[bad[0] + 1]
                raise CollisionError(
                    f"t={t:.2f}s direction {self.direction} lane {k}: vehicles "
                    f"{int(self.vid[i])} and {int(self.vid[j])} overlap "
                    f"(gap {gaps[bad[0]]:.3f} m)"
                )

    def _lane_pass(self):
        if self.cfg.n_lanes < 2 or self.n == 0:
            return
        headway = self.effective_headway()
        acc = self._accel()
        idx, target, incentive = propose_lane_changes(
            self.s, self.v, self.v0, self.lane, acc, headway,
            self.cfg.n_lanes, self.cfg.idm, self.cfg.mobil,
        )
        if idx.size == 0:
            return
        order = np.argsort(-incentive, kind="stable")
        for j in order:
            i = int(idx[j])
            tgt = int(target[j])
            if revalidate_change(
                i, tgt, self.s, self.v, self.v0, self.lane, headway,
                self.cfg.idm, self.cfg.mobil,
            ):
                self.lane[i] = tgt
                self.lane_changes += 1

    # -- boundaries ----------------------------------------------------

    def _exp_gap(self) -> float:
        # one candidate stream per direction; per-lane rate times lane count
        return float(
            self.rng.exponential(1.0 / (self._profile.q_max * self.cfg.n_lanes))
        )

    def _collect_arrivals(self, t_new: float):
        if self._profile.q_max <= 0.0:
            return
        while self._next_candidate <= t_new:
            t_arr = self._next_candidate
            accept = self.rng.random() < self._profile.value(t_arr) / self._profile.q_max
            if accept:
                v0 = max(
                    self.cfg.desired_speed_floor,
                    float(self.rng.normal(self.cfg.desired_speed_mean, self.cfg.desired_speed_std)),
                )
                equipped = bool(self.rng.random() < self.cfg.equipped_fraction)
                self._pending.append((v0, equipped))
                self.arrivals += 1
            self._next_candidate = t_arr + self._exp_gap()

    def _try_insert(self):
        """Feed waiting arrivals in, entering the lane with the most room.

        Drivers joining the road pick whichever lane offers the largest
        entry gap, so a slow vehicle near the boundary gates only its own
        lane instead of the whole inflow.  At most one vehicle enters per
        lane per step and the queue stays first-come first-served.
        """
        if not self._pending:
            return
        inserted_rows = []
        open_lanes = {}
        for k in range(self.cfg.n_lanes):
            m = np.flatnonzero(self.lane == k)
            if m.size:
                tail = int(m[0])
                open_lanes[k] = (
                    float(self.s[tail]) - self.cfg.idm.vehicle_length,
                    float(self.v[tail]),
                )
            else:
                open_lanes[k] = (_FREE_GAP, -1.0)
        while self._pending and open_lanes:
            v0, equipped = self._pending[0]
            best = max(open_lanes, key=lambda k: open_lanes[k][0])
            gap0, lead_speed = open_lanes[best]
            if lead_speed < 0.0:
                v_ins = v0
            else:
                v_ins = _entry_speed(v0, gap0, lead_speed, self.cfg.idm)
            if gap0 >= self.cfg.idm.min_gap and v_ins >= _MIN_ENTRY_SPEED:
                self._pending.popleft()
                vid = self._vid_counter * 2 + (self.direction - 1)
                self._vid_counter += 1
                inserted_rows.append((vid, best, v_ins, v0, equipped))
                del open_lanes[best]
            else:
                break
        if self._pending:
            self.blocked_steps += 1
        if not inserted_rows:
            return
        cnt = len(inserted_rows)
        self.s = np.concatenate((np.zeros(cnt), self.s))
        self.prev_s = np.concatenate((np.zeros(cnt), self.prev_s))
        self.v = np.concatenate(([r[2] for r in inserted_rows], self.v))
        self.v0 = np.concatenate(([r[3] for r in inserted_rows], self.v0))
        self.lane = np.concatenate(
            (np.asarray([r[1] for r in inserted_rows], dtype=np.int64), self.lane)
        )
        self.vid = np.concatenate(
            (np.asarray([r[0] for r in inserted_rows], dtype=np.int64), self.vid)
        )
        self.equipped = np.concatenate(
            (np.asarray([r[4] for r in inserted_rows], dtype=bool), self.equipped)
        )
        self.ema_speed = np.concatenate(([r[2] for r in inserted_rows], self.ema_speed))
        self.congested = np.concatenate((np.zeros(cnt, dtype=bool), self.congested))
        self.inserted += cnt
        self._resort()

    def _remove_exited(self):
        gone = self.s > self.cfg.length
        if not np.any(gone):
            return
        keep = ~gone
        self.exited += int(np.count_nonzero(gone))
        self._permute(np.flatnonzero(keep))

    def seed_vehicle(self, x, lane, speed, desired_speed, equipped=False) -> int:
        """Place a vehicle directly; for tests and hand-built scenes."""
        s = self.s_of(x)
        if not 0.0 <= s <= self.cfg.length:
            raise ValueError("position outside the road")
        vid = self._vid_counter * 2 + (self.direction - 1)
        self._vid_counter += 1
        self.s = np.append(self.s, s)
        self.prev_s = np.append(self.prev_s, s)
        self.v = np.append(self.v, float(speed))
        self.v0 = np.append(self.v0, float(desired_speed))
        self.lane = np.append(self.lane, np.int64(lane))
        self.vid = np.append(self.vid, np.int64(vid))
        self.equipped = np.append(self.equipped, bool(equipped))
        self.ema_speed = np.append(self.ema_speed, float(speed))
        self.congested = np.append(self.congested, False)
        self.inserted += 1
        self._resort()
        return vid


class TrafficSim:
    """Steps both directions and hosts probes and per-step state hooks.

    State hooks run after motion and lane changes but before exit removal
    and insertion, so prev_s/s are aligned for every vehicle the hook sees.
    """

    def __init__(self, cfg: RoadConfig, seed: int):
        self.cfg = cfg
        self.t = 0.0
        self.step_count = 0
        self.directions = {1: DirectionState(1, cfg, seed), 2: DirectionState(2, cfg, seed)}
        self.probes = []
        self.state_hooks = []
        self._mobil_every = max(1, round(cfg.mobil.interval / cfg.dt))

    def state(self, direction: int) -> DirectionState:
        return self.directions[direction]

    def add_probe(self, x: float, direction: int) -> CrossingProbe:
        if not 0.0 < x < self.cfg.length:
            raise ValueError("probe must sit strictly inside the road")
        d = self.directions[direction]
        probe = CrossingProbe(x, direction, d.s_of(x))
        self.probes.append(probe)
        return probe

    def step(self):
        dt = self.cfg.dt
        t_new = self.t + dt
        for d in self.directions.values():
            if d.n:
                acc = d._accel()
                d._advance(acc, dt)
                d._resort()
            else:
                d.prev_s = d.s.copy()
        if self.step_count % self._mobil_every == 0:
            for d in self.directions.values():
                d._lane_pass()
        for d in self.directions.values():
            d._check_collisions(t_new)
        for p in self.probes:
            p._observe(self.directions[p.direction], t_new)
        for hook in self.state_hooks:
            hook(self, t_new)
        for d in self.directions.values():
            d._remove_exited()
            d._collect_arrivals(t_new)
            d._try_insert()
        self.t = t_new
        self.step_count += 1

    def run(self, duration: float):
        steps = max(0, round(duration / self.cfg.dt))
        for _ in range(steps):
            self.step()

    def vehicles(self, direction=None):
        dirs = [direction] if direction else [1, 2]
        out = []
        for k in dirs:
            d = self.directions[k]
            xs = d.x
            for i in range(d.n):
                out.append(
                    Vehicle(
                        vid=int(d.vid[i]),
                        direction=k,
                        lane=int(d.lane[i]),
                        x=float(xs[i]),
                        speed=float(d.v[i]),
                        desired_speed=float(d.v0[i]),
                        equipped=bool(d.equipped[i]),
                    )
                )
        return out
