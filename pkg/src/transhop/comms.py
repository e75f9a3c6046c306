"""Message layer riding on the traffic engine.

Messages are created by equipped direction-1 vehicles (crossing a landmark,
or detecting a jam front), hop to an opposite-direction relay within range,
travel upstream inside the relay, and are delivered to the first equipped
direction-1 vehicle found in the destination region: positions at least
r_min behind the message's own source position.

The engine runs synchronously after each traffic step.  Events that need
the before/after position alignment (landmark crossings, front detection)
are gathered during the step via probes and state hooks; hop geometry is
evaluated on the settled end-of-step state.  Hops are range-inclusive:
a hop happens in a step iff the longitudinal separation is <= r.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .traffic.road import CrossingProbe, TrafficSim

KIND_LANDMARK = "LandmarkTest"
KIND_UPSTREAM = "UpstreamJamFront"
KIND_DOWNSTREAM = "DownstreamJamFront"


@dataclass(frozen=True)
class Message:
    id: int
    kind: str
    source_vid: int
    source_position: float
    creation_time: float
    front_position: float = math.nan
    front_time: float = math.nan


@dataclass(frozen=True)
class TransmissionRecord:
    message_id: int
    tau1: float
    tau2: float
    tau3: float
    relay_id: int
    receiver_id: int
    delivery_position: float


@dataclass(frozen=True)
class Delivery:
    """One reception event; the first one per message yields the record."""

    message_id: int
    receiver_vid: int
    time: float
    position: float


@dataclass
class JamThresholds:
    """Speed thresholds and smoothing for on-board front detection."""

    v_congested: float = 30.0 / 3.6
    v_free: float = 60.0 / 3.6
    smoothing_tau: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.v_congested < self.v_free:
            raise ValueError("need 0 < v_congested < v_free")
        if self.smoothing_tau <= 0.0:
            raise ValueError("smoothing_tau must be positive")


@dataclass
class CommsConfig:
    broadcast_range: float = 200.0
    min_distance: float = 1000.0
    landmark_x: float | None = None
    broadcast_interval: float = 0.0
    track_all_relays: bool = False
    track_all_deliveries: bool = False
    jam_detection: bool = False
    jam: JamThresholds = field(default_factory=JamThresholds)

    def __post_init__(self):
        if self.broadcast_range <= 0.0 or self.min_distance <= 0.0:
            raise ValueError("broadcast_range and min_distance must be positive")
        if self.broadcast_interval < 0.0:
            raise ValueError("broadcast_interval must be non-negative")


def update_jam_state(state, dt: float, thresholds: JamThresholds):
    """Advance per-vehicle smoothed speeds and flip congestion flags.

    Exponential smoothing uses the exact discrete step for a first-order
    filter, so the smoothed speed is independent of dt for a given history.
    Returns (upstream_idx, downstream_idx): indices of vehicles whose flag
    changed this step, regardless of equipment; the caller filters.
    """
    if state.n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    w = -math.expm1(-dt / thresholds.smoothing_tau)
    state.ema_speed += w * (state.v - state.ema_speed)
    now_congested = (~state.congested) & (state.ema_speed < thresholds.v_congested)
    now_free = state.congested & (state.ema_speed > thresholds.v_free)
    state.congested[now_congested] = True
    state.congested[now_free] = False
    return np.flatnonzero(now_congested), np.flatnonzero(now_free)


def _slot_in(start: float, t_prev: float, t_now: float, interval: float) -> bool:
    # Is there a broadcast slot start + k*interval inside (t_prev, t_now]?
    if interval <= 0.0:
        return True
    k = math.floor((t_now - start) / interval)
    return k >= 0 and start + k * interval > t_prev


class _Track:
    """Progress of one relay carrying one message."""

    __slots__ = ("relay_vid", "pickup_time", "tau1", "tau2", "tau3",
                 "receiver_vid", "delivery_position", "dead")

    def __init__(self, relay_vid: int, pickup_time: float, tau1: float):
        self.relay_vid = relay_vid
        self.pickup_time = pickup_time
        self.tau1 = tau1
        self.tau2 = math.nan
        self.tau3 = math.nan
        self.receiver_vid = -1
        self.delivery_position = math.nan
        self.dead = False

    @property
    def available(self) -> bool:
        return not math.isnan(self.tau2)

    @property
    def delivered(self) -> bool:
        return not math.isnan(self.tau3)


class _ActiveMessage:
    __slots__ = ("msg", "tracks", "relay_vids", "delivered_to", "source_alive")

    def __init__(self, msg: Message):
        self.msg = msg
        self.tracks = []
        self.relay_vids = set()
        self.delivered_to = set()
        self.source_alive = True


class _VidIndex:
    """Sorted-vid lookup into one direction's arrays, built per step."""

    def __init__(self, state):
        self.order = np.argsort(state.vid)
        self.sorted_vids = state.vid[self.order]

    def find(self, vid: int) -> int:
        j = int(np.searchsorted(self.sorted_vids, vid))
        if j < self.sorted_vids.size and self.sorted_vids[j] == vid:
            return int(self.order[j])
        return -1


class CommsEngine:
    """Creates, hops, and delivers messages on top of a TrafficSim.

    Call after_step(sim) once after every sim.step().  Records accumulate
    in .records (first delivery per message), .deliveries (every reception
    when track_all_deliveries is on), .events (creations, hops,
    availability, deliveries), and the per-stage sample lists.
    """

    def __init__(self, sim: TrafficSim, cfg: CommsConfig):
        if cfg.landmark_x is not None and not 0.0 < cfg.landmark_x < sim.cfg.length:
            raise ValueError("landmark must sit strictly inside the road")
        self.cfg = cfg
        self.generation_enabled = True
        self.messages: dict[int, Message] = {}
        self.records: list[TransmissionRecord] = []
        self.deliveries: list[Delivery] = []
        self.events: list[tuple] = []
        self.tau1_samples: list[float] = []
        self.tau2_samples: list[float] = []
        self.tau3_samples: list[float] = []
        self.created = 0
        self.delivered = 0
        self.dead_source_exit = 0
        self.dead_relay_exit = 0
        self._active: dict[int, _ActiveMessage] = {}
        self._finished_tracks: list[tuple] = []
        self._next_id = 0
        self._last_t = sim.t
        self._pending_fronts: list[tuple] = []
        self._landmark_probe: CrossingProbe | None = None
        if cfg.landmark_x is not None:
            self._landmark_probe = sim.add_probe(cfg.landmark_x, direction=1)
        if cfg.jam_detection:
            sim.state_hooks.append(self._jam_hook)

    @property
    def active_count(self) -> int:
        return len(self._active)

    # -- message creation ----------------------------------------------

    def _new_message(self, kind, source_vid, position, t, front_position=math.nan,
                     front_time=math.nan):
        msg = Message(
            id=self._next_id,
            kind=kind,
            source_vid=source_vid,
            source_position=position,
            creation_time=t,
            front_position=front_position,
            front_time=front_time,
        )
        self._next_id += 1
        self.messages[msg.id] = msg
        self._active[msg.id] = _ActiveMessage(msg)
        self.created += 1
        self.events.append((t, "created", msg.id, position, source_vid))
        return msg

    def _jam_hook(self, sim: TrafficSim, t: float):
        state = sim.state(1)
        up, down = update_jam_state(state, sim.cfg.dt, self.cfg.jam)
        if not self.generation_enabled:
            return
        xs = state.x
        for kind, idx in ((KIND_UPSTREAM, up), (KIND_DOWNSTREAM, down)):
            for i in idx:
                if state.equipped[i]:
                    self._pending_fronts.append(
                        (kind, int(state.vid[i]), float(xs[i]), t)
                    )

    # -- per-step processing -------------------------------------------

    def after_step(self, sim: TrafficSim):
        t_now = sim.t
        t_prev = self._last_t
        self._last_t = t_now

        if self._landmark_probe is not None:
            for t, vid, _lane, _v, equipped in self._landmark_probe.drain():
                if equipped and self.generation_enabled:
                    self._new_message(KIND_LANDMARK, vid, self._landmark_probe.x, t)
        for kind, vid, x, t in self._pending_fronts:
            self._new_message(kind, vid, x, t, front_position=x, front_time=t)
        self._pending_fronts.clear()

        if not self._active:
            return
        d1 = sim.state(1)
        d2 = sim.state(2)
        idx1 = _VidIndex(d1)
        idx2 = _VidIndex(d2)
        x1 = d1.x
        x2 = d2.x

        e1 = np.flatnonzero(d1.equipped)
        xe1 = x1[e1]
        ve1 = d1.vid[e1]
        e2 = np.flatnonzero(d2.equipped)
        xe2 = x2[e2][::-1]
        ve2 = d2.vid[e2][::-1]

        r = self.cfg.broadcast_range
        interval = self.cfg.broadcast_interval
        finished = []
        for mid, am in self._active.items():
            msg = am.msg

            # stage 1: source broadcasts, looking for (more) relays
            wants_relay = am.source_alive and (
                not am.tracks or self.cfg.track_all_relays
            )
            if wants_relay:
                si = idx1.find(msg.source_vid)
                if si < 0:
                    am.source_alive = False
                else:
                    xs = float(x1[si])
                    if _slot_in(msg.creation_time, t_prev, t_now, interval):
                        lo = int(np.searchsorted(xe2, xs - r, side="left"))
                        hi = int(np.searchsorted(xe2, xs + r, side="right"))
                        cand = [
                            j for j in range(lo, hi)
                            if int(ve2[j]) not in am.relay_vids
                        ]
                        if cand:
                            if not self.cfg.track_all_relays:
                                cand = [min(cand, key=lambda j: abs(float(xe2[j]) - xs))]
                            for j in cand:
                                relay_vid = int(ve2[j])
                                tau1 = t_now - msg.creation_time
                                am.tracks.append(_Track(relay_vid, t_now, tau1))
                                am.relay_vids.add(relay_vid)
                                self.events.append(
                                    (t_now, "hop1", mid, float(xe2[j]), relay_vid)
                                )
                                if len(am.tracks) == 1:
                                    self.tau1_samples.append(tau1)

            # stages 2 and 3 for every live track
            avail_bound = msg.source_position - self.cfg.min_distance
            for ti, tr in enumerate(am.tracks):
                if tr.dead:
                    continue
                if tr.delivered and not self.cfg.track_all_deliveries:
                    continue
                ri = idx2.find(tr.relay_vid)
                if ri < 0:
                    tr.dead = True
                    if ti == 0 and not tr.delivered:
                        self.dead_relay_exit += 1
                    continue
                xr = float(x2[ri])
                if not tr.available and xr <= avail_bound + r:
                    tr.tau2 = t_now - msg.creation_time
                    self.events.append((t_now, "available", mid, xr, tr.relay_vid))
                    if ti == 0:
                        self.tau2_samples.append(tr.tau2)
                if not tr.available:
                    continue
                if not _slot_in(tr.pickup_time, t_prev, t_now, interval):
                    continue
                hi_bound = min(xr + r, avail_bound)
                lo = int(np.searchsorted(xe1, xr - r, side="left"))
                hi = int(np.searchsorted(xe1, hi_bound, side="right"))
                receivers = [
                    j for j in range(hi - 1, lo - 1, -1)
                    if int(ve1[j]) not in am.delivered_to
                ]
                if not receivers:
                    continue
                if not self.cfg.track_all_deliveries:
                    receivers = receivers[:1]
                first = receivers[0]
                for j in receivers:
                    rec_vid = int(ve1[j])
                    pos = float(xe1[j])
                    assert pos <= avail_bound + 1e-9, (
                        "delivery beyond the destination region"
                    )
                    am.delivered_to.add(rec_vid)
                    self.deliveries.append(Delivery(mid, rec_vid, t_now, pos))
                    self.events.append((t_now, "delivery", mid, pos, rec_vid))
                    if j == first and not tr.delivered:
                        tr.tau3 = t_now - msg.creation_time
                        tr.receiver_vid = rec_vid
                        tr.delivery_position = pos
                        if ti == 0:
                            self.tau3_samples.append(tr.tau3)
                            self.records.append(
                                TransmissionRecord(
                                    message_id=mid,
                                    tau1=tr.tau1,
                                    tau2=tr.tau2,
                                    tau3=tr.tau3,
                                    relay_id=tr.relay_vid,
                                    receiver_id=rec_vid,
                                    delivery_position=pos,
                                )
                            )
                            self.delivered += 1

            # retire the message once nothing more can happen to it
            if am.source_alive and (not am.tracks or self.cfg.track_all_relays):
                continue
            if self.cfg.track_all_deliveries:
                settled = all(tr.dead for tr in am.tracks)
            else:
                settled = all(tr.dead or tr.delivered for tr in am.tracks)
            if not settled:
                continue
            if not am.tracks:
                self.dead_source_exit += 1
            self._finished_tracks.extend(
                (mid, k, tr.tau1, tr.tau2, tr.tau3)
                for k, tr in enumerate(am.tracks)
            )
            finished.append(mid)
        for mid in finished:
            del self._active[mid]

    # -- exports ---------------------------------------------------------

    def record_rows(self):
        """Join of records with their messages, for CSV export."""
        rows = []
        for rec in self.records:
            msg = self.messages[rec.message_id]
            rows.append(
                {
                    "message_id": rec.message_id,
                    "kind": msg.kind,
                    "creation_time": msg.creation_time,
                    "source_x": msg.source_position,
                    "tau1": rec.tau1,
                    "tau2": rec.tau2,
                    "tau3": rec.tau3,
                    "delivery_x": rec.delivery_position,
                }
            )
        return rows

    def track_table(self):
        """(message_id, track_index, tau1, tau2, tau3) for every track."""
        out = list(self._finished_tracks)
        for mid, am in self._active.items():
            for k, tr in enumerate(am.tracks):
                out.append((mid, k, tr.tau1, tr.tau2, tr.tau3))
        return out


@dataclass(frozen=True)
class AgeStats:
    n: int
    mean_age: float
    ages: np.ndarray


def message_age_at_distance(messages, deliveries, trajectories, distance: float) -> AgeStats:
    """Age of the freshest jam message when a vehicle is `distance` before the front.

    For each receiving vehicle, the active message at any time is the most
    recently delivered one.  The vehicle "is at distance d" when its
    position first crosses front_position - d while that message is active;
    the age is then crossing time minus the front's detection time.  One
    observation per vehicle.

    Args:
        messages: id -> Message (jam kinds carry front position/time).
        deliveries: iterable of Delivery.
        trajectories: receiver vid -> (times array, positions array).
        distance: how far before the front the age is evaluated (m).

    Raises:
        ValueError: no delivered jam messages.
    """
    by_receiver: dict[int, list[Delivery]] = {}
    for d in deliveries:
        msg = messages[d.message_id]
        if math.isnan(msg.front_position):
            continue
        by_receiver.setdefault(d.receiver_vid, []).append(d)
    if not by_receiver:
        raise ValueError("no delivered front messages to evaluate")

    ages = []
    for vid, dels in by_receiver.items():
        traj = trajectories.get(vid)
        if traj is None:
            continue
        ts, xs = traj
        dels.sort(key=lambda d: d.time)
        age = None
        for k, d in enumerate(dels):
            msg = messages[d.message_id]
            target = msg.front_position - distance
            t_hi = dels[k + 1].time if k + 1 < len(dels) else math.inf
            sel = np.flatnonzero((ts >= d.time) & (ts < t_hi) & (xs >= target))
            if sel.size == 0:
                continue
            j = int(sel[0])
            if j > 0 and xs[j - 1] < target and ts[j - 1] >= d.time:
                frac = (target - xs[j - 1]) / (xs[j] - xs[j - 1])
                t_cross = ts[j - 1] + frac * (ts[j] - ts[j - 1])
            else:
                t_cross = float(ts[j])
            age = t_cross - msg.front_time
            break
        if age is not None:
            ages.append(age)
    arr = np.asarray(ages, dtype=float)
    if arr.size == 0:
        raise ValueError("no vehicle reached the evaluation distance with a message")
    return AgeStats(n=int(arr.size), mean_age=float(arr.mean()), ages=arr)
