"""Fixed, seeded sequences used by the harness checks."""
from __future__ import annotations

import numpy as np

from .synthworld import Actor, Box, SequenceSpec, WorldSpec, actors_at, room

SENSOR_Z = 1.2


def convoy_sequence(num_frames: int = 33):
    """Ego drives down a long hall boxed in by trucks that keep pace with it.

    Lead and tail trucks face the sensor squarely and two more flank it, so
    matching raw scans mostly sees objects that stay put relative to the sensor.
    """
    planes, lo, hi = room(34.0, 12.0, 4.0)
    pillars = tuple(
        Box([x - 0.3, y - 0.3, 0.0], [x + 0.3, y + 0.3, 4.0])
        for x, y in ((-9.0, 4.5), (-3.0, -4.5), (3.0, 4.5), (9.0, -4.5))
    )
    v = np.array([1.0, 0.0, 0.0])
    truck = np.array([2.25, 1.1, 1.4])
    lorry = np.array([2.25, 1.1, 1.0])
    actors = (
        Actor([-8.0, 2.2, 1.4], truck, v),
        Actor([-8.0, -2.2, 1.4], truck, v),
        Actor([-2.5, 0.0, 1.0], lorry, v),
        Actor([-13.5, 0.0, 1.0], lorry, v),
    )
    world = WorldSpec(planes, pillars, actors, lo, hi)
    seq = SequenceSpec(((-8.0, 0.0, SENSOR_Z), (8.0, 0.0, SENSOR_Z)), speed=1.0, interval=0.5,
                       num_frames=num_frames)
    return world, seq


def mixed_motion_sequence(num_frames: int = 17):
    """Slow ego pass between two parked bins and a lane of cars driving at 1 m/s.

    Parked objects sit on one side of the ego path and traffic on the other,
    so no track ever passes through or in front of a parked object.
    """
    planes, lo, hi = room(24.0, 14.0, 4.0)
    car = np.array([2.0, 0.9, 0.8])
    bin_ = np.array([0.6, 0.6, 0.6])
    v = [1.0, 0.0, 0.0]
    actors = (
        Actor([-3.0, 4.5, 0.6], bin_),                 # parked
        Actor([3.0, 4.5, 0.6], bin_),                  # parked
        Actor([-8.0, -3.0, 0.8], car, velocity=v),     # driving
        Actor([0.0, -3.0, 0.8], car, velocity=v),      # driving
    )
    world = WorldSpec(planes, (), actors, lo, hi)
    seq = SequenceSpec(((-2.0, 0.0, SENSOR_Z), (2.0, 0.0, SENSOR_Z)), speed=0.5, interval=0.5,
                       num_frames=num_frames)
    return world, seq


def match_tracks_to_actors(tracks, world: WorldSpec, seq: SequenceSpec, gate: float = 2.0) -> dict:
    """Assign each labelled track to the actor whose centre it follows most closely.

    Returns {actor index: [tracks]}; tracks farther than `gate` beyond the
    actor's footprint are left unassigned (spurious detections).
    """
    out = {i: [] for i in range(len(world.actors))}
    for tr in tracks:
        if tr.label is None:
            continue
        best, best_d = None, np.inf
        for i, a in enumerate(world.actors):
            d = np.mean([np.linalg.norm(c[:2] - actors_at(world, seq, f * seq.interval)[i].center[:2])
                         for f, c in zip(tr.frames, tr.centroids)])
            if d < best_d:
                best, best_d = i, d
        if best is not None and best_d <= gate + np.linalg.norm(world.actors[best].half_extents[:2]):
            out[best].append(tr)
    return out


def expected_labels(world: WorldSpec, seq: SequenceSpec, k: int, eps: float) -> dict:
    """Ground-truth label for every actor whose k-frame displacement is unambiguous.

    Zero-velocity actors are movable; actors covering at least 2*eps over a
    window are moving. Anything in between is not gated.
    """
    out = {}
    window = (k - 1) * seq.interval
    scheduled = {idx for idx, _, _ in seq.actor_schedule}
    for i, a in enumerate(world.actors):
        if not np.any(a.velocity) or (a.movable and i not in scheduled):
            out[i] = "movable"
        elif not a.movable and np.linalg.norm(a.velocity) * window >= 2 * eps:
            out[i] = "moving"
    return out
