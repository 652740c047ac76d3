"""Broken geodesics: Gaussian increments rolled through the frame bundle.

A path is determined by its anti-developed increments (Delta_1 b, ...,
Delta_n b) in frame coordinates: each interval is a geodesic segment of
initial velocity frame * increment / Delta, and the frame rides along by
parallel transport.  Sampling is counter-based (Philox keyed by master seed
and a fixed-size chunk index) so that sample i's increments are a function of
(seed, i) alone -- independent of batch size, ordering, or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .geom import CurvatureModel, FramePoint
from .jacobi import Partition

CHUNK = 4096   # fixed RNG block size; do not change (breaks reproducibility)


# ---------------------------------------------------------------------------
# Counter-based sampling
# ---------------------------------------------------------------------------

def sample_increments(model: CurvatureModel, partition: Partition, count: int,
                      seed: int, start: int = 0) -> np.ndarray:
    """Draw increments for samples [start, start+count); shape (count, n, d).

    Each interval increment is N(0, (1/n) I_d).  Sample index i always maps to
    Philox key (seed, i // CHUNK), row i % CHUNK, so draws are bit-reproducible
    per (seed, i) and chunks can be generated in any order or in parallel.
    """
    n, d = partition.n, model.dim
    if count < 0 or start < 0:
        raise ValueError("count and start must be non-negative")
    out = np.empty((count, n, d))
    scale = np.sqrt(partition.mesh)
    pos = 0
    idx = start
    while pos < count:
        chunk_id = idx // CHUNK
        offset = idx % CHUNK
        take = min(CHUNK - offset, count - pos)
        block = _chunk_normals(seed, chunk_id, n, d)
        out[pos:pos + take] = block[offset:offset + take]
        pos += take
        idx += take
    out *= scale
    return out


def _chunk_normals(seed: int, chunk_id: int, n: int, d: int) -> np.ndarray:
    """Standard-normal block (CHUNK, n, d) for one Philox key."""
    key = np.array([seed, chunk_id], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((CHUNK, n, d))


# ---------------------------------------------------------------------------
# Rolling (development) and its inverse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BrokenGeodesic:
    """One rolled path: knot points and transported frames at s_i = i/n."""

    model: CurvatureModel
    partition: Partition
    increments: np.ndarray   # (n, d)
    points: np.ndarray       # (n+1, D)
    frames: np.ndarray       # (n+1, D, d)

    def knot(self, i: int) -> FramePoint:
        return FramePoint(self.points[i], self.frames[i])

    @property
    def endpoint(self) -> FramePoint:
        return self.knot(self.partition.n)


def roll_batch(model: CurvatureModel, increments, start_point=None, start_frame=None):
    """Roll batched increments (..., n, d) into knots.

    Returns (points (..., n+1, D), frames (..., n+1, D, d)).
    """
    increments = np.asarray(increments, dtype=float)
    n = increments.shape[-2]
    batch = increments.shape[:-2]
    D, d = model.ambient_dim, model.dim
    x = np.broadcast_to(geom.base_point(model) if start_point is None else start_point,
                        batch + (D,)).copy()
    u = np.broadcast_to(geom.base_frame(model) if start_frame is None else start_frame,
                        batch + (D, d)).copy()
    points = np.empty(batch + (n + 1, D))
    frames = np.empty(batch + (n + 1, D, d))
    points[..., 0, :] = x
    frames[..., 0, :, :] = u
    for i in range(n):
        x, u = geom.exp_frame(model, x, u, increments[..., i, :])
        points[..., i + 1, :] = x
        frames[..., i + 1, :, :] = u
    return points, frames


def roll(model: CurvatureModel, partition: Partition, increments,
         start: FramePoint | None = None) -> BrokenGeodesic:
    """Develop one increment list (n, d) into a broken geodesic from o."""
    increments = np.asarray(increments, dtype=float)
    if increments.shape != (partition.n, model.dim):
        raise ValueError("increments shape mismatch")
    sp = None if start is None else start.point
    sf = None if start is None else start.frame
    points, frames = roll_batch(model, increments, sp, sf)
    return BrokenGeodesic(model, partition, increments, points, frames)


def anti_roll(model: CurvatureModel, partition: Partition, points,
              start_frame=None) -> np.ndarray:
    """Recover increments from knot points (inverse of roll); shape (n, d).

    points may be batched (..., n+1, D); the frame is rebuilt by transport
    from the start frame, so only knot positions are needed.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[-2] - 1
    batch = points.shape[:-2]
    D, d = model.ambient_dim, model.dim
    u = np.broadcast_to(geom.base_frame(model) if start_frame is None else start_frame,
                        batch + (D, d)).copy()
    out = np.empty(batch + (n, d))
    for i in range(n):
        x, y = points[..., i, :], points[..., i + 1, :]
        v = geom.log_point(model, x, y)
        out[..., i, :] = geom.frame_coords(model, u, v)
        cols = geom.transport(model, x[..., None, :], y[..., None, :],
                              np.moveaxis(u, -1, -2))
        u = np.moveaxis(cols, -2, -1)
        if model.kind != "flat":
            u = geom.renormalize_frame(model, y, u)
    return out


# ---------------------------------------------------------------------------
# Energy and the broken-path inner product
# ---------------------------------------------------------------------------

def energy(partition: Partition, increments) -> float:
    """Path energy: sum_i |Delta_i b|^2 / Delta_i = n * sum |Delta_i b|^2."""
    increments = np.asarray(increments, dtype=float)
    return float(partition.n * np.sum(increments * increments))


def g1p_inner(partition: Partition, slopes_a, slopes_b) -> float:
    """Inner product of two tangent fields given by right-slope lists (n, d):
    sum_i <a_i, b_i> * Delta_i."""
    a = np.asarray(slopes_a, dtype=float)
    b = np.asarray(slopes_b, dtype=float)
    return float(np.sum(a * b) * partition.mesh)


def frame_field_slopes(partition: Partition, d: int, alpha: int, i: int) -> np.ndarray:
    """Slope list of the orthonormal tangent basis field h_{alpha,i}.

    The field supported from interval i (1-based) in direction alpha has the
    single nonzero right-slope sqrt(n) e_alpha at s_{i-1}; its G1 norm is 1.
    """
    n = partition.n
    slopes = np.zeros((n, d))
    slopes[i - 1, alpha] = np.sqrt(n)
    return slopes


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------

def dump_paths_csv(paths, fh) -> None:
    """Write knot-level rows for a list of BrokenGeodesic to an open file."""
    first = paths[0]
    D, d = first.model.ambient_dim, first.model.dim
    cols = (["sample_id", "i", "s_i"]
            + [f"p{a}" for a in range(D)]
            + [f"f{a}{b}" for a in range(D) for b in range(d)]
            + [f"inc{a}" for a in range(d)])
    fh.write("schema=1\n")
    fh.write(",".join(cols) + "\n")
    for sid, path in enumerate(paths):
        n = path.partition.n
        for i in range(n + 1):
            inc = np.zeros(d) if i == 0 else path.increments[i - 1]
            row = ([str(sid), str(i), repr(i / n)]
                   + [repr(float(v)) for v in path.points[i]]
                   + [repr(float(v)) for v in path.frames[i].ravel()]
                   + [repr(float(v)) for v in inc])
            fh.write(",".join(row) + "\n")
