"""Run records: the full, replayable account of one filtering experiment.

A record holds the simulated truth, every per-instant estimator quantity
(predictions, posteriors, gains, covariances, Jacobian blocks and their
evaluation points), monitor outputs and the RMSE sequence.  Records are
self-contained: together with the embedded configuration and seed they replay
deterministically.  Wall-clock timings are excluded from the content digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import StatePartition, make_partition

__all__ = ["RunRecord"]


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class RunRecord:
    """Trajectory, estimates and diagnostics of one filter run.

    Array layout (``K`` steps, instants ``0..K``):

    - ``xs, ys, ws, vs``: truth and realized noises from the simulation.
    - ``xhat_pred[k]``: stacked one-step prediction at instant ``k``; row 0 is
      the prior guess used by the initial measurement update.
    - ``xhat_post[k]``: stacked posterior estimate at instant ``k``.
    - ``gains[k][i]`` / ``covs[k][i]``: local gain and posterior covariance.
    - ``a_cols[k][i]``: dynamics Jacobian column block evaluated at the
      posterior of instant ``k`` (used by the step to instant ``k+1``);
      ``a_points[k]`` records the evaluation point.
    - ``c_cols[k][i]``: output Jacobian column block evaluated at the
      prediction of instant ``k``; ``c_points[k]`` records the point.
    """

    kind: str
    seed: int
    dims: tuple[int, ...]
    out_dims: tuple[int, ...]
    xs: np.ndarray
    ys: np.ndarray
    ws: np.ndarray
    vs: np.ndarray
    xhat_pred: np.ndarray
    xhat_post: np.ndarray
    gains: list[list[np.ndarray]]
    covs: list[list[np.ndarray]]
    a_cols: list[list[np.ndarray]]
    c_cols: list[list[np.ndarray]]
    a_points: np.ndarray
    c_points: np.ndarray
    rmse: np.ndarray
    estimator: dict
    floor_events: int = 0
    wall_clock: np.ndarray | None = None
    monitors: dict | None = None
    config: dict | None = None

    @property
    def steps(self) -> int:
        return self.xs.shape[0] - 1

    @property
    def partition(self) -> StatePartition:
        return make_partition(self.dims, self.out_dims)

    def stacked_gain(self, k: int) -> np.ndarray:
        """Global gain at instant ``k``: local gains stacked by subsystem."""
        return np.vstack(self.gains[k])

    def a_matrix(self, k: int) -> np.ndarray:
        """Assembled dynamics Jacobian evaluated at the posterior of ``k``."""
        return np.hstack(self.a_cols[k])

    def c_matrix(self, k: int) -> np.ndarray:
        """Assembled output Jacobian evaluated at the prediction of ``k``."""
        return np.hstack(self.c_cols[k])

    def error_post(self) -> np.ndarray:
        """Estimation error ``x_k - xhat_post[k]`` for every instant."""
        return self.xs - self.xhat_post

    # -- serialization ----------------------------------------------------

    def _payload(self, with_timing: bool) -> dict:
        payload = {
            "schema": 1,
            "kind": self.kind,
            "seed": self.seed,
            "dims": list(self.dims),
            "out_dims": list(self.out_dims),
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "ws": self.ws.tolist(),
            "vs": self.vs.tolist(),
            "xhat_pred": self.xhat_pred.tolist(),
            "xhat_post": self.xhat_post.tolist(),
            "gains": [[g.tolist() for g in per_k] for per_k in self.gains],
            "covs": [[c.tolist() for c in per_k] for per_k in self.covs],
            "a_cols": [[a.tolist() for a in per_k] for per_k in self.a_cols],
            "c_cols": [[c.tolist() for c in per_k] for per_k in self.c_cols],
            "a_points": self.a_points.tolist(),
            "c_points": self.c_points.tolist(),
            "rmse": self.rmse.tolist(),
            "estimator": self.estimator,
            "floor_events": self.floor_events,
            "monitors": self.monitors,
            "config": self.config,
        }
        if with_timing:
            payload["wall_clock"] = (
                None if self.wall_clock is None else self.wall_clock.tolist()
            )
        return payload

    def content_digest(self) -> str:
        """SHA-256 over the deterministic content (timings excluded)."""
        return hashlib.sha256(_canonical(self._payload(with_timing=False)).encode()).hexdigest()

    def to_json(self, path: str | Path | None = None) -> dict:
        payload = self._payload(with_timing=True)
        if path is not None:
            Path(path).write_text(json.dumps(payload))
        return payload

    @classmethod
    def from_json(cls, payload: dict | str | Path) -> "RunRecord":
        if not isinstance(payload, dict):
            payload = json.loads(Path(payload).read_text())
        arr = lambda x: np.asarray(x, dtype=float)
        wall = payload.get("wall_clock")
        return cls(
            kind=payload["kind"],
            seed=int(payload["seed"]),
            dims=tuple(payload["dims"]),
            out_dims=tuple(payload["out_dims"]),
            xs=arr(payload["xs"]),
            ys=arr(payload["ys"]),
            ws=arr(payload["ws"]),
            vs=arr(payload["vs"]),
            xhat_pred=arr(payload["xhat_pred"]),
            xhat_post=arr(payload["xhat_post"]),
            gains=[[arr(g) for g in per_k] for per_k in payload["gains"]],
            covs=[[arr(c) for c in per_k] for per_k in payload["covs"]],
            a_cols=[[arr(a) for a in per_k] for per_k in payload["a_cols"]],
            c_cols=[[arr(c) for c in per_k] for per_k in payload["c_cols"]],
            a_points=arr(payload["a_points"]),
            c_points=arr(payload["c_points"]),
            rmse=arr(payload["rmse"]),
            estimator=payload["estimator"],
            floor_events=int(payload.get("floor_events", 0)),
            wall_clock=None if wall is None else arr(wall),
            monitors=payload.get("monitors"),
            config=payload.get("config"),
        )
