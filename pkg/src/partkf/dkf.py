"""Partition-based distributed Kalman filter for linear interconnected plants.

Each subsystem runs a local estimator over its own state block.  At every
sampling instant the estimators exchange posteriors, predict, exchange
predictions, and update against the full stacked measurement vector.  All
cross-estimator reads go through an immutable :class:`ExchangeSnapshot` frozen
at the start of each phase, so results are independent of the order in which
local estimators execute.

Local recursion for subsystem ``i`` with global output matrix ``C``, stacked
column block ``A_col = A[:, i-block]`` and own diagonal block ``A_ii``:

- prediction   ``xp_i = A_ii xh_i + sum_l A_il xh_l``
- gain         ``L_i = (C A_col P A_ii' + C_col Q_i)' M^-1`` with
  ``M = C A_col P A_col' C' + C_col Q_i C_col' + R``
- update       ``xh_i = xp_i + L_i (y - sum_l C_col_l xp_l)``
- covariance   ``P+ = A_ii P A_ii' + Q_i - L_i (C A_col P A_ii' + C_col Q_i)``

Matrix inverses are realized as SPD solves and covariances are symmetrized
after every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import GlobalModel
from .records import RunRecord
from .simulate import Trajectory

__all__ = [
    "FilterError",
    "CovarianceCollapseError",
    "EstimatorState",
    "ExchangeSnapshot",
    "EstimatorDesign",
    "gain_and_covariance",
    "init_update",
    "init_states",
    "predict",
    "gain",
    "update",
    "covariance",
    "predicted_output",
    "dkf_step",
    "run_dkf",
]


class FilterError(RuntimeError):
    """Numerical failure inside a filter step."""


class CovarianceCollapseError(FilterError):
    """A posterior covariance lost positive definiteness.  Signals violated
    model assumptions rather than a recoverable condition."""

    def __init__(self, message: str, subsystem: int | None = None, k: int | None = None):
        super().__init__(message)
        self.subsystem = subsystem
        self.k = k


@dataclass(frozen=True)
class EstimatorState:
    """Local estimator state at one instant: estimate, covariance and gain."""

    index: int
    xhat: np.ndarray
    cov: np.ndarray
    gain: np.ndarray
    k: int


@dataclass(frozen=True)
class ExchangeSnapshot:
    """Immutable view of everything an estimator may read during one phase of
    instant ``k``: all posteriors from ``k-1``, all predictions for ``k``
    (``None`` during the prediction phase) and the global measurement."""

    k: int
    posteriors: tuple
    predictions: tuple | None = None
    measurement: np.ndarray | None = None


@dataclass(frozen=True)
class EstimatorDesign:
    """Estimator hyperparameters: per-subsystem process weights ``Q[i]`` and
    prior covariances ``P0[i]``, the global stacked measurement weight ``R``
    and the prior mean ``x0_guess``."""

    Q: tuple[np.ndarray, ...]
    R: np.ndarray
    P0: tuple[np.ndarray, ...]
    x0_guess: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", tuple(np.asarray(q, dtype=float) for q in self.Q))
        object.__setattr__(self, "P0", tuple(np.asarray(p, dtype=float) for p in self.P0))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "x0_guess", np.asarray(self.x0_guess, dtype=float))

    @classmethod
    def from_model(cls, model: GlobalModel, P0, x0_guess) -> "EstimatorDesign":
        """Take Q and R from the model's noise weights."""
        Q = tuple(s.Q for s in model.subsystems)
        P0 = tuple(np.asarray(p, dtype=float) for p in P0)
        return cls(Q=Q, R=model.R, P0=P0, x0_guess=np.asarray(x0_guess, dtype=float))

    def validate(self, model: GlobalModel) -> None:
        p = model.partition
        if len(self.Q) != p.n or len(self.P0) != p.n:
            raise ValueError("design must provide Q and P0 for every subsystem")
        for i in range(p.n):
            if self.Q[i].shape != (p.dims[i], p.dims[i]):
                raise ValueError(f"Q[{i}] has shape {self.Q[i].shape}, expected "
                                 f"({p.dims[i]}, {p.dims[i]})")
            if self.P0[i].shape != (p.dims[i], p.dims[i]):
                raise ValueError(f"P0[{i}] has wrong shape")
        if self.R.shape != (p.ny, p.ny):
            raise ValueError(f"R has shape {self.R.shape}, expected ({p.ny}, {p.ny})")
        if self.x0_guess.shape != (p.nx,):
            raise ValueError("x0_guess does not match the partition")

    def serializable(self) -> dict:
        return {
            "Q": [q.tolist() for q in self.Q],
            "R": self.R.tolist(),
            "P0": [p.tolist() for p in self.P0],
            "x0_guess": self.x0_guess.tolist(),
        }

    @classmethod
    def from_serializable(cls, payload: dict) -> "EstimatorDesign":
        return cls(
            Q=tuple(np.asarray(q, dtype=float) for q in payload["Q"]),
            R=np.asarray(payload["R"], dtype=float),
            P0=tuple(np.asarray(p, dtype=float) for p in payload["P0"]),
            x0_guess=np.asarray(payload["x0_guess"], dtype=float),
        )


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _spd_inverse(m: np.ndarray, what: str) -> np.ndarray:
    try:
        c = cho_factor(_sym(m))
    except np.linalg.LinAlgError as exc:
        raise FilterError(f"{what} is not positive definite") from exc
    return cho_solve(c, np.eye(m.shape[0]))


def _check_spd_posterior(P: np.ndarray, i: int, k: int | None) -> None:
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise CovarianceCollapseError(
            f"posterior covariance of subsystem {i} lost positive definiteness",
            subsystem=i, k=k,
        ) from exc


def gain_and_covariance(P_prev: np.ndarray, a_col: np.ndarray, a_ii: np.ndarray,
                        C: np.ndarray, c_col: np.ndarray, Q_i: np.ndarray,
                        R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One local gain/covariance computation from explicit matrix blocks.

    Shared by the linear filter (constant blocks) and the nonlinear filter
    (blocks refreshed by relinearization every instant).  The innovation
    matrix inverse is applied via an SPD solve and the returned covariance is
    symmetrized.
    """
    CA = C @ a_col
    CAP = CA @ P_prev
    Z = CAP @ a_ii.T + c_col @ Q_i
    M = _sym(CAP @ CA.T + c_col @ Q_i @ c_col.T + R)
    try:
        cho = cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is not positive definite; "
                          "inputs are corrupted or R is not SPD") from exc
    L = cho_solve(cho, Z).T
    P_new = _sym(a_ii @ P_prev @ a_ii.T + Q_i - L @ Z)
    return L, P_new


def init_update(P0_i: np.ndarray, c_col: np.ndarray, R: np.ndarray,
                guess_i: np.ndarray, innovation: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Initial measurement update of one local estimator.

    Information form: ``P_post^-1 = P0^-1 + c_col' R^-1 c_col`` and
    ``xh = guess + P_post c_col' R^-1 innovation``.  Returns
    ``(xh, P_post, effective_gain)``.
    """
    P0_inv = _spd_inverse(P0_i, "prior covariance")
    R_cho = cho_factor(_sym(R))
    Rinv_c = cho_solve(R_cho, c_col)
    info = _sym(P0_inv + c_col.T @ Rinv_c)
    P_post = _sym(_spd_inverse(info, "posterior information matrix"))
    L0 = P_post @ Rinv_c.T
    xh = guess_i + L0 @ innovation
    return xh, P_post, L0


def predicted_output(c_cols: Sequence[np.ndarray], predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Stacked predicted output ``sum_l c_col_l @ xp_l`` in ascending order."""
    out = np.zeros(c_cols[0].shape[0])
    for c_col, xp in zip(c_cols, predictions):
        out = out + c_col @ xp
    return out


def predict(i: int, snapshot: ExchangeSnapshot, model: GlobalModel) -> np.ndarray:
    """Local prediction from the posterior snapshot of instant ``k-1``."""
    sub = model.subsystems[i]
    if snapshot.posteriors[i] is None:
        raise FilterError(f"snapshot is missing the posterior of subsystem {i}")
    out = sub.A @ snapshot.posteriors[i]
    for l, blk in sub.coupling.items():
        nb = snapshot.posteriors[l]
        if nb is None:
            raise FilterError(f"snapshot is missing the posterior of neighbor {l}")
        out = out + blk @ nb
    return out


def gain(i: int, P_prev: np.ndarray, model: GlobalModel,
         design: EstimatorDesign) -> np.ndarray:
    """Local gain from the previous posterior covariance."""
    sub = model.subsystems[i]
    L, _ = gain_and_covariance(P_prev, model.a_col(i), sub.A, model.C,
                               model.c_col(i), design.Q[i], design.R)
    return L


def covariance(i: int, P_prev: np.ndarray, L_i: np.ndarray, model: GlobalModel,
               design: EstimatorDesign) -> np.ndarray:
    """Posterior covariance given the gain, symmetrized and SPD-checked."""
    sub = model.subsystems[i]
    CA = model.C @ model.a_col(i)
    Z = CA @ P_prev @ sub.A.T + model.c_col(i) @ design.Q[i]
    P_new = _sym(sub.A @ P_prev @ sub.A.T + design.Q[i] - L_i @ Z)
    _check_spd_posterior(P_new, i, None)
    return P_new


def update(i: int, x_pred_i: np.ndarray, snapshot: ExchangeSnapshot,
           L_i: np.ndarray, model: GlobalModel) -> np.ndarray:
    """Local measurement update using the prediction snapshot."""
    if snapshot.predictions is None or any(p is None for p in snapshot.predictions):
        raise FilterError("snapshot is missing neighbor predictions")
    if snapshot.measurement is None:
        raise FilterError("snapshot is missing the measurement")
    c_cols = [model.c_col(l) for l in range(model.partition.n)]
    innovation = snapshot.measurement - predicted_output(c_cols, snapshot.predictions)
    return x_pred_i + L_i @ innovation


def init_states(model: GlobalModel, design: EstimatorDesign,
                y0: np.ndarray) -> list[EstimatorState]:
    """Initial measurement update for all subsystems at instant 0."""
    design.validate(model)
    p = model.partition
    guess_blocks = p.split_state(design.x0_guess)
    c_cols = [model.c_col(i) for i in range(p.n)]
    innovation = np.asarray(y0, dtype=float) - predicted_output(c_cols, guess_blocks)
    states = []
    for i in range(p.n):
        xh, P, L0 = init_update(design.P0[i], c_cols[i], design.R,
                                guess_blocks[i], innovation)
        _check_spd_posterior(P, i, 0)
        states.append(EstimatorState(index=i, xhat=xh, cov=P, gain=L0, k=0))
    return states


def dkf_step(states: Sequence[EstimatorState], y_k: np.ndarray, model: GlobalModel,
             design: EstimatorDesign, order: Sequence[int] | None = None
             ) -> list[EstimatorState]:
    """Advance all local estimators by one instant.

    Two-phase execution with a barrier between them: every prediction is
    computed from the frozen posterior snapshot before any update runs.
    ``order`` permutes the per-phase execution order and never changes the
    result.
    """
    p = model.partition
    n = p.n
    if len(states) != n:
        raise FilterError("need one estimator state per subsystem")
    k = states[0].k + 1
    agenda = list(order) if order is not None else list(range(n))
    if sorted(agenda) != list(range(n)):
        raise ValueError("order must be a permutation of the subsystems")

    posteriors = tuple(s.xhat for s in states)
    phase1 = ExchangeSnapshot(k=k, posteriors=posteriors)
    predictions: list = [None] * n
    for i in agenda:
        predictions[i] = predict(i, phase1, model)

    phase2 = ExchangeSnapshot(k=k, posteriors=posteriors,
                              predictions=tuple(predictions),
                              measurement=np.asarray(y_k, dtype=float))
    new_states: list = [None] * n
    for i in agenda:
        sub = model.subsystems[i]
        try:
            L, P = gain_and_covariance(states[i].cov, model.a_col(i), sub.A,
                                       model.C, model.c_col(i),
                                       design.Q[i], design.R)
        except FilterError as exc:
            raise FilterError(f"subsystem {i} at instant {k}: {exc}") from exc
        _check_spd_posterior(P, i, k)
        xh = update(i, predictions[i], phase2, L, model)
        new_states[i] = EstimatorState(index=i, xhat=xh, cov=P, gain=L, k=k)
    return new_states


def run_dkf(model: GlobalModel, design: EstimatorDesign, traj: Trajectory,
            order: Sequence[int] | None = None, config: dict | None = None
            ) -> RunRecord:
    """Run the distributed filter over a simulated trajectory and record
    every per-instant quantity."""
    if not model.linear:
        raise ValueError("run_dkf needs a linear model; use run_dekf instead")
    design.validate(model)
    p = model.partition
    K = traj.steps
    n = p.n
    const_a_cols = [model.a_col(i) for i in range(n)]
    const_c_cols = [model.c_col(i) for i in range(n)]

    xhat_pred = np.empty((K + 1, p.nx))
    xhat_post = np.empty((K + 1, p.nx))
    gains: list[list[np.ndarray]] = []
    covs: list[list[np.ndarray]] = []
    a_cols: list[list[np.ndarray]] = []
    c_cols: list[list[np.ndarray]] = []
    a_points = np.empty((K, p.nx))
    c_points = np.empty((K + 1, p.nx))
    wall = np.empty(K + 1)

    t0 = time.perf_counter()
    states = init_states(model, design, traj.ys[0])
    wall[0] = time.perf_counter() - t0
    xhat_pred[0] = design.x0_guess
    c_points[0] = design.x0_guess
    xhat_post[0] = np.concatenate([s.xhat for s in states])
    gains.append([s.gain for s in states])
    covs.append([s.cov for s in states])
    c_cols.append(list(const_c_cols))

    for k in range(1, K + 1):
        t0 = time.perf_counter()
        prev_post = xhat_post[k - 1]
        a_points[k - 1] = prev_post
        a_cols.append(list(const_a_cols))
        new_states = dkf_step(states, traj.ys[k], model, design, order=order)
        wall[k] = time.perf_counter() - t0
        phase1 = ExchangeSnapshot(k=k, posteriors=tuple(s.xhat for s in states))
        xhat_pred[k] = np.concatenate([predict(i, phase1, model) for i in range(n)])
        c_points[k] = xhat_pred[k]
        states = new_states
        xhat_post[k] = np.concatenate([s.xhat for s in states])
        gains.append([s.gain for s in states])
        covs.append([s.cov for s in states])
        c_cols.append(list(const_c_cols))

    err = traj.xs - xhat_post
    rmse = np.sqrt(np.sum(err * err, axis=1) / p.nx)
    return RunRecord(
        kind="dkf", seed=traj.seed, dims=p.dims, out_dims=p.out_dims,
        xs=traj.xs, ys=traj.ys, ws=traj.ws, vs=traj.vs,
        xhat_pred=xhat_pred, xhat_post=xhat_post,
        gains=gains, covs=covs, a_cols=a_cols, c_cols=c_cols,
        a_points=a_points, c_points=c_points, rmse=rmse,
        estimator=design.serializable(), wall_clock=wall, config=config,
    )
