"""Partitioned state-space models for networks of interconnected subsystems.

A plant is described as ``n`` subsystems.  Subsystem ``i`` owns a slice of the
global state vector and a slice of the global measurement vector.  Its dynamics
may depend on the states of a declared set of neighbor subsystems; its output
map depends on its own state only.  Linear subsystems carry constant matrices,
nonlinear subsystems carry callables plus optional analytic Jacobians.

All model objects are immutable after construction and safe to share between
agents.  Stored arrays are defensive copies with the writeable flag cleared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "LinearizationError",
    "StatePartition",
    "LinearSubsystem",
    "NonlinearSubsystem",
    "GlobalModel",
    "LinearizationBlocks",
    "make_partition",
    "assemble_global",
    "aggregate_nonlinear",
    "linearize",
    "linear_as_nonlinear",
    "fd_jacobian_f",
    "fd_jacobian_h",
]

#: Relative step for central-difference Jacobians.
FD_REL_STEP = 1e-6
#: Relative tolerance for the constructor spot check of analytic Jacobians.
JACOBIAN_CHECK_RTOL = 1e-5


class LinearizationError(RuntimeError):
    """A dynamics or output map produced a non-finite value while being
    evaluated or differentiated.  Carries the offending subsystem index."""

    def __init__(self, message: str, subsystem: int | None = None):
        super().__init__(message)
        self.subsystem = subsystem


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _check_spd(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive definite") from exc


@dataclass(frozen=True)
class StatePartition:
    """Ordered subsystem dimensions and the derived global index ranges.

    Attributes
    ----------
    dims : tuple of int
        Per-subsystem state dimensions.
    out_dims : tuple of int
        Per-subsystem measurement dimensions (zero allowed).
    offsets : tuple of int
        Cumulative state offsets, length ``n + 1``; subsystem ``i`` owns
        global state indices ``offsets[i]:offsets[i+1]``.
    out_offsets : tuple of int
        Same for the measurement vector.
    """

    dims: tuple[int, ...]
    out_dims: tuple[int, ...]
    offsets: tuple[int, ...]
    out_offsets: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def nx(self) -> int:
        return self.offsets[-1]

    @property
    def ny(self) -> int:
        return self.out_offsets[-1]

    def state_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def out_slice(self, i: int) -> slice:
        return slice(self.out_offsets[i], self.out_offsets[i + 1])

    def split_state(self, x: np.ndarray) -> list[np.ndarray]:
        """Split a global state vector into per-subsystem blocks."""
        x = np.asarray(x)
        if x.shape[-1] != self.nx:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.nx}")
        return [x[..., self.state_slice(i)] for i in range(self.n)]

    def split_output(self, y: np.ndarray) -> list[np.ndarray]:
        y = np.asarray(y)
        if y.shape[-1] != self.ny:
            raise ValueError(f"output has dimension {y.shape[-1]}, expected {self.ny}")
        return [y[..., self.out_slice(i)] for i in range(self.n)]

    def stack(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        """Concatenate per-subsystem blocks back into a global vector."""
        if len(blocks) != self.n:
            raise ValueError(f"expected {self.n} blocks, got {len(blocks)}")
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])


def make_partition(dims: Sequence[int], out_dims: Sequence[int]) -> StatePartition:
    """Build a :class:`StatePartition` from per-subsystem dimensions.

    ``dims`` must be positive integers; ``out_dims`` non-negative integers of
    the same length.  Offsets are contiguous, non-overlapping and ordered by
    subsystem index.
    """
    dims = tuple(int(d) for d in dims)
    out_dims = tuple(int(d) for d in out_dims)
    if not dims:
        raise ValueError("partition needs at least one subsystem")
    if len(dims) != len(out_dims):
        raise ValueError("dims and out_dims must have equal length")
    if any(d <= 0 for d in dims):
        raise ValueError("every subsystem state dimension must be positive")
    if any(d < 0 for d in out_dims):
        raise ValueError("output dimensions must be non-negative")
    offsets = (0, *np.cumsum(dims).tolist())
    out_offsets = (0, *np.cumsum(out_dims).tolist())
    return StatePartition(dims, out_dims, tuple(offsets), tuple(out_offsets))


@dataclass(frozen=True)
class LinearSubsystem:
    """One linear subsystem: own dynamics block, neighbor coupling blocks,
    output block and noise weights.

    ``x_i(k+1) = A x_i(k) + sum_l coupling[l] x_l(k) + w_i(k)``,
    ``y_i(k) = C x_i(k) + v_i(k)``.

    ``Q`` and ``R`` must be symmetric positive definite; this is checked at
    construction.  Coupling blocks are keyed by neighbor index; the neighbor
    set is exactly the set of declared keys.
    """

    index: int
    A: np.ndarray
    coupling: Mapping[int, np.ndarray]
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        a = _frozen(self.A)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"subsystem {self.index}: A must be square, got {a.shape}")
        nx = a.shape[0]
        c = _frozen(self.C)
        if c.ndim != 2 or c.shape[1] != nx:
            raise ValueError(
                f"subsystem {self.index}: C must have {nx} columns, got {c.shape}"
            )
        q = _frozen(self.Q)
        r = _frozen(self.R)
        _check_spd(q, f"subsystem {self.index}: Q")
        _check_spd(r, f"subsystem {self.index}: R")
        if q.shape[0] != nx:
            raise ValueError(f"subsystem {self.index}: Q must be {nx}x{nx}")
        if r.shape[0] != c.shape[0]:
            raise ValueError(
                f"subsystem {self.index}: R must match the output dimension {c.shape[0]}"
            )
        cleaned = {}
        for l, blk in dict(self.coupling).items():
            if l == self.index:
                raise ValueError(f"subsystem {self.index}: self-coupling must go in A")
            b = _frozen(blk)
            if b.ndim != 2 or b.shape[0] != nx:
                raise ValueError(
                    f"subsystem {self.index}: coupling block to {l} must have {nx} rows"
                )
            cleaned[int(l)] = b
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "coupling", dict(sorted(cleaned.items())))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def out_dim(self) -> int:
        return self.C.shape[0]

    @property
    def neighbors(self) -> tuple[int, ...]:
        return tuple(self.coupling.keys())


@dataclass(frozen=True)
class NonlinearSubsystem:
    """One nonlinear subsystem.

    ``f(x_i, neighbors) -> next x_i`` where ``neighbors`` maps each declared
    neighbor index to that subsystem's current state block, and
    ``h(x_i) -> y_i``.  Both maps must return finite values on the declared
    state box.

    ``jac_f(x_i, neighbors)`` (optional) returns ``{l: d f_i / d x_l}`` for
    ``l`` in ``{index} | neighbors``; ``jac_h(x_i)`` returns ``d h_i / d x_i``.
    When analytic Jacobians and ``jacobian_check_samples`` are both supplied,
    the constructor spot-checks them against central finite differences at
    relative tolerance 1e-5.
    """

    index: int
    state_dim: int
    out_dim: int
    neighbor_dims: Mapping[int, int]
    f: Callable[[np.ndarray, Mapping[int, np.ndarray]], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    jac_f: Callable[[np.ndarray, Mapping[int, np.ndarray]], dict[int, np.ndarray]] | None = None
    jac_h: Callable[[np.ndarray], np.ndarray] | None = None
    state_box: tuple[np.ndarray, np.ndarray] | None = None
    jacobian_check_samples: tuple = ()

    def __post_init__(self):
        if self.state_dim <= 0:
            raise ValueError(f"subsystem {self.index}: state_dim must be positive")
        if self.out_dim < 0:
            raise ValueError(f"subsystem {self.index}: out_dim must be non-negative")
        q = _frozen(self.Q)
        r = _frozen(self.R)
        _check_spd(q, f"subsystem {self.index}: Q")
        if self.out_dim:
            _check_spd(r, f"subsystem {self.index}: R")
        if q.shape[0] != self.state_dim:
            raise ValueError(f"subsystem {self.index}: Q must be {self.state_dim} square")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", r)
        object.__setattr__(
            self, "neighbor_dims", dict(sorted((int(l), int(d)) for l, d in dict(self.neighbor_dims).items()))
        )
        if self.state_box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.state_box)
            if lo.shape != (self.state_dim,) or hi.shape != (self.state_dim,):
                raise ValueError(f"subsystem {self.index}: state_box must match state_dim")
            object.__setattr__(self, "state_box", (_frozen(lo), _frozen(hi)))
        if self.jac_f is not None or self.jac_h is not None:
            self._spot_check_jacobians()

    @property
    def neighbors(self) -> tuple[int, ...]:
        return tuple(self.neighbor_dims.keys())

    def _spot_check_jacobians(self) -> None:
        for x_i, nbrs in self.jacobian_check_samples:
            x_i = np.asarray(x_i, dtype=float)
            nbrs = {int(l): np.asarray(v, dtype=float) for l, v in nbrs.items()}
            if not np.all(np.isfinite(self.f(x_i, nbrs))):
                raise LinearizationError(
                    f"subsystem {self.index}: f not finite at a check sample", self.index
                )
            if self.jac_f is not None:
                got = self.jac_f(x_i, nbrs)
                want = fd_jacobian_f(self, x_i, nbrs)
                for l, blk in want.items():
                    scale = 1.0 + np.abs(blk)
                    if not np.all(np.abs(np.asarray(got[l]) - blk) <= JACOBIAN_CHECK_RTOL * scale):
                        raise ValueError(
                            f"subsystem {self.index}: analytic df/dx_{l} disagrees "
                            "with finite differences"
                        )
            if self.jac_h is not None and self.out_dim:
                got_h = np.asarray(self.jac_h(x_i))
                want_h = fd_jacobian_h(self, x_i)
                scale = 1.0 + np.abs(want_h)
                if not np.all(np.abs(got_h - want_h) <= JACOBIAN_CHECK_RTOL * scale):
                    raise ValueError(
                        f"subsystem {self.index}: analytic dh/dx disagrees with finite differences"
                    )


def _fd_steps(x: np.ndarray) -> np.ndarray:
    return np.maximum(FD_REL_STEP, FD_REL_STEP * np.abs(x))


def fd_jacobian_f(sub: NonlinearSubsystem, x_i: np.ndarray,
                  neighbors: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Central-difference Jacobian blocks of ``sub.f`` with respect to the own
    state and every neighbor block.  Step per coordinate: max(1e-6, 1e-6|x_j|).
    """
    x_i = np.asarray(x_i, dtype=float)
    neighbors = {l: np.asarray(v, dtype=float) for l, v in neighbors.items()}
    base = np.asarray(sub.f(x_i, neighbors), dtype=float)
    if not np.all(np.isfinite(base)):
        raise LinearizationError(f"subsystem {sub.index}: f not finite", sub.index)
    out: dict[int, np.ndarray] = {}

    def block(vals: np.ndarray, rebuild) -> np.ndarray:
        steps = _fd_steps(vals)
        cols = []
        for j in range(vals.size):
            plus = vals.copy()
            minus = vals.copy()
            plus[j] += steps[j]
            minus[j] -= steps[j]
            fp = np.asarray(sub.f(*rebuild(plus)), dtype=float)
            fm = np.asarray(sub.f(*rebuild(minus)), dtype=float)
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise LinearizationError(
                    f"subsystem {sub.index}: f not finite during differentiation", sub.index
                )
            cols.append((fp - fm) / (2.0 * steps[j]))
        return np.column_stack(cols) if cols else np.zeros((base.size, 0))

    out[sub.index] = block(x_i, lambda v: (v, neighbors))
    for l in sub.neighbors:
        def rebuild(v, l=l):
            nb = dict(neighbors)
            nb[l] = v
            return (x_i, nb)
        out[l] = block(neighbors[l], rebuild)
    return out


def fd_jacobian_h(sub: NonlinearSubsystem, x_i: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of ``sub.h`` at ``x_i``."""
    x_i = np.asarray(x_i, dtype=float)
    base = np.asarray(sub.h(x_i), dtype=float)
    if not np.all(np.isfinite(base)):
        raise LinearizationError(f"subsystem {sub.index}: h not finite", sub.index)
    steps = _fd_steps(x_i)
    cols = []
    for j in range(x_i.size):
        plus = x_i.copy()
        minus = x_i.copy()
        plus[j] += steps[j]
        minus[j] -= steps[j]
        hp = np.asarray(sub.h(plus), dtype=float)
        hm = np.asarray(sub.h(minus), dtype=float)
        if not (np.all(np.isfinite(hp)) and np.all(np.isfinite(hm))):
            raise LinearizationError(
                f"subsystem {sub.index}: h not finite during differentiation", sub.index
            )
        cols.append((hp - hm) / (2.0 * steps[j]))
    return np.column_stack(cols) if cols else np.zeros((base.size, 0))


@dataclass(frozen=True)
class GlobalModel:
    """Aggregated plant-wide model.

    For a linear plant, ``A`` and ``C`` hold the assembled matrices and the
    per-subsystem column blocks are precomputed.  For a nonlinear plant,
    ``A``/``C`` are ``None`` and :meth:`f`/:meth:`h` evaluate the stacked maps.
    ``Q`` and ``R`` are block diagonal in both cases.
    """

    partition: StatePartition
    subsystems: tuple
    A: np.ndarray | None
    C: np.ndarray | None
    Q: np.ndarray
    R: np.ndarray

    @property
    def linear(self) -> bool:
        return self.A is not None

    @property
    def nx(self) -> int:
        return self.partition.nx

    @property
    def ny(self) -> int:
        return self.partition.ny

    def a_col(self, i: int) -> np.ndarray:
        """Stacked column block of A owned by subsystem ``i`` (linear only)."""
        if self.A is None:
            raise ValueError("a_col is only defined for linear models")
        return np.ascontiguousarray(self.A[:, self.partition.state_slice(i)])

    def c_col(self, i: int) -> np.ndarray:
        """Column block of C for subsystem ``i`` (linear only)."""
        if self.C is None:
            raise ValueError("c_col is only defined for linear models")
        return np.ascontiguousarray(self.C[:, self.partition.state_slice(i)])

    def neighbor_states(self, i: int, x: np.ndarray) -> dict[int, np.ndarray]:
        """Extract the neighbor blocks subsystem ``i`` needs from a global state."""
        sub = self.subsystems[i]
        return {l: x[self.partition.state_slice(l)] for l in sub.neighbors}

    def f(self, x: np.ndarray) -> np.ndarray:
        """One step of the global dynamics (noise-free)."""
        x = np.asarray(x, dtype=float)
        if self.linear:
            return self.A @ x
        blocks = []
        for i, sub in enumerate(self.subsystems):
            xi = x[self.partition.state_slice(i)]
            val = np.asarray(sub.f(xi, self.neighbor_states(i, x)), dtype=float)
            if val.shape != (sub.state_dim,):
                raise ValueError(f"subsystem {i}: f returned shape {val.shape}")
            blocks.append(val)
        return np.concatenate(blocks)

    def h(self, x: np.ndarray) -> np.ndarray:
        """Global output map (noise-free)."""
        x = np.asarray(x, dtype=float)
        if self.linear:
            return self.C @ x
        blocks = []
        for i, sub in enumerate(self.subsystems):
            xi = x[self.partition.state_slice(i)]
            val = np.asarray(sub.h(xi), dtype=float)
            blocks.append(np.atleast_1d(val))
        return np.concatenate(blocks) if blocks else np.zeros(0)

    def state_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Assembled validity box, or None when no subsystem declares one."""
        if self.linear:
            return None
        boxes = [getattr(s, "state_box", None) for s in self.subsystems]
        if all(b is None for b in boxes):
            return None
        lo = np.full(self.nx, -np.inf)
        hi = np.full(self.nx, np.inf)
        for i, b in enumerate(boxes):
            if b is not None:
                sl = self.partition.state_slice(i)
                lo[sl], hi[sl] = b
        return lo, hi


def assemble_global(subs: Sequence[LinearSubsystem], partition: StatePartition) -> GlobalModel:
    """Concatenate linear subsystems into the global model.

    Subsystem indices must cover ``0..n-1`` exactly once and every coupling
    block must match the partition dimensions.  Undeclared coupling blocks are
    exactly zero; the output matrix is block diagonal by construction.
    """
    n = partition.n
    if sorted(s.index for s in subs) != list(range(n)):
        raise ValueError("subsystem indices must cover 0..n-1 exactly once")
    subs = tuple(sorted(subs, key=lambda s: s.index))
    for i, sub in enumerate(subs):
        if sub.state_dim != partition.dims[i]:
            raise ValueError(f"subsystem {i}: state dimension {sub.state_dim} "
                             f"does not match partition {partition.dims[i]}")
        if sub.out_dim != partition.out_dims[i]:
            raise ValueError(f"subsystem {i}: output dimension {sub.out_dim} "
                             f"does not match partition {partition.out_dims[i]}")
    nx, ny = partition.nx, partition.ny
    A = np.zeros((nx, nx))
    C = np.zeros((ny, nx))
    Q = np.zeros((nx, nx))
    R = np.zeros((ny, ny))
    for i, sub in enumerate(subs):
        si = partition.state_slice(i)
        oi = partition.out_slice(i)
        A[si, si] = sub.A
        C[oi, si] = sub.C
        Q[si, si] = sub.Q
        R[oi, oi] = sub.R
        for l, blk in sub.coupling.items():
            if not 0 <= l < n:
                raise ValueError(f"subsystem {i}: coupling to unknown subsystem {l}")
            if blk.shape[1] != partition.dims[l]:
                raise ValueError(
                    f"subsystem {i}: coupling block to {l} has {blk.shape[1]} columns, "
                    f"expected {partition.dims[l]}"
                )
            A[si, partition.state_slice(l)] = blk
    return GlobalModel(partition, subs, _frozen(A), _frozen(C), _frozen(Q), _frozen(R))


def aggregate_nonlinear(subs: Sequence[NonlinearSubsystem],
                        partition: StatePartition) -> GlobalModel:
    """Aggregate nonlinear subsystems into a global model with stacked maps."""
    n = partition.n
    if sorted(s.index for s in subs) != list(range(n)):
        raise ValueError("subsystem indices must cover 0..n-1 exactly once")
    subs = tuple(sorted(subs, key=lambda s: s.index))
    for i, sub in enumerate(subs):
        if sub.state_dim != partition.dims[i]:
            raise ValueError(f"subsystem {i}: state dimension mismatch with partition")
        if sub.out_dim != partition.out_dims[i]:
            raise ValueError(f"subsystem {i}: output dimension mismatch with partition")
        for l, d in sub.neighbor_dims.items():
            if not 0 <= l < n:
                raise ValueError(f"subsystem {i}: unknown neighbor {l}")
            if d != partition.dims[l]:
                raise ValueError(f"subsystem {i}: neighbor {l} dimension mismatch")
    nx, ny = partition.nx, partition.ny
    Q = np.zeros((nx, nx))
    R = np.zeros((ny, ny))
    for i, sub in enumerate(subs):
        Q[partition.state_slice(i), partition.state_slice(i)] = sub.Q
        if sub.out_dim:
            R[partition.out_slice(i), partition.out_slice(i)] = sub.R
    return GlobalModel(partition, subs, None, None, _frozen(Q), _frozen(R))


@dataclass(frozen=True)
class LinearizationBlocks:
    """Jacobian blocks of the stacked maps at one evaluation point.

    ``a_blocks[(l, i)]`` is the derivative of subsystem ``l``'s dynamics with
    respect to subsystem ``i``'s state block (zero when ``i`` does not
    influence ``l``); ``a_cols[i]`` stacks those blocks over ``l``.
    ``c_cols[i]`` is the derivative of the stacked output map with respect to
    block ``i``; concatenating the ``c_cols`` reproduces the assembled ``C``.
    """

    k: int | None
    point: np.ndarray
    a_blocks: Mapping[tuple[int, int], np.ndarray]
    a_cols: tuple[np.ndarray, ...]
    c_cols: tuple[np.ndarray, ...]
    A: np.ndarray
    C: np.ndarray


def _jac_rows_f(subs, partition, x, mode) -> dict[tuple[int, int], np.ndarray]:
    rows: dict[tuple[int, int], np.ndarray] = {}
    for l, sub in enumerate(subs):
        xl = x[partition.state_slice(l)]
        nbrs = {m: x[partition.state_slice(m)] for m in sub.neighbors}
        if mode == "analytic":
            got = sub.jac_f(xl, nbrs)
            blocks = {int(m): np.asarray(b, dtype=float) for m, b in got.items()}
        else:
            blocks = fd_jacobian_f(sub, xl, nbrs)
        for m, b in blocks.items():
            if not np.all(np.isfinite(b)):
                raise LinearizationError(f"subsystem {l}: non-finite dynamics Jacobian", l)
            rows[(l, m)] = b
    return rows


def _jac_cols_h(subs, partition, x, mode) -> list[np.ndarray]:
    ny = partition.ny
    cols = []
    for i, sub in enumerate(subs):
        xi = x[partition.state_slice(i)]
        if sub.out_dim == 0:
            block = np.zeros((0, sub.state_dim))
        elif mode == "analytic":
            block = np.asarray(sub.jac_h(xi), dtype=float)
        else:
            block = fd_jacobian_h(sub, xi)
        if not np.all(np.isfinite(block)):
            raise LinearizationError(f"subsystem {i}: non-finite output Jacobian", i)
        col = np.zeros((ny, sub.state_dim))
        col[partition.out_slice(i), :] = block
        cols.append(col)
    return cols


def linearize(subs: Sequence[NonlinearSubsystem], x_point: np.ndarray,
              mode: str = "analytic", k: int | None = None) -> LinearizationBlocks:
    """Jacobian blocks of the stacked dynamics and output maps at one point.

    ``mode`` is ``"analytic"`` (requires providers on every subsystem) or
    ``"fd"`` (central differences).  Raises :class:`LinearizationError` with
    the offending subsystem index when a map evaluates to NaN or Inf.
    """
    subs = tuple(sorted(subs, key=lambda s: s.index))
    partition = make_partition([s.state_dim for s in subs], [s.out_dim for s in subs])
    x = np.asarray(x_point, dtype=float)
    if x.shape != (partition.nx,):
        raise ValueError(f"x_point must have shape ({partition.nx},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("x_point must be finite")
    if mode not in ("analytic", "fd"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "analytic":
        missing = [s.index for s in subs if s.jac_f is None or (s.out_dim and s.jac_h is None)]
        if missing:
            raise ValueError(f"analytic Jacobians missing for subsystems {missing}")

    rows = _jac_rows_f(subs, partition, x, mode)
    c_cols = _jac_cols_h(subs, partition, x, mode)

    nx = partition.nx
    a_blocks: dict[tuple[int, int], np.ndarray] = {}
    A = np.zeros((nx, nx))
    for l in range(partition.n):
        for i in range(partition.n):
            blk = rows.get((l, i))
            if blk is None:
                blk = np.zeros((partition.dims[l], partition.dims[i]))
            a_blocks[(l, i)] = blk
            A[partition.state_slice(l), partition.state_slice(i)] = blk
    a_cols = tuple(A[:, partition.state_slice(i)].copy() for i in range(partition.n))
    C = np.concatenate(c_cols, axis=1) if partition.n else np.zeros((0, 0))
    return LinearizationBlocks(k, _frozen(x), a_blocks, a_cols, tuple(c_cols), _frozen(A), _frozen(C))


def linear_as_nonlinear(sub: LinearSubsystem) -> NonlinearSubsystem:
    """Wrap a linear subsystem as a nonlinear one with affine maps and exact
    analytic Jacobians.  The affine map accumulates neighbor contributions in
    ascending neighbor order, matching the linear filter's prediction."""
    A, C = sub.A, sub.C
    coupling = sub.coupling

    def f(x_i, neighbors):
        out = A @ x_i
        for l, blk in coupling.items():
            out = out + blk @ neighbors[l]
        return out

    def h(x_i):
        return C @ x_i

    def jac_f(x_i, neighbors):
        blocks = {sub.index: A.copy()}
        for l, blk in coupling.items():
            blocks[l] = blk.copy()
        return blocks

    def jac_h(x_i):
        return C.copy()

    return NonlinearSubsystem(
        index=sub.index,
        state_dim=sub.state_dim,
        out_dim=sub.out_dim,
        neighbor_dims={l: blk.shape[1] for l, blk in coupling.items()},
        f=f,
        h=h,
        Q=sub.Q,
        R=sub.R,
        jac_f=jac_f,
        jac_h=jac_h,
    )
