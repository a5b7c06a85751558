"""Time grids, reproducible Brownian increments and Euler-Maruyama stepping."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError, SimulationBlowupError

BLOCK = 4096
_MAGIC = b"QBPB"
_VERSION = 1


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise PreconditionError("time grid must be strictly increasing with at least two points")
        if t[0] < 0:
            raise PreconditionError("time grid must start at t0 >= 0")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, n_steps: int, t0: float = 0.0) -> "TimeGrid":
        if n_steps < 1 or T <= t0:
            raise PreconditionError("need n_steps >= 1 and T > t0")
        return cls(np.linspace(t0, T, n_steps + 1))

    @classmethod
    def refined(cls, T: float, n_steps: int, t0: float = 0.0, power: float = 2.0) -> "TimeGrid":
        """Grid whose steps shrink towards ``T`` like ``(1 - s)^power``."""
        s = np.linspace(0.0, 1.0, n_steps + 1)
        return cls(t0 + (T - t0) * (1.0 - (1.0 - s) ** power))

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def max_step(self) -> float:
        return float(np.max(self.dt))

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Brownian increments on a shared grid.

    ``increments`` has shape ``(n_paths, n_steps, dim)``; entry ``[i, k]`` is
    ``W_{t_{k+1}} - W_{t_k}`` on path ``i``.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int
    stream_id: int = 0

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[2]

    @property
    def dW(self) -> np.ndarray:
        """Time-major view, shape ``(n_steps, n_paths, dim)``."""
        return self.increments.transpose(1, 0, 2)

    def brownian(self) -> np.ndarray:
        """``W`` on the grid, shape ``(n_times, n_paths, dim)`` with ``W_{t0} = 0``."""
        W = np.zeros((len(self.grid), self.n_paths, self.dim))
        np.cumsum(self.dW, axis=0, out=W[1:])
        return W

    def head(self, n: int) -> "PathBundle":
        return PathBundle(self.grid, self.increments[:n], self.seed, self.stream_id)

    def equals(self, other: "PathBundle") -> bool:
        return (
            self.grid == other.grid
            and self.seed == other.seed
            and self.stream_id == other.stream_id
            and np.array_equal(self.increments, other.increments)
        )


def _block_normals(seed: int, stream_id: int, block: int, width: int) -> np.ndarray:
    key = (int(seed) & (2**64 - 1)) | ((int(stream_id) & (2**64 - 1)) << 64)
    bitgen = np.random.Philox(key=key, counter=[0, 0, block, 0])
    return np.random.Generator(bitgen).standard_normal((BLOCK, width))


def sample_brownian(grid: TimeGrid, n_paths: int, dim: int = 1, seed: int = 0, stream_id: int = 0) -> PathBundle:
    """Counter-based Brownian increments.

    Path ``i`` comes from Philox block ``i // 4096`` keyed by ``(seed,
    stream_id)``, so it does not depend on ``n_paths``.
    """
    if n_paths < 1 or dim < 1:
        raise PreconditionError("n_paths and dim must be positive")
    width = grid.n_steps * dim
    n_blocks = -(-n_paths // BLOCK)
    out = np.empty((n_paths, width))
    for b in range(n_blocks):
        lo = b * BLOCK
        hi = min(n_paths, lo + BLOCK)
        out[lo:hi] = _block_normals(seed, stream_id, b, width)[: hi - lo]
    inc = out.reshape(n_paths, grid.n_steps, dim) * np.sqrt(grid.dt)[None, :, None]
    return PathBundle(grid, inc, int(seed), int(stream_id))


def increment_statistics(paths: PathBundle) -> dict:
    """Per-step mean and variance deviations in units of their standard errors."""
    n = paths.n_paths
    dt = paths.grid.dt[:, None]
    dW = paths.dW
    mean = dW.mean(axis=1)
    var = dW.var(axis=1, ddof=1)
    mean_z = np.abs(mean) / np.sqrt(dt / n)
    var_z = np.abs(var - dt) / (dt * np.sqrt(2.0 / (n - 1)))
    out = {"max_mean_z": float(mean_z.max()), "max_var_z": float(var_z.max())}
    if paths.dim > 1:
        Z = paths.increments.reshape(n, -1, paths.dim).reshape(-1, paths.dim)
        corr = np.corrcoef(Z, rowvar=False)
        off = corr[~np.eye(paths.dim, dtype=bool)]
        out["max_abs_corr"] = float(np.max(np.abs(off)))
    return out


# --------------------------------------------------------------------------
# forward SDE

@dataclass
class SdeModel:
    """``dX = b(t, X) dt + sigma(t, X) dW``.

    ``drift(t, x)`` maps ``(n, m)`` states to ``(n, m)``; ``diffusion(t, x)``
    returns ``(n, m, d)`` (anything broadcastable to it is accepted).
    """

    drift: Callable
    diffusion: Callable
    lipschitz_beta: float
    x0: np.ndarray
    t0: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))

    @property
    def state_dim(self) -> int:
        return len(self.x0)

    def b(self, t, x):
        n, m = x.shape
        v = np.asarray(self.drift(t, x), dtype=float)
        return np.broadcast_to(v.reshape(n, m) if v.size == n * m else v, (n, m))

    def sigma(self, t, x, d):
        n, m = x.shape
        s = np.asarray(self.diffusion(t, x), dtype=float)
        if s.ndim == 1 and s.shape[0] == n and m * d == 1:
            s = s.reshape(n, 1, 1)
        elif s.ndim == 2 and s.shape == (n, m) and d == 1:
            s = s[:, :, None]
        return np.broadcast_to(s, (n, m, d))

    def with_start(self, x0, t0=None) -> "SdeModel":
        return SdeModel(self.drift, self.diffusion, self.lipschitz_beta, x0,
                        self.t0 if t0 is None else t0, self.name, dict(self.params))


def brownian_model(x0=0.0, sigma: float = 1.0, t0: float = 0.0) -> SdeModel:
    return SdeModel(lambda t, x: np.zeros_like(x), lambda t, x: np.full(x.shape, sigma),
                    abs(sigma), x0, t0, "brownian", {"family": "brownian", "sigma": sigma})


def ou_model(x0=0.0, theta: float = 1.0, sigma: float = 1.0, t0: float = 0.0) -> SdeModel:
    """``dX = -theta X dt + sigma dW``."""
    return SdeModel(lambda t, x: -theta * x, lambda t, x: np.full(x.shape, sigma),
                    max(abs(theta), abs(sigma)), x0, t0, "ou",
                    {"family": "ou", "theta": theta, "sigma": sigma})


def constant_drift_model(x0=0.0, mu: float = 0.0, sigma: float = 0.0, t0: float = 0.0) -> SdeModel:
    return SdeModel(lambda t, x: np.full(x.shape, mu), lambda t, x: np.full(x.shape, sigma),
                    abs(mu) + abs(sigma), x0, t0, "constant",
                    {"family": "constant", "mu": mu, "sigma": sigma})


def sde_from_config(cfg: dict, x0=None) -> SdeModel:
    fam = cfg.get("family", "brownian")
    start = cfg.get("x0", 0.0) if x0 is None else x0
    if fam == "brownian":
        return brownian_model(start, float(cfg.get("sigma", 1.0)))
    if fam == "ou":
        return ou_model(start, float(cfg.get("theta", 1.0)), float(cfg.get("sigma", 1.0)))
    if fam == "constant":
        return constant_drift_model(start, float(cfg.get("mu", 0.0)), float(cfg.get("sigma", 0.0)))
    raise PreconditionError(f"unknown SDE family {fam!r}")


def lipschitz_ratio(model: SdeModel, n_samples: int = 2000, seed: int = 0, d: int = 1,
                    t_max: float = 1.0, scale: float = 5.0) -> dict:
    """Largest sampled Lipschitz quotient of ``b`` and ``sigma`` and growth at 0."""
    rng = np.random.default_rng(seed)
    m = model.state_dim
    t = float(rng.uniform(model.t0, model.t0 + t_max))
    x = rng.normal(scale=scale, size=(n_samples, m))
    y = rng.normal(scale=scale, size=(n_samples, m))
    dist = np.linalg.norm(x - y, axis=1)
    db = np.linalg.norm(model.b(t, x) - model.b(t, y), axis=1)
    ds = np.linalg.norm((model.sigma(t, x, d) - model.sigma(t, y, d)).reshape(n_samples, -1), axis=1)
    ratio = float(np.max(np.maximum(db, ds) / dist))
    ts = rng.uniform(model.t0, model.t0 + t_max, size=20)
    zero = np.zeros((1, m))
    g0 = max(float(np.linalg.norm(model.b(s, zero)) + np.linalg.norm(model.sigma(s, zero, d))) for s in ts)
    return {"ratio": ratio, "growth_at_zero": g0, "beta": model.lipschitz_beta}


def euler_maruyama(model: SdeModel, paths: PathBundle) -> np.ndarray:
    """State on the grid, shape ``(n_times, n_paths, m)``."""
    grid = paths.grid
    if not np.isclose(model.t0, grid.t0):
        raise PreconditionError(f"model starts at t0={model.t0} but grid starts at {grid.t0}")
    n, d, m = paths.n_paths, paths.dim, model.state_dim
    X = np.empty((len(grid), n, m))
    X[0] = model.x0
    dt = grid.dt
    dW = paths.dW
    for k in range(grid.n_steps):
        t = grid.times[k]
        x = X[k]
        X[k + 1] = x + model.b(t, x) * dt[k] + np.einsum("nmd,nd->nm", model.sigma(t, x, d), dW[k])
        bad = ~np.isfinite(X[k + 1]).all(axis=1)
        if np.any(bad):
            p = int(np.argmax(bad))
            raise SimulationBlowupError(f"non-finite state on path {p} at step {k + 1}", path=p, step=k + 1)
    return X


# --------------------------------------------------------------------------
# binary layout

def save_bundle(paths: PathBundle, fh) -> None:
    """Header (magic, version, seed, stream, n_paths, dim, n_times, times) then increments."""
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    f = open(fh, "wb") if own else fh
    try:
        times = paths.grid.times
        f.write(_MAGIC)
        f.write(struct.pack("<IQQQQQ", _VERSION, paths.seed & (2**64 - 1), paths.stream_id,
                            paths.n_paths, paths.dim, len(times)))
        f.write(np.ascontiguousarray(times, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(paths.increments, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_bundle(fh) -> PathBundle:
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    f = open(fh, "rb") if own else fh
    try:
        if f.read(4) != _MAGIC:
            raise PreconditionError("not a path bundle file")
        version, seed, stream, n, dim, nt = struct.unpack("<IQQQQQ", f.read(struct.calcsize("<IQQQQQ")))
        if version != _VERSION:
            raise PreconditionError(f"unsupported bundle version {version}")
        times = np.frombuffer(f.read(8 * nt), dtype="<f8").astype(float)
        count = n * (nt - 1) * dim
        raw = f.read(8 * count)
        if len(raw) != 8 * count:
            raise PreconditionError("truncated path bundle")
        inc = np.frombuffer(raw, dtype="<f8").astype(float).reshape(n, nt - 1, dim)
    finally:
        if own:
            f.close()
    return PathBundle(TimeGrid(times), inc, int(seed), int(stream))
