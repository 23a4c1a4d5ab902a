"""Geometric graphs, trajectories, the E(3) action, synthetic data and dataset files."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ContractError, GenerationError, ParseError, SamplingError

N_CATEGORIES = 20
BACKBONE_ATOMS = ("N", "CA", "C", "O")
TRAJ_FORMAT = "equillm-traj/1"
RES_FORMAT = "equillm-res/1"


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return _frozen(arr, np.int64)


@dataclass(frozen=True)
class GeometricGraph:
    """Nodes with invariant features ``(N, c)`` and coordinates ``(N, 3)``.

    ``edges`` is an ``(E, 2)`` array of ordered pairs ``(j, i)``: node ``j``
    is a neighbour of node ``i`` and sends it a message.
    """

    node_features: np.ndarray
    coords: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        feats = _frozen(self.node_features)
        coords = _frozen(self.coords)
        edges = _edge_array(self.edges)
        if feats.ndim != 2:
            raise ContractError(f"node features must be 2-d, got shape {feats.shape}")
        if coords.shape != (feats.shape[0], 3):
            raise ContractError(f"coords shape {coords.shape} does not match {feats.shape[0]} nodes")
        n = feats.shape[0]
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ContractError(f"edge endpoint out of range for {n} nodes")
        if edges.size and np.any(edges[:, 0] == edges[:, 1]):
            raise ContractError("self-loops are not allowed")
        object.__setattr__(self, "node_features", feats)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "edges", edges)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self.edges[self.edges[:, 1] == i, 0]

    def with_coords(self, coords) -> "GeometricGraph":
        return GeometricGraph(self.node_features, coords, self.edges)


@dataclass(frozen=True)
class Trajectory:
    frames: np.ndarray  # (T, N, 3)
    skeleton: GeometricGraph

    def __post_init__(self):
        frames = _frozen(self.frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ContractError(f"frames must be (T, N, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise ContractError("a trajectory needs at least one frame")
        if frames.shape[1] != self.skeleton.n_nodes:
            raise ContractError(
                f"frames have {frames.shape[1]} nodes, skeleton has {self.skeleton.n_nodes}"
            )
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.frames.shape[1]

    def frame_graph(self, t: int = -1) -> GeometricGraph:
        return self.skeleton.with_coords(self.frames[t])


@dataclass(frozen=True)
class ResidueStructure:
    categories: np.ndarray  # (N,) ints < 20
    backbone: np.ndarray  # (N, 4, 3) over N, CA, C, O

    def __post_init__(self):
        cats = _frozen(self.categories, np.int64).reshape(-1)
        bb = _frozen(self.backbone)
        if bb.shape != (cats.shape[0], 4, 3):
            raise ContractError(f"backbone shape {bb.shape} does not match {cats.shape[0]} residues")
        if cats.size and (cats.min() < 0 or cats.max() >= N_CATEGORIES):
            raise ContractError(f"category indices must lie in [0, {N_CATEGORIES})")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "backbone", bb)

    @property
    def n_residues(self) -> int:
        return self.categories.shape[0]


# -- the E(3) action ------------------------------------------------------------
@dataclass(frozen=True)
class TransformE3:
    """``x -> x @ Q + t`` with ``Q`` orthogonal (rotation or rotoreflection)."""

    Q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        Q = _frozen(self.Q)
        t = _frozen(self.t).reshape(3)
        if Q.shape != (3, 3):
            raise ContractError(f"Q must be 3x3, got {Q.shape}")
        if np.max(np.abs(Q.T @ Q - np.eye(3))) > 1e-10:
            raise ContractError("Q is not orthogonal to 1e-10")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "TransformE3":
        return cls(np.eye(3), np.zeros(3))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.Q))

    def apply_coords(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.Q + self.t

    def then(self, other: "TransformE3") -> "TransformE3":
        """The transform applying ``self`` first and ``other`` second."""
        return TransformE3(self.Q @ other.Q, self.t @ other.Q + other.t)


def random_transform(
    rng: np.random.Generator, reflect: bool | None = None, translation_scale: float = 5.0
) -> TransformE3:
    """Haar-random orthogonal ``Q`` (QR with sign-fixed diagonal) plus a Gaussian shift.

    ``reflect=None`` flips a fair coin for composing with ``diag(1, 1, -1)``.
    """
    A = rng.standard_normal((3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q = Q @ np.diag([1.0, 1.0, -1.0])
    if reflect is None:
        reflect = bool(rng.integers(0, 2))
    if reflect:
        Q = Q @ np.diag([1.0, 1.0, -1.0])
    return TransformE3(Q, rng.standard_normal(3) * translation_scale)


def apply_transform(obj, tau: TransformE3):
    """Move every coordinate of a graph, trajectory or residue structure by ``tau``."""
    if isinstance(obj, GeometricGraph):
        return obj.with_coords(tau.apply_coords(obj.coords))
    if isinstance(obj, Trajectory):
        return Trajectory(tau.apply_coords(obj.frames), apply_transform(obj.skeleton, tau))
    if isinstance(obj, ResidueStructure):
        return ResidueStructure(obj.categories, tau.apply_coords(obj.backbone))
    raise TypeError(f"cannot transform {type(obj).__name__}")


def edge_distances(g: GeometricGraph) -> np.ndarray:
    """Euclidean length of every edge, aligned with ``g.edges``."""
    if g.edges.size == 0:
        return np.zeros(0)
    d = g.coords[g.edges[:, 1]] - g.coords[g.edges[:, 0]]
    return np.sqrt(np.sum(d * d, axis=1))


# -- graph construction ----------------------------------------------------------
def undirected_to_directed(pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    out = []
    for a, b in pairs:
        out.append((a, b))
        out.append((b, a))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def random_connected_graph(n_nodes: int, mean_degree: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Random spanning tree plus uniformly drawn extra edges; returns undirected pairs."""
    order = rng.permutation(n_nodes)
    pairs = set()
    for k in range(1, n_nodes):
        a = int(order[k])
        b = int(order[rng.integers(0, k)])
        pairs.add((min(a, b), max(a, b)))
    max_edges = n_nodes * (n_nodes - 1) // 2
    target = min(max_edges, max(n_nodes - 1, int(round(n_nodes * mean_degree / 2))))
    candidates = [(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes) if (a, b) not in pairs]
    extra = target - len(pairs)
    if extra > 0:
        picks = rng.choice(len(candidates), size=extra, replace=False)
        pairs.update(candidates[int(i)] for i in picks)
    return sorted(pairs)


def radius_graph(coords: np.ndarray, cutoff: float) -> np.ndarray:
    """Directed edges between all node pairs closer than ``cutoff``."""
    x = np.asarray(coords)
    d = np.sqrt(np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1))
    src, dst = np.nonzero((d < cutoff) & ~np.eye(len(x), dtype=bool))
    return np.stack([src, dst], axis=1).astype(np.int64)


# -- spring systems --------------------------------------------------------------
def integrate_springs(
    x0: np.ndarray,
    v0: np.ndarray,
    masses: np.ndarray,
    pairs: np.ndarray,
    n_steps: int,
    dt: float,
    stiffness: float,
    rest_length: float | np.ndarray = 1.0,
) -> np.ndarray:
    """Symplectic Euler for Hookean springs; returns ``(n_steps, N, 3)`` positions.

    Frame 0 is ``x0``.  Forces are equal and opposite per spring, so total
    linear momentum is conserved up to rounding.
    """
    x = np.array(x0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    m = np.asarray(masses, dtype=np.float64)[:, None]
    a_idx, b_idx = pairs[:, 0], pairs[:, 1]
    frames = np.empty((n_steps,) + x.shape)
    frames[0] = x
    for step in range(1, n_steps):
        d = x[b_idx] - x[a_idx]
        length = np.sqrt(np.sum(d * d, axis=1, keepdims=True))
        f = stiffness * (length - rest_length) * d / np.where(length > 0, length, 1.0)
        force = np.zeros_like(x)
        np.add.at(force, a_idx, f)
        np.add.at(force, b_idx, -f)
        v = v + dt * force / m
        x = x + dt * v
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e6:
            raise GenerationError(
                f"spring integration diverged at step {step}; try a smaller dt (got {dt})"
            )
        frames[step] = x
    return frames


def gen_spring_system(
    n_nodes: int,
    n_steps: int,
    dt: float,
    stiffness: float,
    seed: int,
    mean_degree: float = 4.0,
    rest_length: float = 1.0,
    position_scale: float = 1.0,
    velocity_scale: float = 0.5,
    n_types: int = 2,
) -> Trajectory:
    """Random connected spring network integrated from a random start.

    Node type ``k`` has mass ``1 + k`` and a one-hot feature row.  Initial
    velocities have zero total momentum, so the centre of mass stays put.
    """
    if n_nodes < 2:
        raise ContractError(f"a spring system needs at least 2 nodes, got {n_nodes}")
    if n_steps < 1:
        raise ContractError(f"n_steps must be >= 1, got {n_steps}")
    rng = np.random.default_rng(seed)
    pairs = random_connected_graph(n_nodes, mean_degree, rng)
    types = rng.integers(0, n_types, size=n_nodes)
    masses = 1.0 + types.astype(np.float64)
    x0 = rng.standard_normal((n_nodes, 3)) * position_scale
    v0 = rng.standard_normal((n_nodes, 3)) * velocity_scale
    v0 -= (masses[:, None] * v0).sum(axis=0) / masses.sum()
    frames = integrate_springs(x0, v0, masses, pairs, n_steps, dt, stiffness, rest_length)
    features = np.eye(n_types)[types]
    skeleton = GeometricGraph(features, frames[0], undirected_to_directed(pairs))
    return Trajectory(frames, skeleton)


def node_masses(features: np.ndarray) -> np.ndarray:
    """Masses implied by the one-hot type features of :func:`gen_spring_system`."""
    return 1.0 + np.argmax(features, axis=1).astype(np.float64)


def gen_spring_dataset(n_trajectories: int, seed: int, **kwargs) -> list[Trajectory]:
    """Independent systems with per-trajectory seeds ``seed + index``."""
    return [gen_spring_system(seed=seed + i, **kwargs) for i in range(n_trajectories)]


# -- windows ------------------------------------------------------------------------
class Window(NamedTuple):
    start: int
    inputs: np.ndarray  # (T, N, 3)
    targets: np.ndarray  # (horizon, N, 3)


def sample_windows(
    traj: Trajectory, T: int, count: int, seed: int, horizon: int | None = None
) -> list[Window]:
    """Random start ``s``; inputs ``frames[s:s+T]``, targets the next ``horizon`` frames.

    ``horizon`` defaults to ``T`` (a block of ``2T`` consecutive timestamps).
    """
    horizon = T if horizon is None else horizon
    if T < 1 or horizon < 1:
        raise SamplingError(f"T and horizon must be positive, got T={T}, horizon={horizon}")
    span = T + horizon
    if traj.n_frames < span:
        raise SamplingError(f"trajectory has {traj.n_frames} frames, need at least {span}")
    if count <= 0:
        return []
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, traj.n_frames - span + 1, size=count)
    return [
        Window(int(s), traj.frames[s : s + T], traj.frames[s + T : s + span]) for s in starts
    ]


# -- residue structures ------------------------------------------------------------
_TEMPLATE_SEED = 20250101


def residue_templates(seed: int = _TEMPLATE_SEED) -> np.ndarray:
    """Per-category backbone geometry ``(20, 4, 3)`` centred on the CA atom.

    Each category gets its own rigid arrangement, so the category is readable
    from intra-residue distances.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((N_CATEGORIES, 4, 3))
    for k in range(N_CATEGORIES):
        atoms = rng.uniform(-1.2, 1.2, size=(4, 3))
        atoms -= atoms[1]
        out[k] = atoms
    return out


def gen_residue_structure(n_residues: int, seed: int, spacing: float = 3.8) -> ResidueStructure:
    """Random-walk chain of CA positions with randomly oriented category templates."""
    rng = np.random.default_rng(seed)
    templates = residue_templates()
    cats = rng.integers(0, N_CATEGORIES, size=n_residues)
    steps = rng.standard_normal((n_residues, 3))
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    ca = np.cumsum(steps * spacing, axis=0)
    backbone = np.empty((n_residues, 4, 3))
    for i, k in enumerate(cats):
        Q = random_transform(rng, translation_scale=0.0).Q
        backbone[i] = templates[k] @ Q + ca[i]
    return ResidueStructure(cats, backbone)


def gen_residue_dataset(n_structures: int, n_residues: int, seed: int) -> list[ResidueStructure]:
    return [gen_residue_structure(n_residues, seed + i) for i in range(n_structures)]


def residue_graph(res: ResidueStructure, coords: np.ndarray | None = None) -> GeometricGraph:
    """Flatten residues x atoms into ``4N`` nodes.

    Node features are a constant "unknown residue" channel plus the atom-type
    one-hot (every atom of a residue shares the residue part of the row).
    Edges: all atom pairs inside a residue, CA-CA and C-N links between
    consecutive residues.
    """
    n = res.n_residues
    coords = res.backbone if coords is None else np.asarray(coords)
    flat = coords.reshape(n * 4, 3)
    feats = np.concatenate([np.ones((n * 4, 1)), np.tile(np.eye(4), (n, 1))], axis=1)
    pairs = []
    for i in range(n):
        base = 4 * i
        pairs += [(base + a, base + b) for a in range(4) for b in range(a + 1, 4)]
        if i + 1 < n:
            nxt = 4 * (i + 1)
            pairs += [(base + 1, nxt + 1), (base + 2, nxt)]
    return GeometricGraph(feats, flat, undirected_to_directed(pairs))


# -- dataset files ------------------------------------------------------------------
def _traj_record(traj: Trajectory) -> dict:
    return {
        "n_nodes": traj.n_nodes,
        "features": traj.skeleton.node_features.tolist(),
        "edges": traj.skeleton.edges.tolist(),
        "frames": traj.frames.tolist(),
    }


def _res_record(res: ResidueStructure) -> dict:
    return {"categories": res.categories.tolist(), "backbone": res.backbone.tolist()}


def save_dataset(path: str | Path, data: list) -> None:
    """Write trajectories (``.traj.jsonl``) or residue structures (``.res.jsonl``).

    Line 1 is a header naming the format; each later line is one record.
    Floats are written with ``repr`` precision, so values round-trip exactly.
    """
    path = Path(path)
    kind = _kind_for(path, data)
    header = {"format": TRAJ_FORMAT if kind == "traj" else RES_FORMAT, "count": len(data)}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for item in data:
            rec = _traj_record(item) if kind == "traj" else _res_record(item)
            fh.write(json.dumps(rec) + "\n")


def _kind_for(path: Path, data: list) -> str:
    name = path.name
    if name.endswith(".traj.jsonl"):
        return "traj"
    if name.endswith(".res.jsonl"):
        return "res"
    if data and isinstance(data[0], Trajectory):
        return "traj"
    if data and isinstance(data[0], ResidueStructure):
        return "res"
    raise ParseError(f"cannot infer dataset kind from {path}; use .traj.jsonl or .res.jsonl")


def load_dataset(path: str | Path) -> list:
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: line 1: missing header")
    try:
        header = json.loads(lines[0])
        fmt = header["format"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: line 1: bad header ({exc})") from exc
    if fmt not in (TRAJ_FORMAT, RES_FORMAT):
        raise ParseError(f"{path}: line 1: unknown format {fmt!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if fmt == TRAJ_FORMAT:
                out.append(_parse_traj(rec))
            else:
                out.append(
                    ResidueStructure(np.asarray(rec["categories"]), np.asarray(rec["backbone"]))
                )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: line {lineno} (record {lineno - 2}): {exc}") from exc
    return out


def _parse_traj(rec: dict) -> Trajectory:
    n = int(rec["n_nodes"])
    frames = np.asarray(rec["frames"], dtype=np.float64)
    feats = np.asarray(rec["features"], dtype=np.float64).reshape(n, -1)
    edges = np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 2)
    if frames.ndim != 3 or frames.shape[1:] != (n, 3):
        raise ContractError(f"frames shape {frames.shape} inconsistent with n_nodes={n}")
    return Trajectory(frames, GeometricGraph(feats, frames[0], edges))
