"""Deterministic multi-robot grid world and the exploration episode loop.

Each planning step follows the hierarchical pipeline: every robot detects
frontiers on its own (closed) belief and sends a sparse payload; the center
decodes, reconstructs and merges the maps, clusters unknown-facing frontiers,
asks the policy for a robot-to-cluster assignment, plans local routes, and
the robots then follow their paths while scanning.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from .cluster import Cluster, MeanShiftConfig, mean_shift
from .errors import DomainError, UnreachableError
from .frontier import (FrontierSet, SparseFrontierMap, decode_sparse, dense_size,
                       detect_frontiers, encode_sparse, merge_frontiers, reconstruct_grid)
from .global_planner import assign, build_observation, forward_observation
from .gridmap import (FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose, SensorModel,
                      close_free_space, coverage, fuse_tristate, grid_to_text, known_area,
                      _parse_rows)
from .local_planner import UtilityParams, optimize_route, should_plan_locally, subcluster
from .pathing import DistanceMatrix, astar, distance_matrix

SIZE_CLASSES = {
    # side, minimum room side, maximum room side
    "small": (48, 7, 16),
    "middle": (96, 9, 24),
    "large": (160, 10, 30),
}

NO_TARGET = "no_reachable_target"
SMALL_CLUSTERS = "all_clusters_small"
STEP_LIMIT = "step_limit"

METRICS_FIELDS = ["seed", "size_class", "policy", "steps", "coverage", "dense_bytes",
                  "sparse_bytes", "reduction_pct", "terminated_reason"]


# -- worlds --------------------------------------------------------------------------

@dataclass(eq=False)
class World:
    truth: np.ndarray
    spawns: list
    seed: int = 0
    size_class: str = "custom"

    @property
    def width(self) -> int:
        return self.truth.shape[1]

    @property
    def height(self) -> int:
        return self.truth.shape[0]

    def to_text(self) -> str:
        head, rows = grid_to_text(self.truth).split("\n", 1)
        spawn = "spawn " + " ".join(f"{x} {y}" for x, y in self.spawns)
        return f"{head}\n{spawn}\n{rows}"

    @classmethod
    def from_text(cls, text: str, seed: int = 0, size_class: str = "custom") -> "World":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        w, h = (int(t) for t in lines[0].split())
        tokens = lines[1].split()
        if not tokens or tokens[0] != "spawn":
            raise DomainError("world file needs a 'spawn x1 y1 ...' line after the size")
        vals = [int(t) for t in tokens[1:]]
        if len(vals) % 2:
            raise DomainError("spawn line needs x y pairs")
        spawns = list(zip(vals[0::2], vals[1::2]))
        return cls(_parse_rows(lines[2:], w, h), spawns, seed, size_class)


def _choose_wall(rng, lo: int, hi: int, ok: Callable[[int], bool]):
    candidates = [c for c in range(lo, hi + 1) if ok(c)]
    if not candidates:
        return None
    return int(candidates[rng.integers(len(candidates))])


def _partition(grid, rng, x0, y0, x1, y1, min_room, max_room, rooms):
    w, h = x1 - x0 + 1, y1 - y0 + 1
    can_v, can_h = w >= 2 * min_room + 1, h >= 2 * min_room + 1
    small_enough = w <= max_room and h <= max_room
    if not (can_v or can_h) or (small_enough and rng.random() < 0.5):
        rooms.append((x0, y0, x1, y1))
        return
    vertical = can_v and (not can_h or w > h or (w == h and rng.random() < 0.5))
    if vertical:
        def ok(c):  # keep the new wall's ends off door openings
            return not ((grid[y0 - 1, c - 1:c + 2] == FREE).any()
                        or (grid[y1 + 1, c - 1:c + 2] == FREE).any())
        c = _choose_wall(rng, x0 + min_room, x1 - min_room, ok)
        if c is None:
            rooms.append((x0, y0, x1, y1))
            return
        grid[y0:y1 + 1, c] = OCCUPIED
        span = int(rng.integers(3, 5))
        d = int(rng.integers(y0, y1 - span + 2))
        grid[d:d + span, c] = FREE
        _partition(grid, rng, x0, y0, c - 1, y1, min_room, max_room, rooms)
        _partition(grid, rng, c + 1, y0, x1, y1, min_room, max_room, rooms)
    else:
        def ok(c):
            return not ((grid[c - 1:c + 2, x0 - 1] == FREE).any()
                        or (grid[c - 1:c + 2, x1 + 1] == FREE).any())
        c = _choose_wall(rng, y0 + min_room, y1 - min_room, ok)
        if c is None:
            rooms.append((x0, y0, x1, y1))
            return
        grid[c, x0:x1 + 1] = OCCUPIED
        span = int(rng.integers(3, 5))
        d = int(rng.integers(x0, x1 - span + 2))
        grid[c, d:d + span] = FREE
        _partition(grid, rng, x0, y0, x1, c - 1, min_room, max_room, rooms)
        _partition(grid, rng, x0, c + 1, x1, y1, min_room, max_room, rooms)


def generate_world(seed: int, size_class: str = "small", n_robots: int = 2) -> World:
    """Rooms and doors from a recursive partition of a walled square."""
    if size_class not in SIZE_CLASSES:
        raise DomainError(f"unknown size class {size_class!r}")
    side, min_room, max_room = SIZE_CLASSES[size_class]
    rng = np.random.default_rng([seed, side])
    grid = np.full((side, side), OCCUPIED, dtype=np.uint8)
    grid[1:-1, 1:-1] = FREE
    rooms: list = []
    _partition(grid, rng, 1, 1, side - 2, side - 2, min_room, max_room, rooms)
    x0, y0, x1, y1 = rooms[int(rng.integers(len(rooms)))]
    cx, cy = (x0 + x1) // 2, (y0 + y1) // 2
    spawns = []
    ring = [(dx, dy) for r in range(0, max(x1 - x0, y1 - y0)) for dy in range(-r, r + 1)
            for dx in range(-r, r + 1) if max(abs(dx), abs(dy)) == r and dx % 2 == 0 and dy % 2 == 0]
    for dx, dy in ring:
        x, y = cx + dx, cy + dy
        if x0 <= x <= x1 and y0 <= y <= y1 and grid[y, x] == FREE and (x, y) not in spawns:
            spawns.append((x, y))
        if len(spawns) == n_robots:
            break
    if len(spawns) < n_robots:
        raise DomainError("spawn room too small for the robot count")
    return World(grid, spawns, seed, size_class)


def free_components(grid: np.ndarray) -> int:
    _, n = ndimage.label(grid == FREE)
    return n


# -- sensing and motion --------------------------------------------------------------

def lidar_scan(world: World, pose, sensor_range: int):
    """Cells visible from ``pose``: ``(xs, ys, occupied)``."""
    x, y = (pose.x, pose.y) if hasattr(pose, "x") else pose
    if world.truth[y, x] != FREE:
        raise DomainError(f"sensor pose ({x}, {y}) is not free")
    xs, ys, st = kernels.visible_cells(world.truth == OCCUPIED, (x, y), sensor_range)
    return xs, ys, st.astype(bool)


@dataclass(eq=False)
class RobotSim:
    pose: Pose
    belief: OccupancyGrid
    route: list = field(default_factory=list)
    trail: list = field(default_factory=list)
    blocked: bool = False

    def tristate(self, model: SensorModel) -> np.ndarray:
        return self.belief.classify(model)


def scan_into(robot: RobotSim, world: World, sensor_range: int, model: SensorModel) -> int:
    xs, ys, hits = lidar_scan(world, robot.pose, sensor_range)
    robot.belief.fuse(xs, ys, hits, model)
    return len(xs)


def advance(robot: RobotSim, world: World, path_cells, motion_budget: int,
            sensor_range: int, model: SensorModel) -> RobotSim:
    """Follow ``path_cells`` (starting at the robot) for up to ``motion_budget`` moves.

    Scans before moving and after every move.  Stops and flags ``blocked``
    when the next move is not through free cells of the robot's own belief.
    """
    robot.blocked = False
    scan_into(robot, world, sensor_range, model)
    cells = [tuple(c) for c in path_cells]
    if cells and cells[0] == robot.pose.cell:
        cells = cells[1:]
    for nx, ny in cells[:motion_budget]:
        tri = robot.belief.classify(model)
        x, y = robot.pose.x, robot.pose.y
        if abs(nx - x) > 1 or abs(ny - y) > 1:
            raise DomainError("path cells must be 8-adjacent")
        clear = tri[ny, nx] == FREE
        if nx != x and ny != y:
            clear = clear and tri[y, nx] == FREE and tri[ny, x] == FREE
        if not clear:
            robot.blocked = True
            break
        robot.pose = Pose(nx, ny, robot.pose.robot_id)
        robot.trail.append((nx, ny))
        scan_into(robot, world, sensor_range, model)
    return robot


# -- episode -------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    n_robots: int = 2
    sensor_range: int = 20
    cluster_min_size: int = 2
    max_steps: int = 200
    motion_budget: int | None = None  # None: equal to sensor_range
    closing_radius: int = 1
    resolution: float = 0.05
    sensor: SensorModel = field(default_factory=SensorModel)
    utility: UtilityParams = field(default_factory=UtilityParams)
    clustering: MeanShiftConfig = field(default_factory=MeanShiftConfig)

    def __post_init__(self):
        if self.n_robots < 1 or self.sensor_range < 0:
            raise DomainError("need n_robots >= 1 and sensor_range >= 0")

    @property
    def budget(self) -> int:
        return self.sensor_range if self.motion_budget is None else self.motion_budget


@dataclass(eq=False)
class PlanningState:
    """What the center knows when it plans."""

    step: int
    robots: list            # Pose per robot
    grid: np.ndarray        # merged reconstructed grid
    frontiers: FrontierSet
    clusters: list
    dist: DistanceMatrix | None
    area: int               # known cells of the merged reconstruction
    terminated: str | None = None

    def observation(self):
        h, w = self.grid.shape
        return build_observation(self.robots, self.clusters, self.dist, w, h)


@dataclass
class EpisodeMetrics:
    seed: int
    size_class: str
    policy: str
    steps: int = 0
    coverage: float = 0.0
    dense_bytes: int = 0
    sparse_bytes: int = 0
    terminated_reason: str = STEP_LIMIT
    payload_sizes: list = field(default_factory=list, repr=False)
    coverage_trace: list = field(default_factory=list, repr=False)
    area_trace: list = field(default_factory=list, repr=False)

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.sparse_bytes / self.dense_bytes) if self.dense_bytes else 0.0

    def row(self) -> list:
        return [self.seed, self.size_class, self.policy, self.steps, f"{self.coverage:.6f}",
                self.dense_bytes, self.sparse_bytes, f"{self.reduction_pct:.4f}",
                self.terminated_reason]

    def steps_to_coverage(self, target: float) -> int | None:
        for step, cov in enumerate(self.coverage_trace):
            if cov >= target:
                return step
        return None


class Episode:
    """Stepwise driver: ``state`` is the current planning state; ``act`` moves robots."""

    def __init__(self, world: World, config: SimConfig, seed: int = 0, policy_name: str = ""):
        if len(world.spawns) < config.n_robots:
            raise DomainError("world has fewer spawn points than robots")
        self.world = world
        self.config = config
        self.robots = [
            RobotSim(Pose(x, y, i), OccupancyGrid.blank(world.width, world.height,
                                                        config.resolution, config.sensor))
            for i, (x, y) in enumerate(world.spawns[:config.n_robots])
        ]
        self.metrics = EpisodeMetrics(seed, world.size_class, policy_name)
        self.step = 0
        for r in self.robots:
            scan_into(r, world, config.sensor_range, config.sensor)
        self.state = self._preprocess()

    # explored area as seen by the robots themselves (coverage metric)
    def explored(self) -> np.ndarray:
        return fuse_tristate([r.tristate(self.config.sensor) for r in self.robots])

    def _transmit(self, robot: RobotSim) -> tuple[FrontierSet, Pose]:
        w, h = self.world.width, self.world.height
        local = close_free_space(robot.tristate(self.config.sensor), self.config.closing_radius)
        found = detect_frontiers(local)
        payload = encode_sparse(SparseFrontierMap.from_frontiers(
            found, robot.pose, w, h, self.config.resolution))
        self.metrics.sparse_bytes += len(payload)
        self.metrics.dense_bytes += dense_size(w, h)
        self.metrics.payload_sizes.append(len(payload))
        received = decode_sparse(payload)
        return received.frontiers, received.pose

    def _preprocess(self) -> PlanningState:
        w, h = self.world.width, self.world.height
        cfg = self.config
        received = [self._transmit(r) for r in self.robots]
        grids = [reconstruct_grid(f, pose, w, h, cfg.closing_radius) for f, pose in received]
        merged = fuse_tristate(grids)
        poses = [pose for _, pose in received]
        for p in poses:
            merged[p.y, p.x] = FREE
        frontiers = merge_frontiers([f for f, _ in received], grids)
        area = known_area(merged)
        self.metrics.coverage = coverage(self.explored(), self.world.truth)
        self.metrics.coverage_trace.append(self.metrics.coverage)
        self.metrics.area_trace.append(area)
        state = PlanningState(self.step, poses, merged, frontiers, [], None, area)
        if len(frontiers.f_un) == 0:
            state.terminated = NO_TARGET
            return state
        state.clusters = mean_shift(frontiers.f_un, cfg.clustering)
        if all(c.gain < cfg.cluster_min_size for c in state.clusters):
            state.terminated = SMALL_CLUSTERS
            return state
        centers = [c.center for c in state.clusters]
        state.dist = distance_matrix(merged, poses, centers)
        if not state.dist.reachable.any():
            state.terminated = NO_TARGET
        return state

    def _route_cells(self, robot: RobotSim, cluster: Cluster, local: bool) -> list:
        # the robot follows the merged map but trusts its own obstacle readings
        grid = self.state.grid.copy()
        grid[robot.tristate(self.config.sensor) == OCCUPIED] = OCCUPIED
        start = robot.pose.cell
        if local:
            targets = [t for t in subcluster(cluster.members)
                       if grid[t.center[1], t.center[0]] == FREE]
            try:
                route = optimize_route(start, [t.center for t in targets],
                                       [t.gain for t in targets], grid, self.config.utility)
                stops = route.cells
            except (UnreachableError, DomainError):
                stops = [start, cluster.center]
        else:
            stops = [start, cluster.center]
        cells = [start]
        budget = self.config.budget
        for a, b in zip(stops[:-1], stops[1:]):
            if len(cells) > budget:
                break
            try:
                leg = astar(grid, a, b).cells
            except (UnreachableError, DomainError):
                break
            cells.extend(tuple(int(v) for v in c) for c in leg[1:])
        return cells

    def act(self, assignment: Sequence) -> float:
        """Apply one assignment (cluster index or None per robot); returns the area gain."""
        cfg = self.config
        state = self.state
        local = should_plan_locally(state.clusters, cfg.utility.theta)
        for robot, k in zip(self.robots, assignment):
            if k is None or not state.dist.reachable[robot.pose.robot_id, k]:
                robot.route = []
                scan_into(robot, self.world, cfg.sensor_range, cfg.sensor)
                continue
            robot.route = self._route_cells(robot, state.clusters[k], local)
            advance(robot, self.world, robot.route, cfg.budget, cfg.sensor_range, cfg.sensor)
        self.step += 1
        self.metrics.steps = self.step
        prev_area = state.area
        self.state = self._preprocess()
        return self.state.area - prev_area

    @property
    def done(self) -> str | None:
        if self.state.terminated:
            return self.state.terminated
        if self.step >= self.config.max_steps:
            return STEP_LIMIT
        return None

    def finish(self) -> EpisodeMetrics:
        self.metrics.terminated_reason = self.done or STEP_LIMIT
        return self.metrics


# -- policies ---------------------------------------------------------------------

def greedy_baseline_policy(robots: Sequence, clusters: Sequence, dist) -> list:
    """Robots in index order take the nearest unclaimed reachable cluster."""
    entries = np.asarray(getattr(dist, "entries", dist), dtype=np.float64)
    taken: set = set()
    out: list = []
    for i in range(len(robots)):
        best, best_d = None, np.inf
        for k in range(len(clusters)):
            if k not in taken and entries[i, k] < best_d:
                best, best_d = k, entries[i, k]
        out.append(best)
        if best is not None:
            taken.add(best)
    return out


class GreedyPolicy:
    name = "greedy"

    def __call__(self, state: PlanningState) -> list:
        return greedy_baseline_policy(state.robots, state.clusters, state.dist)


class LearnedPolicy:
    """Deterministic evaluation policy: network affinities plus Hungarian matching."""

    name = "learned"

    def __init__(self, params):
        self.params = params

    def __call__(self, state: PlanningState) -> list:
        result = forward_observation(state.observation(), self.params)
        return assign(result.affinity())


def run_episode(config: SimConfig, world: World, policy, seed: int = 0) -> EpisodeMetrics:
    episode = Episode(world, config, seed, getattr(policy, "name", "custom"))
    while episode.done is None:
        episode.act(policy(episode.state))
    return episode.finish()


def metrics_csv(rows: Sequence[EpisodeMetrics], mean_row: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_FIELDS)
    for m in rows:
        writer.writerow(m.row())
    if mean_row and rows:
        writer.writerow(["mean", rows[0].size_class, rows[0].policy,
                         f"{np.mean([m.steps for m in rows]):.4f}",
                         f"{np.mean([m.coverage for m in rows]):.6f}",
                         f"{np.mean([m.dense_bytes for m in rows]):.4f}",
                         f"{np.mean([m.sparse_bytes for m in rows]):.4f}",
                         f"{np.mean([m.reduction_pct for m in rows]):.4f}", ""])
    return buf.getvalue()
