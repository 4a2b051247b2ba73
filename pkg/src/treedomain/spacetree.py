"""Space-tree geometry: grid hulls, subdivision, linearization, partitioning.

Grids are axis-aligned boxes arranged in a tree. A grid at depth d with
factor (rx, ry, rz) occupies integer lattice cell (x, y, z) with
0 <= x < rx**d and so on; its physical box is the root box scaled by the
lattice, so face adjacency of same-depth grids is exact integer
comparison (no floating-point tolerance anywhere in the oracle).

Hulls carry topology only. The simulation payload is an opaque byte
blob attached at distribution time and dragged along by migration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import codec
from .errors import ConfigurationError, DumpFormatError, StateError


class RefinementFactor(tuple):
    """Children per axis, each 1..8 (three position bits), product >= 2."""

    def __new__(cls, rx: int, ry: int, rz: int):
        for r in (rx, ry, rz):
            if not 1 <= r <= 8:
                raise ConfigurationError(f"refinement factor {r} out of 1..8")
        if rx * ry * rz < 2:
            raise ConfigurationError("refinement factor must produce >= 2 children")
        return super().__new__(cls, (rx, ry, rz))

    @property
    def rx(self) -> int:
        return self[0]

    @property
    def ry(self) -> int:
        return self[1]

    @property
    def rz(self) -> int:
        return self[2]

    @property
    def count(self) -> int:
        return self[0] * self[1] * self[2]

    @classmethod
    def parse(cls, text: str) -> "RefinementFactor":
        parts = text.split(",")
        if len(parts) != 3:
            raise ConfigurationError(f"expected rx,ry,rz got {text!r}")
        return cls(*(int(p) for p in parts))


BISECTION = RefinementFactor(2, 2, 2)


@dataclass(frozen=True)
class DomainSpec:
    """Root box, refinement factor and depth bound of the domain."""

    factor: RefinementFactor = BISECTION
    max_depth: int = 8
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extent: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cells_per_grid: int = 8

    def __post_init__(self):
        if self.max_depth < 0:
            raise ConfigurationError("max_depth must be >= 0")
        if self.cells_per_grid < 0:
            raise ConfigurationError("cells_per_grid must be >= 0")


class GridHull:
    """One grid's topological record: links only, no field data."""

    __slots__ = ("uid", "depth", "cell", "parent", "children", "neighbors", "payload")

    def __init__(self, uid, depth, cell, parent=None, children=None,
                 neighbors=None, payload=b""):
        self.uid = uid
        self.depth = depth
        self.cell = cell
        self.parent = parent
        self.children = children
        self.neighbors = list(neighbors) if neighbors is not None else [None] * 6
        self.payload = payload

    @property
    def refined(self) -> bool:
        return self.children is not None

    def clone(self) -> "GridHull":
        return GridHull(self.uid, self.depth, self.cell, self.parent,
                        None if self.children is None else list(self.children),
                        list(self.neighbors), self.payload)

    def __repr__(self):
        return f"GridHull(uid={format_uid(self.uid)}, depth={self.depth}, cell={self.cell})"


def child_slot(factor: RefinementFactor, p_i: int, p_j: int, p_k: int) -> int:
    """Linear index of a child in the hash-sorted children array."""
    return (p_k * factor.ry + p_j) * factor.rx + p_i


def slot_position(factor: RefinementFactor, slot: int) -> tuple[int, int, int]:
    p_i = slot % factor.rx
    p_j = (slot // factor.rx) % factor.ry
    p_k = slot // (factor.rx * factor.ry)
    return p_i, p_j, p_k


def hash_slot(factor: RefinementFactor, hash_code: int) -> int:
    p_i, p_j, p_k = codec.decode_position_hash(hash_code)
    if p_i >= factor.rx or p_j >= factor.ry or p_k >= factor.rz:
        raise StateError(f"hash {hash_code} outside factor {tuple(factor)}")
    return child_slot(factor, p_i, p_j, p_k)


def child_cell(parent_cell, factor: RefinementFactor, pos) -> tuple[int, int, int]:
    return (parent_cell[0] * factor.rx + pos[0],
            parent_cell[1] * factor.ry + pos[1],
            parent_cell[2] * factor.rz + pos[2])


def position_in_parent(cell, factor: RefinementFactor) -> tuple[int, int, int]:
    return cell[0] % factor.rx, cell[1] % factor.ry, cell[2] % factor.rz


def hull_bbox(spec: DomainSpec, hull: GridHull):
    """Physical (origin, extent) of a hull inside the root box."""
    fx, fy, fz = spec.factor
    div = (fx ** hull.depth, fy ** hull.depth, fz ** hull.depth)
    origin = tuple(spec.origin[a] + spec.extent[a] * hull.cell[a] / div[a] for a in range(3))
    extent = tuple(spec.extent[a] / div[a] for a in range(3))
    return origin, extent


def subdivide(parent: GridHull, factor: RefinementFactor, uid_for) -> list[GridHull]:
    """Create the full child set of an unrefined grid.

    ``uid_for(slot, hash)`` supplies each child's UID. Sibling neighbor
    slots are linked locally; links across the parent's faces are the
    caller's business (tree index or protocol queries).
    """
    if parent.refined:
        raise StateError(f"grid {format_uid(parent.uid)} is already refined")
    rx, ry, rz = factor
    uids = [None] * factor.count
    children = []
    for p_k in range(rz):
        for p_j in range(ry):
            for p_i in range(rx):
                slot = child_slot(factor, p_i, p_j, p_k)
                hash_code = codec.encode_position_hash(p_i, p_j, p_k)
                uid = uid_for(slot, hash_code)
                uids[slot] = uid
                children.append(GridHull(
                    uid, parent.depth + 1,
                    child_cell(parent.cell, factor, (p_i, p_j, p_k)),
                    parent=parent.uid,
                    payload=bytes(len(parent.payload))))
    for hull in children:
        p_i, p_j, p_k = position_in_parent(hull.cell, factor)
        if p_i + 1 < rx:
            hull.neighbors[codec.EAST] = uids[child_slot(factor, p_i + 1, p_j, p_k)]
        if p_i > 0:
            hull.neighbors[codec.WEST] = uids[child_slot(factor, p_i - 1, p_j, p_k)]
        if p_j + 1 < ry:
            hull.neighbors[codec.NORTH] = uids[child_slot(factor, p_i, p_j + 1, p_k)]
        if p_j > 0:
            hull.neighbors[codec.SOUTH] = uids[child_slot(factor, p_i, p_j - 1, p_k)]
        if p_k + 1 < rz:
            hull.neighbors[codec.TOP] = uids[child_slot(factor, p_i, p_j, p_k + 1)]
        if p_k > 0:
            hull.neighbors[codec.BOTTOM] = uids[child_slot(factor, p_i, p_j, p_k - 1)]
    parent.children = uids
    return children


class SpaceTree:
    """Global (single-owner) view of the domain, used by the master rank
    for construction and by the consistency checker as reconstruction
    target. All grids carry rank-0 UIDs in construction order."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.grids: dict[int, GridHull] = {}
        self.root_uid: int | None = None
        self._next_gid = 0
        self._depth_index: dict[int, dict[tuple, int]] = {}

    def _register(self, hull: GridHull) -> int:
        self.grids[hull.uid] = hull
        self._depth_index.setdefault(hull.depth, {})[hull.cell] = hull.uid
        return hull.uid

    def _alloc_uid(self, hash_code: int) -> int:
        uid = codec.encode_uid(0, self._next_gid, hash_code)
        self._next_gid += 1
        return uid

    @classmethod
    def build_root(cls, spec: DomainSpec) -> "SpaceTree":
        tree = cls(spec)
        root = GridHull(tree._alloc_uid(0), 0, (0, 0, 0))
        tree.root_uid = root.uid
        tree._register(root)
        return tree

    @classmethod
    def build_uniform(cls, spec: DomainSpec, depth: int) -> "SpaceTree":
        """Uniformly refine the root down to ``depth`` levels."""
        if depth > spec.max_depth:
            raise ConfigurationError(f"depth {depth} exceeds max_depth {spec.max_depth}")
        tree = cls.build_root(spec)
        frontier = [tree.root_uid]
        for _ in range(depth):
            nxt = []
            for uid in frontier:
                nxt.extend(tree.refine(uid))
            frontier = nxt
        return tree

    def refine(self, uid: int) -> list[int]:
        """Subdivide one grid and wire all equal-depth neighbor links."""
        parent = self.grids[uid]
        if parent.depth >= self.spec.max_depth:
            raise StateError(f"refining past max_depth {self.spec.max_depth}")
        children = subdivide(parent, self.spec.factor,
                             lambda slot, h: self._alloc_uid(h))
        level = self._depth_index.setdefault(parent.depth + 1, {})
        for hull in children:
            self._register(hull)
        for hull in children:
            x, y, z = hull.cell
            for direction, (dx, dy, dz) in enumerate(codec.DIRECTION_OFFSETS):
                other = level.get((x + dx, y + dy, z + dz))
                if other is not None and other != hull.uid:
                    hull.neighbors[direction] = other
                    self.grids[other].neighbors[codec.opposite(direction)] = hull.uid
        return [h.uid for h in children]

    def grid_count(self) -> int:
        return len(self.grids)

    def linearize(self, scheme: str = "morton") -> list[int]:
        """Space-filling-curve order over all grids (parents first)."""
        if scheme == "morton":
            key = self._morton_key
        elif scheme == "depthfirst":
            key = self._depthfirst_key
        else:
            raise ConfigurationError(f"unknown linearization scheme {scheme!r}")
        return sorted(self.grids, key=lambda uid: key(self.grids[uid]))

    def _path_positions(self, hull: GridHull):
        fx, fy, fz = self.spec.factor
        x, y, z = hull.cell
        out = []
        for level in range(1, hull.depth + 1):
            shift = hull.depth - level
            out.append(((x // fx ** shift) % fx,
                        (y // fy ** shift) % fy,
                        (z // fz ** shift) % fz))
        return out

    def _morton_key(self, hull: GridHull):
        return tuple(_interleave3(i, j, k) for i, j, k in self._path_positions(hull))

    def _depthfirst_key(self, hull: GridHull):
        return tuple(codec.encode_position_hash(i, j, k)
                     for i, j, k in self._path_positions(hull))


def _interleave3(i: int, j: int, k: int) -> int:
    # 9-bit interleave, k bits most significant within each triple.
    code = 0
    for b in (2, 1, 0):
        code = (code << 3) | (((k >> b) & 1) << 2) | (((j >> b) & 1) << 1) | ((i >> b) & 1)
    return code


def uniform_grid_count(factor: RefinementFactor, depth: int) -> int:
    """Closed-form grid total of a uniform tree: sum of r^l for l=0..depth."""
    r = factor.count
    return sum(r ** level for level in range(depth + 1))


def partition(order: list[int], nranks: int) -> list[list[int]]:
    """Cut a linearized order into nranks contiguous slices, sizes within 1."""
    if nranks < 1:
        raise ConfigurationError("need at least one rank")
    if len(order) < nranks:
        raise ConfigurationError(
            f"{len(order)} grids cannot feed {nranks} ranks; every rank needs one")
    base, extra = divmod(len(order), nranks)
    slices = []
    start = 0
    for r in range(nranks):
        size = base + (1 if r < extra else 0)
        slices.append(order[start:start + size])
        start += size
    return slices


def neighbor_oracle(grids: Mapping[int, GridHull]) -> dict[int, list]:
    """Brute-force face adjacency over all same-depth grid pairs.

    Deliberately O(n^2) per depth level and independent of every stored
    link, so it can referee the protocol's bookkeeping.
    """
    by_depth: dict[int, list] = {}
    for uid, hull in grids.items():
        by_depth.setdefault(hull.depth, []).append((uid, hull.cell))
    result = {uid: [None] * 6 for uid in grids}
    for items in by_depth.values():
        n = len(items)
        for a in range(n):
            uid_a, (xa, ya, za) = items[a]
            slots_a = result[uid_a]
            for b in range(a + 1, n):
                uid_b, (xb, yb, zb) = items[b]
                dx = xb - xa
                dy = yb - ya
                dz = zb - za
                if dy == 0 and dz == 0:
                    if dx == 1:
                        slots_a[codec.EAST] = uid_b
                        result[uid_b][codec.WEST] = uid_a
                    elif dx == -1:
                        slots_a[codec.WEST] = uid_b
                        result[uid_b][codec.EAST] = uid_a
                elif dx == 0 and dz == 0:
                    if dy == 1:
                        slots_a[codec.NORTH] = uid_b
                        result[uid_b][codec.SOUTH] = uid_a
                    elif dy == -1:
                        slots_a[codec.SOUTH] = uid_b
                        result[uid_b][codec.NORTH] = uid_a
                elif dx == 0 and dy == 0:
                    if dz == 1:
                        slots_a[codec.TOP] = uid_b
                        result[uid_b][codec.BOTTOM] = uid_a
                    elif dz == -1:
                        slots_a[codec.BOTTOM] = uid_b
                        result[uid_b][codec.TOP] = uid_a
    return result


# --- topology dump text format -------------------------------------------
#
# One line per grid:
#   grid <uid> depth=<d> cell=<x>,<y>,<z> parent=<uid|-> \
#        neighbors=<u>,<u>,<u>,<u>,<u>,<u> children=<u>,...|-
# UIDs print as rank.gid.hash; '-' is an empty slot.

def format_uid(uid: int | None) -> str:
    if uid is None:
        return "-"
    u = codec.decode_uid(uid)
    return f"{u.rank}.{u.gid}.{u.hash}"


def parse_uid(text: str) -> int | None:
    if text == "-":
        return None
    try:
        rank, gid, hash_code = (int(p) for p in text.split("."))
        return codec.encode_uid(rank, gid, hash_code)
    except (ValueError, TypeError) as exc:
        raise DumpFormatError(f"bad uid {text!r}") from exc


def format_grid_record(hull: GridHull) -> str:
    cell = ",".join(str(c) for c in hull.cell)
    neighbors = ",".join(format_uid(u) for u in hull.neighbors)
    if hull.children is None:
        children = "-"
    else:
        children = ",".join(format_uid(u) for u in hull.children)
    return (f"grid {format_uid(hull.uid)} depth={hull.depth} cell={cell} "
            f"parent={format_uid(hull.parent)} neighbors={neighbors} "
            f"children={children}")


def parse_grid_record(line: str) -> GridHull:
    try:
        fields = dict(part.split("=", 1) for part in line.split()[2:])
        uid = parse_uid(line.split()[1])
        cell = tuple(int(c) for c in fields["cell"].split(","))
        neighbors = [parse_uid(t) for t in fields["neighbors"].split(",")]
        children_text = fields["children"]
        children = (None if children_text == "-"
                    else [parse_uid(t) for t in children_text.split(",")])
        if uid is None or len(cell) != 3 or len(neighbors) != 6:
            raise DumpFormatError(f"bad grid record {line!r}")
        return GridHull(uid, int(fields["depth"]), cell,
                        parent=parse_uid(fields["parent"]),
                        children=children, neighbors=neighbors)
    except DumpFormatError:
        raise
    except Exception as exc:
        raise DumpFormatError(f"bad grid record {line!r}") from exc
