"""Marching-cubes case tables, generated at import.

Corners of a cube are numbered so bit 2/1/0 of the corner index is the
x/y/z offset, matching the octree child numbering. The twelve edges get
fixed ids: 0-3 run along x, 4-7 along y, 8-11 along z.

For each of the 256 inside/outside corner patterns (bit c set means corner
c is inside, i.e. its value is negative) the generator pairs crossed edges
on every face, walks the resulting cycles into closed polygon loops, and
fan-triangulates them. On a face crossed four times the two crossed edges
around each inside corner are paired, which keeps the two inside corners
separated; the rule depends only on the face's own pattern, so the two
cubes sharing a face always agree and the extracted surface is watertight.
Loops are oriented so triangle normals point toward positive values.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CORNER_OFFSETS",
    "EDGE_CORNERS",
    "EDGE_AXIS",
    "EDGE_CELL_OFFSET",
    "TRI_TABLE",
    "TRI_COUNT",
]

CORNER_OFFSETS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1]
                           for c in range(8)], dtype=np.int64)

EDGE_CORNERS = ((0, 4), (1, 5), (2, 6), (3, 7),
                (0, 2), (1, 3), (4, 6), (5, 7),
                (0, 1), (2, 3), (4, 5), (6, 7))

EDGE_AXIS = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2], dtype=np.int64)

# cell offset of the edge's low corner within the cube
EDGE_CELL_OFFSET = np.array([CORNER_OFFSETS[a] for a, _ in EDGE_CORNERS],
                            dtype=np.int64)

_FACES = []
for _axis in range(3):
    _bit = 2 - _axis
    for _side in range(2):
        _corners = tuple(c for c in range(8) if (c >> _bit) & 1 == _side)
        _edges = tuple(e for e, (a, b) in enumerate(EDGE_CORNERS)
                       if a in _corners and b in _corners)
        _FACES.append((_corners, _edges))


def _face_pairs(inside, crossed, corners, edges):
    """Pair the crossed edges of one face into surface-polygon links."""
    face_crossed = [e for e in edges if crossed[e]]
    if not face_crossed:
        return []
    if len(face_crossed) == 2:
        return [(face_crossed[0], face_crossed[1])]
    # four crossings: inside corners sit on a diagonal; pairing around each
    # keeps them separated and depends only on this face's pattern
    pairs = []
    for c in corners:
        if inside[c]:
            inc = [e for e in face_crossed if c in EDGE_CORNERS[e]]
            assert len(inc) == 2
            pairs.append((inc[0], inc[1]))
    assert len(pairs) == 2
    return pairs


def _loops_for_case(mask):
    inside = [(mask >> c) & 1 == 1 for c in range(8)]
    crossed = [inside[a] != inside[b] for a, b in EDGE_CORNERS]
    links: dict[int, list[int]] = {e: [] for e in range(12) if crossed[e]}
    for corners, edges in _FACES:
        for a, b in _face_pairs(inside, crossed, corners, edges):
            links[a].append(b)
            links[b].append(a)
    for partners in links.values():
        assert len(partners) == 2
    loops = []
    seen = set()
    for start in links:
        if start in seen:
            continue
        loop = [start]
        prev, cur = None, start
        while True:
            a, b = links[cur]
            nxt = b if a == prev else a
            if nxt == start:
                break
            loop.append(nxt)
            prev, cur = cur, nxt
        assert len(loop) >= 3
        seen.update(loop)
        loops.append(loop)
    assert sum(len(l) for l in loops) == sum(crossed)
    return inside, loops


def _oriented(loop, inside):
    """Order the loop so its normal points from inside toward outside."""
    mids = [CORNER_OFFSETS[list(EDGE_CORNERS[e])].mean(axis=0) for e in loop]
    normal = np.zeros(3)
    for i in range(len(mids)):
        normal += np.cross(mids[i], mids[(i + 1) % len(mids)])
    outward = np.zeros(3)
    for e in loop:
        a, b = EDGE_CORNERS[e]
        if inside[b]:
            a, b = b, a
        outward += CORNER_OFFSETS[b] - CORNER_OFFSETS[a]
    s = float(np.dot(normal, outward))
    assert abs(s) > 1e-12
    return loop if s > 0 else loop[::-1]


def _build_tables():
    table = np.full((256, 32), -1, dtype=np.int8)
    count = np.zeros(256, dtype=np.int8)
    for mask in range(256):
        inside, loops = _loops_for_case(mask)
        entries = []
        for loop in loops:
            loop = _oriented(loop, inside)
            for i in range(1, len(loop) - 1):
                entries.extend((loop[0], loop[i], loop[i + 1]))
        assert len(entries) <= table.shape[1]
        table[mask, :len(entries)] = entries
        count[mask] = len(entries) // 3
    return table, count


TRI_TABLE, TRI_COUNT = _build_tables()
