"""Pure-Python octree kernels.

Reference implementation of the hot loops: tree construction from reduction
pyramids, mean propagation, densification, the restructuring descent pass,
and the leaf-summed energy. The compiled extension in ``_kernels.pyx``
mirrors these routines operation for operation; both backends must produce
bit-identical pools, which the backend-equivalence tests assert.

All routines operate on the flat pool arrays of ``octree.OctreeField``.
Child blocks are eight contiguous slots; ``child[n]`` is the first slot of
the block or -1 for a leaf. ``state`` is the int64 triple
[slots in use, free-list head, live node count].
"""

from __future__ import annotations

import math

__all__ = [
    "build_tree",
    "propagate",
    "densify",
    "iterate_pass",
    "tree_energy",
]


def build_tree(meanf, minf, maxf, offs, has_w, wminf, wmaxf, wmeanf,
               tau, value, weight, child, state, d_max):
    """Top-down construction driven by per-level reduction pyramids.

    Splits while the value spread exceeds ``tau`` or (with weights) while the
    weight is not constant; every node receives its subvolume mean.
    """
    state[0] = 1
    state[1] = -1
    state[2] = 1
    stack = [(0, 0, 0, 0, 0)]
    while stack:
        node, x, y, z, lvl = stack.pop()
        n1 = 1 << lvl
        k = int(offs[lvl]) + (x * n1 + y) * n1 + z
        value[node] = meanf[k]
        if has_w:
            weight[node] = wmeanf[k]
        split = False
        if lvl < d_max:
            if float(maxf[k]) - float(minf[k]) > tau:
                split = True
            elif has_w and wminf[k] != wmaxf[k]:
                split = True
        if split:
            b = int(state[0])
            state[0] = b + 8
            state[2] += 8
            child[node] = b
            for c in range(8):
                stack.append((b + c,
                              x * 2 + ((c >> 2) & 1),
                              y * 2 + ((c >> 1) & 1),
                              z * 2 + (c & 1),
                              lvl + 1))
        else:
            child[node] = -1


def propagate(value, child):
    """Bottom-up mean propagation: inner value := mean of its 8 children."""
    stack = [0]
    inner = []
    while stack:
        node = stack.pop()
        b = int(child[node])
        if b >= 0:
            inner.append(node)
            for c in range(8):
                stack.append(b + c)
    for node in reversed(inner):
        b = int(child[node])
        s = 0.0
        for c in range(8):
            s += float(value[b + c])
        value[node] = s / 8.0


def densify(value, child, d_max, out):
    """Fill the finest-level grid with each cell's subsuming node value."""
    stack = [(0, 0, 0, 0, 0)]
    while stack:
        node, x, y, z, lvl = stack.pop()
        b = int(child[node])
        if b >= 0:
            for c in range(8):
                stack.append((b + c,
                              x * 2 + ((c >> 2) & 1),
                              y * 2 + ((c >> 1) & 1),
                              z * 2 + (c & 1),
                              lvl + 1))
        else:
            s = d_max - lvl
            w = 1 << s
            out[x << s:(x << s) + w,
                y << s:(y << s) + w,
                z << s:(z << s) + w] = float(value[node])


def iterate_pass(uval, usnap, uchild, ujoined, ustate,
                 vvals, vws, vchilds,
                 d_max, lam, eps, gamma, xi, tau_s, tau_j,
                 clamp, reverse, jlog):
    """One restructuring gradient-descent pass over the iterate tree.

    Every value read refers to the pre-pass snapshot, so the pass is
    independent of traversal order (``reverse`` flips the child visit order
    to let tests assert exactly that). Leaves whose stepped value falls
    inside the split band subdivide and recurse; inner nodes whose stepped
    value is saturated collapse their children when all of them are
    (post-pass) leaves with saturated values of one sign. Collapsed subtrees
    stay readable until the end of the pass and are freed afterwards.

    Returns (splits, joins, join-log rows written).
    """
    used = int(ustate[0])
    usnap[:used] = uval[:used]
    nviews = len(vvals)
    cap = uval.shape[0]
    eps2 = eps * eps
    cur = [[0] * (d_max + 1) for _ in range(nviews)]
    jcap = 0 if jlog is None else jlog.shape[0]
    counts = [0, 0, 0]  # splits, joins, log rows

    def snap_lookup(x, y, z, lvl):
        node = 0
        l = 0
        while l < lvl and uchild[node] >= 0:
            s = lvl - l - 1
            sel = (((x >> s) & 1) << 2) | (((y >> s) & 1) << 1) | ((z >> s) & 1)
            node = int(uchild[node]) + sel
            l += 1
        return float(usnap[node])

    def flux(x, y, z, lvl):
        m = 1 << lvl
        h = float(1 << (d_max - lvl))
        u0 = snap_lookup(x, y, z, lvl)
        gx = (snap_lookup(x + 1, y, z, lvl) - u0) / h if x + 1 < m else 0.0
        gy = (snap_lookup(x, y + 1, z, lvl) - u0) / h if y + 1 < m else 0.0
        gz = (snap_lookup(x, y, z + 1, lvl) - u0) / h if z + 1 < m else 0.0
        gn = math.sqrt(gx * gx + gy * gy + gz * gz + eps2)
        return gx / gn, gy / gn, gz / gn

    def delta_u(node, x, y, z, lvl):
        h = float(1 << (d_max - lvl))
        u0 = float(usnap[node])
        px, py, pz = flux(x, y, z, lvl)
        pbx = flux(x - 1, y, z, lvl)[0] if x > 0 else 0.0
        pby = flux(x, y - 1, z, lvl)[1] if y > 0 else 0.0
        pbz = flux(x, y, z - 1, lvl)[2] if z > 0 else 0.0
        div = ((px - pbx) + (py - pby) + (pz - pbz)) / h
        num = 0.0
        den = gamma
        for v in range(nviews):
            nv = cur[v][lvl]
            wv = float(vws[v][nv])
            if wv != 0.0:
                d = u0 - float(vvals[v][nv])
                num += wv * d / math.sqrt(d * d + eps2)
                den += wv
        return lam * div - num / den

    def visit(node, x, y, z, lvl):
        if lvl == 0:
            for v in range(nviews):
                cur[v][0] = 0
        else:
            sel = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
            for v in range(nviews):
                p = cur[v][lvl - 1]
                b = int(vchilds[v][p])
                cur[v][lvl] = b + sel if b >= 0 else p
        du = delta_u(node, x, y, z, lvl)
        dn = float(usnap[node]) + xi * du
        b = int(uchild[node])
        if b < 0:
            if lvl < d_max and abs(dn) < tau_s:
                free = int(ustate[1])
                if free >= 0:
                    nb = free
                    ustate[1] = uchild[nb]
                else:
                    nb = int(ustate[0])
                    if nb + 8 > cap:
                        raise RuntimeError("node pool capacity exhausted")
                    ustate[0] = nb + 8
                ustate[2] += 8
                pv = float(uval[node])
                ps = float(usnap[node])
                for c in range(8):
                    uval[nb + c] = pv
                    usnap[nb + c] = ps
                    uchild[nb + c] = -1
                    ujoined[nb + c] = 0
                uchild[node] = nb
                counts[0] += 1
                order = range(7, -1, -1) if reverse else range(8)
                for c in order:
                    visit(nb + c,
                          x * 2 + ((c >> 2) & 1),
                          y * 2 + ((c >> 1) & 1),
                          z * 2 + (c & 1),
                          lvl + 1)
            else:
                if clamp:
                    if dn > 1.0:
                        dn = 1.0
                    elif dn < -1.0:
                        dn = -1.0
                uval[node] = dn
        else:
            order = range(7, -1, -1) if reverse else range(8)
            for c in order:
                visit(b + c,
                      x * 2 + ((c >> 2) & 1),
                      y * 2 + ((c >> 1) & 1),
                      z * 2 + (c & 1),
                      lvl + 1)
            if abs(dn) > tau_j:
                ok = True
                pos = False
                neg = False
                s = 0.0
                for c in range(8):
                    cc = b + c
                    if uchild[cc] >= 0 and ujoined[cc] == 0:
                        ok = False
                        break
                    val = float(uval[cc])
                    if not (val > tau_j or val < -tau_j):
                        ok = False
                        break
                    if val > 0.0:
                        pos = True
                    else:
                        neg = True
                    s += val
                if ok and not (pos and neg):
                    ujoined[node] = 1
                    uval[node] = s / 8.0
                    counts[1] += 1
                    if counts[2] < jcap:
                        row = jlog[counts[2]]
                        row[0] = lvl
                        row[1] = x
                        row[2] = y
                        row[3] = z
                        for c in range(8):
                            row[4 + c] = uval[b + c]
                        counts[2] += 1

    def purge_children(node):
        b = int(uchild[node])
        if b < 0:
            return
        for c in range(8):
            purge_children(b + c)
            ujoined[b + c] = 0
        uchild[node] = -1
        uchild[b] = ustate[1]
        ustate[1] = b
        ustate[2] -= 8

    def sweep(node):
        b = int(uchild[node])
        if b < 0:
            return
        if ujoined[node]:
            purge_children(node)
            ujoined[node] = 0
        else:
            for c in range(8):
                sweep(b + c)

    visit(0, 0, 0, 0, 0)
    sweep(0)
    return counts[0], counts[1], counts[2]


def tree_energy(uval, uchild, vvals, vws, vchilds, d_max, lam, eps, gamma):
    """Volume-weighted leaf sum of data fidelity and smoothness cost."""
    nviews = len(vvals)
    eps2 = eps * eps
    cur = [[0] * (d_max + 1) for _ in range(nviews)]
    total = [0.0]

    def val_lookup(x, y, z, lvl):
        node = 0
        l = 0
        while l < lvl and uchild[node] >= 0:
            s = lvl - l - 1
            sel = (((x >> s) & 1) << 2) | (((y >> s) & 1) << 1) | ((z >> s) & 1)
            node = int(uchild[node]) + sel
            l += 1
        return float(uval[node])

    def visit(node, x, y, z, lvl):
        if lvl == 0:
            for v in range(nviews):
                cur[v][0] = 0
        else:
            sel = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
            for v in range(nviews):
                p = cur[v][lvl - 1]
                b = int(vchilds[v][p])
                cur[v][lvl] = b + sel if b >= 0 else p
        b = int(uchild[node])
        if b >= 0:
            for c in range(8):
                visit(b + c,
                      x * 2 + ((c >> 2) & 1),
                      y * 2 + ((c >> 1) & 1),
                      z * 2 + (c & 1),
                      lvl + 1)
            return
        m = 1 << lvl
        h = float(1 << (d_max - lvl))
        u0 = float(uval[node])
        gx = (val_lookup(x + 1, y, z, lvl) - u0) / h if x + 1 < m else 0.0
        gy = (val_lookup(x, y + 1, z, lvl) - u0) / h if y + 1 < m else 0.0
        gz = (val_lookup(x, y, z + 1, lvl) - u0) / h if z + 1 < m else 0.0
        smooth = lam * math.sqrt(gx * gx + gy * gy + gz * gz + eps2)
        num = 0.0
        den = gamma
        for v in range(nviews):
            nv = cur[v][lvl]
            wv = float(vws[v][nv])
            if wv != 0.0:
                d = u0 - float(vvals[v][nv])
                num += wv * math.sqrt(d * d + eps2)
                den += wv
        total[0] += (num / den + smooth) * (h * h * h)

    visit(0, 0, 0, 0, 0)
    return total[0]
