# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled octree kernels.

Operation-for-operation mirror of ``_pykernels.py``; the two backends are
required to produce bit-identical node pools for identical inputs, so every
arithmetic expression here follows the pure version's evaluation order.
"""

from libc.math cimport fabs, sqrt
from libc.stdint cimport int32_t, int64_t, uint8_t
from libc.stdlib cimport free, malloc


ctypedef fused pool_t:
    float
    double


# -- construction ----------------------------------------------------------

def build_tree(double[::1] meanf, double[::1] minf, double[::1] maxf,
               int64_t[::1] offs, bint has_w,
               uint8_t[::1] wminf, uint8_t[::1] wmaxf, double[::1] wmeanf,
               double tau, pool_t[::1] value, float[::1] weight,
               int32_t[::1] child, int64_t[::1] state, int d_max):
    if d_max > 60:
        raise ValueError("tree depth out of range")
    cdef int64_t snode[512]
    cdef int sx[512]
    cdef int sy[512]
    cdef int sz[512]
    cdef int slvl[512]
    cdef int top
    cdef int64_t node, k, b
    cdef int x, y, z, lvl, n1, c
    cdef bint split
    state[0] = 1
    state[1] = -1
    state[2] = 1
    snode[0] = 0
    sx[0] = 0
    sy[0] = 0
    sz[0] = 0
    slvl[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = snode[top]
        x = sx[top]
        y = sy[top]
        z = sz[top]
        lvl = slvl[top]
        n1 = 1 << lvl
        k = offs[lvl] + (<int64_t>x * n1 + y) * n1 + z
        value[node] = <pool_t>meanf[k]
        if has_w:
            weight[node] = <float>wmeanf[k]
        split = False
        if lvl < d_max:
            if maxf[k] - minf[k] > tau:
                split = True
            elif has_w and wminf[k] != wmaxf[k]:
                split = True
        if split:
            b = state[0]
            state[0] = b + 8
            state[2] += 8
            child[node] = <int32_t>b
            for c in range(8):
                snode[top] = b + c
                sx[top] = x * 2 + ((c >> 2) & 1)
                sy[top] = y * 2 + ((c >> 1) & 1)
                sz[top] = z * 2 + (c & 1)
                slvl[top] = lvl + 1
                top += 1
        else:
            child[node] = -1


def propagate(pool_t[::1] value, int32_t[::1] child):
    cdef int64_t cap = child.shape[0]
    cdef int64_t *inner = <int64_t *>malloc(cap * sizeof(int64_t))
    cdef int64_t *stack = <int64_t *>malloc(cap * sizeof(int64_t))
    if inner == NULL or stack == NULL:
        free(inner)
        free(stack)
        raise MemoryError()
    cdef int64_t top, ninner = 0, node, b, i
    cdef int c
    cdef double s
    try:
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            b = child[node]
            if b >= 0:
                inner[ninner] = node
                ninner += 1
                for c in range(8):
                    stack[top] = b + c
                    top += 1
        for i in range(ninner - 1, -1, -1):
            node = inner[i]
            b = child[node]
            s = 0.0
            for c in range(8):
                s += <double>value[b + c]
            value[node] = <pool_t>(s / 8.0)
    finally:
        free(inner)
        free(stack)


def densify(pool_t[::1] value, int32_t[::1] child, int d_max,
            double[:, :, ::1] out):
    if d_max > 60:
        raise ValueError("tree depth out of range")
    cdef int64_t snode[512]
    cdef int sx[512]
    cdef int sy[512]
    cdef int sz[512]
    cdef int slvl[512]
    cdef int top
    cdef int64_t node, b
    cdef int x, y, z, lvl, c, s, w, i, j, kk
    cdef double v
    snode[0] = 0
    sx[0] = 0
    sy[0] = 0
    sz[0] = 0
    slvl[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = snode[top]
        x = sx[top]
        y = sy[top]
        z = sz[top]
        lvl = slvl[top]
        b = child[node]
        if b >= 0:
            for c in range(8):
                snode[top] = b + c
                sx[top] = x * 2 + ((c >> 2) & 1)
                sy[top] = y * 2 + ((c >> 1) & 1)
                sz[top] = z * 2 + (c & 1)
                slvl[top] = lvl + 1
                top += 1
        else:
            s = d_max - lvl
            w = 1 << s
            v = <double>value[node]
            for i in range(x << s, (x << s) + w):
                for j in range(y << s, (y << s) + w):
                    for kk in range(z << s, (z << s) + w):
                        out[i, j, kk] = v


# -- the restructuring descent pass ---------------------------------------

cdef struct IterCtx:
    double *uval
    double *usnap
    int32_t *uchild
    uint8_t *ujoined
    int64_t *ustate
    int nviews
    float **vval
    float **vw
    int32_t **vchild
    int *cur            # nviews rows of (d_max + 1) cursor slots
    int curw
    int d_max
    double lam
    double eps2
    double gamma
    double xi
    double tau_s
    double tau_j
    bint clamp
    bint reverse
    double *jlog
    int64_t jcap
    int64_t splits
    int64_t joins
    int64_t jrows
    int64_t cap
    bint error


cdef inline double snap_lookup(IterCtx *ctx, int x, int y, int z,
                               int lvl) noexcept nogil:
    cdef int64_t node = 0
    cdef int l = 0, s, sel
    while l < lvl and ctx.uchild[node] >= 0:
        s = lvl - l - 1
        sel = (((x >> s) & 1) << 2) | (((y >> s) & 1) << 1) | ((z >> s) & 1)
        node = ctx.uchild[node] + sel
        l += 1
    return ctx.usnap[node]


cdef inline void flux3(IterCtx *ctx, int x, int y, int z, int lvl,
                       double *out) noexcept nogil:
    cdef int m = 1 << lvl
    cdef double h = <double>(1 << (ctx.d_max - lvl))
    cdef double u0 = snap_lookup(ctx, x, y, z, lvl)
    cdef double gx = 0.0, gy = 0.0, gz = 0.0, gn
    if x + 1 < m:
        gx = (snap_lookup(ctx, x + 1, y, z, lvl) - u0) / h
    if y + 1 < m:
        gy = (snap_lookup(ctx, x, y + 1, z, lvl) - u0) / h
    if z + 1 < m:
        gz = (snap_lookup(ctx, x, y, z + 1, lvl) - u0) / h
    gn = sqrt(gx * gx + gy * gy + gz * gz + ctx.eps2)
    out[0] = gx / gn
    out[1] = gy / gn
    out[2] = gz / gn


cdef double delta_u(IterCtx *ctx, int64_t node, int x, int y, int z,
                    int lvl) noexcept nogil:
    cdef double h = <double>(1 << (ctx.d_max - lvl))
    cdef double u0 = ctx.usnap[node]
    cdef double p[3]
    cdef double pb[3]
    cdef double pbx = 0.0, pby = 0.0, pbz = 0.0
    cdef double div, num, den, wv, d
    cdef int v
    cdef int64_t nv
    flux3(ctx, x, y, z, lvl, p)
    if x > 0:
        flux3(ctx, x - 1, y, z, lvl, pb)
        pbx = pb[0]
    if y > 0:
        flux3(ctx, x, y - 1, z, lvl, pb)
        pby = pb[1]
    if z > 0:
        flux3(ctx, x, y, z - 1, lvl, pb)
        pbz = pb[2]
    div = ((p[0] - pbx) + (p[1] - pby) + (p[2] - pbz)) / h
    num = 0.0
    den = ctx.gamma
    for v in range(ctx.nviews):
        nv = ctx.cur[v * ctx.curw + lvl]
        wv = <double>ctx.vw[v][nv]
        if wv != 0.0:
            d = u0 - <double>ctx.vval[v][nv]
            num += wv * d / sqrt(d * d + ctx.eps2)
            den += wv
    return ctx.lam * div - num / den


cdef void visit(IterCtx *ctx, int64_t node, int x, int y, int z,
                int lvl) noexcept nogil:
    cdef int v, c, ci, sel
    cdef int64_t p, b, nb, cc, free_head
    cdef double du, dn, pv, ps, val, s
    cdef bint ok, pos, neg
    cdef double *row
    if ctx.error:
        return
    if lvl == 0:
        for v in range(ctx.nviews):
            ctx.cur[v * ctx.curw] = 0
    else:
        sel = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
        for v in range(ctx.nviews):
            p = ctx.cur[v * ctx.curw + lvl - 1]
            b = ctx.vchild[v][p]
            ctx.cur[v * ctx.curw + lvl] = <int>(b + sel) if b >= 0 else <int>p
    du = delta_u(ctx, node, x, y, z, lvl)
    dn = ctx.usnap[node] + ctx.xi * du
    b = ctx.uchild[node]
    if b < 0:
        if lvl < ctx.d_max and fabs(dn) < ctx.tau_s:
            free_head = ctx.ustate[1]
            if free_head >= 0:
                nb = free_head
                ctx.ustate[1] = ctx.uchild[nb]
            else:
                nb = ctx.ustate[0]
                if nb + 8 > ctx.cap:
                    ctx.error = True
                    return
                ctx.ustate[0] = nb + 8
            ctx.ustate[2] += 8
            pv = ctx.uval[node]
            ps = ctx.usnap[node]
            for c in range(8):
                ctx.uval[nb + c] = pv
                ctx.usnap[nb + c] = ps
                ctx.uchild[nb + c] = -1
                ctx.ujoined[nb + c] = 0
            ctx.uchild[node] = <int32_t>nb
            ctx.splits += 1
            for ci in range(8):
                c = 7 - ci if ctx.reverse else ci
                visit(ctx, nb + c,
                      x * 2 + ((c >> 2) & 1),
                      y * 2 + ((c >> 1) & 1),
                      z * 2 + (c & 1),
                      lvl + 1)
        else:
            if ctx.clamp:
                if dn > 1.0:
                    dn = 1.0
                elif dn < -1.0:
                    dn = -1.0
            ctx.uval[node] = dn
    else:
        for ci in range(8):
            c = 7 - ci if ctx.reverse else ci
            visit(ctx, b + c,
                  x * 2 + ((c >> 2) & 1),
                  y * 2 + ((c >> 1) & 1),
                  z * 2 + (c & 1),
                  lvl + 1)
        if ctx.error:
            return
        if fabs(dn) > ctx.tau_j:
            ok = True
            pos = False
            neg = False
            s = 0.0
            for c in range(8):
                cc = b + c
                if ctx.uchild[cc] >= 0 and ctx.ujoined[cc] == 0:
                    ok = False
                    break
                val = ctx.uval[cc]
                if not (val > ctx.tau_j or val < -ctx.tau_j):
                    ok = False
                    break
                if val > 0.0:
                    pos = True
                else:
                    neg = True
                s += val
            if ok and not (pos and neg):
                ctx.ujoined[node] = 1
                ctx.uval[node] = s / 8.0
                ctx.joins += 1
                if ctx.jrows < ctx.jcap:
                    row = ctx.jlog + ctx.jrows * 12
                    row[0] = lvl
                    row[1] = x
                    row[2] = y
                    row[3] = z
                    for c in range(8):
                        row[4 + c] = ctx.uval[b + c]
                    ctx.jrows += 1


cdef void purge_children(IterCtx *ctx, int64_t node) noexcept nogil:
    cdef int64_t b = ctx.uchild[node]
    cdef int c
    if b < 0:
        return
    for c in range(8):
        purge_children(ctx, b + c)
        ctx.ujoined[b + c] = 0
    ctx.uchild[node] = -1
    ctx.uchild[b] = <int32_t>ctx.ustate[1]
    ctx.ustate[1] = b
    ctx.ustate[2] -= 8


cdef void sweep(IterCtx *ctx, int64_t node) noexcept nogil:
    cdef int64_t b = ctx.uchild[node]
    cdef int c
    if b < 0:
        return
    if ctx.ujoined[node]:
        purge_children(ctx, node)
        ctx.ujoined[node] = 0
    else:
        for c in range(8):
            sweep(ctx, b + c)


def iterate_pass(double[::1] uval, double[::1] usnap, int32_t[::1] uchild,
                 uint8_t[::1] ujoined, int64_t[::1] ustate,
                 list vvals, list vws, list vchilds,
                 int d_max, double lam, double eps, double gamma,
                 double xi, double tau_s, double tau_j,
                 bint clamp, bint reverse, jlog):
    cdef int64_t used = ustate[0]
    cdef int64_t i
    for i in range(used):
        usnap[i] = uval[i]
    cdef int nviews = len(vvals)
    cdef IterCtx ctx
    ctx.uval = &uval[0]
    ctx.usnap = &usnap[0]
    ctx.uchild = &uchild[0]
    ctx.ujoined = &ujoined[0]
    ctx.ustate = &ustate[0]
    ctx.nviews = nviews
    ctx.curw = d_max + 1
    ctx.d_max = d_max
    ctx.lam = lam
    ctx.eps2 = eps * eps
    ctx.gamma = gamma
    ctx.xi = xi
    ctx.tau_s = tau_s
    ctx.tau_j = tau_j
    ctx.clamp = clamp
    ctx.reverse = reverse
    ctx.splits = 0
    ctx.joins = 0
    ctx.jrows = 0
    ctx.cap = uval.shape[0]
    ctx.error = False
    cdef double[:, ::1] jl
    if jlog is None:
        ctx.jlog = NULL
        ctx.jcap = 0
    else:
        jl = jlog
        if jl.shape[0] > 0:
            ctx.jlog = &jl[0, 0]
            ctx.jcap = jl.shape[0]
        else:
            ctx.jlog = NULL
            ctx.jcap = 0
    ctx.vval = <float **>malloc(nviews * sizeof(float *))
    ctx.vw = <float **>malloc(nviews * sizeof(float *))
    ctx.vchild = <int32_t **>malloc(nviews * sizeof(int32_t *))
    ctx.cur = <int *>malloc(nviews * ctx.curw * sizeof(int))
    if ctx.vval == NULL or ctx.vw == NULL or ctx.vchild == NULL or ctx.cur == NULL:
        free(ctx.vval)
        free(ctx.vw)
        free(ctx.vchild)
        free(ctx.cur)
        raise MemoryError()
    cdef float[::1] fmv
    cdef int32_t[::1] cmv
    cdef int v
    try:
        for v in range(nviews):
            fmv = vvals[v]
            ctx.vval[v] = &fmv[0]
            fmv = vws[v]
            ctx.vw[v] = &fmv[0]
            cmv = vchilds[v]
            ctx.vchild[v] = &cmv[0]
        with nogil:
            visit(&ctx, 0, 0, 0, 0, 0)
            if not ctx.error:
                sweep(&ctx, 0)
        if ctx.error:
            raise RuntimeError("node pool capacity exhausted")
    finally:
        free(ctx.vval)
        free(ctx.vw)
        free(ctx.vchild)
        free(ctx.cur)
    return int(ctx.splits), int(ctx.joins), int(ctx.jrows)


# -- energy ----------------------------------------------------------------

cdef struct EnergyCtx:
    double *uval
    int32_t *uchild
    int nviews
    float **vval
    float **vw
    int32_t **vchild
    int *cur
    int curw
    int d_max
    double lam
    double eps2
    double gamma
    double total


cdef inline double val_lookup(EnergyCtx *ctx, int x, int y, int z,
                              int lvl) noexcept nogil:
    cdef int64_t node = 0
    cdef int l = 0, s, sel
    while l < lvl and ctx.uchild[node] >= 0:
        s = lvl - l - 1
        sel = (((x >> s) & 1) << 2) | (((y >> s) & 1) << 1) | ((z >> s) & 1)
        node = ctx.uchild[node] + sel
        l += 1
    return ctx.uval[node]


cdef void energy_visit(EnergyCtx *ctx, int64_t node, int x, int y, int z,
                       int lvl) noexcept nogil:
    cdef int v, c, sel, m
    cdef int64_t p, b, nv
    cdef double h, u0, gx, gy, gz, smooth, num, den, wv, d
    if lvl == 0:
        for v in range(ctx.nviews):
            ctx.cur[v * ctx.curw] = 0
    else:
        sel = ((x & 1) << 2) | ((y & 1) << 1) | (z & 1)
        for v in range(ctx.nviews):
            p = ctx.cur[v * ctx.curw + lvl - 1]
            b = ctx.vchild[v][p]
            ctx.cur[v * ctx.curw + lvl] = <int>(b + sel) if b >= 0 else <int>p
    b = ctx.uchild[node]
    if b >= 0:
        for c in range(8):
            energy_visit(ctx, b + c,
                         x * 2 + ((c >> 2) & 1),
                         y * 2 + ((c >> 1) & 1),
                         z * 2 + (c & 1),
                         lvl + 1)
        return
    m = 1 << lvl
    h = <double>(1 << (ctx.d_max - lvl))
    u0 = ctx.uval[node]
    gx = (val_lookup(ctx, x + 1, y, z, lvl) - u0) / h if x + 1 < m else 0.0
    gy = (val_lookup(ctx, x, y + 1, z, lvl) - u0) / h if y + 1 < m else 0.0
    gz = (val_lookup(ctx, x, y, z + 1, lvl) - u0) / h if z + 1 < m else 0.0
    smooth = ctx.lam * sqrt(gx * gx + gy * gy + gz * gz + ctx.eps2)
    num = 0.0
    den = ctx.gamma
    for v in range(ctx.nviews):
        nv = ctx.cur[v * ctx.curw + lvl]
        wv = <double>ctx.vw[v][nv]
        if wv != 0.0:
            d = u0 - <double>ctx.vval[v][nv]
            num += wv * sqrt(d * d + ctx.eps2)
            den += wv
    ctx.total += (num / den + smooth) * (h * h * h)


def tree_energy(double[::1] uval, int32_t[::1] uchild,
                list vvals, list vws, list vchilds,
                int d_max, double lam, double eps, double gamma):
    cdef int nviews = len(vvals)
    cdef EnergyCtx ctx
    ctx.uval = &uval[0]
    ctx.uchild = &uchild[0]
    ctx.nviews = nviews
    ctx.curw = d_max + 1
    ctx.d_max = d_max
    ctx.lam = lam
    ctx.eps2 = eps * eps
    ctx.gamma = gamma
    ctx.total = 0.0
    ctx.vval = <float **>malloc(nviews * sizeof(float *))
    ctx.vw = <float **>malloc(nviews * sizeof(float *))
    ctx.vchild = <int32_t **>malloc(nviews * sizeof(int32_t *))
    ctx.cur = <int *>malloc(nviews * ctx.curw * sizeof(int))
    if ctx.vval == NULL or ctx.vw == NULL or ctx.vchild == NULL or ctx.cur == NULL:
        free(ctx.vval)
        free(ctx.vw)
        free(ctx.vchild)
        free(ctx.cur)
        raise MemoryError()
    cdef float[::1] fmv
    cdef int32_t[::1] cmv
    cdef int v
    try:
        for v in range(nviews):
            fmv = vvals[v]
            ctx.vval[v] = &fmv[0]
            fmv = vws[v]
            ctx.vw[v] = &fmv[0]
            cmv = vchilds[v]
            ctx.vchild[v] = &cmv[0]
        with nogil:
            energy_visit(&ctx, 0, 0, 0, 0, 0)
    finally:
        free(ctx.vval)
        free(ctx.vw)
        free(ctx.vchild)
        free(ctx.cur)
    return ctx.total
