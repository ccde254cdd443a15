"""Loop-style kernel bodies.

Written in nopython-compatible form so the numba backend can jit them
verbatim; the numpy backend runs them interpreted (and replaces the
broadcast-friendly ones with vectorized versions).
"""
import numpy as np


def raycast(ox, oy, bearings, segs, max_range):
    """Min hit range per bearing against a segment soup; inf when no hit."""
    n = bearings.shape[0]
    m = segs.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        dx = np.cos(bearings[i])
        dy = np.sin(bearings[i])
        best = np.inf
        for j in range(m):
            x0 = segs[j, 0]
            y0 = segs[j, 1]
            ex = segs[j, 2] - x0
            ey = segs[j, 3] - y0
            den = dx * ey - dy * ex
            if abs(den) < 1e-12:
                continue
            sx = x0 - ox
            sy = y0 - oy
            t = (sx * ey - sy * ex) / den
            u = (sx * dy - sy * dx) / den
            if t >= 0.0 and -1e-12 <= u <= 1.0 + 1e-12 and t < best:
                best = t
        if best <= max_range:
            out[i] = best
    return out


def segments_block(cands, segs, tol):
    """1 where a candidate segment properly crosses (or overlaps into) any
    obstacle segment; shared endpoints within tol do not block. An exact
    pass through an obstacle vertex counts as a crossing."""
    k = cands.shape[0]
    m = segs.shape[0]
    out = np.zeros(k, dtype=np.uint8)
    for i in range(k):
        ax = cands[i, 0]
        ay = cands[i, 1]
        bx = cands[i, 2]
        by = cands[i, 3]
        for j in range(m):
            cx = segs[j, 0]
            cy = segs[j, 1]
            dx_ = segs[j, 2]
            dy_ = segs[j, 3]
            # skip if sharing an endpoint
            if (
                (abs(ax - cx) < tol and abs(ay - cy) < tol)
                or (abs(ax - dx_) < tol and abs(ay - dy_) < tol)
                or (abs(bx - cx) < tol and abs(by - cy) < tol)
                or (abs(bx - dx_) < tol and abs(by - dy_) < tol)
            ):
                continue
            d1 = (dx_ - cx) * (ay - cy) - (dy_ - cy) * (ax - cx)
            d2 = (dx_ - cx) * (by - cy) - (dy_ - cy) * (bx - cx)
            d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            d4 = (bx - ax) * (dy_ - ay) - (by - ay) * (dx_ - ax)
            ab_straddles = (d1 > 1e-12 and d2 < -1e-12) or (d1 < -1e-12 and d2 > 1e-12)
            cd_straddles = (d3 > 1e-12 and d4 < -1e-12) or (d3 < -1e-12 and d4 > 1e-12)
            if ab_straddles and cd_straddles:
                out[i] = 1
                break
            # a,b straddle line cd while c or d sits on line ab: the obstacle
            # vertex lies strictly inside the candidate (exact pass-through)
            if ab_straddles and (abs(d3) <= 1e-12 or abs(d4) <= 1e-12):
                out[i] = 1
                break
            # symmetric: a candidate endpoint rests on the obstacle interior
            if cd_straddles and (abs(d1) <= 1e-12 or abs(d2) <= 1e-12):
                out[i] = 1
                break
        # no early exit needed; break above covers it
    return out


def grid_dijkstra(passable, si, sj):
    """8-connected Dijkstra on a unit grid (diagonal sqrt(2)).

    Returns (dist, parent) with parent as flattened predecessor index, -1
    at the source and unreachable cells.
    """
    h, w = passable.shape
    n = h * w
    dist = np.full((h, w), np.inf)
    parent = np.full((h, w), -1, dtype=np.int64)
    if si < 0 or si >= h or sj < 0 or sj >= w or passable[si, sj] == 0:
        return dist, parent
    # array-backed binary heap of (key, flat index)
    heap_k = np.empty(n * 8, dtype=np.float64)
    heap_i = np.empty(n * 8, dtype=np.int64)
    size = 0
    dist[si, sj] = 0.0
    heap_k[0] = 0.0
    heap_i[0] = si * w + sj
    size = 1
    sqrt2 = np.sqrt(2.0)
    while size > 0:
        key = heap_k[0]
        idx = heap_i[0]
        size -= 1
        heap_k[0] = heap_k[size]
        heap_i[0] = heap_i[size]
        # sift down
        pos = 0
        while True:
            c = 2 * pos + 1
            if c >= size:
                break
            if c + 1 < size and heap_k[c + 1] < heap_k[c]:
                c += 1
            if heap_k[c] < heap_k[pos]:
                hk = heap_k[pos]
                hi = heap_i[pos]
                heap_k[pos] = heap_k[c]
                heap_i[pos] = heap_i[c]
                heap_k[c] = hk
                heap_i[c] = hi
                pos = c
            else:
                break
        ci = idx // w
        cj = idx % w
        if key > dist[ci, cj]:
            continue
        for di in range(-1, 2):
            for dj in range(-1, 2):
                if di == 0 and dj == 0:
                    continue
                ni = ci + di
                nj = cj + dj
                if ni < 0 or ni >= h or nj < 0 or nj >= w:
                    continue
                if passable[ni, nj] == 0:
                    continue
                if di != 0 and dj != 0:
                    # forbid corner cutting through blocked orthogonals
                    if passable[ci, nj] == 0 or passable[ni, cj] == 0:
                        continue
                    step = sqrt2
                else:
                    step = 1.0
                nd = key + step
                if nd < dist[ni, nj] - 1e-12:
                    dist[ni, nj] = nd
                    parent[ni, nj] = idx
                    # sift up insert
                    pos = size
                    heap_k[pos] = nd
                    heap_i[pos] = ni * w + nj
                    size += 1
                    while pos > 0:
                        par = (pos - 1) // 2
                        if heap_k[par] > heap_k[pos]:
                            hk = heap_k[pos]
                            hi = heap_i[pos]
                            heap_k[pos] = heap_k[par]
                            heap_i[pos] = heap_i[par]
                            heap_k[par] = hk
                            heap_i[par] = hi
                            pos = par
                        else:
                            break
    return dist, parent


def clear_dynamic_cells(
    slot_min,
    slot_max,
    slot_cnt,
    ground,
    known,
    sx,
    sy,
    bearings,
    clear_ranges,
    origin_x,
    origin_y,
    cell,
    vx,
    vy,
    clearing_radius,
    ground_margin,
    touched,
):
    """Delete stale above-ground evidence along rays, near the vehicle only."""
    nslots = slot_cnt.shape[0]
    h = slot_cnt.shape[1]
    w = slot_cnt.shape[2]
    r2 = clearing_radius * clearing_radius
    step = cell * 0.5
    for r in range(bearings.shape[0]):
        dx = np.cos(bearings[r])
        dy = np.sin(bearings[r])
        rng = clear_ranges[r]
        # stop one cell short of the return point
        stop = rng - cell
        if stop <= 0.0:
            continue
        t = 0.0
        last_i = -1
        last_j = -1
        while t <= stop:
            px = sx + t * dx
            py = sy + t * dy
            j = int((px - origin_x) / cell)
            i = int((py - origin_y) / cell)
            t += step
            if i == last_i and j == last_j:
                continue
            last_i = i
            last_j = j
            if i < 0 or i >= h or j < 0 or j >= w:
                continue
            ddx = px - vx
            ddy = py - vy
            if ddx * ddx + ddy * ddy > r2:
                continue
            for s in range(nslots):
                if slot_cnt[s, i, j] > 0:
                    if known[i, j] == 1 and slot_min[s, i, j] > ground[i, j] + ground_margin:
                        slot_cnt[s, i, j] = 0
                        touched[i, j] = 1
                    elif slot_max[s, i, j] > slot_min[s, i, j]:
                        slot_max[s, i, j] = slot_min[s, i, j]
                        touched[i, j] = 1


def bin_points(xs, ys, zs, smin, smax, scnt, origin_x, origin_y, cell, touched):
    h = scnt.shape[0]
    w = scnt.shape[1]
    for k in range(xs.shape[0]):
        j = int((xs[k] - origin_x) / cell)
        i = int((ys[k] - origin_y) / cell)
        if i < 0 or i >= h or j < 0 or j >= w:
            continue
        z = zs[k]
        if scnt[i, j] == 0:
            smin[i, j] = z
            smax[i, j] = z
        else:
            if z < smin[i, j]:
                smin[i, j] = z
            if z > smax[i, j]:
                smax[i, j] = z
        scnt[i, j] += 1
        touched[i, j] = 1


def aggregate_cells(slot_min, slot_max, slot_cnt, touched, agg_min, agg_max, agg_cnt):
    nslots = slot_cnt.shape[0]
    h = slot_cnt.shape[1]
    w = slot_cnt.shape[2]
    for i in range(h):
        for j in range(w):
            if touched[i, j] == 0:
                continue
            mn = np.inf
            mx = -np.inf
            c = 0
            for s in range(nslots):
                if slot_cnt[s, i, j] > 0:
                    if slot_min[s, i, j] < mn:
                        mn = slot_min[s, i, j]
                    if slot_max[s, i, j] > mx:
                        mx = slot_max[s, i, j]
                    c += slot_cnt[s, i, j]
            agg_cnt[i, j] = c
            if c > 0:
                agg_min[i, j] = mn
                agg_max[i, j] = mx
            else:
                agg_min[i, j] = 0.0
                agg_max[i, j] = 0.0


def classify_cells(
    agg_min,
    agg_max,
    agg_cnt,
    neg,
    region,
    ground,
    cost,
    status,
    obstacle_thresh,
    cost_saturation,
):
    """Ground from the low percentile of neighborhood window-minima, then
    cost and traversability status. Only cells flagged in `region`."""
    h = agg_cnt.shape[0]
    w = agg_cnt.shape[1]
    for i in range(h):
        for j in range(w):
            if region[i, j] == 0:
                continue
            if agg_cnt[i, j] == 0:
                ground[i, j] = 0.0
                cost[i, j] = -1.0
                if neg[i, j] == 1:
                    status[i, j] = 2
                    cost[i, j] = 1.0
                else:
                    status[i, j] = 0
                continue
            g = np.inf
            for di in range(-1, 2):
                for dj in range(-1, 2):
                    ni = i + di
                    nj = j + dj
                    if ni < 0 or ni >= h or nj < 0 or nj >= w:
                        continue
                    if agg_cnt[ni, nj] > 0 and agg_min[ni, nj] < g:
                        g = agg_min[ni, nj]
            ground[i, j] = g
            rel = agg_max[i, j] - g
            c = rel / cost_saturation
            if c < 0.0:
                c = 0.0
            if c > 1.0:
                c = 1.0
            if rel > obstacle_thresh:
                status[i, j] = 2
                cost[i, j] = 1.0
            else:
                status[i, j] = 1
                if c >= 1.0:
                    c = 0.999
                cost[i, j] = c


def count_ray_crossings(sx, sy, bearings, max_range, origin_x, origin_y, cell, out):
    """Per-cell count of rays crossing it (dropped-ray support for negative
    obstacle marking)."""
    h = out.shape[0]
    w = out.shape[1]
    step = cell * 0.5
    for r in range(bearings.shape[0]):
        dx = np.cos(bearings[r])
        dy = np.sin(bearings[r])
        t = 0.0
        last_i = -1
        last_j = -1
        while t <= max_range:
            px = sx + t * dx
            py = sy + t * dy
            t += step
            j = int((px - origin_x) / cell)
            i = int((py - origin_y) / cell)
            if i == last_i and j == last_j:
                continue
            last_i = i
            last_j = j
            if 0 <= i < h and 0 <= j < w:
                out[i, j] += 1


def update_seen(status, seen, sx, sy, n_rays, max_range, origin_x, origin_y, cell):
    """Mark cells visible from (sx, sy): march rays until a non-traversable or
    unknown cell blocks; the blocking cell itself is marked seen."""
    h = status.shape[0]
    w = status.shape[1]
    step = cell * 0.5
    for r in range(n_rays):
        b = 2.0 * np.pi * r / n_rays
        dx = np.cos(b)
        dy = np.sin(b)
        t = 0.0
        last_i = -1
        last_j = -1
        while t <= max_range:
            px = sx + t * dx
            py = sy + t * dy
            t += step
            j = int((px - origin_x) / cell)
            i = int((py - origin_y) / cell)
            if i == last_i and j == last_j:
                continue
            last_i = i
            last_j = j
            if i < 0 or i >= h or j < 0 or j >= w:
                break
            seen[i, j] = 1
            if status[i, j] != 1:
                break


def los_grid(status, x0, y0, x1, y1, origin_x, origin_y, cell, block_unknown):
    """True when the segment crosses no non-traversable (optionally unknown)
    cell; start/end cells are exempt."""
    h = status.shape[0]
    w = status.shape[1]
    dx = x1 - x0
    dy = y1 - y0
    length = np.sqrt(dx * dx + dy * dy)
    if length < 1e-9:
        return True
    dx /= length
    dy /= length
    sj = int((x0 - origin_x) / cell)
    si = int((y0 - origin_y) / cell)
    ej = int((x1 - origin_x) / cell)
    ei = int((y1 - origin_y) / cell)
    step = cell * 0.5
    t = 0.0
    while t <= length:
        px = x0 + t * dx
        py = y0 + t * dy
        t += step
        j = int((px - origin_x) / cell)
        i = int((py - origin_y) / cell)
        if (i == si and j == sj) or (i == ei and j == ej):
            continue
        if i < 0 or i >= h or j < 0 or j >= w:
            continue
        s = status[i, j]
        if s == 2:
            return False
        if block_unknown == 1 and s == 0:
            return False
    return True


def los_grid_many(status, x0, y0, xs, ys, origin_x, origin_y, cell, block_unknown):
    """los_grid from one origin to many endpoints; returns a uint8 mask.

    The march is inlined rather than delegated so the whole batch stays in
    one jitted call."""
    h = status.shape[0]
    w = status.shape[1]
    n = xs.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    sj = int((x0 - origin_x) / cell)
    si = int((y0 - origin_y) / cell)
    step = cell * 0.5
    for k in range(n):
        x1 = xs[k]
        y1 = ys[k]
        dx = x1 - x0
        dy = y1 - y0
        length = np.sqrt(dx * dx + dy * dy)
        if length < 1e-9:
            out[k] = 1
            continue
        dx /= length
        dy /= length
        ej = int((x1 - origin_x) / cell)
        ei = int((y1 - origin_y) / cell)
        t = 0.0
        clear = True
        while t <= length:
            px = x0 + t * dx
            py = y0 + t * dy
            t += step
            j = int((px - origin_x) / cell)
            i = int((py - origin_y) / cell)
            if (i == si and j == sj) or (i == ei and j == ej):
                continue
            if i < 0 or i >= h or j < 0 or j >= w:
                continue
            s = status[i, j]
            if s == 2 or (block_unknown == 1 and s == 0):
                clear = False
                break
        if clear:
            out[k] = 1
    return out


def table_lookup(cells_i, cells_j, grid_w, cell_start, table_ids, mask):
    """Union the correspondence-table id lists of the given occupied cells."""
    for k in range(cells_i.shape[0]):
        flat = cells_i[k] * grid_w + cells_j[k]
        a = cell_start[flat]
        b = cell_start[flat + 1]
        for t in range(a, b):
            mask[table_ids[t]] = 1
