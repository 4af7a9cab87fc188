"""Compiled inner loops: split scanning, tree routing and weight accumulation."""

import numpy as np
from numba import njit

RULE_BASIC = 0
RULE_ONEF = 1
RULE_MCE = 2
RULE_VART = 3


@njit(cache=True)
def scan_sorted(xs, ds, ys, yt, m_count, pm, pl, pw, rule, lam,
                min_leaf, min_per_treat, min_share, out):
    """Criterion value of every split position of one sorted feature.

    ``out[s]`` is the value of sending the first ``s + 1`` rows left, or
    ``inf`` when ``xs[s] == xs[s + 1]`` or a daughter is infeasible.
    ``ys``/``yt`` should be centred for numerical stability.
    """
    n = xs.shape[0]
    npair = pm.shape[0]
    tc = np.zeros(m_count)
    ts = np.zeros(m_count)
    tq = np.zeros(m_count)
    tn2 = np.zeros(npair)
    tam = np.zeros(npair)
    tal = np.zeros(npair)
    taml = np.zeros(npair)
    for i in range(n):
        k = ds[i]
        tc[k] += 1.0
        ts[k] += ys[i]
        tq[k] += ys[i] * ys[i]
        if rule == RULE_MCE:
            for p in range(npair):
                if k == pm[p] or k == pl[p]:
                    a = yt[i, pm[p]]
                    b = yt[i, pl[p]]
                    tn2[p] += 1.0
                    tam[p] += a
                    tal[p] += b
                    taml[p] += a * b
    lc = np.zeros(m_count)
    ls = np.zeros(m_count)
    lq = np.zeros(m_count)
    ln2 = np.zeros(npair)
    lam_ = np.zeros(npair)
    lal = np.zeros(npair)
    laml = np.zeros(npair)
    share_floor = min_share * n
    for s in range(n - 1):
        k = ds[s]
        lc[k] += 1.0
        ls[k] += ys[s]
        lq[k] += ys[s] * ys[s]
        if rule == RULE_MCE:
            for p in range(npair):
                if k == pm[p] or k == pl[p]:
                    a = yt[s, pm[p]]
                    b = yt[s, pl[p]]
                    ln2[p] += 1.0
                    lam_[p] += a
                    lal[p] += b
                    laml[p] += a * b
        out[s] = np.inf
        if xs[s] >= xs[s + 1]:
            continue
        nl = s + 1
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        if min_share > 0.0 and (nl < share_floor or nr < share_floor):
            continue
        if rule != RULE_BASIC:
            ok = True
            for j in range(m_count):
                if lc[j] < min_per_treat or tc[j] - lc[j] < min_per_treat:
                    ok = False
                    break
            if not ok:
                continue
        val = 0.0
        if rule == RULE_BASIC:
            sl = 0.0
            ql = 0.0
            st = 0.0
            qt = 0.0
            for j in range(m_count):
                sl += ls[j]
                ql += lq[j]
                st += ts[j]
                qt += tq[j]
            sr = st - sl
            qr = qt - ql
            val = (ql - sl * sl / nl) + (qr - sr * sr / nr)
        else:
            for side in range(2):
                if side == 0:
                    nside = float(nl)
                else:
                    nside = float(nr)
                for p in range(npair):
                    a = pm[p]
                    b = pl[p]
                    if side == 0:
                        ca = lc[a]
                        sa = ls[a]
                        qa = lq[a]
                        cb = lc[b]
                        sb = ls[b]
                        qb = lq[b]
                    else:
                        ca = tc[a] - lc[a]
                        sa = ts[a] - ls[a]
                        qa = tq[a] - lq[a]
                        cb = tc[b] - lc[b]
                        sb = ts[b] - ls[b]
                        qb = tq[b] - lq[b]
                    mua = sa / ca
                    mub = sb / cb
                    if rule == RULE_VART:
                        val -= pw[p] * nside * (mua - mub) * (mua - mub)
                    else:
                        term = (qa - sa * mua) / ca + (qb - sb * mub) / cb
                        if rule == RULE_MCE:
                            if side == 0:
                                n2 = ln2[p]
                                am = lam_[p]
                                al = lal[p]
                                aml = laml[p]
                            else:
                                n2 = tn2[p] - ln2[p]
                                am = tam[p] - lam_[p]
                                al = tal[p] - lal[p]
                                aml = taml[p] - laml[p]
                            mce = (n2 * mua * mub - mua * al - mub * am + aml) / n2
                            term -= 2.0 * mce
                        val += pw[p] * term
            if lam > 0.0:
                gap = 0.0
                for j in range(m_count):
                    g = lc[j] / nl - (tc[j] - lc[j]) / nr
                    gap += g * g
                val += lam * (1.0 - gap / m_count)
        out[s] = val


@njit(cache=True)
def route_all(x, node_off, feat, thr, left, right, cat_off, cat_len, cat_tab, leaf_of_node):
    """Leaf index of every row in every tree, shape (n_trees, n_rows)."""
    t_count = node_off.shape[0] - 1
    n = x.shape[0]
    out = np.empty((t_count, n), dtype=np.int64)
    for t in range(t_count):
        node0 = node_off[t]
        for i in range(n):
            k = 0
            while feat[node0 + k] >= 0:
                g = node0 + k
                v = x[i, feat[g]]
                if cat_len[g] > 0:
                    lev = int(v)
                    go_left = lev >= 0 and lev < cat_len[g] and cat_tab[cat_off[g] + lev] != 0
                else:
                    go_left = v <= thr[g]
                if go_left:
                    k = left[g]
                else:
                    k = right[g]
            out[t, i] = leaf_of_node[node0 + k]
    return out


@njit(cache=True)
def accumulate_weights(leaf_e, leaf_off, ptr, members, counts, d_b, tm, tl, w_out, used):
    """Add per-tree leaf weights for contrast ``tm`` vs ``tl`` into ``w_out``.

    ``leaf_e[t, e]`` is the leaf of evaluation point e in tree t;
    ``ptr``/``members`` is the concatenated CSR of leaf members (sample-B
    indices) and ``counts[g, k]`` the treatment-k member count of global leaf
    g. With ``tl < 0`` only treatment ``tm`` is required and weighted
    positively (single-treatment forests). A tree contributes to point e only
    when its leaf holds the needed treatments; ``used[e]`` counts those trees.
    Rows are *not* normalised here.
    """
    t_count = leaf_e.shape[0]
    n_eval = leaf_e.shape[1]
    for t in range(t_count):
        base = leaf_off[t]
        for e in range(n_eval):
            g = base + leaf_e[t, e]
            cm = counts[g, tm]
            if cm <= 0:
                continue
            cl = 1
            if tl >= 0:
                cl = counts[g, tl]
                if cl <= 0:
                    continue
            used[e] += 1
            for q in range(ptr[g], ptr[g + 1]):
                j = members[q]
                dj = d_b[j]
                if dj == tm:
                    w_out[e, j] += 1.0 / cm
                elif tl >= 0 and dj == tl:
                    w_out[e, j] -= 1.0 / cl


@njit(cache=True)
def draw_features(p, poisson_mean, u):
    """``min(p, 1 + Poisson(mean))`` distinct sorted features from uniforms ``u``.

    ``u[0]`` drives the Poisson draw by inversion, ``u[1:]`` a partial
    Fisher-Yates shuffle. ``u`` needs ``p + 1`` entries.
    """
    k = 0
    pk = np.exp(-poisson_mean)
    cdf = pk
    while u[0] > cdf and k < p - 1:
        k += 1
        pk *= poisson_mean / k
        cdf += pk
    v = min(p, 1 + k)
    perm = np.arange(p)
    for i in range(v):
        j = i + int(u[1 + i] * (p - i))
        if j > p - 1:
            j = p - 1
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    return np.sort(perm[:v])


@njit(cache=True)
def _node_split(x, d, y, yt, is_cat, n_levels, obs, features, m_count, pm, pl, pw,
                rule, lam, min_leaf, min_per_treat, min_share, left_tab):
    """Best split of one node over the given features.

    Returns ``(feature, threshold, value)``; feature -1 means no feasible
    split. For a categorical winner ``left_tab`` (one slot per level) is set
    to 1 for the levels sent left.
    """
    n = obs.shape[0]
    nf = features.shape[0]
    center = 0.0
    for i in range(n):
        center += y[obs[i]]
    center /= n
    yc = np.empty(n)
    var = 0.0
    for i in range(n):
        yc[i] = y[obs[i]] - center
        var += yc[i] * yc[i]
    var /= n
    dn = np.zeros(n, dtype=np.int64)
    if rule != RULE_BASIC:
        for i in range(n):
            dn[i] = d[obs[i]]
    w = yt.shape[1]
    ytn = np.zeros((n, w))
    if rule == RULE_MCE:
        for i in range(n):
            for c in range(w):
                ytn[i, c] = yt[obs[i], c] - center
    vals = np.empty((nf, max(n - 1, 1)))
    keys_all = np.empty((nf, n))
    max_lev = 1
    for q in range(nf):
        if is_cat[features[q]] and n_levels[features[q]] > max_lev:
            max_lev = n_levels[features[q]]
    orders = np.full((nf, max_lev), -1, dtype=np.int64)
    best = np.inf
    key = np.empty(n)
    for q in range(nf):
        j = features[q]
        if is_cat[j]:
            nl = max(n_levels[j], 1)
            for i in range(n):
                c = int(x[obs[i], j])
                if c + 1 > nl:
                    nl = c + 1
            cnt = np.zeros(nl)
            sm = np.zeros(nl)
            for i in range(n):
                c = int(x[obs[i], j])
                cnt[c] += 1.0
                sm[c] += yc[i]
            present = 0
            for c in range(nl):
                if cnt[c] > 0:
                    present += 1
            codes = np.empty(present, dtype=np.int64)
            means = np.empty(present)
            t = 0
            for c in range(nl):
                if cnt[c] > 0:
                    codes[t] = c
                    means[t] = sm[c] / cnt[c]
                    t += 1
            # stable sort by mean keeps ties in level-code order
            o = np.argsort(means, kind="mergesort")
            rank = np.zeros(nl)
            for r in range(present):
                rank[codes[o[r]]] = r
                if r < max_lev:
                    orders[q, r] = codes[o[r]]
            for i in range(n):
                key[i] = rank[int(x[obs[i], j])]
        else:
            for i in range(n):
                key[i] = x[obs[i], j]
        order = np.argsort(key, kind="mergesort")
        ks = key[order]
        out = np.empty(max(n - 1, 0))
        scan_sorted(ks, dn[order], yc[order], ytn[order], m_count, pm, pl, pw, rule, lam,
                    min_leaf, min_per_treat, min_share, out)
        for s in range(n - 1):
            vals[q, s] = out[s]
            if out[s] < best:
                best = out[s]
        for i in range(n):
            keys_all[q, i] = ks[i]
    if not np.isfinite(best):
        return -1, np.nan, np.inf
    scale = (1.0 + n) * var + lam
    cut = best + 1e-10 * (abs(best) + scale) + 1e-300
    for q in range(nf):
        for s in range(n - 1):
            if vals[q, s] <= cut:
                j = features[q]
                if is_cat[j]:
                    k = int(keys_all[q, s])
                    for c in range(left_tab.shape[0]):
                        left_tab[c] = 0
                    for r in range(k + 1):
                        left_tab[orders[q, r]] = 1
                    return j, np.nan, vals[q, s]
                lo = keys_all[q, s]
                hi = keys_all[q, s + 1]
                thr = 0.5 * (lo + hi)
                if not (lo <= thr and thr < hi):
                    thr = lo
                return j, thr, vals[q, s]
    return -1, np.nan, np.inf


@njit(cache=True)
def grow(x, d, y, yt, is_cat, n_levels, build, m_count, pm, pl, pw, rule, lam,
         min_leaf, min_per_treat, min_share, max_depth, poisson_mean, u):
    """Grow one tree depth first (left before right) on the ``build`` rows.

    ``u[k]`` are the uniforms for the feature draw at node ``k``. Returns
    node arrays ``(feature, threshold, left, right, cat_tab, n_nodes)``;
    ``cat_tab[k, c] = 1`` when level c goes left at categorical node k.
    """
    n = build.shape[0]
    p = x.shape[1]
    cap = u.shape[0]
    max_lev = 1
    for j in range(p):
        if is_cat[j] and n_levels[j] > max_lev:
            max_lev = n_levels[j]
    for i in range(n):
        for j in range(p):
            if is_cat[j] and int(x[build[i], j]) + 1 > max_lev:
                max_lev = int(x[build[i], j]) + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.full(cap, np.nan)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    cat_tab = np.zeros((cap, max_lev), dtype=np.int8)
    work = build.copy()
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    tab = np.zeros(max_lev, dtype=np.int8)
    while top > 0:
        top -= 1
        k = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        size = hi - lo
        if max_depth >= 0 and depth >= max_depth:
            continue
        if size < 2 * min_leaf or size < 2:
            continue
        if n_nodes + 2 > cap:
            continue
        features = draw_features(p, poisson_mean, u[k])
        obs = work[lo:hi]
        jbest, t, val = _node_split(x, d, y, yt, is_cat, n_levels, obs, features, m_count,
                                    pm, pl, pw, rule, lam, min_leaf, min_per_treat,
                                    min_share, tab)
        if jbest < 0:
            continue
        nl = 0
        nr = 0
        for i in range(size):
            r = obs[i]
            v = x[r, jbest]
            if is_cat[jbest]:
                c = int(v)
                go = c >= 0 and c < max_lev and tab[c] != 0
            else:
                go = v <= t
            if go:
                work[lo + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            work[lo + nl + i] = buf[i]
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[k] = jbest
        thr[k] = t
        left[k] = lid
        right[k] = rid
        if is_cat[jbest]:
            for c in range(max_lev):
                cat_tab[k, c] = tab[c]
        st_node[top] = rid
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lid
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], cat_tab[:n_nodes], n_nodes
