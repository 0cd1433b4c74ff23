"""Numba kernels for the sum-of-trees sampler.

Trees are stored in fixed-size heap arrays per tree: slot 0 is the root and
the children of slot ``h`` are ``2h+1`` and ``2h+2``.  ``var[j, h]`` holds the
split covariate of node ``h`` in tree ``j``, ``LEAF`` (-1) for a terminal node
and ``UNUSED`` (-2) for an empty slot.  Covariates enter as integer bin codes
against per-column cutpoint grids; the split rule ``(v, c)`` sends a row left
iff ``codes[i, v] <= c``.

The Metropolis-Hastings kernel proposes grow / prune / change / swap moves
with leaf values integrated out analytically.  Split rules are drawn as a
uniform covariate choice plus a cutpoint uniform over the grid positions that
leave both children nonempty at the node (a contiguous code range, so only
the node's min and max codes are needed).  The tree prior charges each rule
the same probability the proposal uses, so rule terms cancel for grow and
prune; change and swap carry an explicit correction for the rule mass of the
nodes whose data membership shifts.  Proposals that would leave a leaf with
fewer than ``min_node`` rows are rejected.

All randomness flows through a single ``np.random.Generator`` shared with the
calling Python code, which keeps whole fits reproducible from one seed.
"""

import numpy as np
from numba import njit

UNUSED = np.int32(-2)
LEAF = np.int32(-1)

# move identifiers, in cumulative-probability order
GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3

_BIG = np.int32(2147483647)


@njit(cache=True, inline="always")
def _depth_of(h):
    d = 0
    k = h + 1
    while k > 1:
        k >>= 1
        d += 1
    return d


@njit(cache=True, inline="always")
def _is_under(h, anc):
    # is node h inside the subtree rooted at anc (inclusive)?
    while h > anc:
        h = (h - 1) >> 1
    return h == anc


@njit(cache=True, inline="always")
def _split_prob(depth, alpha, beta):
    return alpha * (1.0 + depth) ** (-beta)


@njit(cache=True, inline="always")
def _leaf_logml(W, S, sigma2, sigma_mu2):
    # Marginal log-likelihood contribution of one leaf with its mean
    # integrated out, dropping terms shared by all partitions of the same rows.
    denom = sigma2 + sigma_mu2 * W
    return 0.5 * (np.log(sigma2 / denom) + sigma_mu2 * S * S / (sigma2 * denom))


@njit(cache=True)
def _walk_record(var, cut, node_of, codes, j, root, limit, aff_units, aff_new,
                 nodemin, nodemax):
    """Route every row of `root`'s subtree down from `root` under the current
    rules, staging leaf assignments and recording per-internal-node min/max
    codes of that node's split covariate."""
    n = node_of.shape[1]
    for h in range(root, limit):
        if var[j, h] >= 0 and _is_under(h, root):
            nodemin[h] = _BIG
            nodemax[h] = np.int32(-1)
    naff = 0
    for i in range(n):
        if _is_under(node_of[j, i], root):
            idx = root
            while var[j, idx] >= 0:
                v = var[j, idx]
                cde = codes[i, v]
                if cde < nodemin[idx]:
                    nodemin[idx] = cde
                if cde > nodemax[idx]:
                    nodemax[idx] = cde
                if cde <= cut[j, idx]:
                    idx = 2 * idx + 1
                else:
                    idx = 2 * idx + 2
            aff_units[naff] = i
            aff_new[naff] = idx
            naff += 1
    return naff


@njit(cache=True)
def _rule_logmass(var, j, root, limit, nodemin, nodemax, include_root):
    """Sum of log(valid-cut count) over internal nodes of the subtree, from
    min/max codes recorded by _walk_record. ok=False when some internal node
    no longer has a valid cut for its own rule."""
    s = 0.0
    for h in range(root, limit):
        if var[j, h] >= 0 and _is_under(h, root):
            if h == root and not include_root:
                continue
            ncv = nodemax[h] - nodemin[h]
            if ncv < 1:
                return False, 0.0
            s += np.log(float(ncv))
    return True, s


@njit(cache=True)
def _staged_delta(var, weights, r, j, root, limit, aff_units, aff_new, naff,
                  Wb, Sb, cnt2, W2, S2, min_node, sigma2, sigma_mu2):
    """Log-ML change of replacing the current subtree assignment with the
    staged one; ok=False when a staged leaf falls below min_node."""
    for h in range(root, limit):
        if var[j, h] == LEAF and _is_under(h, root):
            cnt2[h] = 0
            W2[h] = 0.0
            S2[h] = 0.0
    for a in range(naff):
        i = aff_units[a]
        h = aff_new[a]
        w = weights[i]
        cnt2[h] += 1
        W2[h] += w * w
        S2[h] += w * r[i]
    delta = 0.0
    for h in range(root, limit):
        if var[j, h] == LEAF and _is_under(h, root):
            if cnt2[h] < min_node:
                return False, 0.0
            delta += _leaf_logml(W2[h], S2[h], sigma2, sigma_mu2)
            delta -= _leaf_logml(Wb[h], Sb[h], sigma2, sigma_mu2)
    return True, delta


@njit(cache=True)
def run_sweep(var, cut, leafval, node_of, tdepth, total_fit, codes, ncuts,
              target, weights, sigma2, sigma_mu2, alpha, beta, min_node,
              max_depth, pcum, rng, r, gold, cnt, Wb, Sb, cnt2, W2, S2,
              aff_units, aff_new, nodemin, nodemax, leaves, prunable,
              internal, pair_p, pair_c):
    """One backfitting sweep over all trees. Returns -1, or the index of a
    tree whose state went non-finite."""
    m, H = var.shape
    n = codes.shape[0]
    d = codes.shape[1]
    for j in range(m):
        # partial residual against all other trees
        for i in range(n):
            g = leafval[j, node_of[j, i]]
            gold[i] = g
            r[i] = target[i] - weights[i] * (total_fit[i] - g)

        limit = (1 << (tdepth[j] + 2)) - 1
        if limit > H:
            limit = H

        # per-leaf sufficient statistics
        for h in range(limit):
            cnt[h] = 0
            Wb[h] = 0.0
            Sb[h] = 0.0
        for i in range(n):
            h = node_of[j, i]
            w = weights[i]
            cnt[h] += 1
            Wb[h] += w * w
            Sb[h] += w * r[i]

        # node inventories
        nleaf = 0
        nprun = 0
        nint = 0
        npair = 0
        for h in range(limit):
            v = var[j, h]
            if v == LEAF:
                leaves[nleaf] = h
                nleaf += 1
            elif v >= 0:
                internal[nint] = h
                nint += 1
                if var[j, 2 * h + 1] == LEAF and var[j, 2 * h + 2] == LEAF:
                    prunable[nprun] = h
                    nprun += 1
                if h > 0:
                    p = (h - 1) >> 1
                    if var[j, p] >= 0:
                        pair_p[npair] = p
                        pair_c[npair] = h
                        npair += 1

        accepted = False
        if pcum[3] > 0.0:
            u = rng.random()
            if u < pcum[0]:
                move = GROW
            elif u < pcum[1]:
                move = PRUNE
            elif u < pcum[2]:
                move = CHANGE
            else:
                move = SWAP

            p_grow = pcum[0]
            p_prune = pcum[1] - pcum[0]

            if move == GROW:
                hl = leaves[int(rng.random() * nleaf)]
                dh = _depth_of(hl)
                if dh < max_depth:
                    v = int(rng.random() * d)
                    if ncuts[v] > 0:
                        cmin = _BIG
                        cmax = np.int32(-1)
                        for i in range(n):
                            if node_of[j, i] == hl:
                                cde = codes[i, v]
                                if cde < cmin:
                                    cmin = cde
                                if cde > cmax:
                                    cmax = cde
                        ncv = cmax - cmin
                        if ncv >= 1:
                            c = cmin + int(rng.random() * ncv)
                            nl = 0
                            nr = 0
                            WL = 0.0
                            SL = 0.0
                            WR = 0.0
                            SR = 0.0
                            for i in range(n):
                                if node_of[j, i] == hl:
                                    w = weights[i]
                                    if codes[i, v] <= c:
                                        nl += 1
                                        WL += w * w
                                        SL += w * r[i]
                                    else:
                                        nr += 1
                                        WR += w * w
                                        SR += w * r[i]
                            if nl >= min_node and nr >= min_node:
                                qd = _split_prob(dh, alpha, beta)
                                qd1 = _split_prob(dh + 1, alpha, beta)
                                if hl > 0:
                                    sib = hl + 1 if (hl & 1) == 1 else hl - 1
                                    parent_prunable = var[j, sib] == LEAF
                                else:
                                    parent_prunable = False
                                w_after = nprun + 1 - (1 if parent_prunable else 0)
                                dll = (_leaf_logml(WL, SL, sigma2, sigma_mu2)
                                       + _leaf_logml(WR, SR, sigma2, sigma_mu2)
                                       - _leaf_logml(Wb[hl], Sb[hl], sigma2,
                                                     sigma_mu2))
                                logr = (dll + np.log(qd)
                                        + 2.0 * np.log(1.0 - qd1)
                                        - np.log(1.0 - qd)
                                        + np.log(p_prune * nleaf)
                                        - np.log(p_grow * w_after))
                                if np.log(rng.random()) < logr:
                                    var[j, hl] = v
                                    cut[j, hl] = c
                                    var[j, 2 * hl + 1] = LEAF
                                    var[j, 2 * hl + 2] = LEAF
                                    for i in range(n):
                                        if node_of[j, i] == hl:
                                            if codes[i, v] <= c:
                                                node_of[j, i] = 2 * hl + 1
                                            else:
                                                node_of[j, i] = 2 * hl + 2
                                    if dh + 1 > tdepth[j]:
                                        tdepth[j] = dh + 1
                                    accepted = True

            elif move == PRUNE:
                if nprun > 0:
                    hp = prunable[int(rng.random() * nprun)]
                    dh = _depth_of(hp)
                    cl = 2 * hp + 1
                    cr = 2 * hp + 2
                    Wp = Wb[cl] + Wb[cr]
                    Sp = Sb[cl] + Sb[cr]
                    qd = _split_prob(dh, alpha, beta)
                    qd1 = _split_prob(dh + 1, alpha, beta)
                    dll = (_leaf_logml(Wp, Sp, sigma2, sigma_mu2)
                           - _leaf_logml(Wb[cl], Sb[cl], sigma2, sigma_mu2)
                           - _leaf_logml(Wb[cr], Sb[cr], sigma2, sigma_mu2))
                    logr = (dll - np.log(qd) - 2.0 * np.log(1.0 - qd1)
                            + np.log(1.0 - qd)
                            + np.log(p_grow * nprun)
                            - np.log(p_prune * (nleaf - 1)))
                    if np.log(rng.random()) < logr:
                        var[j, hp] = LEAF
                        var[j, cl] = UNUSED
                        var[j, cr] = UNUSED
                        for i in range(n):
                            h = node_of[j, i]
                            if h == cl or h == cr:
                                node_of[j, i] = hp
                        md = 0
                        for h in range(limit):
                            if var[j, h] == LEAF:
                                dd = _depth_of(h)
                                if dd > md:
                                    md = dd
                        tdepth[j] = md
                        accepted = True

            elif move == CHANGE:
                if nint > 0:
                    hc = internal[int(rng.random() * nint)]
                    v = int(rng.random() * d)
                    if ncuts[v] > 0:
                        cmin = _BIG
                        cmax = np.int32(-1)
                        for i in range(n):
                            if _is_under(node_of[j, i], hc):
                                cde = codes[i, v]
                                if cde < cmin:
                                    cmin = cde
                                if cde > cmax:
                                    cmax = cde
                        ncv = cmax - cmin
                        if ncv >= 1:
                            c = cmin + int(rng.random() * ncv)
                            # rule mass of the untouched subtree rules, old state
                            _walk_record(var, cut, node_of, codes, j, hc,
                                         limit, aff_units, aff_new, nodemin,
                                         nodemax)
                            ok_old, lm_old = _rule_logmass(
                                var, j, hc, limit, nodemin, nodemax, False)
                            oldv = var[j, hc]
                            oldc = cut[j, hc]
                            var[j, hc] = v
                            cut[j, hc] = c
                            naff = _walk_record(var, cut, node_of, codes, j,
                                                hc, limit, aff_units, aff_new,
                                                nodemin, nodemax)
                            ok_new, lm_new = _rule_logmass(
                                var, j, hc, limit, nodemin, nodemax, False)
                            ok = ok_old and ok_new
                            if ok:
                                ok, dll = _staged_delta(
                                    var, weights, r, j, hc, limit, aff_units,
                                    aff_new, naff, Wb, Sb, cnt2, W2, S2,
                                    min_node, sigma2, sigma_mu2)
                            if ok and np.log(rng.random()) < dll + lm_old - lm_new:
                                for a in range(naff):
                                    node_of[j, aff_units[a]] = aff_new[a]
                                accepted = True
                            else:
                                var[j, hc] = oldv
                                cut[j, hc] = oldc

            else:  # SWAP
                if npair > 0:
                    k = int(rng.random() * npair)
                    hp = pair_p[k]
                    hcld = pair_c[k]
                    _walk_record(var, cut, node_of, codes, j, hp, limit,
                                 aff_units, aff_new, nodemin, nodemax)
                    ok_old, lm_old = _rule_logmass(var, j, hp, limit, nodemin,
                                                   nodemax, True)
                    vp = var[j, hp]
                    cp = cut[j, hp]
                    var[j, hp] = var[j, hcld]
                    cut[j, hp] = cut[j, hcld]
                    var[j, hcld] = vp
                    cut[j, hcld] = cp
                    naff = _walk_record(var, cut, node_of, codes, j, hp, limit,
                                        aff_units, aff_new, nodemin, nodemax)
                    ok_new, lm_new = _rule_logmass(var, j, hp, limit, nodemin,
                                                   nodemax, True)
                    ok = ok_old and ok_new
                    if ok:
                        ok, dll = _staged_delta(
                            var, weights, r, j, hp, limit, aff_units, aff_new,
                            naff, Wb, Sb, cnt2, W2, S2, min_node, sigma2,
                            sigma_mu2)
                    if ok and np.log(rng.random()) < dll + lm_old - lm_new:
                        for a in range(naff):
                            node_of[j, aff_units[a]] = aff_new[a]
                        accepted = True
                    else:
                        vc = var[j, hp]
                        cc = cut[j, hp]
                        var[j, hp] = var[j, hcld]
                        cut[j, hp] = cut[j, hcld]
                        var[j, hcld] = vc
                        cut[j, hcld] = cc

        if accepted:
            limit = (1 << (tdepth[j] + 2)) - 1
            if limit > H:
                limit = H
            for h in range(limit):
                cnt[h] = 0
                Wb[h] = 0.0
                Sb[h] = 0.0
            for i in range(n):
                h = node_of[j, i]
                w = weights[i]
                cnt[h] += 1
                Wb[h] += w * w
                Sb[h] += w * r[i]

        # draw leaf values from their full conditionals, refresh fitted sums
        bad = False
        for h in range(limit):
            if var[j, h] == LEAF:
                if sigma_mu2 == 0.0:
                    val = 0.0
                else:
                    a = 1.0 / sigma_mu2 + Wb[h] / sigma2
                    mu_post = (Sb[h] / sigma2) / a
                    val = mu_post + rng.standard_normal() / np.sqrt(a)
                leafval[j, h] = val
                if not np.isfinite(val):
                    bad = True
        for i in range(n):
            total_fit[i] += leafval[j, node_of[j, i]] - gold[i]
        if bad:
            return j
    return -1


@njit(cache=True)
def snapshot_trees(var, cut, leafval, tdepth):
    """Compact all trees of one draw into BFS arrays.

    Returns (s_var, s_cut, s_left, s_leaf, tree_start) where ``s_left`` holds
    the left-child position relative to the tree start and ``tree_start`` has
    one entry per tree plus a terminator.
    """
    m, H = var.shape
    total = 0
    for j in range(m):
        limit = (1 << (tdepth[j] + 1)) - 1
        if limit > H:
            limit = H
        for h in range(limit):
            if var[j, h] != UNUSED:
                total += 1
    s_var = np.empty(total, np.int16)
    s_cut = np.empty(total, np.int16)
    s_left = np.empty(total, np.int32)
    s_leaf = np.empty(total, np.float64)
    tree_start = np.empty(m + 1, np.int64)
    queue = np.empty(H, np.int32)
    pos = 0
    for j in range(m):
        tree_start[j] = pos
        queue[0] = 0
        head = 0
        tail = 1
        free = 1  # next BFS position within this tree
        while head < tail:
            h = queue[head]
            head += 1
            v = var[j, h]
            s_var[pos] = v
            s_cut[pos] = cut[j, h] if v >= 0 else 0
            s_leaf[pos] = leafval[j, h] if v == LEAF else 0.0
            if v >= 0:
                s_left[pos] = free
                queue[tail] = 2 * h + 1
                tail += 1
                queue[tail] = 2 * h + 2
                tail += 1
                free += 2
            else:
                s_left[pos] = -1
            pos += 1
    tree_start[m] = pos
    return s_var, s_cut, s_left, s_leaf, tree_start


@njit(cache=True)
def predict_from_snapshots(s_var, s_cut, s_left, s_leaf, tree_start, m,
                           n_draws, codes, out):
    """Accumulate per-draw sum-of-tree predictions into ``out`` (draws, n)."""
    n = codes.shape[0]
    for t in range(n_draws):
        for jj in range(t * m, (t + 1) * m):
            s = tree_start[jj]
            for i in range(n):
                idx = 0
                while s_var[s + idx] >= 0:
                    if codes[i, s_var[s + idx]] <= s_cut[s + idx]:
                        idx = s_left[s + idx]
                    else:
                        idx = s_left[s + idx] + 1
                out[t, i] += s_leaf[s + idx]


@njit(cache=True)
def tree_predict_one(s_var, s_cut, s_left, s_leaf, start, codes, out):
    """Prediction of a single stored tree, added into ``out`` (n,)."""
    n = codes.shape[0]
    for i in range(n):
        idx = 0
        while s_var[start + idx] >= 0:
            if codes[i, s_var[start + idx]] <= s_cut[start + idx]:
                idx = s_left[start + idx]
            else:
                idx = s_left[start + idx] + 1
        out[i] += s_leaf[start + idx]


@njit(cache=True)
def snapshot_depths(s_var, s_left, tree_start, m, n_draws, out):
    """Max leaf depth of every stored tree into ``out`` (n_draws, m)."""
    for t in range(n_draws):
        for j in range(m):
            jj = t * m + j
            s = tree_start[jj]
            k = tree_start[jj + 1] - s
            md = 0
            # BFS order guarantees parents precede children
            depth0 = np.zeros(k, np.int32)
            for p in range(k):
                if s_var[s + p] >= 0:
                    cl = s_left[s + p]
                    depth0[cl] = depth0[p] + 1
                    depth0[cl + 1] = depth0[p] + 1
                else:
                    if depth0[p] > md:
                        md = depth0[p]
            out[t, j] = md
