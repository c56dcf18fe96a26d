"""Compiled hot loop for table-driven rules.

The kernel mirrors ProcessState.step exactly: same splitmix64 stream, same
mask-rejection sampling, same union and bookkeeping order, so the compiled
and pure-Python paths produce identical evolutions from the same seed.
"""

import numpy as np

try:
    from numba import int64, njit, uint64

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _next_u64(state):
        state = (state + uint64(0x9E3779B97F4A7C15)) & uint64(0xFFFFFFFFFFFFFFFF)
        z = state
        z = ((z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)) & uint64(
            0xFFFFFFFFFFFFFFFF
        )
        z = ((z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)) & uint64(
            0xFFFFFFFFFFFFFFFF
        )
        return state, z ^ (z >> uint64(31))

    @njit(cache=True)
    def run_process(
        parent,
        size,
        y,
        tk,
        table,
        K,
        ell,
        n,
        rng_state,
        mask,
        stop_round,
        giant_thr,
        snap_rounds,
        snap_out,
        scalars,
    ):
        """Advance the process until one component remains or stop_round.

        scalars holds [round, components, omega_components, largest,
        giant_time, snapshot_ptr] and is updated in place, as are the DSU
        arrays, the per-size vertex counts y, the extinction bookkeeping tk,
        and the snapshot output matrix. Returns the advanced rng state.
        """
        rnd = scalars[0]
        comps = scalars[1]
        om = scalars[2]
        largest = scalars[3]
        giant = scalars[4]
        sp = scalars[5]
        n_snaps = snap_rounds.shape[0]
        roots = np.empty(ell, dtype=np.int64)

        while sp < n_snaps and snap_rounds[sp] == rnd:
            for k in range(1, K + 1):
                snap_out[sp, k - 1] = y[k]
            snap_out[sp, K] = om
            sp += 1

        while comps > 1 and rnd < stop_round:
            idx = 0
            for j in range(ell):
                while True:
                    rng_state, z = _next_u64(rng_state)
                    v = int64(z & mask)
                    if v < n:
                        break
                x = v
                while parent[x] != x:
                    x = parent[x]
                root = x
                x = v
                while parent[x] != root:
                    nxt = parent[x]
                    parent[x] = root
                    x = nxt
                roots[j] = root
                sz = size[root]
                code = sz - 1 if sz <= K else K
                idx = idx * (K + 1) + code
            i = table[idx]
            a = roots[2 * i - 2]
            b = roots[2 * i - 1]
            rnd += 1
            if a != b:
                sa = int64(size[a])
                sb = int64(size[b])
                if sa < sb:
                    a, b = b, a
                    sa, sb = sb, sa
                parent[b] = a
                snew = sa + sb
                size[a] = snew
                if sa <= K:
                    y[sa] -= sa
                    if y[sa] == 0:
                        tk[sa] = rnd
                else:
                    om -= 1
                if sb <= K:
                    y[sb] -= sb
                    if y[sb] == 0:
                        tk[sb] = rnd
                else:
                    om -= 1
                if snew <= K:
                    if y[snew] == 0:
                        tk[snew] = -1
                    y[snew] += snew
                else:
                    om += 1
                comps -= 1
                if snew > largest:
                    largest = snew
                    if giant < 0 and largest >= giant_thr:
                        giant = rnd
            while sp < n_snaps and snap_rounds[sp] == rnd:
                for k in range(1, K + 1):
                    snap_out[sp, k - 1] = y[k]
                snap_out[sp, K] = om
                sp += 1

        if comps == 1:
            # counts are frozen once connected; later snapshots see the
            # terminal state
            while sp < n_snaps:
                for k in range(1, K + 1):
                    snap_out[sp, k - 1] = y[k]
                snap_out[sp, K] = om
                sp += 1

        scalars[0] = rnd
        scalars[1] = comps
        scalars[2] = om
        scalars[3] = largest
        scalars[4] = giant
        scalars[5] = sp
        return rng_state
