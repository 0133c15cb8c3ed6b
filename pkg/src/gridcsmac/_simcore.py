"""Slot-stepped CSMA/CA kernel (numba).

One call simulates one reporting interval: a sequence of superframes shared
by the nodes that chose to contend.  Everything is plain arrays so the
kernel compiles in nopython mode; the Python wrappers in ``simulator`` turn
the outputs into trace objects.
"""
import numpy as np
from numba import njit

# node phases
NOT_PART = 0
BACKOFF = 1
CCA2 = 2
TX_PEND = 3
TX = 4
WAIT = 5
DEFERRED = 6
DONE = 7

# frame outcomes / event codes
EV_SUCC = 0
EV_COLL = 1
EV_CCAS = 2
EV_DEFER = 3

# layout of the int64 counter vector
C_CCA1 = 0
C_CCA1_BUSY = 1
C_CCA2 = 2
C_CCA2_BUSY = 3
C_CONTEND_SLOTS = 4
C_MAX_ROUNDS = 5
N_COUNTERS = 6

# per-superframe table columns
S_CONTENDERS = 0
S_SUCC = 1
S_COLL = 2
S_CCAS = 3
S_DEFER = 4
N_SF_COLS = 5

# channel occupancy codes
CH_IDLE = 0
CH_DATA = 1
CH_ACK = 2


@njit(cache=True)
def _record(ev, n_ev, slot, sf, node, code):
    if n_ev < ev.shape[0]:
        ev[n_ev, 0] = slot
        ev[n_ev, 1] = sf
        ev[n_ev, 2] = node
        ev[n_ev, 3] = code
    return n_ev + 1


@njit(cache=True)
def run_interval(
    participate,  # bool[n]
    sf_lens,  # int64[k]
    t_p, t_ack, l_ack, t_ack_ti, w0, nb,
    saturated, retry, reset_on_defer,
    e_idle, e_sens, e_tx, e_rx,
    counters,  # int64[N_COUNTERS], accumulated
    sf_table,  # int64[k, N_SF_COLS], overwritten
    frame_stats,  # float64[4, 3]: count, sum, sum of squares per outcome
    node_energy,  # float64[n], overwritten
    node_success_sf,  # int64[n], overwritten (-1 none, -2 not participating)
    events,  # int64[cap, 4]
    channel,  # int8[total slots] or empty
):
    """Returns the number of events produced (may exceed ``events`` capacity)."""
    n = participate.shape[0]
    l_s = t_p + t_ack + l_ack
    phase = np.zeros(n, np.int64)
    counter = np.zeros(n, np.int64)
    stage = np.zeros(n, np.int64)
    frame_start = np.zeros(n, np.int64)
    rem = np.zeros(n, np.int64)
    won = np.zeros(n, np.bool_)
    rounds = np.zeros(n, np.int64)
    record_channel = channel.shape[0] > 0
    n_ev = 0
    for j in range(n):
        node_energy[j] = 0.0
        if participate[j]:
            phase[j] = BACKOFF
            counter[j] = np.random.randint(0, w0)
            node_success_sf[j] = -1
        else:
            phase[j] = NOT_PART
            node_success_sf[j] = -2

    max_sf = 0
    for i in range(sf_lens.shape[0]):
        if sf_lens[i] > max_sf:
            max_sf = sf_lens[i]
    busy = np.zeros(max_sf + t_p + t_ack + l_ack + 2, np.int8)

    base = 0
    for sf in range(sf_lens.shape[0]):
        length = sf_lens[sf]
        busy[:] = CH_IDLE
        for c in range(N_SF_COLS):
            sf_table[sf, c] = 0
        for j in range(n):
            if phase[j] != NOT_PART and phase[j] != DONE:
                sf_table[sf, S_CONTENDERS] += 1

        for t in range(length):
            g = base + t
            # transmissions starting in this slot are on air before any CCA
            n_start = 0
            for j in range(n):
                if phase[j] == TX_PEND:
                    n_start += 1
            if n_start > 0:
                for k in range(t, t + t_p):
                    busy[k] = CH_DATA
                if n_start == 1:
                    for k in range(t + t_p + t_ack, t + t_p + t_ack + l_ack):
                        busy[k] = CH_ACK
                for j in range(n):
                    if phase[j] == TX_PEND:
                        phase[j] = TX
                        rem[j] = t_p
                        won[j] = n_start == 1
                        if won[j]:
                            n_ev = _record(events, n_ev, g, sf, j, EV_SUCC)
                        else:
                            n_ev = _record(events, n_ev, g, sf, j, EV_COLL)

            for j in range(n):
                p = phase[j]
                busy_fail = False
                if p == BACKOFF:
                    if counter[j] > 0:
                        counter[j] -= 1
                        node_energy[j] += e_idle
                        counters[C_CONTEND_SLOTS] += 1
                        continue
                    if length - t < l_s + 2:
                        phase[j] = DEFERRED
                        node_energy[j] += e_idle
                        n_ev = _record(events, n_ev, g, sf, j, EV_DEFER)
                        continue
                    # CCA1
                    counters[C_CONTEND_SLOTS] += 1
                    counters[C_CCA1] += 1
                    node_energy[j] += e_sens
                    if busy[t] != CH_IDLE:
                        counters[C_CCA1_BUSY] += 1
                        busy_fail = True
                    else:
                        phase[j] = CCA2
                        busy_fail = False
                elif p == CCA2:
                    counters[C_CONTEND_SLOTS] += 1
                    counters[C_CCA2] += 1
                    node_energy[j] += e_sens
                    if busy[t] != CH_IDLE:
                        counters[C_CCA2_BUSY] += 1
                        busy_fail = True
                    else:
                        phase[j] = TX_PEND
                        busy_fail = False
                elif p == TX:
                    counters[C_CONTEND_SLOTS] += 1
                    node_energy[j] += e_tx
                    rem[j] -= 1
                    if rem[j] == 0:
                        phase[j] = WAIT
                        rem[j] = t_ack + l_ack if won[j] else t_ack_ti
                    continue
                elif p == WAIT:
                    counters[C_CONTEND_SLOTS] += 1
                    if won[j] and rem[j] <= l_ack:
                        node_energy[j] += e_rx
                    else:
                        node_energy[j] += e_idle
                    rem[j] -= 1
                    if rem[j] == 0:
                        length_f = g + 1 - frame_start[j]
                        oc = EV_SUCC if won[j] else EV_COLL
                        frame_stats[oc, 0] += 1
                        frame_stats[oc, 1] += length_f
                        frame_stats[oc, 2] += length_f * length_f
                        if won[j]:
                            sf_table[sf, S_SUCC] += 1
                            if node_success_sf[j] < 0:
                                node_success_sf[j] = sf
                        else:
                            sf_table[sf, S_COLL] += 1
                        if (won[j] and not saturated) or (not won[j] and not retry):
                            phase[j] = DONE
                        else:
                            phase[j] = BACKOFF
                            stage[j] = 0
                            rounds[j] = 0
                            counter[j] = np.random.randint(0, w0)
                            frame_start[j] = g + 1
                    continue
                elif p == DEFERRED:
                    node_energy[j] += e_idle
                    continue
                else:
                    continue

                if busy_fail:
                    stage[j] += 1
                    rounds[j] += 1
                    if rounds[j] > counters[C_MAX_ROUNDS]:
                        counters[C_MAX_ROUNDS] = rounds[j]
                    if stage[j] > nb:
                        length_f = g + 1 - frame_start[j]
                        frame_stats[EV_CCAS, 0] += 1
                        frame_stats[EV_CCAS, 1] += length_f
                        frame_stats[EV_CCAS, 2] += length_f * length_f
                        sf_table[sf, S_CCAS] += 1
                        n_ev = _record(events, n_ev, g, sf, j, EV_CCAS)
                        if retry:
                            phase[j] = BACKOFF
                            stage[j] = 0
                            rounds[j] = 0
                            counter[j] = np.random.randint(0, w0)
                            frame_start[j] = g + 1
                        else:
                            phase[j] = DONE
                    else:
                        phase[j] = BACKOFF
                        counter[j] = np.random.randint(0, w0 << stage[j])

            if record_channel:
                channel[g] = busy[t]

        # superframe end: unfinished frames become deference frames
        end = base + length
        for j in range(n):
            p = phase[j]
            if p == BACKOFF or p == DEFERRED:
                if p == BACKOFF:
                    n_ev = _record(events, n_ev, end - 1, sf, j, EV_DEFER)
                length_f = end - frame_start[j]
                frame_stats[EV_DEFER, 0] += 1
                frame_stats[EV_DEFER, 1] += length_f
                frame_stats[EV_DEFER, 2] += length_f * length_f
                sf_table[sf, S_DEFER] += 1
                phase[j] = BACKOFF
                if reset_on_defer:
                    stage[j] = 0
                    rounds[j] = 0
                counter[j] = np.random.randint(0, w0 << stage[j])
                frame_start[j] = end
            elif p == WAIT or p == TX:
                # collision timeout spilling over the boundary
                length_f = end - frame_start[j]
                frame_stats[EV_COLL, 0] += 1
                frame_stats[EV_COLL, 1] += length_f
                frame_stats[EV_COLL, 2] += length_f * length_f
                sf_table[sf, S_COLL] += 1
                if retry:
                    phase[j] = BACKOFF
                    stage[j] = 0
                    rounds[j] = 0
                    counter[j] = np.random.randint(0, w0)
                    frame_start[j] = end
                else:
                    phase[j] = DONE
        # shift the tail of the occupancy window (never non-idle by construction)
        base = end
    return n_ev


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def batch_sf_stats(
    h, sf_len, n_sf, seed,
    t_p, t_ack, l_ack, t_ack_ti, w0, nb,
    saturated, retry, reset_on_defer,
    e_idle, e_sens, e_tx, e_rx,
):
    """Aggregate chain-level statistics over ``n_sf`` independent
    superframes with ``h`` contenders."""
    np.random.seed(seed)
    participate = np.ones(h, np.bool_)
    sf_lens = np.full(1, sf_len, np.int64)
    counters = np.zeros(N_COUNTERS, np.int64)
    sf_table = np.zeros((1, N_SF_COLS), np.int64)
    totals = np.zeros(N_SF_COLS, np.int64)
    frames = np.zeros((4, 3))
    energy = np.zeros(h)
    energy_total = 0.0
    succ_sf = np.zeros(h, np.int64)
    events = np.zeros((0, 4), np.int64)
    channel = np.zeros(0, np.int8)
    for _ in range(n_sf):
        run_interval(
            participate, sf_lens, t_p, t_ack, l_ack, t_ack_ti, w0, nb,
            saturated, retry, reset_on_defer, e_idle, e_sens, e_tx, e_rx,
            counters, sf_table, frames, energy, succ_sf, events, channel,
        )
        for c in range(N_SF_COLS):
            totals[c] += sf_table[0, c]
        for j in range(h):
            energy_total += energy[j]
    return counters, totals, frames, energy_total


@njit(cache=True)
def batch_ri_successes(
    n_nodes, p_s, sf_lens, n_ri, seed,
    t_p, t_ack, l_ack, t_ack_ti, w0, nb,
    retry, reset_on_defer,
    e_idle, e_sens, e_tx, e_rx,
):
    """Success count and total energy of ``n_ri`` independent intervals."""
    np.random.seed(seed)
    k = sf_lens.shape[0]
    out = np.zeros(n_ri, np.int64)
    energy_out = np.zeros(n_ri)
    counters = np.zeros(N_COUNTERS, np.int64)
    sf_table = np.zeros((k, N_SF_COLS), np.int64)
    frames = np.zeros((4, 3))
    energy = np.zeros(n_nodes)
    succ_sf = np.zeros(n_nodes, np.int64)
    events = np.zeros((0, 4), np.int64)
    channel = np.zeros(0, np.int8)
    participate = np.zeros(n_nodes, np.bool_)
    for r in range(n_ri):
        for j in range(n_nodes):
            participate[j] = np.random.random() < p_s
        run_interval(
            participate, sf_lens, t_p, t_ack, l_ack, t_ack_ti, w0, nb,
            False, retry, reset_on_defer, e_idle, e_sens, e_tx, e_rx,
            counters, sf_table, frames, energy, succ_sf, events, channel,
        )
        s = 0
        for i in range(k):
            s += sf_table[i, S_SUCC]
        out[r] = s
        e = 0.0
        for j in range(n_nodes):
            e += energy[j]
        energy_out[r] = e
    return out, energy_out
