import random

import pytest

from semicentral.center import (BROADCAST, Center, CenterState, Phase, Status,
                                build_waiting_lists, get_next_working_node,
                                handle_center_message)
from semicentral.transport import Message, ProtocolError, Tag, pack_i64, pack_rank, unpack_rank


def msg(tag, src, value=None, payload=b""):
    if value is not None:
        payload = pack_rank(value) if tag is Tag.SEND_WORK else pack_i64(value)
    return Message(tag, src, payload)


def state(p=5, **status):
    st = CenterState(p, seed=1)
    for k, v in status.items():
        st.status[int(k[1:])] = v
    return st


def test_available_assigned_to_the_only_running_worker():
    st = state(5, w2=Status.RUNNING)
    out = handle_center_message(st, msg(Tag.AVAILABLE, 3))
    assert out == [(2, Tag.SEND_WORK, pack_rank(3))]
    assert st.status[3] is Status.ASSIGNED and st.assignments[2] == [3]


def test_available_with_nobody_running():
    st = state(5)
    st.status[3] = Status.RUNNING
    assert handle_center_message(st, msg(Tag.AVAILABLE, 3)) == []
    assert st.status[3] is Status.AVAILABLE


def test_stale_bestval_ignored():
    st = state()
    st.best_val = 90
    assert handle_center_message(st, msg(Tag.BESTVAL_UPDATE, 4, 100)) == []
    assert st.best_val == 90
    out = handle_center_message(st, msg(Tag.BESTVAL_UPDATE, 4, 80))
    assert out == [(BROADCAST, Tag.BESTVAL_UPDATE, pack_i64(80))]
    assert (st.best_val, st.best_holder) == (80, 4)


def test_started_running_clears_assignment_and_feeds_an_idle_worker():
    st = state(4, w1=Status.RUNNING)
    st.assign(1, 2)
    out = handle_center_message(st, msg(Tag.STARTED_RUNNING, 2))
    assert st.status[2] is Status.RUNNING and st.assignments[1] == []
    assert out == [(2, Tag.SEND_WORK, pack_rank(3))]
    assert st.status[3] is Status.ASSIGNED


def test_metadata_stored():
    st = state()
    handle_center_message(st, msg(Tag.METADATA, 2, 50))
    assert st.metadata[2] == 50


def test_out_of_range_source():
    with pytest.raises(ProtocolError):
        handle_center_message(state(3), msg(Tag.AVAILABLE, 4))
    with pytest.raises(ProtocolError):
        handle_center_message(state(3), msg(Tag.AVAILABLE, 0))


def test_next_working_node_examples():
    st = state(5, w2=Status.RUNNING)
    assert get_next_working_node(st, 3) == 2
    st = CenterState(5, policy="metadata")
    st.status.update({2: Status.RUNNING, 5: Status.RUNNING})
    st.metadata.update({2: 50, 5: 120})
    assert get_next_working_node(st, 3) == 5


def test_chain_check_excludes_cycle():
    # r -> a -> w: w already (transitively) waits on r, so w may not feed r
    st = state(5, w4=Status.RUNNING, w2=Status.RUNNING)
    r, a, w = 1, 3, 4
    st.assign(r, a)
    st.assign(a, w)
    st.status[w] = Status.RUNNING
    assert st.reaches(r, w)
    for _ in range(20):
        assert get_next_working_node(st, r) == 2
    st.status[2] = Status.AVAILABLE
    assert get_next_working_node(st, r) is None


def test_random_policy_is_seeded_and_uniformish():
    def picks(seed):
        st = CenterState(6, seed=seed)
        for w in (2, 3, 4, 5):
            st.status[w] = Status.RUNNING
        return [get_next_working_node(st, 6) for _ in range(400)]
    a = picks(3)
    assert a == picks(3)
    assert all(60 < a.count(w) < 140 for w in (2, 3, 4, 5))


def test_scripted_p4_trace():
    # hand-computed: lists for max_b=2, p=4 are {1: [2, 3], 2: [4]}
    c = Center(4, max_b=2, seed=0)
    out = c.start()
    assert [(d, unpack_rank(p)) for d, _, p in out] == [(1, 2), (1, 3), (2, 4)]
    st = c.state
    assert st.status == {1: Status.RUNNING, 2: Status.ASSIGNED, 3: Status.ASSIGNED,
                         4: Status.ASSIGNED}
    c.handle(msg(Tag.STARTED_RUNNING, 2), 0)
    c.handle(msg(Tag.STARTED_RUNNING, 3), 0)
    assert st.assignments == {1: [], 2: [4], 3: [], 4: []}
    c.handle(msg(Tag.AVAILABLE, 1), 0)       # 1 finished: someone running must feed it
    assert st.status[1] is Status.ASSIGNED and st.feeder[1] in (2, 3)
    c.handle(msg(Tag.STARTED_RUNNING, 4), 0)
    assert st.status[4] is Status.RUNNING
    assert st.is_acyclic()


def test_waiting_lists_example():
    lists = build_waiting_lists(3, 13)
    assert lists[1] == [2, 3, 4, 7, 10]
    assert lists[2] == [5, 8, 11]
    assert lists[3] == [6, 9, 12]
    assert lists[4] == [13]
    assert all(lists[i] == [] for i in range(5, 14))
    assert build_waiting_lists(2, 1) == {1: []}


@pytest.mark.parametrize("max_b", range(2, 7))
def test_waiting_lists_partition(max_b):
    for p in range(1, 501):
        lists = build_waiting_lists(max_b, p)
        flat = [q for l in lists.values() for q in l]
        assert sorted(flat) == list(range(2, p + 1))


def test_termination_quiet_then_accept():
    c = Center(2, timeout=20)
    c.start()
    c.handle(msg(Tag.AVAILABLE, 1), 0)
    assert c.quiet()
    assert c.poll(0) == []
    assert c.poll(19) == []
    assert c.poll(20) == [(BROADCAST, Tag.TERMINATE, b"")]
    assert c.handle(msg(Tag.TERMINATE_ACCEPT, 1), 21) == []
    c.handle(msg(Tag.BESTVAL_UPDATE, 2, 5), 21)
    out = c.handle(msg(Tag.TERMINATE_ACCEPT, 2), 22)
    assert out == [(2, Tag.SOLUTION_REQUEST, b"")]
    assert c.handle(msg(Tag.SOLUTION, 2, payload=b"\x01"), 23) == [(BROADCAST, Tag.SHUTDOWN, b"")]
    c.handle(msg(Tag.REPORT, 1, payload=b"{}"), 24)
    c.handle(msg(Tag.REPORT, 2, payload=b"{}"), 24)
    assert c.done and c.result().solution == b"\x01"


def test_started_running_during_wait_resumes():
    c = Center(2, timeout=20)
    c.start()
    c.handle(msg(Tag.AVAILABLE, 1), 0)
    c.poll(0)
    assert c.phase is Phase.QUIET
    c.handle(msg(Tag.STARTED_RUNNING, 2), 5)
    assert c.phase is Phase.LOOP
    assert c.poll(30) == []


def test_refusal_cancels_round():
    c = Center(2, timeout=1)
    c.start()
    c.handle(msg(Tag.AVAILABLE, 1), 0)
    c.poll(0)
    c.poll(1)
    c.handle(msg(Tag.TERMINATE_REFUSE, 1), 2)
    out = c.handle(msg(Tag.TERMINATE_ACCEPT, 2), 2)
    assert out == [(BROADCAST, Tag.TERMINATE_CANCEL, b"")]
    assert c.phase is Phase.LOOP and c.stats["termination_refused"] == 1


def test_termination_reply_outside_round_is_protocol_error():
    c = Center(2)
    with pytest.raises(ProtocolError):
        c.handle(msg(Tag.TERMINATE_ACCEPT, 1), 0)


def test_assignment_graph_stays_acyclic_under_random_traffic():
    rng = random.Random(0)
    st = CenterState(8, seed=2)
    st.status[1] = Status.RUNNING
    for _ in range(5000):
        src = rng.randint(1, 8)
        tag = rng.choice([Tag.AVAILABLE, Tag.STARTED_RUNNING])
        if tag is Tag.AVAILABLE and st.status[src] is not Status.RUNNING:
            continue
        if tag is Tag.STARTED_RUNNING and st.status[src] is not Status.ASSIGNED:
            continue
        handle_center_message(st, msg(tag, src))
        assert st.is_acyclic()
        assert len(st.feeder) == sum(len(v) for v in st.assignments.values())
