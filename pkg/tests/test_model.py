from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mgrub.model import (
    RULE_EDGES, ConfigError, EngineInvariantError, FixedExec, Job, Mode, ReclaimState,
    ServerParams, ServerState, State, SystemConfig, TaskSpec, UniformExec, compute_zero_lag,
    on_arrival, on_budget_exhausted, on_job_completion, on_replenishment, on_zero_lag,
    rule5_reached,
)


def job(arrival, c=1, index=0, deadline=None):
    return Job(0, index, arrival, c, deadline if deadline is not None else arrival + 10)


def srv(Q=5, P=10, **kw):
    return ServerState(ServerParams(0, P, Q), **kw)


# ---------------------------------------------------------------- types


def test_task_deadline_defaults_to_period():
    t = TaskSpec(1, 100, FixedExec(10))
    assert t.rel_deadline_D == 100


@pytest.mark.parametrize("kw", [
    dict(period_T=0, exec_model=FixedExec(1)),
    dict(period_T=10, exec_model=FixedExec(0)),
    dict(period_T=10, exec_model=UniformExec(5, 4)),
    dict(period_T=10, exec_model=FixedExec(1), kind="bursty"),
    dict(period_T=10, exec_model=FixedExec(1), rel_deadline_D=-1),
])
def test_task_validation(kw):
    with pytest.raises(ConfigError):
        TaskSpec(0, **kw)


def test_server_bandwidth_is_exact():
    s = ServerParams(3, 30, 10)
    assert s.bandwidth_U == Fraction(1, 3)


@pytest.mark.parametrize("Q,P", [(0, 10), (11, 10), (5, 0)])
def test_server_needs_bandwidth_in_unit_interval(Q, P):
    with pytest.raises(ConfigError):
        ServerParams(0, P, Q)


def test_server_from_any_two():
    assert ServerParams.from_any(0, Q=4, P=10).bandwidth_U == Fraction(2, 5)
    assert ServerParams.from_any(0, P=10, U=0.4).max_budget_Q == 4
    assert ServerParams.from_any(0, Q=4, U=Fraction(2, 5)).period_P == 10
    with pytest.raises(ConfigError):
        ServerParams.from_any(0, Q=4)
    with pytest.raises(ConfigError):
        ServerParams.from_any(0, Q=4, P=10, U=0.9)


def test_system_config_validation():
    assert SystemConfig(mode="parallel").mode is Mode.PARALLEL
    with pytest.raises(ConfigError):
        SystemConfig(m=0)
    with pytest.raises(ConfigError):
        SystemConfig(horizon=0)
    with pytest.raises(ConfigError):
        SystemConfig(epsilon_margin=1)


# ---------------------------------------------------------------- rules


def test_rule1_from_inactive():
    s = srv()
    assert on_arrival(s, job(3), 3) == "1"
    assert (s.state, s.budget_q, s.deadline_d) == (State.ACTIVE_CONTENDING, 5, 13)


def test_rule4_keeps_variables():
    s = srv(state=State.ACTIVE_NON_CONTENDING, budget_q=2, deadline_d=9)
    assert on_arrival(s, job(4), 4) == "4"
    assert (s.state, s.budget_q, s.deadline_d) == (State.ACTIVE_CONTENDING, 2, 9)


@pytest.mark.parametrize("state", [State.ACTIVE_CONTENDING, State.RECHARGING])
def test_arrival_while_busy_only_queues(state):
    s = srv(state=state, budget_q=3, deadline_d=10)
    assert on_arrival(s, job(2), 2) is None
    assert s.state is state and len(s.pending_jobs) == 1


def test_arrival_clock_mismatch():
    with pytest.raises(EngineInvariantError):
        on_arrival(srv(), job(5), 4)


def test_sequential_arrival_withdraws_at_stored_cpu():
    s = ServerState(ServerParams(0, 10, 3))
    pool = ReclaimState(Mode.SEQUENTIAL, 2, per_cpu_uinact=[Fraction(0), Fraction(4, 10)])
    pool.deposit(s, 1)
    assert pool.per_cpu_uinact == [0, Fraction(7, 10)]
    on_arrival(s, job(0), 0, pool)
    assert pool.per_cpu_uinact == [0, Fraction(4, 10)]
    assert not s.donated


def test_withdraw_is_idempotent():
    s = ServerState(ServerParams(0, 10, 3))
    pool = ReclaimState(Mode.PARALLEL, 2, global_uinact=Fraction(1))
    pool.withdraw(s)
    assert pool.global_uinact == 1


def test_completion_with_more_jobs_is_2a():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=3, deadline_d=10)
    s.pending_jobs.extend([job(0, c=0), job(0, index=1)])
    assert on_job_completion(s, 2) == ["2a"]
    assert s.state is State.ACTIVE_CONTENDING and (s.budget_q, s.deadline_d) == (3, 10)


def test_completion_goes_non_contending():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=4, deadline_d=10)
    s.pending_jobs.append(job(0, c=0))
    assert on_job_completion(s, 0) == ["2b"]
    assert s.state is State.ACTIVE_NON_CONTENDING
    assert compute_zero_lag(s) == 2


def test_completion_past_zero_lag_goes_inactive():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=6, deadline_d=10)
    s.pending_jobs.append(job(0, c=0))
    pool = ReclaimState(Mode.PARALLEL, 4)
    assert on_job_completion(s, 0, pool, 0) == ["2b", "5"]
    assert s.state is State.INACTIVE and pool.global_uinact == Fraction(1, 2)


def test_completion_deferred_rule5_leaves_anc():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=6, deadline_d=10)
    s.pending_jobs.append(job(0, c=0))
    assert on_job_completion(s, 0, defer_rule5=True) == ["2b", "5"]
    assert s.state is State.ACTIVE_NON_CONTENDING


def test_completion_preconditions():
    s = srv(state=State.ACTIVE_NON_CONTENDING)
    with pytest.raises(EngineInvariantError):
        on_job_completion(s, 0)
    s = srv(state=State.ACTIVE_CONTENDING)
    s.pending_jobs.append(job(0, c=3))
    with pytest.raises(EngineInvariantError):
        on_job_completion(s, 0)


@pytest.mark.parametrize("q,d,U,expected", [
    (2, 9, Fraction(1, 2), 5),
    (0, 9, Fraction(1, 2), 9),
    (3, 16, Fraction(1, 5), 1),
])
def test_zero_lag_instant(q, d, U, expected):
    P = U.denominator
    s = ServerState(ServerParams(0, P, U.numerator), State.ACTIVE_NON_CONTENDING, q, d)
    assert compute_zero_lag(s) == expected
    assert rule5_reached(s, expected) and not rule5_reached(s, expected - 1)


def test_zero_lag_only_for_non_contending():
    with pytest.raises(EngineInvariantError):
        compute_zero_lag(srv(state=State.ACTIVE_CONTENDING))


def test_exhaustion_then_replenishment():
    s = srv(Q=4, state=State.ACTIVE_CONTENDING, budget_q=0, deadline_d=12)
    s.pending_jobs.append(job(0, c=5))
    assert on_budget_exhausted(s, 7) == 12
    assert s.state is State.RECHARGING
    assert on_replenishment(s, 12) == "3"
    assert (s.state, s.budget_q, s.deadline_d) == (State.ACTIVE_CONTENDING, 4, 22)


def test_exhaustion_at_deadline_replenishes_same_instant():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=0, deadline_d=12)
    s.pending_jobs.append(job(0, c=5))
    assert on_budget_exhausted(s, 12) == 12


def test_exhaustion_preconditions():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=1, deadline_d=12)
    s.pending_jobs.append(job(0))
    with pytest.raises(EngineInvariantError):
        on_budget_exhausted(s, 3)
    with pytest.raises(EngineInvariantError):
        on_budget_exhausted(srv(state=State.ACTIVE_CONTENDING, budget_q=0), 3)


def test_replenishment_before_deadline_is_a_bug():
    s = srv(state=State.RECHARGING, budget_q=0, deadline_d=12)
    with pytest.raises(EngineInvariantError):
        on_replenishment(s, 11)


def test_zero_lag_deposits_on_given_cpu():
    s = ServerState(ServerParams(0, 10, 3), State.ACTIVE_NON_CONTENDING, 3, 10, last_cpu=0)
    pool = ReclaimState(Mode.SEQUENTIAL, 3)
    assert on_zero_lag(s, 0, pool, cpu_hint=2) == "5"
    assert pool.per_cpu_uinact[2] == Fraction(3, 10) and s.stored_cpu == 2


def test_zero_lag_parallel_increment():
    s = ServerState(ServerParams(0, 10, 3), State.ACTIVE_NON_CONTENDING, 3, 10)
    pool = ReclaimState(Mode.PARALLEL, 4, global_uinact=Fraction(1, 4))
    on_zero_lag(s, 0, pool)
    assert pool.global_uinact == Fraction(11, 20)


def test_stale_zero_lag_ignored():
    s = srv(state=State.ACTIVE_CONTENDING, budget_q=2, deadline_d=9)
    pool = ReclaimState(Mode.PARALLEL, 2)
    assert on_zero_lag(s, 5, pool) is None
    assert s.state is State.ACTIVE_CONTENDING and pool.global_uinact == 0


# ------------------------------------------------------------ properties

ACTIONS = st.lists(st.tuples(st.sampled_from(["arrive", "run", "idle"]),
                             st.integers(1, 20)), min_size=1, max_size=60)


@given(Q=st.integers(1, 20), extra=st.integers(0, 30), actions=ACTIONS)
def test_random_walk_stays_on_rule_edges(Q, extra, actions):
    """Drive one server through arbitrary arrivals / execution / idling with
    the rule functions only; every step is a legal edge and q stays in range."""
    P = Q + extra
    s = ServerState(ServerParams(0, P, Q))
    pool = ReclaimState(Mode.PARALLEL, 1)
    pool.deposit(s, 0)
    now, k = 0, 0
    for action, amount in actions:
        before = s.state
        fired = []
        if action == "arrive":
            fired.append(on_arrival(s, Job(0, k, now, amount, now + P), now, pool))
            k += 1
        elif action == "run" and s.state is State.ACTIVE_CONTENDING:
            head = s.pending_jobs[0]
            dt = min(amount, head.exec_remaining, s.budget_q)
            s.budget_q -= dt
            head.exec_remaining -= dt
            now += dt
            if head.exec_remaining == 0:
                fired += on_job_completion(s, now, pool, 0)
            elif s.budget_q == 0:
                at = on_budget_exhausted(s, now)
                fired.append("2c")
                now = at
                fired.append(on_replenishment(s, now))
        else:
            now += amount
            if s.state is State.ACTIVE_NON_CONTENDING and rule5_reached(s, now):
                fired.append(on_zero_lag(s, now, pool, 0))
        state = before
        for rule in [r for r in fired if r]:
            a, b = RULE_EDGES[rule]
            assert a is state
            state = b
        assert state is s.state
        assert 0 <= s.budget_q <= Q
        assert (s.state is State.ACTIVE_CONTENDING) <= bool(s.pending_jobs)
        assert pool.global_uinact == (s.U if s.state is State.INACTIVE else 0)
