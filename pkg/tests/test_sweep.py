import math

import pytest

from budgetlm.errors import ConfigError, ControllerError
from budgetlm.sweep import (
    PruneSchedule,
    SearchSpace,
    SimulatedTrialRunner,
    TrialConfig,
    TrialState,
    TrialStatus,
    VirtualClock,
    apply_rank_prune,
    apply_threshold_prune,
    build_grid,
    eval_cadence,
    run_sweep,
    summarize_axis,
)

DAY = 86400.0


# --- cadence ----------------------------------------------------------------


def test_cadence_first_eval_at_ten_minutes():
    assert eval_cadence(0.0, DAY) == pytest.approx(600.0)


def test_cadence_thirty_minutes_after_early_window():
    assert eval_cadence(5000.0, DAY) == pytest.approx(6800.0)  # 5000 > 4320 => +1800


def test_cadence_scales_with_budget():
    assert eval_cadence(0.0, 1440.0) == pytest.approx(10.0)
    assert eval_cadence(100.0, 1440.0) == pytest.approx(130.0)


def test_cadence_boundary_is_late_interval():
    assert eval_cadence(0.05 * DAY, DAY) == pytest.approx(0.05 * DAY + 1800.0)


def test_cadence_preconditions():
    with pytest.raises(ConfigError):
        eval_cadence(-1.0, DAY)
    with pytest.raises(ConfigError):
        eval_cadence(DAY, DAY)
    with pytest.raises(ConfigError):
        eval_cadence(0.0, 0.0)


# --- grid -------------------------------------------------------------------


def test_default_grid_has_108_configs():
    grid = build_grid(SearchSpace(), seed=0)
    assert len(grid) == 108
    assert [c.trial_id for c in grid] == list(range(108))
    assert len({(c.bsz, c.peak_lr, c.warmup_proportion, c.days_factor) for c in grid}) == 108


def test_single_point_grid():
    space = SearchSpace(bsz_values=(64,), peak_lr_values=(1e-3,),
                        warmup_values=(0.06,), days_factor_values=(1.0,))
    assert len(build_grid(space, seed=0)) == 1


def test_two_by_two_grid():
    space = SearchSpace(bsz_values=(64, 128), peak_lr_values=(1e-3, 2e-3),
                        warmup_values=(0.06,), days_factor_values=(1.0, 9.0))
    grid = build_grid(space, seed=5)
    assert len(grid) == 8
    assert all(c.seed == 5 for c in grid)
    # Lexicographic: last axis varies fastest.
    assert (grid[0].days_factor, grid[1].days_factor) == (1.0, 9.0)
    assert grid[0].bsz == grid[3].bsz == 64


def test_empty_axis_rejected():
    with pytest.raises(ConfigError):
        SearchSpace(bsz_values=())


# --- pruning ----------------------------------------------------------------


def _trial(tid, losses, status=TrialStatus.RUNNING):
    cfg = TrialConfig(trial_id=tid, bsz=64, peak_lr=1e-3, warmup_proportion=0.06,
                      days_factor=1.0, seed=0)
    t = TrialState(cfg)
    if status is not TrialStatus.PENDING:
        t.transition(TrialStatus.RUNNING)
    for i, loss in enumerate(losses):
        t.record_eval(600.0 * (i + 1), loss)
    if status not in (TrialStatus.PENDING, TrialStatus.RUNNING):
        t.transition(status)
    return t


def test_threshold_prune_rule():
    trials = [_trial(0, [6.5]), _trial(1, [5.9]), _trial(2, [7.0])]
    apply_threshold_prune(trials, 6.0)
    assert [t.status for t in trials] == [
        TrialStatus.PRUNED_THRESHOLD, TrialStatus.RUNNING, TrialStatus.PRUNED_THRESHOLD]


def test_threshold_prune_no_survivor_change_when_all_pass():
    trials = [_trial(0, [5.0]), _trial(1, [6.0])]  # 6.0 is "6.0 or less"
    apply_threshold_prune(trials, 6.0)
    assert all(t.status is TrialStatus.RUNNING for t in trials)


def test_threshold_prune_catches_non_finite():
    trials = [_trial(0, [5.0, math.nan])]
    apply_threshold_prune(trials, 6.0)
    assert trials[0].status is TrialStatus.PRUNED_THRESHOLD


def test_threshold_prune_requires_evals():
    trials = [_trial(0, [])]
    with pytest.raises(ControllerError):
        apply_threshold_prune(trials, 6.0)


def test_rank_prune_keeps_ceil_half():
    trials = [_trial(i, [5.0 + 0.1 * i]) for i in range(5)]
    apply_rank_prune(trials, 0.5)
    kept = [t.config.trial_id for t in trials if t.status is TrialStatus.RUNNING]
    assert kept == [0, 1, 2]  # ceil(2.5) == 3


def test_rank_prune_tie_breaks_to_lower_id():
    trials = [_trial(0, [5.0]), _trial(1, [5.0]), _trial(2, [5.0])]
    apply_rank_prune(trials, 1 / 3)
    kept = [t.config.trial_id for t in trials if t.status is TrialStatus.RUNNING]
    assert kept == [0]


def test_rank_prune_single_survivor_kept():
    trials = [_trial(0, [5.0])]
    apply_rank_prune(trials, 0.5)
    assert trials[0].status is TrialStatus.RUNNING


def test_rank_prune_empty_noop():
    assert apply_rank_prune([], 0.5) == []


def test_prune_schedule_validation():
    with pytest.raises(ConfigError):
        PruneSchedule(checkpoint1_fraction=0.5, checkpoint2_fraction=0.5)
    with pytest.raises(ConfigError):
        PruneSchedule(loss_threshold=0.0)
    with pytest.raises(ConfigError):
        PruneSchedule(keep_fraction=0.0)


# --- trial state machine ----------------------------------------------------


def test_state_machine_legal_path():
    t = _trial(0, [5.0])
    t.transition(TrialStatus.COMPLETED)
    assert t.status is TrialStatus.COMPLETED


def test_state_machine_terminal_immutable():
    t = _trial(0, [5.0], status=TrialStatus.COMPLETED)
    with pytest.raises(ControllerError):
        t.transition(TrialStatus.RUNNING)
    with pytest.raises(ControllerError):
        t.transition(TrialStatus.PRUNED_RANK)


def test_state_machine_pending_cannot_complete():
    cfg = TrialConfig(0, 64, 1e-3, 0.06, 1.0, 0)
    t = TrialState(cfg)
    with pytest.raises(ControllerError):
        t.transition(TrialStatus.COMPLETED)


def test_eval_history_strictly_increasing():
    t = _trial(0, [5.0])
    with pytest.raises(ControllerError):
        t.record_eval(600.0, 4.0)


# --- end-to-end under a virtual clock ----------------------------------------


def _curves_and_grid():
    """8 trials with hand-designed loss curves over a 1-day budget.

    Expectations at the checkpoints:
      threshold (12.5% = 10800s; latest eval lands at 9600s; bar 6.0):
        trial 3 diverges (NaN past 2400s), trial 6 crashes (raises past 1800s),
        trials 2 and 5 sit above 6.0 -> pruned_threshold.
      rank (50% = 43200s; latest eval lands at 42000s; keep ceil(4/2)=2):
        losses there: t0 3.528, t1 3.028, t4 4.328, t7 3.828 -> keep {1, 0}.
    """
    space = SearchSpace(bsz_values=(64,), peak_lr_values=(1e-3, 2e-3),
                        warmup_values=(0.0, 0.06), days_factor_values=(1.0, 9.0))
    grid = build_grid(space, seed=0)
    assert len(grid) == 8

    def improving(start, rate):
        return lambda t: start - rate * (t / DAY)

    curves = {
        0: improving(4.5, 2.0),
        1: improving(4.0, 2.0),
        2: lambda t: 7.5,               # stuck above the bar
        3: lambda t: math.nan if t > 2400 else 8.0,  # diverges early
        4: improving(5.3, 2.0),
        5: lambda t: 6.2,               # just above the bar
        6: _crash_after(1800.0),
        7: improving(4.8, 2.0),
    }
    return grid, curves


def _crash_after(when):
    def curve(t):
        if t > when:
            raise RuntimeError("simulated worker crash")
        return 8.5

    return curve


EXPECTED_STATUS = {
    0: "completed",
    1: "completed",
    2: "pruned_threshold",
    3: "diverged",
    4: "pruned_rank",
    5: "pruned_threshold",
    6: "diverged",
    7: "pruned_rank",
}


def _run_once(slots=1):
    grid, curves = _curves_and_grid()
    clock = VirtualClock()
    runner = SimulatedTrialRunner(curves, DAY, clock)
    return run_sweep(grid, DAY, slots, PruneSchedule(), runner, clock)


def test_virtual_sweep_prune_decisions():
    report = _run_once()
    statuses = {r.trial_id: r.status for r in report.rows}
    assert statuses == EXPECTED_STATUS
    finishers = report.finishers
    assert [r.trial_id for r in finishers] == [1, 0]  # sorted by final loss
    assert finishers[0].final_loss == pytest.approx(2.0)
    assert report.clock_mode == "virtual"


def test_virtual_sweep_audit_complete():
    report = _run_once()
    text = "\n".join(report.audit_lines)
    for tid, status in EXPECTED_STATUS.items():
        if status == "completed":
            continue
        assert f"trial={tid}" in text, (tid, text)
    assert "checkpoint=threshold" in text
    assert "checkpoint=rank" in text


def test_virtual_sweep_replay_is_byte_identical():
    a = _run_once()
    b = _run_once()
    assert a.to_tsv().encode() == b.to_tsv().encode()
    assert "\n".join(a.audit_lines).encode() == "\n".join(b.audit_lines).encode()


def test_virtual_sweep_slots_do_not_change_outcome():
    a = _run_once(slots=1)
    b = _run_once(slots=4)
    assert a.to_tsv() == b.to_tsv()
    # Identical decisions and timestamps; only the recorded slots value differs.
    assert a.audit_lines[1:] == b.audit_lines[1:]


def test_pruning_disabled_limit():
    grid, curves = _curves_and_grid()
    clock = VirtualClock()
    runner = SimulatedTrialRunner(curves, DAY, clock)
    prune = PruneSchedule(loss_threshold=math.inf, keep_fraction=1.0)
    report = run_sweep(grid, DAY, 1, prune, runner, clock)
    statuses = {r.trial_id: r.status for r in report.rows}
    for tid in (0, 1, 2, 4, 5, 7):
        assert statuses[tid] == "completed"
    assert statuses[3] == "diverged"
    assert statuses[6] == "diverged"


def test_budget_ceiling_on_eval_times():
    report = _run_once()
    # final eval of a completed trial lands exactly on the budget
    for row in report.finishers:
        assert row.final_loss is not None
    grid, curves = _curves_and_grid()
    clock = VirtualClock()
    runner = SimulatedTrialRunner(curves, DAY, clock)
    state = TrialState(grid[0])
    state.transition(TrialStatus.RUNNING)
    runner.run_until(state, 2 * DAY)
    assert max(t for t, _ in state.evals) <= DAY


def test_summarize_axis_groups_finishers():
    report = _run_once()
    by_days = summarize_axis(report, "days_factor")
    assert set(by_days) == {1.0, 9.0}
    lo, med, hi = by_days[1.0]
    assert lo <= med <= hi


def test_summarize_axis_requires_finishers():
    grid, curves = _curves_and_grid()
    clock = VirtualClock()
    runner = SimulatedTrialRunner(curves, DAY, clock)
    prune = PruneSchedule(loss_threshold=0.001)  # nothing survives
    report = run_sweep(grid, DAY, 1, prune, runner, clock)
    assert not report.finishers
    assert report.audit_lines  # audit still records every decision
    with pytest.raises(ControllerError):
        summarize_axis(report, "days_factor")


def test_summarize_axis_validates_axis():
    report = _run_once()
    with pytest.raises(ConfigError):
        summarize_axis(report, "nonsense")


def test_run_sweep_validation():
    grid, curves = _curves_and_grid()
    clock = VirtualClock()
    runner = SimulatedTrialRunner(curves, DAY, clock)
    with pytest.raises(ConfigError):
        run_sweep(grid, DAY, 0, PruneSchedule(), runner, clock)
    with pytest.raises(ConfigError):
        run_sweep(grid, -5.0, 1, PruneSchedule(), runner, clock)
