"""Budget-synchronized learning-rate schedules and the AdamW update rule.

The schedule horizon is planned from (wall-clock budget, days factor,
measured steps/second). Factor 1 anneals the rate to zero exactly when the
budget ends; factors 3 and 9 stretch the schedule so training stops partway
down the warmup/decay triangle.
"""

import numpy as np

from budgetlm import (
    OptimizerHyper,
    OptimizerState,
    ScheduleParams,
    adamw_step,
    calibrate_throughput,
    lr_at,
    plan_budget,
)

# A pretend trainer that takes 2 ms per step, timed with a fake clock.
clock_t = [0.0]


def fake_clock() -> float:
    return clock_t[0]


def fake_step() -> None:
    clock_t[0] += 0.002


sps = calibrate_throughput(fake_step, warm_steps=8, clock=fake_clock)
print(f"calibrated throughput: {sps:.0f} steps/s")

budget = 1200.0  # a 20-minute run
for factor in (1.0, 3.0, 9.0):
    plan = plan_budget(budget, factor, sps)
    sched = ScheduleParams(peak_lr=2e-3, warmup_proportion=0.06, total_steps=plan.total_steps)
    stop = plan.budget_steps
    print(f"factor {factor}: schedule spans {plan.total_steps} steps, "
          f"budget covers {stop}, lr at stop = {lr_at(stop, sched):.2e}")

# An ASCII sketch of the factor-1 triangle.
plan = plan_budget(budget, 1.0, sps)
sched = ScheduleParams(2e-3, 0.06, plan.total_steps)
print("\nlearning rate over the run (factor 1):")
for i in range(21):
    step = i * plan.total_steps // 20
    lr = lr_at(step, sched)
    print(f"  step {step:>7d}  {'#' * int(40 * lr / 2e-3):<40s} {lr:.2e}")

# AdamW with decoupled weight decay on a toy parameter vector.
params = {"w": np.linspace(-1, 1, 5)}
state = OptimizerState.zeros_like(params)
hyper = OptimizerHyper()  # beta1 0.9, beta2 0.98, eps 1e-6, weight decay 0.01
print(f"\nAdamW demo, start: {params['w']}")
rng = np.random.default_rng(0)
for step in range(50):
    grads = {"w": params["w"] + 0.1 * rng.normal(size=5)}  # pull toward zero
    adamw_step(params, grads, state, hyper, lr=lr_at(step, ScheduleParams(1e-2, 0.1, 50)))
print(f"after 50 annealed steps: {np.round(params['w'], 4)}")
print(f"optimizer step count: {state.step_count}")
