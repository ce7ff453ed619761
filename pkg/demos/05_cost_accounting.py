"""Budget arithmetic: GB-hours, dollar brackets, and days-to-cover tables."""

from budgetlm import (
    HardwareSpec,
    ThroughputRecord,
    days_to_cover,
    dollar_estimate,
    emit_table,
    gb_hours,
)

# Two hardware setups with the same memory-time budget.
eight_small = HardwareSpec(gpu_count=8, gpu_memory_gb=12)
one_big = HardwareSpec(gpu_count=1, gpu_memory_gb=32)
budget_a = gb_hours(eight_small, hours=24)
budget_b = gb_hours(one_big, hours=72)
print(f"8 x 12GB x 24h = {budget_a:.0f} GB-hours")
print(f"1 x 32GB x 72h = {budget_b:.0f} GB-hours  (same budget)")

lo, hi = dollar_estimate(budget_a)
print(f"estimated cloud cost: ${lo:.0f} to ${hi:.0f}")

# How long does it take to stream 256M training examples at a measured rate?
target = 256_000_000
print(f"\ncovering {target:,} examples:")
for label, bsz, sps in [
    ("reference, bsz 256", 256, 506.4),
    ("optimized, bsz 4096", 4096, 1081.5),
    ("optimized, bsz 8192", 8192, 1171.3),
    ("optimized, bsz 16384", 16384, 1229.2),
]:
    print(f"  {label:<22} {days_to_cover(target, sps):5.2f} days")

records = [
    ThroughputRecord.for_target("reference, bsz 256", 256, 506.4, target),
    ThroughputRecord.for_target("optimized, bsz 4096", 4096, 1081.5, target),
    ThroughputRecord.for_target("optimized, bsz 8192", 8192, 1171.3, target),
    ThroughputRecord.for_target("optimized, bsz 16384", 16384, 1229.2, target),
]
print("\n" + emit_table(records, target))
