"""Run the checked-in benchmark suite and print the metrics table.

Six arms over the same five test tasks: no exploitation, planning-side only,
execution-side only, both, and two ablations on how many training tasks feed
the memory. Every number is deterministic; the table reproduces to the byte
on every run.
"""

from pathlib import Path

from ice.bench import BenchSpec, format_table, run_bench

suite = Path(__file__).resolve().parent.parent / "suite"
result = run_bench(BenchSpec.from_file(suite / "bench.json"))
print(format_table(result))

standard = next(a for a in result.arms if a.arm.name == "standard").metrics
combined = next(a for a in result.arms if a.arm.name == "planning_execution").metrics
saved = standard.api_calls_all - combined.api_calls_all
print(f"exploiting consolidated experience saves {saved} of "
      f"{standard.api_calls_all} backend calls "
      f"({100 * saved / standard.api_calls_all:.1f}%)")
