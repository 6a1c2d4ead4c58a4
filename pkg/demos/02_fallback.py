"""When the Store is unreachable, a module connect degrades to a plain socket."""

from socketstore import run_scenario

report = run_scenario("fallback")
print(report.to_json())
print("passed" if report.passed else "FAILED")
