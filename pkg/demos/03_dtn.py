"""Store-and-forward during an outage, with undo of the newest parked send."""

from socketstore import run_scenario

report = run_scenario("dtn")
for a in report.assertions:
    print(f"{a['check']:<16} expected={a['expected']!r:<28} actual={a.get('actual')!r}")
print("passed" if report.passed else "FAILED")
