"""Three flight computers running one mission.

One replica misses a waypoint update and the master crashes halfway
through. Replicas only talk when a condition changes; the report shows how
few sync rounds that takes and who ended up in charge.
"""

import sys
from pathlib import Path

from abtm.sim import ScenarioConfig, output_values, run_scenario

cfg = ScenarioConfig.from_file(Path(__file__).parent / "flight.json")
report = run_scenario(cfg)
reference = run_scenario(cfg.without_faults())

sys.stdout.write(report.to_text())
same = output_values(report.external()) == output_values(reference.external())
print("outputs match the fault-free run:", same)
