"""
A convergence table
===================

Refine the mesh and halve the time step together, then read the observed
orders from consecutive rows.

Usage: ``python3 04_convergence_table.py [family] [p] [levels]``, e.g.
``python3 04_convergence_table.py hexagonal 0.5 1,2,3``.
"""
import sys

from hmmgdm.metrics import DEFAULT_DTS, convergence_study
from hmmgdm.models import make_gbf

family = sys.argv[1] if len(sys.argv) > 1 else "triangular"
p = float(sys.argv[2]) if len(sys.argv) > 2 else 2.0
levels = [int(v) for v in (sys.argv[3] if len(sys.argv) > 3 else "1,2,3").split(",")]
dts = [DEFAULT_DTS[lv - 1] for lv in levels]


def progress(level, row, traj):
    print(f"level {level}: h={row.h:.5f} done, max Picard {max(traj.picard_iterations)}",
          file=sys.stderr)


report = convergence_study(make_gbf(p), family, levels, dts, T=1.0, on_level=progress)
print(report.to_markdown())
