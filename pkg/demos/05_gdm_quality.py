"""
Quality of the gradient discretisation
======================================

Three numbers drive the error analysis: the discrete Poincare constant
C_D, the consistency defect S_D and the limit-conformity defect W_D.  The
last two should shrink like h.
"""
import math

from hmmgdm.gdm import HMMDiscretisation
from hmmgdm.mesh import generate
from hmmgdm.metrics import quality_report, rates

rows = [quality_report(HMMDiscretisation(generate("triangular", level))) for level in (1, 2, 3)]
print(rows[0].csv_header())
for r in rows:
    print(r.csv_row())

# %%
# C_D approaches the continuous constant 1/(pi sqrt 2) of the unit square.
print("1/(pi sqrt 2) =", 1 / (math.pi * math.sqrt(2)))

hs = [r.h for r in rows]
print("orders S_D:", rates([r.S_D["bubble"] for r in rows], hs))
print("orders W_D:", rates([r.W_D["curl_bubble"] for r in rows], hs))

# %%
# The largest time step for which each Picard map is guaranteed to contract
# (with epsilon = 1e-3 and lambda = 1).
print("dt bound:", 2.0 / (rows[-1].C_D + 1e-3))
