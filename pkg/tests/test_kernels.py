import json
import os
import subprocess
import sys

import numpy as np

from aeltherm import _jit
from aeltherm.scenario import lab_step_config, run_scenario

SCRIPT = """
import json
from aeltherm import _jit
from aeltherm.scenario import lab_step_config, run_scenario
res = run_scenario(lab_step_config("pid-i", duration=5400.0))
print(json.dumps({"numba": _jit.USE_NUMBA, "rows": res.rows.tolist()}))
"""


def test_pure_python_fallback_matches_compiled_kernels():
    env = {**os.environ, "AELTHERM_DISABLE_NUMBA": "1"}
    proc = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True,
                          env=env, check=True)
    data = json.loads(proc.stdout)
    assert data["numba"] is False
    ref = run_scenario(lab_step_config("pid-i", duration=5400.0)).rows
    assert np.allclose(np.array(data["rows"]), ref, rtol=0, atol=1e-9, equal_nan=True)


def test_flag_is_read_at_import():
    assert _jit.USE_NUMBA == (_jit.NUMBA_AVAILABLE
                              and os.environ.get("AELTHERM_DISABLE_NUMBA", "0") != "1")
