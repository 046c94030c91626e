import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


import copy

import pytest

SMALL = {
    "master_seed": 3,
    "problem": {"d": 1, "alpha": 3.0, "lam": -1, "datum": {"kind": "gaussian", "amp": [0.8, 0.0], "width": 1.0}},
    "grid": {"n": 64, "L": 30.0},
    "time": {"T": 1.0, "dt": 0.05, "mesh_dt": 0.1},
    "noise": {"channels": [{"spatial": "gaussian_decay", "amp": [0.3, 0.4], "width": 2.0,
                            "temporal": "exp_decay", "c": 1.0, "rate": 1.0}]},
    "experiment": {"paths": 3, "levels": 2, "windows": 2, "T0": 0.5},
}


def merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


@pytest.fixture
def small_dict():
    return copy.deepcopy(SMALL)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(mod.RESULTS, key=lambda k: int(k.split("-")[1])):
        ok, detail = mod.RESULTS[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
