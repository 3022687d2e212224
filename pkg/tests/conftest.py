"""Suite-wide plan recorder.

Every transport plan handed out by the public solver entry points during the
test session is checked for marginal feasibility.  The worst violation is
reported at the end of the run and any violation >= 1e-6 fails the session.
"""

import numpy as np
import pytest

from gotreid import ot

MARGINAL_LIMIT = 1e-6
PLAN_LOG: list[tuple[str, float]] = []
ACCEPTANCE: dict[int, str] = {}             # criterion -> report line


def report(criterion: int, ok: bool, detail: str) -> None:
    """Records one acceptance line; the caller still asserts ``ok``."""
    ACCEPTANCE[criterion] = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"


def _violation(values, u, v) -> float:
    values = np.asarray(values)
    rows = np.abs(values.sum(axis=-1) - u).max()
    cols = np.abs(values.sum(axis=-2) - v).max()
    return float(max(rows, cols))


def _record(name, out):
    if name == "got_plans_batch":
        if out.size:
            n = out.shape[-1]
            PLAN_LOG.append((name, _violation(out, 1.0 / n, 1.0 / n)))
        return
    plan = out[0] if isinstance(out, tuple) else out
    PLAN_LOG.append((name, plan.marginal_violation()))


def _wrap(name):
    original = getattr(ot, name)

    def wrapped(*args, **kwargs):
        out = original(*args, **kwargs)
        _record(name, out)
        return out

    wrapped.__wrapped__ = original
    wrapped.__doc__ = original.__doc__
    setattr(ot, name, wrapped)


for _name in ("sinkhorn", "gromov_wasserstein", "got_distance", "got_plans_batch"):
    _wrap(_name)


def worst_violation() -> float:
    return max((v for _, v in PLAN_LOG), default=0.0)


def pytest_sessionfinish(session, exitstatus):
    worst = worst_violation()
    ok = worst < MARGINAL_LIMIT
    reporter = session.config.pluginmanager.get_plugin("terminalreporter")
    line = (f"[acceptance 2, suite-wide] {'PASS' if ok else 'FAIL'}: {len(PLAN_LOG)} plans, "
            f"worst marginal violation {worst:.3g} (limit {MARGINAL_LIMIT:g})")
    lines = [ACCEPTANCE[k] for k in sorted(ACCEPTANCE)] + [line]
    for text in lines:
        if reporter is not None:
            reporter.write_line(text)
        else:
            print(text)
    if not ok:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
