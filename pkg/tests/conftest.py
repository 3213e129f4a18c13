import numpy as np

N_OBS = 20
THETA_STAR = 1.0


def truncated_normal(rng, size, lo=-5.0, hi=5.0):
    out = rng.standard_normal(size)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


def conjugate_case(seed, m, n=N_OBS):
    """Gaussian location model: theta ~ N(0,1) on [-5, 5], y_i = theta + N(0,1).

    Returns prior draws (m, 1), pseudo-datasets (m, n) and the observation (n,)
    drawn at theta = 1.
    """
    rng = np.random.default_rng([seed, 2024])
    y = THETA_STAR + rng.standard_normal(n)
    theta = truncated_normal(rng, m)
    Ybar = theta[:, None] + rng.standard_normal((m, n))
    return theta[:, None], Ybar, y


def conjugate_posterior_mean(y):
    n = len(y)
    return n * float(np.mean(y)) / (n + 1)


# --- acceptance summary -------------------------------------------------------------------

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _acceptance[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda s: int(s.split("_")[2])):
        status, detail = _acceptance[name]
        terminalreporter.write_line(f"{status}  {name}  {detail}")
