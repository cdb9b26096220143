import numpy as np


def rel_err(a, b, floor=1e-6):
    """||a - b|| / max(||a||, ||b||), or the absolute difference when both are tiny.

    Some exact gradients are identically zero (e.g. a bias whose effect is a
    constant shift inside a softmax); a relative measure is meaningless there.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.linalg.norm(a - b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return float(diff / scale) if scale > floor else float(diff)


ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Store one acceptance verdict; printed together at the end of the run."""
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
