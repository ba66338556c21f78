import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(capsys, number, status, detail):
    line = f"CRITERION {number:>2}: {status:<7} {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line, flush=True)
