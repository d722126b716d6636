import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_orthonormal(rng, d, p):
    Q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    return Q


def random_labeled(rng, d, C, N):
    """Random data with every class present at least once."""
    labels = np.concatenate([np.arange(C), rng.integers(0, C, N - C)])
    rng.shuffle(labels)
    Y = rng.standard_normal((d, N)) + 2.0 * rng.standard_normal((d, C))[:, labels]
    return Y, labels


def planted_dictionary(seed, p=16, K=32, sparsity=5, N=400, n_classes=4):
    """Z = D0 X0 exactly, with 5-sparse columns and round-robin class labels."""
    rng = np.random.default_rng(seed)
    D0 = rng.standard_normal((p, K))
    D0 /= np.linalg.norm(D0, axis=0)
    X0 = np.zeros((K, N))
    for j in range(N):
        X0[rng.choice(K, sparsity, replace=False), j] = rng.standard_normal(sparsity)
    labels = np.arange(N) % n_classes
    return D0 @ X0, labels, D0, X0


# --- acceptance reporting ------------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "setup" and call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        _ACCEPTANCE[number] = (title, "SKIP" if skipped else "FAIL")
    elif call.when == "call":
        outcome = "PASS" if call.excinfo is None else (
            "SKIP" if call.excinfo.errisinstance(pytest.skip.Exception) else "FAIL")
        _ACCEPTANCE[number] = (title, outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{outcome}] criterion {number:2d}: {title}")
