import numpy as np
import pytest

from stabreg.dataset import MultiEnvDataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte-Carlo checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; pass --runslow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def linear_envs(rng, n_per_env=100, n_envs=2, beta=(1.0, -0.5), noise=1.0, shift=None, slope_shift=None):
    """Gaussian linear data shared across environments, with optional per-env intercept/slope changes."""
    beta = np.asarray(beta, dtype=float)
    Xs, ys, envs = [], [], []
    for e in range(n_envs):
        X = rng.normal(size=(n_per_env, len(beta)))
        b = beta.copy()
        if slope_shift is not None:
            b[0] += slope_shift * e
        y = X @ b + noise * rng.normal(size=n_per_env)
        if shift is not None:
            y = y + shift * e
        Xs.append(X)
        ys.append(y)
        envs += [f"e{e}"] * n_per_env
    return MultiEnvDataset(np.vstack(Xs), np.concatenate(ys), envs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict[str, tuple[bool, str]] = {}


def record_criterion(k, ok: bool, detail: str) -> None:
    """Store one acceptance outcome under label ``k``; printed in the terminal summary."""
    CRITERIA[str(k)] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    def order(label):
        digits = "".join(c for c in label if c.isdigit())
        return int(digits), label

    for k in sorted(CRITERIA, key=order):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
