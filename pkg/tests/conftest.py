import numpy as np
import pytest

from jsdmp.autodiff import Tape
from jsdmp.graph import build_graph

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    """Collect tests tagged with a ``criterion`` property (optionally a ``measured`` one)."""
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _ACCEPTANCE.append((props["criterion"], report.outcome, props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, measured in _ACCEPTANCE:
        line = f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}"
        terminalreporter.write_line(f"{line}  [{measured}]" if measured else line)


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences (mutates and restores ``x``)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale)


def grad_of(build, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Analytic gradients of ``build(params) -> scalar tensor``."""
    tape = Tape()
    p = tape.params(arrays)
    return tape.backward(build(p))


def value_of(build, arrays: dict[str, np.ndarray]) -> float:
    tape = Tape()
    return build(tape.params(arrays)).item()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(n: int, rng: np.random.Generator, p: float = 0.4):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return build_graph(n, np.stack([iu[keep], ju[keep]], axis=1))


@pytest.fixture
def graph5(rng):
    return random_graph(5, rng, 0.5)


def split_synth(n=300, C=3, D=40, h=0.9, seed=0, per_class=10):
    """Small synthetic dataset with a planetoid split attached."""
    from jsdmp.data import make_splits, synthesize_graph

    ds = synthesize_graph(n, C, D, h, 6, np.random.default_rng(seed))
    masks = make_splits(ds, "planetoid", np.random.default_rng(seed), train_per_class=per_class, n_val=60, n_test=100)
    return ds.with_splits(*masks)


@pytest.fixture(scope="session")
def easy_synth():
    return split_synth()
