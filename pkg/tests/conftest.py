import numpy as np
import pytest

from aiplace import numerics as nx
from aiplace.domain import load_scenario

FD_STEP = 1e-4
# relative error of tiny gradients is measured against this floor
FD_FLOOR = 1e-6


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), FD_FLOOR)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


def numeric_grad(f, t: nx.Tensor, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every entry of ``t``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        with nx.no_grad():
            up = f().item()
        flat[i] = old - step
        with nx.no_grad():
            down = f().item()
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * step)
    return g


def grad_errors(f, params) -> dict[str, float]:
    """Per-parameter relative error between backward() and central differences."""
    params = list(params)
    for p in params:
        p.grad = None
    nx.backward(f())
    out = {}
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        out[p.name or str(id(p))] = rel_err(analytic, numeric_grad(f, p))
    return out


@pytest.fixture(scope="session")
def hosts10():
    return load_scenario("hosts10")


@pytest.fixture(scope="session")
def hosts20():
    return load_scenario("hosts20")


@pytest.fixture(scope="session")
def tiny():
    return load_scenario("tiny")


def toy_scenario(n_hosts=3, n_models=3, cap=20.0, idle=(100.0, 100.0, 100.0),
                 unit=(200.0, 200.0, 200.0)):
    """Small scenario with roomy hosts; per-host idle and unit power are settable."""
    from aiplace.domain import AIModelProfile, HostSpec, Scenario
    hosts = tuple(HostSpec(h, cap, cap, cap, 1000.0, 10.0, idle[h % len(idle)],
                           unit[h % len(unit)], unit[h % len(unit)]) for h in range(n_hosts))
    cat = tuple(AIModelProfile(a, 1.0 + a, 1.0 + a, 1.0 + a, 20.0, 20.0, 90.0)
                for a in range(n_models))
    return Scenario(hosts, cat, name="toy")


@pytest.fixture
def toy():
    return toy_scenario()
