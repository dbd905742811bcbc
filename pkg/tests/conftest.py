import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from floerpde.config import load_config, shipped_config
from floerpde.nonlinearity import Kernel, NonlinearitySpec, Potential, Profile
from floerpde.periodic import HBProblem, hb_solve
from floerpde.spectral import ModelParams, mode_index, mode_weight

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def reference_config():
    return load_config(shipped_config("reference_nls"))


@pytest.fixture(scope="session")
def reference(reference_config):
    """Params and nonlinearity of the shipped NLS reference run."""
    return reference_config.params(), reference_config.spec()


@pytest.fixture(scope="session")
def reference_solution(reference_config):
    cfg = reference_config
    problem = HBProblem(cfg.params(), cfg.spec(), cfg.window.P, cfg.window.N, cfg.solver_options())
    U, trace = hb_solve(problem)
    return problem, U, trace


@pytest.fixture(scope="session")
def golden_nls():
    return ModelParams("2*pi", "pi*(1 + sqrt(5))", d=2, h=5.0, r=2.0)


@pytest.fixture(scope="session")
def golden_nlw():
    return ModelParams("2*pi", "pi*(1 + sqrt(5))", d=1, h=3.0, r=2.0, kind="nlw")


@pytest.fixture(scope="session")
def small_spec():
    """Cubic-type NLS nonlinearity with decaying forcing, cheap at N = 16."""
    return NonlinearitySpec(
        kernel=Kernel("bessel", 6.0),
        profile=Profile("gaussian_poly", (0.0, 0.0, 0.5), 1.0),
        potential=Potential("exp_decay", 0.1, 1.0, 8),
        amplitude=0.05,
        mean_free=True,
    )


def random_coeffs(rng, N, scale=1.0, decay=1.0, batch=()):
    shape = tuple(batch) + (2 * N + 1,)
    c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return scale * c * mode_weight(mode_index(N)) ** (-decay)
