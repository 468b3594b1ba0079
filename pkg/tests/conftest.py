import numpy as np
import pytest

import lassolab as ll


@pytest.fixture(scope="session")
def desk_config():
    return ll.GeneratorConfig(n=16, m=32, rho=5.0 / 32, sigma=10.0, lam=0.01,
                              dict_kind="gaussian", seed=2016)


@pytest.fixture(scope="session")
def desk_problem(desk_config):
    """One Gaussian desk-scale problem with a certified reference."""
    d = ll.gen_dictionary(desk_config)
    batch = ll.sample_codes(desk_config, d, 1, 77)
    p = ll.build_problem(d, batch.signals[:, 0], desk_config.lam)
    ref = ll.solve_reference(p)
    assert ref.certified
    return p, ref


def make_problem(seed, n=16, m=32, lam=0.01, sigma=10.0, kind="gaussian"):
    cfg = ll.GeneratorConfig(n=n, m=m, rho=5.0 / m, sigma=sigma, lam=lam,
                             dict_kind=kind, seed=seed)
    d = ll.gen_dictionary(cfg)
    batch = ll.sample_codes(cfg, d, 1, seed + 1000)
    return ll.build_problem(d, batch.signals[:, 0], lam)
