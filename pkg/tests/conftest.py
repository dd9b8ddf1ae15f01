import numpy as np
import pytest

from pathmed.data import Dataset, TreatmentCoding, formula
from pathmed.nuisance import WorkingModelSpec
from pathmed.simulation import DgpParams, generate

CODING01 = TreatmentCoding(a=1, a_prime=0)


# ---------------------------------------------------------------------------
# Fully discrete toy: binary C0, one binary C1 component, binary M, Y in
# {0, 1, 2}, with all conditional probabilities bounded away from 0/1 so a
# seeded size-2000 sample populates every cell.
# ---------------------------------------------------------------------------

def random_discrete_law(rng):
    law = {
        "p_c0": rng.uniform(0.35, 0.65),
        "p_a": {c0: rng.uniform(0.3, 0.7) for c0 in (0.0, 1.0)},
        "p_c1": {(a, c0): rng.uniform(0.25, 0.75)
                 for a in (0.0, 1.0) for c0 in (0.0, 1.0)},
        "p_m": {(c1, a, c0): rng.uniform(0.25, 0.75)
                for c1 in (0.0, 1.0) for a in (0.0, 1.0) for c0 in (0.0, 1.0)},
    }
    p_y = {}
    for m in (0.0, 1.0):
        for c1 in (0.0, 1.0):
            for a in (0.0, 1.0):
                for c0 in (0.0, 1.0):
                    raw = rng.uniform(0.15, 1.0, size=3)
                    p_y[(m, c1, a, c0)] = raw / raw.sum()
    law["p_y"] = p_y
    return law


def sample_discrete(law, n, rng):
    c0 = (rng.random(n) < law["p_c0"]).astype(float)
    a = np.array([float(rng.random() < law["p_a"][v]) for v in c0])
    c1 = np.array([float(rng.random() < law["p_c1"][(av, cv)])
                   for av, cv in zip(a, c0)])
    m = np.array([float(rng.random() < law["p_m"][(c1v, av, cv)])
                  for c1v, av, cv in zip(c1, a, c0)])
    y = np.array([float(rng.choice(3, p=law["p_y"][(mv, c1v, av, cv)]))
                  for mv, c1v, av, cv in zip(m, c1, a, c0)])
    return Dataset(c0=c0, a=a, c1=c1, m=m, y=y,
                   c0_names=("c0",), c1_names=("c1",))


SATURATED_SPEC = WorkingModelSpec(
    b=formula("1 + c0 + c1 + M + A + c0:c1 + c0:M + c0:A + c1:M + c1:A + M:A"
              " + c0:c1:M + c0:c1:A + c0:M:A + c1:M:A + c0:c1:M:A"),
    b_prime=formula("1 + c0 + c1 + c0:c1"),
    b_pprime=formula("1 + c0"),
    treat_c0=formula("1 + c0"),
    treat_c1_c0=formula("1 + c0 + c1 + c0:c1"),
    treat_m_c1_c0=formula("1 + c0 + c1 + M + c0:c1 + c0:M + c1:M + c0:c1:M"),
)


@pytest.fixture(scope="session")
def discrete_toy():
    """Seeded size-2000 sample from a random fully discrete law; the seed
    was checked to populate all 16 (c0, c1, m, A) cells."""
    rng = np.random.default_rng(424242)
    law = random_discrete_law(rng)
    data = sample_discrete(law, 2000, rng)
    cells = {(c, d, e, f) for c, d, e, f in
             zip(data.c0[:, 0], data.c1[:, 0], data.m, data.a)}
    assert len(cells) == 16, "toy sample must populate every design cell"
    return data


@pytest.fixture(scope="session")
def sim_draw():
    """One synthetic draw at n=5000."""
    return generate(DgpParams(), 5000, seed=90210)


@pytest.fixture(scope="session")
def sim_draw_small():
    return generate(DgpParams(), 1000, seed=3111)
