import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seerisk.domain import EntityPeriodRecord, PanelDataset, default_schema, parse_period
from seerisk.synthgen import CohortSpec, generate_cohort, generate_macro

settings.register_profile("repo", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def full_values(schema=None, **overrides):
    """A value for every feature column: 1.0 / 1 for numerics, the first token otherwise."""
    out = {}
    for c in (schema or default_schema()).feature_columns:
        if c.kind == "categorical":
            out[c.name] = c.categories[0] if c.categories else "x"
        else:
            out[c.name] = 1 if c.kind == "count" else 1.0
    out.update(overrides)
    return out


def record(entity, period, label=2, **values):
    base = full_values(**values)
    return EntityPeriodRecord(entity, parse_period(period), base, label)


def panel(records, schema=None):
    return PanelDataset(schema or default_schema(), list(records))


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def small_cohort():
    spec = CohortSpec(n_entities=120, seed=11)
    return generate_cohort(spec), generate_macro(spec.periods, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
