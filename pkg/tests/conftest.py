import numpy as np
import pytest

from misclass_prev import Cohort, PopulationGroup, SubjectRecord


def fd_gradient(f, theta, step=1e-6):
    """Central finite-difference gradient with relative step sizes."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty(theta.shape[0])
    for j in range(theta.shape[0]):
        h = step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (f(up) - f(dn)) / (2.0 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


def random_logit_data(rng, n, p, beta=None):
    """Design with intercept plus (p-1) standard normal columns, plus outcomes."""
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    if beta is None:
        beta = rng.normal(scale=0.8, size=p)
    eta = X @ beta
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return y, X, np.asarray(beta, dtype=float)


def make_record(outcome=0, age=30.0, sex=1, sti=0, hepb=0, group=PopulationGroup.GENERAL):
    return SubjectRecord(
        observed_outcome=outcome,
        age=age,
        sex=sex,
        other_sti_result=sti,
        hepb_result=hepb,
        population_group=group,
    )


@pytest.fixture
def small_cohort():
    records = (
        make_record(1, 25.0, 1, 0, 0, PopulationGroup.MSM),
        make_record(0, 40.5, 0, 1, 0, PopulationGroup.GENERAL),
        make_record(0, 33.0, 1, 0, 1, PopulationGroup.SEX_WORKER),
        make_record(1, 19.0, 0, 0, 0, PopulationGroup.LGTBI),
        make_record(0, 61.0, 1, 1, 0, PopulationGroup.OTHER),
    )
    return Cohort(records=records, outcome_label="HIV")
