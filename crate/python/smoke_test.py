"""Smoke test for the mortcast Python extension.

Build and install first:

    pip install maturin
    maturin develop -m crates/python/Cargo.toml
"""

import math
import random

import mortcast


def synthetic(sex, shift, seed):
    rng = random.Random(seed)
    ages = list(range(60, 81))
    years = list(range(1980, 2011))
    exposures = [[50_000.0 * math.exp(-0.04 * i)] * len(years) for i in range(len(ages))]
    deaths = []
    for i, age in enumerate(ages):
        row = []
        for j in range(len(years)):
            rate = math.exp(-10.0 + shift + 0.1 * age - 0.015 * j + rng.gauss(0.0, 0.02))
            row.append(float(round(exposures[i][j] * rate)))
        deaths.append(row)
    return mortcast.Dataset("synthetic", sex, ages, years, deaths, exposures)


def main():
    female = synthetic("female", 0.0, 1)
    male = synthetic("male", 0.4, 2)
    print(female)

    lc = mortcast.fit_lc(female)
    assert abs(sum(lc.beta) - 1.0) < 1e-8
    assert abs(sum(lc.kappa)) < 1e-6
    f_lc = lc.forecast(1, alpha=0.2)

    cbd = mortcast.fit_gapc(female, "CBD")
    assert cbd.converged
    assert cbd.max_constraint_residual() < 1e-8
    f_cbd = cbd.forecast(1, alpha=0.2, n_sim=500, seed=3)
    again = cbd.forecast(1, alpha=0.2, n_sim=500, seed=3)
    assert f_cbd.lower == again.lower and f_cbd.upper == again.upper

    surf_f = female.smooth()
    surf_m = male.smooth()
    fit = mortcast.fpca(surf_f, 3)
    f_fts = fit.forecast(1)
    robust = mortcast.fpca(surf_f, 3, robust=True)
    assert len(robust.obs_weights) == len(surf_f.years)

    pf, pm = mortcast.forecast_product_ratio(surf_f, surf_m, 3, 2)
    for a, b in zip(pf.point, pm.point):
        assert all(x < y for x, y in zip(a, b))

    for fc in (f_lc, f_cbd, f_fts):
        for lo, pt, hi in zip(fc.lower, fc.point, fc.upper):
            assert lo[0] <= pt[0] <= hi[0]

    assert mortcast.interval_score(0.0, 1.0, 1.5, 0.2) == 1.0 + 10.0 * 0.5
    assert mortcast.rmsfe([1.0, 2.0], [1.0, 2.0]) == 0.0

    rng = random.Random(7)
    periods = list(range(2000, 2060))
    losses = [[1.0 + 0.5 * m + rng.gauss(0.0, 0.1) for _ in periods] for m in range(3)]
    panel = mortcast.LossPanel([1, 2, 3], periods, losses)
    res = mortcast.run_mcs(panel, "T_MAX", n_bootstrap=500, seed=11)
    assert res.superior_set == [1], res.superior_set
    assert dict(res.p_values)[1] == 1.0

    w = mortcast.inverse_error_weights([1, 2], [1.0, 3.0])
    assert w == [(1, 0.75), (2, 0.25)]
    assert mortcast.equal_weights([4, 5]) == [(4, 0.5), (5, 0.5)]
    print("smoke test passed")


if __name__ == "__main__":
    main()
