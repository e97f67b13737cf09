"""Smoke test for the Python bindings.

Build and install first, e.g.
    maturin develop -m crates/py/Cargo.toml --features extension-module
"""
import math

import srcf_score_py as s

m = s.Model.example1(0.1)
n, meas, q, p = m.dims
assert (meas, p) == (1, 1), m.dims
z = m.simulate([5.0], 100, seed=42)
assert len(z) == 100

sq = m.score([4.0], z, method="sqrt")
cv = m.score([4.0], z, method="conventional")
assert not sq.failed and not cv.failed
assert abs(sq.loglik - cv.loglik) <= 1e-9 * abs(cv.loglik)
assert abs(sq.gradient[0] - cv.gradient[0]) <= 1e-8 * abs(cv.gradient[0])
assert sq.loglik == m.loglik([4.0], z)

h = 1e-5 * 4.0
fd = (m.loglik([4.0 + h], z) - m.loglik([4.0 - h], z)) / (2 * h)
assert abs(fd - sq.gradient[0]) <= 1e-5 * abs(sq.gradient[0])

assert m.frozen([4.0]).score([4.0], z).gradient == [0.0]

bad = s.Model.example3(1e-10).score([2.0], [[1.0, 1.0]], method="conventional")
assert bad.failed and bad.failed_step == 1 and math.isnan(bad.loglik)
try:
    s.Model.example3(-1.0)
except ValueError:
    pass
else:
    raise AssertionError("negative delta accepted")

rows = s.table1()
assert [r["delta"] for r in rows] == [1e-2, 1e-4, 1e-6, 1e-8, 1e-9, 1e-10]
assert rows[-1]["conventional_failed"] and not rows[-1]["square_root_failed"]

prof = s.performance_profile(method="sqrt")
assert prof["phi_at_1"] == [1.0]

sweep = s.example1_sweep(tau_grid=[3.0, 6.0], n_steps=20)
assert len(sweep["tau"]) == 2 and len(sweep["loglik"]) == 2

print("python smoke test: ok")
