import numpy as np

from conftest import circle
from vesiflow.config import parse_config
from vesiflow.derivcheck import SmoothField, bending_crosscheck, run_derivcheck


def test_smooth_field_jacobian():
    f = SmoothField.random(np.random.default_rng(2))
    p = np.array([[0.3, -0.7], [1.1, 0.4]])
    jac = f.jacobian(p)
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1e-6
        fd = (f(p + e) - f(p - e)) / 2e-6
        assert np.allclose(jac[:, :, k], fd, atol=1e-8)


def test_derivcheck_preset_passes_with_refinement():
    result = run_derivcheck(parse_config("derivcheck"))
    assert result.passed, result.table()
    for name, coarse, fine, ratio, discrete, ok in result.summary():
        assert fine <= 1e-3 and ratio <= 0.5 and discrete <= 1e-6


def test_bending_forms_agree_on_circle():
    rng = np.random.default_rng(5)
    fields = [SmoothField.random(rng) for _ in range(5)]
    for n, tol in ((64, 0.05), (128, 0.02)):
        for a, b, rel, fd in bending_crosscheck(circle(n), fields):
            assert rel <= tol
            assert abs(a - fd) <= 1e-2 * max(abs(fd), 1e-3)
