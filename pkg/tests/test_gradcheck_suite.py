import pytest

from backend.errors import GradCheckError
from backend.models.gradcheck_suite import (
    CHECKS,
    GRADCHECK_TOLERANCE,
    CheckResult,
    run_suite,
    worst_result,
)
from backend.models.tensor import get_precision

NETWORK_CHECKS = [name for name in CHECKS if name.startswith("network.")]
UNIT_CHECKS = [name for name in CHECKS if name not in NETWORK_CHECKS]


@pytest.mark.parametrize("name", UNIT_CHECKS)
def test_unit_check_passes(name):
    (result,) = run_suite(seed=0, names=[name])
    assert result.passed, f"{name}: {result.error:.3e}"


@pytest.mark.slow
@pytest.mark.parametrize("name", NETWORK_CHECKS)
def test_network_check_passes(name):
    (result,) = run_suite(seed=0, names=[name])
    assert result.passed, f"{name}: {result.error:.3e}"


def test_suite_restores_precision():
    run_suite(names=["add"])
    assert get_precision() == "f32"


def test_unknown_check():
    with pytest.raises(KeyError, match="nonsense"):
        run_suite(names=["nonsense"])


def test_worst_result_prefers_non_finite():
    results = [CheckResult("a", 1e-9, 0.0), CheckResult("b", float("nan"), 0.0), CheckResult("c", 1e-5, 0.0)]
    worst = worst_result(results)
    assert worst.name == "b"
    assert not worst.passed


def test_worst_result_of_nothing():
    with pytest.raises(GradCheckError):
        worst_result([])


def test_default_tolerance():
    assert CheckResult("x", GRADCHECK_TOLERANCE / 2, 0.0).passed
    assert not CheckResult("x", GRADCHECK_TOLERANCE, 0.0).passed
