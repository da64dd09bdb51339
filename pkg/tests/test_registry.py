import catalogue
import pytest
from pydantic import ValidationError

from esa.registry import Registry, registry


class local_registry:
    factory = Registry(("esa_tests", "factory"))


@local_registry.factory.register("scaled")
def scaled(value: float, factor: int = 2):
    return value * factor


def test_register_validates_arguments():
    fn = local_registry.factory.get("scaled")
    assert fn(value="1.5") == 3.0
    with pytest.raises(ValidationError):
        fn(value="x")


def test_register_with_func():
    local_registry.factory.register("negated", func=lambda value: -value)
    assert local_registry.factory.get("negated")(value=3) == -3
    assert {"negated", "scaled"} <= set(local_registry.factory.get_available())


def test_missing_name_lists_the_available_ones():
    with pytest.raises(catalogue.RegistryError) as excinfo:
        local_registry.factory.get("missing")
    assert "Available names:" in str(excinfo.value)
    assert "scaled" in str(excinfo.value)


def test_package_registries():
    assert {"aicc", "pen", "val"} <= set(registry.criterion.get_available())
    assert {"log-square", "zero"} <= set(registry.psi_penalty.get_available())
    assert {"gauss-seq", "gmm", "knn"} <= set(registry.experiment.get_available())
