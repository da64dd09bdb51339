from typing import Any, Callable, Optional, Sequence

import catalogue
import pydantic

try:
    import importlib.metadata as importlib_metadata
except ImportError:  # pragma: no cover
    import importlib_metadata


class Registry(catalogue.Registry):
    """
    A catalogue registry whose functions validate their arguments with pydantic,
    so that config sections such as `{"@criterion": "val", "split_fraction": 0.2}`
    are checked before anything is built.
    """

    def __init__(self, namespace: Sequence[str], entry_points: bool = False) -> None:
        """
        Parameters
        ----------
        namespace: Sequence[str]
            The namespace of the registry
        entry_points: bool
            Should we use entry points to load the registered functions
        """
        super().__init__(namespace, entry_points=entry_points)

    def register(
        self,
        name: str,
        *,
        func: Optional[catalogue.InFunc] = None,
    ) -> Callable[[catalogue.InFunc], catalogue.InFunc]:
        """
        Register a function under `name`, wrapping it with `pydantic.validate_call`.

        Parameters
        ----------
        name: str
            The name of the function
        func: Optional[catalogue.InFunc]
            The function to register

        Returns
        -------
        Callable[[catalogue.InFunc], catalogue.InFunc]
        """
        registerer = super().register

        def wrap_and_register(fn: catalogue.InFunc) -> catalogue.InFunc:
            validated_fn = pydantic.validate_call(
                fn, config={"arbitrary_types_allowed": True}
            )
            registerer(name)(validated_fn)
            return validated_fn

        if func is not None:
            return wrap_and_register(func)
        return wrap_and_register

    def get_entry_points(self):
        entrypoints = importlib_metadata.entry_points()
        if hasattr(entrypoints, "select"):
            return entrypoints.select(group=self.entry_point_namespace)
        return entrypoints.get(self.entry_point_namespace, [])  # pragma: no cover

    def get(self, name: str) -> Any:
        """
        Get the registered function for a given name. Unlike
        `catalogue.Registry.get`, a failed lookup lists the available names.

        Parameters
        ----------
        name: str

        Returns
        -------
        catalogue.InFunc
        """
        path = list(self.namespace) + [name]
        try:
            return catalogue._get(path)
        except catalogue.RegistryError:
            if self.entry_points:
                from_entry_point = self.get_entry_point(name)
                if from_entry_point:
                    return from_entry_point
            raise catalogue.RegistryError(
                f"Can't find '{name}' in registry {' -> '.join(self.namespace)}. "
                f"Available names: {', '.join(self.get_available()) or 'none'}"
            )

    def get_available(self) -> Sequence[str]:
        """Names registered in this namespace, sorted."""
        result = set()
        if self.entry_points:
            result.update(p.name for p in self.get_entry_points())
        for keys in catalogue.REGISTRY.copy().keys():
            if len(keys) == len(self.namespace) + 1 and all(
                self.namespace[i] == keys[i] for i in range(len(self.namespace))
            ):
                result.add(keys[-1])
        return sorted(result)


class registry:
    """
    Registries of the package. Config sections with an `@criterion`,
    `@psi_penalty` or `@experiment` key are resolved through them, and other
    packages can add entries via the `esa_<name>` entry point groups.
    """

    criterion = Registry(("esa", "criterion"), entry_points=True)
    psi_penalty = Registry(("esa", "psi_penalty"), entry_points=True)
    experiment = Registry(("esa", "experiment"), entry_points=True)
