from configparser import ConfigParser
from io import StringIO
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import pydantic
import yaml

from esa.errors import ConfigError
from esa.utils.literals import MalformedValueError, dumps, loads

Loc = Tuple[Union[int, str], ...]


def split_path(path: str) -> Loc:
    """
    Split a dotted path (`experiment.q_ladder`) into its parts,
    digits become list indices.
    """
    parts = str(path).split(".")
    if any(p == "" for p in parts):
        raise ValueError(f"Malformed path: {path!r}")
    return tuple(int(p) if p.isdigit() else p for p in parts)


def join_path(path: Loc) -> str:
    return ".".join(str(p) for p in path)


class Config(dict):
    """
    A nested dict of experiment settings, read from and written to `.cfg` or
    YAML files, and merged with command line overrides. Subsections carrying an
    `@<registry>` key are built through the registry by `resolve`.
    """

    def __init__(self, *args: Any, **kwargs: Any):
        if len(args) == 1 and isinstance(args[0], dict):
            assert len(kwargs) == 0
            kwargs = args[0]
        super().__init__(**kwargs)

    @classmethod
    def from_cfg_str(cls, s: str) -> "Config":
        """
        Load a config from a cfg string. Section names are dotted paths and
        values are literals (`0.5`, `[1, 2]`, `"esa"`, `true`).

        Parameters
        ----------
        s: str

        Returns
        -------
        Config
        """
        parser = ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(s)

        config = Config()
        errors = []
        for section in parser.sections():
            current = config
            for part in split_path(section):
                current = current.setdefault(part, Config())
            for key, value in parser.items(section):
                path = split_path(key)
                target = current
                for part in path[:-1]:
                    target = target.setdefault(part, Config())
                try:
                    target[path[-1]] = loads(value)
                except MalformedValueError as e:
                    errors.append(((*split_path(section), *path), str(e)))
        if errors:
            raise ConfigError(errors)
        return config

    @classmethod
    def from_yaml_str(cls, s: str) -> "Config":
        def to_config(obj):
            if isinstance(obj, dict):
                return Config({str(k): to_config(v) for k, v in obj.items()})
            if isinstance(obj, list):
                return [to_config(v) for v in obj]
            return obj

        return to_config(yaml.safe_load(StringIO(s)) or {})

    @classmethod
    def from_disk(cls, path: Union[str, Path]) -> "Config":
        """
        Load a config from a `.cfg`, `.yaml` or `.yml` file.

        Parameters
        ----------
        path: Union[str, Path]

        Returns
        -------
        Config
        """
        s = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yaml", ".yml")):
            return cls.from_yaml_str(s)
        return cls.from_cfg_str(s)

    def to_str(self) -> str:
        """
        Export the config in the cfg format. Nested dicts become dotted
        sections, top-level scalars are not written.

        Returns
        -------
        str
        """
        parser = ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, values in _flatten_sections(self).items():
            parser.add_section(section)
            parser[section].update({k: dumps(v) for k, v in values.items()})
        s = StringIO()
        parser.write(s)
        return s.getvalue()

    def to_disk(self, path: Union[str, Path]):
        path_str = str(path)
        if path_str.endswith((".yaml", ".yml")):
            s = yaml.safe_dump(_to_builtin(self), sort_keys=False, indent=4)
        else:
            s = self.to_str()
        Path(path).write_text(s, encoding="utf-8")

    def merge(self, *updates: Mapping[str, Any]) -> "Config":
        """
        Deep merge configs into a copy of this one. Keys holding dotted paths
        (as produced by command line overrides) are set at that path.

        Parameters
        ----------
        updates: Mapping[str, Any]

        Returns
        -------
        Config
        """

        def rec(old, new):
            for key, new_val in new.items():
                if isinstance(key, str) and "." in key:
                    *head, last = split_path(key)
                    target = old
                    for part in head:
                        if not isinstance(target.get(part), dict):
                            target[part] = Config()
                        target = target[part]
                    rec(target, {last: new_val})
                    continue
                old_val = old.get(key)
                if isinstance(old_val, dict) and isinstance(new_val, dict):
                    old_tag = next((k for k in old_val if str(k).startswith("@")), None)
                    new_tag = next((k for k in new_val if str(k).startswith("@")), None)
                    if new_tag is not None and (
                        old_tag != new_tag or old_val[old_tag] != new_val[new_tag]
                    ):
                        old[key] = _copy(new_val)
                    else:
                        rec(old_val, new_val)
                else:
                    old[key] = _copy(new_val)
            return old

        config = _copy(self)
        for update in updates:
            rec(config, update)
        return config

    def resolve(self, registry: Any = None) -> Any:
        """
        Build every subsection with an `@<name>` key by calling the function
        registered under its value in `registry.<name>`, passing the other keys
        as arguments. Subsections are built before their parents.

        Parameters
        ----------
        registry: Any
            Registry collection, defaults to `esa.registry.registry`

        Returns
        -------
        Any
        """
        if registry is None:
            from esa.registry import registry

        def rec(obj, loc: Loc):
            if isinstance(obj, Mapping):
                resolved = {k: rec(v, (*loc, k)) for k, v in obj.items()}
                tags = [k for k in resolved if str(k).startswith("@")]
                if len(tags) > 1:
                    raise ConfigError(
                        [(loc, f"cannot resolve using multiple registries {tags}")]
                    )
                if not tags:
                    return Config(resolved)
                tag = tags[0]
                fn = getattr(registry, tag[1:]).get(resolved.pop(tag))
                try:
                    return fn(**resolved)
                except pydantic.ValidationError as e:
                    raise ConfigError.from_pydantic(e, path=loc) from None
            if isinstance(obj, list):
                return [rec(v, (*loc, i)) for i, v in enumerate(obj)]
            if isinstance(obj, tuple):
                return tuple(rec(v, (*loc, i)) for i, v in enumerate(obj))
            return obj

        return rec(self, ())


def _copy(obj):
    if isinstance(obj, dict):
        return Config({k: _copy(v) for k, v in obj.items()})
    if isinstance(obj, list):
        return [_copy(v) for v in obj]
    return obj


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {k: _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    return obj


def _flatten_sections(root: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    sections: Dict[str, Dict[str, Any]] = {}

    def rec(d, path):
        section = {}
        for k, v in d.items():
            if isinstance(v, dict) and not any(str(x).startswith("@") for x in v):
                rec(v, (*path, k))
            else:
                section[str(k)] = v
        if path and (section or not d):
            sections[join_path(path)] = section

    rec(root, ())
    return sections


def parse_overrides(args: List[str]) -> Dict[str, Any]:
    """
    Parse extra command line arguments of the form `--key value`, `--key=value`
    or `--flag` into a dict. Dashes in keys become underscores.

    Parameters
    ----------
    args: List[str]

    Returns
    -------
    Dict[str, Any]
    """
    result = {}
    current = None
    for arg in args:
        if arg.startswith("--"):
            if current is not None:
                result[current] = True
            key = arg[2:]
            if "=" in key:
                key, value = key.split("=", 1)
                result[_normalize_key(key)] = loads(value)
                current = None
            else:
                current = _normalize_key(key)
        elif current is not None:
            result[current] = loads(arg)
            current = None
        else:
            raise ConfigError([((), f"unexpected argument {arg!r}")])
    if current is not None:
        result[current] = True
    return result


def _normalize_key(key: str) -> str:
    return key.replace("-", "_")
