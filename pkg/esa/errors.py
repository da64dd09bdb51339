from textwrap import indent
from typing import Optional, Sequence, Tuple, Union

import pydantic

Loc = Tuple[Union[int, str], ...]


class EsaError(Exception):
    """
    Base class of the errors raised while walking a model ladder.
    """


class EvaluatorError(EsaError):
    """
    Raised when the criterion evaluator fails on a ladder index.
    The original exception is chained as the cause.
    """

    def __init__(self, index: int):
        """
        Parameters
        ----------
        index: int
            The (1-based) ladder index whose evaluation failed
        """
        self.index = index
        super().__init__()

    def __str__(self):
        cause = self.__cause__
        detail = f": {type(cause).__name__}: {cause}" if cause is not None else ""
        return f"Evaluation of model {self.index} failed{detail}"


class NonFiniteCriterionError(EsaError):
    """
    Raised when an evaluator returns a NaN or infinite criterion value.
    """

    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__()

    def __str__(self):
        return (
            f"Model {self.index} returned a non-finite criterion value {self.value!r}"
        )


class LadderIndexError(EsaError, IndexError):
    def __init__(self, index: int, model_count: int):
        self.index = index
        self.model_count = model_count
        super().__init__()

    def __str__(self):
        return (
            f"Model index {self.index} is outside of the ladder "
            f"[1, {self.model_count}]"
        )


class DegenerateCovarianceError(EsaError):
    """
    Raised when a Wishart scale matrix of a mixture component
    is not positive definite.
    """

    def __init__(self, component: int):
        self.component = component
        super().__init__()

    def __str__(self):
        return (
            f"Wishart scale matrix of component {self.component} is not positive "
            f"definite, consider increasing `cov_floor`"
        )


class InterpolationError(EsaError, ValueError):
    """
    Raised when a model interpolates its training responses and an information
    criterion depending on log(SSE) is undefined.
    """

    def __init__(self, message: str = "SSE is zero"):
        super().__init__(
            f"{message}: the model interpolates the training data, "
            f"drop the smallest neighbor counts (e.g. k_nbr = 1) from the ladder"
        )


class SplitError(EsaError, ValueError):
    pass


class ConfigError(EsaError):
    """
    Validation errors of an experiment configuration, displayed
    as a list of locations and messages.
    """

    def __init__(self, errors: Sequence[Tuple[Loc, str]], name: Optional[str] = None):
        """
        Parameters
        ----------
        errors: Sequence[Tuple[Loc, str]]
            Pairs of (location in the config, message)
        name: Optional[str]
            Name of the validated section
        """
        self.raw_errors = list(errors)
        self.name = name
        super().__init__()

    @classmethod
    def from_pydantic(
        cls,
        error: pydantic.ValidationError,
        path: Loc = (),
        name: Optional[str] = None,
    ) -> "ConfigError":
        """
        Convert a pydantic ValidationError, prefixing every location
        with `path`.

        Parameters
        ----------
        error: pydantic.ValidationError
        path: Loc
            The section of the config the model was validated from
        name: Optional[str]

        Returns
        -------
        ConfigError
        """
        errors = []
        for err in error.errors(include_url=False):
            msg = err.get("msg", "")
            msg = (msg[0].lower() + msg[1:]) if msg else msg
            if "input" in err and err["type"] != "missing":
                value = repr(err["input"])
                value = value[:50] + "..." if len(value) > 50 else value
                msg = f"{msg}, got {value} ({type(err['input']).__name__})"
            # discriminated unions add the tag as an extra location part
            loc = tuple(part for part in err["loc"] if part not in _UNION_TAGS)
            errors.append(((*path, *loc), msg))
        return cls(errors, name=name)

    def errors(self):
        return [
            {"loc": loc, "msg": indent(msg, "   ")} for loc, msg in self.raw_errors
        ]

    def __str__(self):
        errors = self.errors()
        count = len(errors)
        name_str = f" for {self.name}" if self.name is not None else ""
        lines = "\n".join(
            "-> {}\n{}".format(".".join(str(p) for p in e["loc"]), e["msg"])
            for e in errors
        )
        plural = "" if count == 1 else "s"
        return f"{count} validation error{plural}{name_str}\n{lines}"


_UNION_TAGS = frozenset({"gauss-seq", "gmm", "knn", "aicc", "val", "pen"})
