import ast
import json
import math
from typing import Any

from lark import Lark, Transformer

# JSON-like literals with Python-style tuples and comments,
# used for config file values and command line overrides
literal_grammar = r"""
    ?value: dict
          | list
          | tuple
          | string
          | SIGNED_FLOAT       -> float
          | SIGNED_INT         -> int
          | "Infinity"         -> plus_inf
          | "-Infinity"        -> minus_inf
          | "NaN"              -> nan
          | "true"             -> true
          | "True"             -> true
          | "false"            -> false
          | "False"            -> false
          | "null"             -> null
          | "None"             -> null

    list : "[" (value ("," value) * ","?)? "]"
    tuple : "(" (value ("," value) * ","?)? ")"

    dict : "{" (pair ("," pair)*) ? "}"
    pair : string ":" value

    string : STRING

    STRING : /([ubf]?r?|r[ubf])("(?!"").*?(?<!\\)(\\\\)*?"|'(?!'').*?(?<!\\)(\\\\)*?')/i
    COMMENT: /#[^\n]*/

    SIGNED_FLOAT: ["+"|"-"] FLOAT
    SIGNED_INT: ["+"|"-"] INT

    %import common.FLOAT
    %import common.INT
    %import common.WS
    %ignore WS
    %ignore COMMENT
    """


class LiteralTransformer(Transformer):
    def string(self, s):
        (s,) = s
        return ast.literal_eval(s)

    def float(self, n):
        (n,) = n
        return float(n)

    def int(self, n):
        (n,) = n
        return int(n)

    list = list
    tuple = tuple
    pair = tuple
    dict = dict

    def null(self, _):
        return None

    def true(self, _):
        return True

    def false(self, _):
        return False

    def plus_inf(self, _):
        return math.inf

    def minus_inf(self, _):
        return -math.inf

    def nan(self, _):
        return math.nan


_parser = Lark(literal_grammar, start="value", parser="lalr")


class MalformedValueError(ValueError):
    def __init__(self, value: str):
        self.value = value
        super().__init__(f"Malformed value: {value!r}")


def loads(s: str) -> Any:
    """
    Parse a literal. Strings that are not literals are returned as is, and
    bare comma-separated sequences (`esa,fa,ms` or `0.1,0.2`) become lists.

    Parameters
    ----------
    s: str

    Returns
    -------
    Any
    """
    try:
        return LiteralTransformer().transform(_parser.parse(s))
    except Exception:
        if set(s) & set("'\"{}[]()"):
            raise MalformedValueError(s)
        if "," in s:
            return [loads(part.strip()) for part in s.split(",") if part.strip()]
        return s


def _floatstr(o: float) -> str:
    if math.isnan(o):
        return "NaN"
    if math.isinf(o):
        return "Infinity" if o > 0 else "-Infinity"
    return repr(o)


def dumps(o: Any) -> str:
    """
    Serialize a python object as a literal that `loads` parses back.

    Parameters
    ----------
    o: Any

    Returns
    -------
    str
    """
    if isinstance(o, str):
        return json.dumps(o, ensure_ascii=False)
    if o is None:
        return "null"
    if o is True:
        return "true"
    if o is False:
        return "false"
    if isinstance(o, int):
        return repr(o)
    if isinstance(o, float):
        return _floatstr(o)
    if isinstance(o, list):
        return "[" + ", ".join(dumps(v) for v in o) + "]"
    if isinstance(o, tuple):
        trailing = "," if len(o) == 1 else ""
        return "(" + ", ".join(dumps(v) for v in o) + trailing + ")"
    if isinstance(o, dict):
        items = (f"{dumps(k)}: {dumps(v)}" for k, v in o.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"Cannot serialize {o!r}")
