import logging
from pathlib import Path
from typing import List, Optional, Sequence

import pydantic
from rich.console import Console
from rich.logging import RichHandler
from typer import Context, Exit, Option, Typer, colors, secho

from esa.config import Config, parse_overrides
from esa.errors import ConfigError, EsaError
from esa.harness import (
    EXPERIMENTS,
    ExperimentBase,
    experiment_adapter,
    run_experiment,
    write_csv,
)
from esa.utils.literals import MalformedValueError

logger = logging.getLogger(__name__)

app = Typer(
    pretty_exceptions_show_locals=False,
    help="Early-stopped aggregation experiments.",
)

OVERRIDES_HELP = """
Any field of the experiment can be set with `--<field> <value>` (dashes and
underscores are interchangeable), e.g. `--method esa,fa --n 1024 --seed 3
--delta 0.01 --margin mult --out results.csv --no-timing`.
"""


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@app.callback()
def main(
    verbose: bool = Option(False, "--verbose", "-v", help="Log every evaluation"),
):
    setup_logging(verbose)


def load_experiment(
    name: str,
    config_paths: Optional[Sequence[Path]],
    args: List[str],
) -> ExperimentBase:
    """
    Merge the `[<name>]` sections of the config files, in order, with the
    command line overrides, and validate the result.

    Parameters
    ----------
    name: str
        Experiment name, also the config section
    config_paths: Optional[Sequence[Path]]
    args: List[str]
        Extra command line arguments

    Returns
    -------
    ExperimentBase
    """
    config = Config()
    for path in config_paths or ():
        config = config.merge(Config.from_disk(path))
    section = Config(config.get(name, {})).merge(parse_overrides(list(args)))
    section["experiment"] = name
    try:
        return experiment_adapter.validate_python(dict(section))
    except pydantic.ValidationError as e:
        raise ConfigError.from_pydantic(e, path=(name,), name=name) from None


def save_experiment(experiment: ExperimentBase, path: Path):
    """Write the validated experiment as a cfg file that replays it."""
    values = experiment.model_dump(mode="json", exclude={"experiment"})
    Config({experiment.experiment: values}).to_disk(path)


def run_command(name: str, config_paths: Optional[Sequence[Path]], args: List[str]):
    console = Console(stderr=True)
    try:
        experiment = load_experiment(name, config_paths, args)
    except (ConfigError, MalformedValueError) as e:
        console.print("Validation error:", style="red", end=" ")
        console.print(str(e), markup=False, soft_wrap=True)
        raise Exit(1)
    except OSError as e:
        console.print("Error:", style="red", end=" ")
        console.print(str(e), markup=False, soft_wrap=True)
        raise Exit(2)

    try:
        records = run_experiment(experiment)
        out = experiment.out
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(records, out)
        save_experiment(experiment, out.with_suffix(".cfg"))
    except (EsaError, OSError, ValueError) as e:
        console.print("Error:", style="red", end=" ")
        console.print(str(e), markup=False, soft_wrap=True)
        raise Exit(2)

    secho(f"Wrote {len(records)} records to {out}", fg=colors.GREEN)


def _register(name: str, model: type):
    @app.command(
        name=name,
        help=f"{(model.__doc__ or '').strip()}\n\n{OVERRIDES_HELP}",
        context_settings={"ignore_unknown_options": True, "allow_extra_args": True},
    )
    def command(
        ctx: Context,
        config: Optional[List[Path]] = Option(
            None, "--config", "-c", help="Config files, merged in order"
        ),
    ):
        run_command(name, config, ctx.args)

    return command


for _name, _model in EXPERIMENTS.items():
    _register(_name, _model)
