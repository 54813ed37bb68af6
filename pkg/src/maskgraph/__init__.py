"""Fixed-topology landmark graphs for multi-organ segmentation."""

import os
import sys
from typing import Annotated

import torch
import typer
from dotenv import load_dotenv
from loguru import logger

LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}

app = typer.Typer(help="Landmark graphs from organ masks: data, topology, fitting, training and evaluation.")


def configure_logging(level: str) -> None:
    """Send loguru output to standard error at one of the ``MHG_LOG`` levels."""
    key = level.strip().lower()
    if key not in LOG_LEVELS:
        raise typer.BadParameter(f"MHG_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logger.remove()
    logger.add(sys.stderr, level=LOG_LEVELS[key])


@app.callback()
def main(
    ctx: typer.Context,
    threads: Annotated[
        int,
        typer.Option(min=1, envvar="MHG_THREADS", help="Torch threads and per-sample workers."),
    ] = 1,
):
    """Read .env, configure logging from MHG_LOG and set the thread count."""
    load_dotenv()
    configure_logging(os.getenv("MHG_LOG", "info"))
    torch.set_num_threads(threads)
    ctx.obj = {"threads": threads}
    logger.debug(f"Using {threads} thread(s)")


# Import submodules at the end to register their commands
from maskgraph import (  # noqa: E402
    data,  # noqa: F401
    engine,  # noqa: F401
    evaluation,  # noqa: F401
)
