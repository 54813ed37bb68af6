"""Command dispatcher with the exit-code contract, and the Typer app for documentation generation.

Exit codes: 0 on success, 1 when a module raises a :class:`MaskGraphError`
(reported as one ``error: <Name>: <message>`` line on standard error), 2 on a
usage error.
"""

import sys
from collections.abc import Sequence

import click
import typer

from maskgraph import app
from maskgraph.errors import MaskGraphError

__all__ = ["app", "execute", "main"]


def execute(argv: Sequence[str] | None = None) -> int:
    """Run one command line and return its exit code."""
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        result = app(args=args, prog_name="maskgraph", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        typer.echo("Aborted.", err=True)
        return 1
    except MaskGraphError as e:
        typer.echo(f"error: {type(e).__name__}: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(execute())
