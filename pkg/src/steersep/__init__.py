from .cli import cli


def main() -> None:
    """Entry point for the steersep CLI."""
    cli()
