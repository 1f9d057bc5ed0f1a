#!/usr/bin/env python
"""CycleSeg's command-line utility for training and evaluation tasks."""
import sys


def main():
    """Run training, evaluation and verification commands."""
    try:
        from cycleseg.cli import cli
    except ImportError as exc:
        raise ImportError(
            "Couldn't import cycleseg. Are you sure its requirements are "
            "installed and the project root is on your PYTHONPATH? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    cli(args=sys.argv[1:], prog_name="manage.py")


if __name__ == '__main__':
    main()
