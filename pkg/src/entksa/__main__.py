"""Allow ``python -m entksa`` as an alias for the console script."""

from .cli import main

main()
