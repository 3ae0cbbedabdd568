"""Entry point for running dns_antidote as a module."""

from .cli import main

if __name__ == "__main__":
    main()
