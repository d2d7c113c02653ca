"""``python -m cinembed`` runs the same app as the ``cinembed`` console script."""
import sys

from cinembed.cli import main

if __name__ == "__main__":
    sys.exit(main())
