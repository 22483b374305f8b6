"""`python -m prevalent_cif ...` runs the same CLI as the `prevalent-cif` script."""
import sys

from .main import main

if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
