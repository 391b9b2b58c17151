"""Compiled vs pure-Python kernel timings; same as ``python3 -m depdistill.kernels.bench``."""
import sys

from depdistill.kernels.bench import main

if __name__ == "__main__":
    main(sys.argv[1:])
