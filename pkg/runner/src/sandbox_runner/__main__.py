import sys

from sandbox_runner.runner import main

if __name__ == "__main__":
    sys.exit(main())
