"""Application entrypoint for the SACCN crowd-counting command line.

Configures basic application logging and hands argv to the CLI routes.

Example
-------
    python main.py synth --n 8 --out data
    python main.py train --data data --out run --steps 200
"""

import logging
import sys

from routes.cli_routes import run

# Basic console logging
logging.basicConfig(
    level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
)
logger = logging.getLogger(__name__)


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
