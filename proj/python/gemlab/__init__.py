"""Python view of the gemlab C++ core."""

import json

from ._gemlab import *  # noqa: F401,F403
from ._gemlab import run_experiment_json, version

__version__ = version()


def run_experiment(config, jobs=1, write_files=False):
    """Run every grid cell of a config (dict or JSON text); returns record dicts."""
    text = config if isinstance(config, str) else json.dumps(config)
    return json.loads(run_experiment_json(text, jobs, write_files))
