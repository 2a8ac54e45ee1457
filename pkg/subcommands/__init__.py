"""Sub-commands of ded_vpe.py and the exit codes they share."""
import logging
import sys
from typing import IO

from dispatch.model import Instance
from util.parse import \
    ParseError, \
    parse_instance


__log__ = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_LIMIT = 3
EXIT_INPUT = 4


def load_instance(stream: IO[str]) -> Instance:
    """Parse an instance file or exit with EXIT_INPUT."""
    try:
        instance = parse_instance(stream.read())
    except ParseError as error:
        __log__.critical('Cannot read instance %s: %s', stream.name, error)
        sys.exit(EXIT_INPUT)
    __log__.info('Read instance %s with %d units and %d periods',
                 stream.name, instance.n_units, instance.n_periods)
    return instance
