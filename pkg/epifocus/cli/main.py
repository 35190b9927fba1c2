import argparse
import sys
from pathlib import Path
from typing import List

from pydantic import ValidationError

from epifocus.config import format_validation_error, load_config, load_runtime_settings
from epifocus.constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR
from epifocus.errors import ConfigError
from epifocus.iqm import configure_determinism
from epifocus.cli.commands import COMMANDS, derive_seeds, open_store
from epifocus.utils.general import get_logger, set_worker_threads, setup_logging

logger = get_logger('cli')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='epifocus',
                                     description='Rigid motion simulation and compensation for circular CBCT')
    parser.add_argument('command', choices=sorted(COMMANDS), help='pipeline stage to run')
    parser.add_argument('--config', type=Path, required=True, help='experiment JSON file')
    parser.add_argument('--out', type=Path, default=None, help='output directory (default: data/<config name>)')
    return parser


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_runtime_settings()
        setup_logging(settings.log_level)
        config = load_config(args.config)
    except ConfigError as e:
        setup_logging('INFO')
        logger.error(f'invalid configuration: {e}')
        return EXIT_CONFIG_ERROR

    set_worker_threads(settings.workers)
    deterministic = config.deterministic if settings.deterministic is None else settings.deterministic
    configure_determinism(deterministic, derive_seeds(config.seed)['torch'])
    out_dir = args.out or Path('data') / config.name
    try:
        store = open_store(config, out_dir)
        COMMANDS[args.command](config, store, settings)
    except ConfigError as e:
        logger.error(f'invalid configuration: {e}')
        return EXIT_CONFIG_ERROR
    except ValidationError as e:
        logger.error(f'invalid configuration: {format_validation_error(e)}')
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.error(f'{args.command} failed: {e}')
        logger.debug('traceback', exc_info=True)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
