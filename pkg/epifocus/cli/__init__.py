from .commands import COMMANDS, cmd_all, cmd_compensate, cmd_evaluate, cmd_simulate, cmd_train, derive_seeds, \
    evaluate_experiment, method_setup, open_store, write_images
from .main import build_parser, main
