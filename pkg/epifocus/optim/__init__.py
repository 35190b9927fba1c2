from .nelder_mead import NelderMeadResult, nelder_mead
from .objective import Objective, ObjectiveValue, objective
from .compensate import CompensationResult, RunReport, auto_lambda, compensate, compensation_summary, \
    initial_simplex_scale, lambda_from_terms, node_blocks
