import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from epifocus.errors import OptimizerError


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    n_evals: int
    trace: List[float] = field(default_factory=list)


def nelder_mead(f: Callable[[np.ndarray], float], x0: Sequence[float], initial_step: Union[float, Sequence[float]],
                tol: float = 1e-8, max_evals: int = 1000) -> NelderMeadResult:
    """Simplex search (reflection 1, expansion 2, contraction 0.5, shrink 0.5).

    Stops when the objective spread over the simplex drops below ``tol`` or after
    ``max_evals`` evaluations. ``trace`` holds the best value seen after every evaluation.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    steps = np.broadcast_to(np.asarray(initial_step, dtype=np.float64), x0.shape)
    if np.any(steps == 0):
        raise ValueError('initial simplex steps must be nonzero')
    trace: List[float] = []
    best = {'x': x0.copy(), 'f': math.inf}

    def wrapped(x):
        value = float(f(x))
        if math.isnan(value):
            raise OptimizerError(f'objective returned NaN at {x.tolist()}', point=x.copy())
        if value < best['f']:
            best['f'] = value
            best['x'] = x.copy()
        trace.append(best['f'])
        return value

    if not math.isfinite(wrapped(x0)):
        raise OptimizerError(f'objective is not finite at the start point {x0.tolist()}', point=x0)
    simplex = np.vstack([x0, x0 + np.diag(steps)])
    minimize(wrapped, x0, method='Nelder-Mead', options={
        'initial_simplex': simplex,
        'fatol': tol,
        'xatol': np.inf,
        'maxfev': max(max_evals - 1, 1),
        'adaptive': False,
    })
    return NelderMeadResult(best['x'], best['f'], len(trace), trace)
