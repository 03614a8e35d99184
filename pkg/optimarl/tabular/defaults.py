"""
Numeric defaults shared by the tabular library.

Every value can be overridden from the environment (or a ``.env`` file) the
same way the Django settings are read.
"""

from decouple import config

# Dense linear solves are used for visitation/evaluation up to this many states.
DIRECT_SOLVE_MAX_STATES = config('OPTIMARL_DIRECT_SOLVE_MAX_STATES', default=2000, cast=int)

ITERATIVE_SOLVE_TOL = config('OPTIMARL_ITERATIVE_SOLVE_TOL', default=1e-12, cast=float)
ITERATIVE_SOLVE_MAX_ITER = config('OPTIMARL_ITERATIVE_SOLVE_MAX_ITER', default=100_000, cast=int)

VALUE_TOL = config('OPTIMARL_VALUE_TOL', default=1e-10, cast=float)
VALUE_MAX_ITER = config('OPTIMARL_VALUE_MAX_ITER', default=100_000, cast=int)

# Tolerance of the fixed-point solves behind finite differences.
FINITE_DIFFERENCE_TOL = 1e-12

DISTRIBUTION_ATOL = 1e-10
NASH_TOL = config('OPTIMARL_NASH_TOL', default=1e-8, cast=float)
DUALITY_TOL = 1e-9

# beta * Q above this overflows the unshifted exp in the averaged optimistic Q-table.
SAFE_EXPONENT = 700.0

GRAD_CHECK_THRESHOLD = config('OPTIMARL_GRAD_CHECK_THRESHOLD', default=1e-4, cast=float)
# Relative directional errors are measured against
# max(|exact|, RELATIVE_ERROR_FLOOR * ||tangent gradient||).
RELATIVE_ERROR_FLOOR = 1e-2
