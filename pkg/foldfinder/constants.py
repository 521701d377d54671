from pathlib import Path

ROOT_DIR = Path(__file__).parent.parent
PROBLEMS_DIR = ROOT_DIR / "problems"

VERSION = "0.1.0"
SCHEMA_VERSION = 1
THREADS_ENV = "FOLDFINDER_THREADS"

# |h_i(x)| <= EPS_WEIGHT means h_i(x) = 0: the ratio is undefined.
EPS_WEIGHT = 1e-12
# i is active when r_i(x) - lambda(x) <= EPS_ACTIVE * (1 + |lambda(x)|)
EPS_ACTIVE = 1e-8
ZERO_TOL = 1e-10
FD_STEP = 1e-6
RANK_TOL = 1e-10  # multiplied by n
MEMBERSHIP_MARGIN = 1e-8

# maxmin solver
TOL_STEP = 1e-10
TOL_STATIONARITY = 1e-7
MAX_ITERS = 500
TRUST_RADIUS = 0.25
SMOOTHING_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
BOUNDARY_FRACTION = 0.9
GRID_MAX_DIM = 3

# certificate
HULL_TOL = 1e-10
HULL_MAX_ITERS = 10_000
POSITIVITY_TOL = 1e-6
PROBE_TOL = 1e-10
PROBE_MAX_STEPS = 200

# continuation
CONTINUATION_STEP = 0.05
CORRECTOR_TOL = 1e-9
CORRECTOR_MAX_ITERS = 12
MAX_HALVINGS = 8
MAX_POINTS = 400
FOLD_TOL = 1e-8
