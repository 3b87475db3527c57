import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.environ.get("SKYJAM_LOG_LEVEL", "INFO")

SOLVER_TOL = float(os.environ.get("SKYJAM_SOLVER_TOL", "1e-6"))
SOLVER_MAX_ITER = int(os.environ.get("SKYJAM_SOLVER_MAX_ITER", "5000"))
CONIC_SOLVER = os.environ.get("SKYJAM_CONIC_SOLVER", "CLARABEL")

MAX_OUTER = int(os.environ.get("SKYJAM_MAX_OUTER", "50"))
SWEEP_WORKERS = int(os.environ.get("SKYJAM_SWEEP_WORKERS", "1"))

FEASIBILITY_TOL = float(os.environ.get("SKYJAM_FEASIBILITY_TOL", "1e-6"))  # native unit of each constraint family
ENDPOINT_TOL = 1e-9  # meters
