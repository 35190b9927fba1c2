import math

ENDIAN = 'little'
DTYPE_LE32 = '<f4'
LOGGER_NAME = 'epifocus'

PARAM_NAMES = ('rx', 'ry', 'rz', 'tx', 'ty', 'tz')
ROTATION_PARAMS = ('rx', 'ry', 'rz')
IN_PLANE_PARAMS = ('rz', 'tx', 'ty')
OUT_PLANE_PARAMS = ('rx', 'ry', 'tz')
FAMILIES = {
    'in_plane': IN_PLANE_PARAMS,
    'out_plane': OUT_PLANE_PARAMS,
    'mixed': PARAM_NAMES,
}

RAWP_MAGIC = 'RAWP'
RAWV_MAGIC = 'RAWV'
RAWL_MAGIC = 'RAWL'
RPEM_MAGIC = b'RPEM'
RPEM_VERSION = 1
TRAJECTORY_HEADER = '# projmat'

DEGENERATE_WEIGHT = 1e-12
MIN_BASELINE_MM = 1e-6
RIGID_TOLERANCE = 1e-9

MARKER_CUBE_SIDE_MM = 100.0
SIMULATION_NODES = 10
ESTIMATION_NODES = 7
ENTROPY_BINS = 256

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6
SIMPLEX_TRANSLATION_GAIN = 0.5  # mm per pixel of RPE
SIMPLEX_ROTATION_GAIN = 0.5
SIMPLEX_MIN_RPE = 0.1
ENTROPY_DEFAULT_RPE = 2.0

REGRESSOR_INPUT = 64
REGRESSOR_WIDTHS = (8, 16, 32, 64)
MIN_TRAINING_SAMPLES = 50

ECC_PAIR_STRIDE = 4
ECC_SMOOTHING_PX = 1.0
ECC_MAX_SEPARATION = math.pi / 2
ECC_KAPPA_SAMPLES = 64
ECC_THETA_SAMPLES = 180

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3
