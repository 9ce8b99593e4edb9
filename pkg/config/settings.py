"""
Configuraciones generales del laboratorio de compresión de CSI dual-polarizada
"""

# Geometría del canal: 32 subbandas, 32 antenas duales
DEFAULT_NS = 32
DEFAULT_NT = 32
DEFAULT_SIGMA = 8.0

# Generador geométrico
GENERATOR_VERSION = 'geom-1'
CALIBRATION_SAMPLES = 2000
CALIBRATION_TOLERANCE = 0.005
CALIBRATION_MAX_ITER = 20

# Arquitectura DiReNet
CONV_CHANNELS = 16        # ancho interno C (no publicado)
IR_DEPTH = 3              # bloques IR en serie
IR_WIDTH = 5              # caminos IR en paralelo
BRANCH_KERNELS = (3, 5, 7)
LIFT_KERNEL = 3
LEAKY_SLOPE = 0.3
BN_MOMENTUM = 0.1         # convención torch: running = 0.9*running + 0.1*batch
BN_EPS = 1e-5

# Estimadores CLUB
MI_HIDDEN = 128
MI_LOGVAR_CLAMP = 10.0
MI_PREFIX = 'mi.'

# Entrenamiento (Algoritmo de dos pasos)
LEARNING_RATE = 1e-3
LAMBDA_MI = 1e-5
MI_TARGET_NATS = 0.0
EPOCHS = 100
BATCH_SIZE = 200
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 5.0
CHECKPOINT_EVERY = 10

# Cuantización
QUANT_MIN_BITS = 1
QUANT_MAX_BITS = 16
QUANT_RANGE_MARGIN = 0.01
DEFAULT_Q_SA = 3
DEFAULT_Q_SP = 3

# Evaluación
NMSE_FLOOR_DB = -120.0
ZF_RIDGE = 1e-9
RATE_USERS = 4
RATE_TRIALS = 500
SNR_GRID_DB = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)

# Verificación de gradientes
GRADCHECK_STEP = 1e-4
GRADCHECK_TOLERANCE = 1e-3
GRADCHECK_ATOL = 1e-8
GRADCHECK_STEP_RETRIES = 3        # pasos h, h/10, h/100, h/1000 ante un quiebre
GRADCHECK_MAX_DRAWS = 8           # entradas muestreadas por entrada pedida, como máximo

# Configuraciones de logging
LOG_LEVEL = 'INFO'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
