"""Defaults for sampling, embedding, attacks, decoder training and reporting."""

# Points per sampled cloud
N_POINTS = 1024

# Watermark payload length (eight patterns at n=3)
N_BITS = 3

# Embedding strength: shift applied to the leading singular value
ALPHA = 2.0

# Fixed-point embedding loop cap
MAX_EMBED_ITERATIONS = 20

# Input must be normalized within this tolerance before embedding
NORMALIZATION_TOLERANCE = 1e-6

# Decision thresholds (fractions of alpha)
REFERENCE_THRESHOLD = 0.5
QIM_LOW_OFFSET = 0.25
QIM_BIT_OFFSET = 0.5

# Fidelity metrics
PSNR_PEAK = 2.0          # diameter bound of a unit-max-norm cloud
PSNR_CAP_DB = 99.0

# Attack parameters, keyed by attack kind
ATTACK_DEFAULTS = {
    'clean': {},
    'gaussian_noise': {'sigma': 0.01},
    'gaussian_smoothing': {'k': 16, 'sigma': 0.05},
    'isotropic_scale': {'low': 0.8, 'high': 1.2},
    'rotation_fixed_axis': {},
    'rotation_arbitrary_axis': {},
    'translation': {'max_shift': 0.05},
    'dropout': {'fraction': 0.10, 'uniform': 0},
    'shuffle': {},
    'crop': {'retain': 0.70},
    'affine': {'low': 0.9, 'high': 1.1},
    'quantization': {'step': 0.01},
    'jitter': {'sigma': 0.005},
    'chunk_removal': {'fraction': 0.20},
    'combined': {'sigma': 0.02, 'fraction': 0.15},
    'chunk_smoothing': {'fraction': 0.20, 'k': 16, 'sigma': 0.05},
}

# Catalogue order and parameter overrides (noise appears twice)
CATALOGUE = [
    ('gaussian_noise', {'sigma': 0.01}),
    ('gaussian_noise', {'sigma': 0.03}),
    ('gaussian_smoothing', {}),
    ('isotropic_scale', {}),
    ('rotation_fixed_axis', {}),
    ('rotation_arbitrary_axis', {}),
    ('translation', {}),
    ('dropout', {}),
    ('shuffle', {}),
    ('crop', {}),
    ('affine', {}),
    ('quantization', {}),
    ('jitter', {}),
    ('chunk_removal', {}),
    ('combined', {}),
]

# Training-time augmentation
AUGMENT_PROBABILITY = 0.5
AUGMENT_NOISE_SIGMA = 0.01
AUGMENT_SCALE_RANGE = (0.95, 1.05)
AUGMENT_DROPOUT_FRACTION = 0.10

# Decoder architecture (desk scale)
SA1_CENTROIDS = 256
SA1_K = 16
SA1_WIDTHS = (3, 32, 64)
SA2_CENTROIDS = 64
SA2_K = 16
SA2_WIDTHS = (67, 128)
HEAD_HIDDEN = 64

# Optimizer and schedule
EPOCHS = 150
BATCH_SIZE = 32
LEARNING_RATE = 2e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PLATEAU_FACTOR = 0.5
PLATEAU_PATIENCE = 5
MIN_LEARNING_RATE = 1e-5

# Evaluation
ABORT_FAILURE_FRACTION = 0.10
NEGATIVES_PER_CLOUD = 1
BENIGN_ACCURACY_GATE = 0.9
GAP_SIGN_MIN_MATCHES = 3

# Report labels of attacks whose accuracy gap should favour the learned decoder / the SVD decoder
DL_FAVOURED_ATTACKS = (
    'Random Dropout',
    'Crop (70%)',
    'Chunk Removal',
    'Noise & Dropout',
)
SVD_BENIGN_ATTACKS = (
    'Gaussian Noise (0.01)',
    'Gaussian Smoothing',
    'Quantization',
    'Jitter',
)

# File formats
PCB_MAGIC = b'PCB1'
CHECKPOINT_MAGIC = b'PCWMCKPT'
CHECKPOINT_VERSION = 1
XYZ_DIGITS = 9
REPORT_DIGITS = 6

RESULTS_COLUMNS = [
    'attack', 'decoder', 'n_samples',
    'acc_mean', 'acc_std',
    'iou_mean', 'iou_std',
    'ber_mean', 'ber_std',
    'chamfer_mean', 'chamfer_std',
    'psnr_mean', 'psnr_std',
]
ROC_COLUMNS = ['threshold', 'tpr', 'fpr']

# Mesh suffixes accepted by the dataset walker
MESH_SUFFIXES = ('.off', '.ply')
