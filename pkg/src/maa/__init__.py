"""Desk-scale adversarial attack laboratory for small vision-language encoders.

Subpackages: data (synthetic corpus), models (numpy encoders + contrastive
training), rscrop (resize/sliding-crop augmentation), attack (PGD image attack
+ word substitution), evaluation (retrieval metrics and transfer protocol),
pipeline/cli (run orchestration).
"""

from .attack import AttackConfig, pgd_attack, attack_text
from .config import RunConfig, parse_config
from .data import DatasetSpec, generate_dataset, open_dataset
from .evaluation import transfer_eval
from .kernels import backend_name
from .rscrop import build_crops

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "pgd_attack", "attack_text", "RunConfig", "parse_config",
    "DatasetSpec", "generate_dataset", "open_dataset", "transfer_eval",
    "backend_name", "build_crops", "__version__",
]
