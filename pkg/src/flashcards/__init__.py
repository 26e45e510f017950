"""Knowledge capture and replay for continual learning.

Trained autoencoders are distilled into "flashcards": random maze
patterns passed recursively through the frozen network until they carry
its learned texture.  Flashcards work as pseudo-samples for data-free
retraining and as a replay set against catastrophic forgetting.
"""

__version__ = "0.1.0"

from .autoencoder import (  # noqa: F401
    AEConfig,
    AEModel,
    TrainHyper,
    TrainedModelReport,
    build_ae,
    encode,
    forward,
    load_checkpoint,
    save_checkpoint,
    train_ae,
)
from .capture import (  # noqa: F401
    FlashcardConfig,
    FlashcardSet,
    RSweepReport,
    construct_flashcards,
    recursive_pass,
    sweep_r,
)
from .continual import (  # noqa: F401
    SequenceConfig,
    TaskSpec,
    replay_loss,
    train_from_flashcards,
    train_sequence,
)
from .data import (  # noqa: F401
    LabeledImageSet,
    NoiseSpec,
    SessionJitter,
    add_noise,
    apply_session_jitter,
    load_dataset,
    to_canonical,
    train_val_split,
)
from .errors import ConfigError, DataError, FlashcardsError, NumericError  # noqa: F401
from .metrics import MetricsMatrix, avg_mae, bwt, flsd, fwt, mae, weighted_alpha  # noqa: F401
from .patterns import PatternSpec, generate_patterns  # noqa: F401
