"""seedtts: a multi-speaker hierarchical waveform TTS acoustic model whose
speaker identity comes either from a trained one-hot table or from the time
average of self-supervised speech-encoder frames over a seed signal, enabling
adaptation to unseen voices without touching the model weights.

The package is a plain numpy/scipy library: the model, its gradients and the
optimizer are implemented directly so every piece is inspectable and testable
against finite differences.  See ``demos/`` for narrative walkthroughs and
``seedtts --help`` for the experiment command line.
"""

from .audio import (QuantizedSequence, TrainingWindow, WaveformClip,
                    load_waveform, make_windows, mulaw_decode, mulaw_encode,
                    trim_silences)
from .conditioning import (FrameTrack, PhonemeAnnotation, ProsodyTrack,
                           SpeakerStats, compute_speaker_stats, extract_f0_uv,
                           parse_label_file, upsample_to_frames,
                           zscore_normalize)
from .config import (FeatureSchema, ModelConfig, TrainConfig,
                     default_feature_schema, desk_scale)
from .datasets import CorpusCatalog, SplitPlan, build_catalog, make_split_plan
from .embeddings import (ConvSpeechEncoder, EncoderFrames, MfccStatsEncoder,
                         OneHotSpeakerTable, SeedSignal, SpeakerEmbedding,
                         average_embedding, embed_seed, sample_seed,
                         train_encoder)
from .evaluation import (CepstraTrack, DistortionReport, adaptation_curve,
                         extract_cepstra, mcd, rmse_f0)
from .model import WaveModel, WindowBatch, batch_from_windows
from .training import (FixedEmbeddings, PlateauScheduler, RunLog,
                       TrainableEmbeddings, evaluate_nll, run_grid, train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
