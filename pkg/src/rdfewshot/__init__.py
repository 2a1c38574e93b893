"""Few-shot human motion recognition on FMCW range-Doppler maps.

The pieces, bottom to top: synthetic echo generation from point-scatterer
motion models (``synth``), the FFT pipeline from raw frames to normalized
maps (``radar``), a from-scratch differentiable network stack (``nn``), the
channel-attentive local-descriptor metric model (``model``), episodic
training and evaluation (``episodes``), sklearn-style wrappers
(``estimators``) and a CLI (``cli``).
"""

__version__ = "0.1.0"

from .radar import (ChirpConfig, MapMeta, RangeDopplerMap, RawFrame,
                    doppler_fft, frame_to_rdmap, normalize, range_fft,
                    resize_bilinear, resize_for_network)
from .synth import (MotionModel, Scatterer, ScattererState, SynthSpec,
                    Trajectory, build_motion_model, line_of_sight_target,
                    synth_dataset, synth_frame)
from .model import (Conv64F, FewShotNetwork, ModelConfig, SEBlock,
                    class_score, cosine_sim, knn_class_scores)
from .episodes import (EpisodeTask, EpisodicTrainer, RunMetrics, SplitSpec,
                       TrainConfig, evaluate, sample_episode, scenario_sweep)
from .estimators import FewShotClassifier, RangeDopplerTransformer
from .rdm_io import RdmDataset, load_dataset, read_rdm, write_rdm

__all__ = [
    "ChirpConfig", "MapMeta", "RangeDopplerMap", "RawFrame",
    "range_fft", "doppler_fft", "normalize", "frame_to_rdmap",
    "resize_bilinear", "resize_for_network",
    "MotionModel", "Scatterer", "ScattererState", "SynthSpec", "Trajectory",
    "build_motion_model", "line_of_sight_target", "synth_dataset", "synth_frame",
    "Conv64F", "FewShotNetwork", "ModelConfig", "SEBlock",
    "class_score", "cosine_sim", "knn_class_scores",
    "EpisodeTask", "EpisodicTrainer", "RunMetrics", "SplitSpec", "TrainConfig",
    "evaluate", "sample_episode", "scenario_sweep",
    "FewShotClassifier", "RangeDopplerTransformer",
    "RdmDataset", "load_dataset", "read_rdm", "write_rdm",
]
