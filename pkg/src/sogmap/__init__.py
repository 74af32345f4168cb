"""Incremental mapping of RGB-D frames into a 4D (x, y, z, intensity) Gaussian mixture."""
from .core import Component, Gmm, NoSupportError, condition_intensity, gaussian_log_density, gmm_log_likelihood, \
    marginalize_spatial, sample_component, set_num_threads
from .infer import InferenceConfig, reconstruct
from .io import CameraIntrinsics, Pose, export_ply, load_model, read_manifest, read_ply, save_model
from .mapper import FrameReport, Mapper, MapperConfig, merge_models
from .metrics import ReconstructionReport, build_ground_truth, compute_metrics, model_bytes
from .sogmm import SogmmConfig, em_fit, fit_sogmm, gbms_mode_count, kinit_responsibilities
from .spatialhash import HashGridSpec, SpatialHashTable, component_keys, hash_key

__version__ = "0.1.0"
