"""Incremental structure from motion for equirectangular 360 degree panoramas."""

from .bundle import BAOptions, BAProblem, BAReport, optimize
from .config import Config, load_config, parse_config
from .cubemap import FACE_IDS, CubemapFace, cubemap_to_erp, erp_to_cubemap
from .errors import (
    CheiralityError,
    DomainError,
    InitializationError,
    InsufficientDataError,
    OmniSfmError,
    ParseError,
    ProjectionError,
    RegistrationError,
    TriangulationError,
    VerificationError,
)
from .evaluation import PoseErrorSample, auc, relative_pose_errors, report
from .geometry import ErpDims, Pose, angular_residual, bearing_to_pixel, pixel_to_bearing, project_point
from .matching import PairMatches, Track, TrackSet, build_tracks, quantize, quantize_matches
from .resection import register_image
from .sfm import Reconstruction, reconstruct, select_init_pair, verify_pairs
from .synth import GroundTruthScene, generate_scene, observe, perturb_poses
from .triangulation import triangulate
from .twoview import EssentialMatrix, TwoViewGeometry, estimate_essential_8pt, ransac_two_view

__version__ = "0.1.0"

__all__ = [
    "BAOptions",
    "BAProblem",
    "BAReport",
    "CheiralityError",
    "Config",
    "CubemapFace",
    "DomainError",
    "ErpDims",
    "EssentialMatrix",
    "FACE_IDS",
    "GroundTruthScene",
    "InitializationError",
    "InsufficientDataError",
    "OmniSfmError",
    "PairMatches",
    "ParseError",
    "Pose",
    "PoseErrorSample",
    "ProjectionError",
    "Reconstruction",
    "RegistrationError",
    "Track",
    "TrackSet",
    "TriangulationError",
    "TwoViewGeometry",
    "VerificationError",
    "angular_residual",
    "auc",
    "bearing_to_pixel",
    "build_tracks",
    "cubemap_to_erp",
    "erp_to_cubemap",
    "estimate_essential_8pt",
    "generate_scene",
    "load_config",
    "observe",
    "optimize",
    "parse_config",
    "perturb_poses",
    "pixel_to_bearing",
    "project_point",
    "quantize",
    "quantize_matches",
    "ransac_two_view",
    "reconstruct",
    "register_image",
    "relative_pose_errors",
    "report",
    "select_init_pair",
    "triangulate",
    "verify_pairs",
]
