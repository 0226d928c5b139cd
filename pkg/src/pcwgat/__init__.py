"""No-reference point cloud quality assessment with perceptual cluster graphs and graph attention."""

from .config import PipelineConfig, load_config
from .evaluation import EvalReport, correlations, evaluate_model
from .model import GafGatModel, ModelConfig
from .pipeline import cloud_to_graph
from .pointcloud_io import PointCloud, load_manifest, read_ply
from .training import predict, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "GafGatModel", "ModelConfig", "PipelineConfig", "PointCloud", "cloud_to_graph",
    "correlations", "evaluate_model", "load_config", "load_manifest", "predict", "read_ply", "train",
]
