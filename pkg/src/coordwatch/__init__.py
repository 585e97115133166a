"""Coordinated-campaign detection over multi-platform social-media posts."""

import warnings

# numba probes TBB first and falls back to another threading layer by itself;
# the notice about an outdated TBB install is noise for users of this package.
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")

from .cluster import ClusterAssignment, drop_singletons, hdbscan_simplified, kmeans, temporal_subdivide  # noqa: E402
from .datamodel import Dataset, IngestConfig, dataset_factuality_std, ingest, join_factuality  # noqa: E402
from .embed import EmbeddingMatrix, SgnsConfig, concat_align, pv_dbow, train_sgns  # noqa: E402
from .evaluate import EvaluationReport, evaluate, silhouette  # noqa: E402
from .graph import HeteroGraph, WalkConfig, build_graph, metapath_walks, node2vec_walks  # noqa: E402
from .pipeline import MethodConfig, PipelineConfig, Workspace, run_pipeline  # noqa: E402
from .synth import CampaignSpec, generate, score_detection  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "CampaignSpec", "ClusterAssignment", "Dataset", "EmbeddingMatrix", "EvaluationReport", "HeteroGraph",
    "IngestConfig", "MethodConfig", "PipelineConfig", "SgnsConfig", "WalkConfig", "Workspace", "build_graph",
    "concat_align", "dataset_factuality_std", "drop_singletons", "evaluate", "generate", "hdbscan_simplified",
    "ingest", "join_factuality", "kmeans", "metapath_walks", "node2vec_walks", "pv_dbow", "run_pipeline",
    "score_detection", "silhouette", "temporal_subdivide", "train_sgns",
]
