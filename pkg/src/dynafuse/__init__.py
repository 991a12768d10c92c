"""dynafuse: static-scene reconstruction from RGB-D video with moving objects.

External detections seed GrabCut masks over dynamic regions, dense RGB-D
odometry estimates camera motion from the remaining static pixels, and
masked back-projection fuses a static point cloud in the first camera's
frame.  See the ``dynafuse`` CLI (``run`` / ``segment`` / ``align`` /
``reconstruct``) or use the modules directly:

* :mod:`dynafuse.geometry` — pinhole model, SE(3) exp/log, quaternions
* :mod:`dynafuse.imaging` — dataset I/O, association, pyramids, sampling
* :mod:`dynafuse.detection` — detection JSONL ingestion and policy
* :mod:`dynafuse.segmentation` — GrabCut energy, graph cuts, iteration
* :mod:`dynafuse.maxflow` — exact float max-flow (Dinic)
* :mod:`dynafuse.odometry` — dense RGB-D alignment (Gauss-Newton)
* :mod:`dynafuse.reconstruction` — fusion, voxel grid, PLY/trajectory I/O
* :mod:`dynafuse.pipeline` — batch orchestration
* :mod:`dynafuse.report` — figure rendering for run outputs
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .geometry import Intrinsics, Pose
from .pipeline import RunSummary, run

__all__ = [
    "__version__",
    "Intrinsics",
    "Pose",
    "PipelineConfig",
    "load_config",
    "RunSummary",
    "run",
]
