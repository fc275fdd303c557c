from .export import ExtractorSpec, export_descriptors
from .gdsc import read_gdsc, write_gdsc
from .tsne import tsne_plot

__version__ = "0.1.0"

__all__ = [
    "ExtractorSpec",
    "export_descriptors",
    "read_gdsc",
    "write_gdsc",
    "tsne_plot",
    "__version__",
]
