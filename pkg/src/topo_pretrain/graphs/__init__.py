from .core import BatchingError, Graph, GraphBatch, GraphError, batch_graphs, induced_subgraph
from .generators import (
    GENERATORS,
    derive_seed,
    generate_community,
    generate_corpus,
    generate_er,
    generate_tree,
)
from .io import CorpusError, graph_to_record, load_corpus, record_to_graph, save_corpus
from .metrics import METRIC_NAMES, MetricRecord, graph_metrics
from .sampling import SAMPLERS, SamplingError, ego_network, explore_sample

__all__ = [
    "BatchingError", "Graph", "GraphBatch", "GraphError", "batch_graphs", "induced_subgraph",
    "GENERATORS", "derive_seed", "generate_community", "generate_corpus", "generate_er",
    "generate_tree", "CorpusError", "graph_to_record", "load_corpus", "record_to_graph",
    "save_corpus", "METRIC_NAMES", "MetricRecord", "graph_metrics", "SAMPLERS",
    "SamplingError", "ego_network", "explore_sample",
]
