"""relroute: atomic-route compilation and composite message passing for
relational data.

The package turns a relational schema into a set of atomic routes (direct
edges for single-FK tables, source -> junction -> destination paths for
multi-FK tables), builds a row-level temporal graph from CSV data, and trains
route-aware GNNs end to end on a small, self-contained autodiff engine.
"""

from .database import (DataValidationError, Database, EntityGraph,
                       build_entity_graph, load_database)
from .encoding import FeatureEncoder, TimeEncoderConfig, fit_encoders
from .estimator import RelGNNClassifier, RelGNNRegressor
from .metrics import map_at_k, mae, roc_auc
from .model import HeteroSAGE, RelGNN, RelGNNConfig, RpeConfig
from .sampler import (FanoutConfig, SampledSubgraph, SeedBatch, make_batches,
                      temporal_route_sample)
from .schema import (AtomicRoute, SchemaDef, SchemaError, SchemaGraph,
                     TableClass, build_schema_graph, classify_tables,
                     derive_atomic_routes, emit_routes, emit_schema,
                     parse_schema)
from .synth import MotifConfig, generate_bridge_db, generate_hub_db, write_dataset
from .train import (TaskSpec, TrainConfig, TrainingDiverged, load_task,
                    load_task_table, seed_sweep, train_loop)

__version__ = "0.1.0"

__all__ = [
    "AtomicRoute",
    "Database",
    "DataValidationError",
    "EntityGraph",
    "FanoutConfig",
    "FeatureEncoder",
    "HeteroSAGE",
    "MotifConfig",
    "RelGNN",
    "RelGNNClassifier",
    "RelGNNConfig",
    "RelGNNRegressor",
    "RpeConfig",
    "SampledSubgraph",
    "SchemaDef",
    "SchemaError",
    "SchemaGraph",
    "SeedBatch",
    "TableClass",
    "TaskSpec",
    "TimeEncoderConfig",
    "TrainConfig",
    "TrainingDiverged",
    "build_entity_graph",
    "build_schema_graph",
    "classify_tables",
    "derive_atomic_routes",
    "emit_routes",
    "emit_schema",
    "fit_encoders",
    "generate_bridge_db",
    "generate_hub_db",
    "load_database",
    "load_task",
    "load_task_table",
    "make_batches",
    "map_at_k",
    "mae",
    "parse_schema",
    "roc_auc",
    "seed_sweep",
    "temporal_route_sample",
    "train_loop",
    "write_dataset",
]
