"""aggforge: shared evaluation of large batches of group-by aggregates over joins."""
from .catalog import AttrKind, AttributeInfo, Catalog, JoinTree, RelationSchema, load_config, \
    parse_config, validate_join_tree, infer_join_tree
from .executor import BatchResult, Engine, ResultTable, ScanStats, brute_force_oracle, \
    execute_batch, execute_group, run_batch
from .logical import assign_roots, decompose_query, explain_logical, group_views, merge_views, \
    optimize
from .physical import choose_attribute_order, explain_plan, register
from .query import AggregateQuery, agg, constant, count_agg, identity, kronecker, named, \
    parse_batch, parse_query, power, rebind
from .storage import Database, Table, load_csv, sort_table

__version__ = "0.1.0"
