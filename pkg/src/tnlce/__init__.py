"""Loop cluster expansion engine for tensor-network observables.

Pipeline: prepare a state in the Vidal gauge with the simple update,
converge belief propagation on the norm network, enumerate generalized
loop clusters around each observable, combine their exactly contracted
values with inclusion-exclusion counting numbers, and accelerate the
cluster-size sequence with Wynn's epsilon algorithm.
"""

__version__ = "0.1.0"

from .bp import (
    DoubledNetwork,
    MessageSet,
    bp_expectation,
    bp_iterate,
    bp_log_partition,
    bp_residual,
    build_doubled,
    messages_from_lambdas,
)
from .clusters import (
    Region,
    RegionPoset,
    close_under_intersection,
    counting_numbers,
    dump_regions,
    enumerate_loop_clusters,
    reduce_region,
    region_from_sites,
)
from .estimator import (
    ClusterEvaluator,
    ClusterValue,
    EnergySeries,
    ExpansionEstimate,
    cluster_contract,
    cluster_value,
    energy_per_site,
    energy_series,
    expansion_series,
    loop_cluster_product,
    loop_cluster_sum,
    prepare_network,
    single_cluster_expectation,
    single_cluster_energy,
)
from .extrapolate import (
    EpsilonTable,
    ExtrapolationResult,
    extrapolate,
    wynn_table,
)
from .gauge_su import (
    SymmetricState,
    VidalState,
    apply_gate_su,
    equilibrate_gauge,
    load_state,
    product_state,
    save_state,
    su_ground_state,
    to_symmetric,
)
from .models import Model, ModelTerm, heisenberg, tfim, trotter_gates
from .tensor import (
    DenseTensor,
    LogScalar,
    contract_network,
    contract_pair,
    find_path,
    truncated_svd,
)
from .tngraph import (
    IndexedNetwork,
    LatticeGraph,
    SiteGraph,
    build_lattice,
    girth,
    neighbors,
)
