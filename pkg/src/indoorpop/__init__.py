"""Partition-level indoor population modeling from sparse positioning data.

The pipeline: an indoor topology (partitions + doors) and sparse per-object
records give, per partition and time, a Normal population estimate via
Monte-Carlo presence sampling over the plausible door paths. Those estimates
form time series that train recurrent/graph estimators, which in turn serve
continuous "which nearby partitions are populated?" queries.
"""

from .demo import DemoVenue, demo_document, demo_venue
from .estimators import (
    EPS_SIGMA,
    FeatureWindow,
    MEModel,
    PopulationSeries,
    SEModel,
    SerializationError,
    TrainingConfig,
    TrainingResult,
    average_kl,
    build_feature_windows,
    build_joint_windows,
    deserialize_model,
    kl_normal,
    load_model,
    me_forward,
    mse_variance_loss,
    read_population_series,
    save_model,
    se_forward,
    serialize_model,
    series_from_snapshots,
    split_windows,
    train,
    wasserstein_loss,
    write_population_series,
)
from .extraction import (
    EPS_LEN,
    MAX_HOPS,
    IndoorPath,
    InfeasiblePathError,
    PathConnectivityError,
    PathDistribution,
    PopulationDistribution,
    PresenceVector,
    enumerate_paths,
    exact_poisson_binomial,
    extract_population,
    find_partition,
    make_path,
    pass_time_bounds,
    path_length,
    path_probabilities,
    presence_from_paths,
)
from .harness import ExperimentConfig, Report, build_venue, f1_from_counts, run_experiment
from .monitor import (
    CmppEngine,
    CmppQuery,
    Emission,
    FeatureCache,
    QueryConfigError,
    last_baseline,
    pmf_exceed,
    reachable_partitions,
    run_cmpp,
)
from .synth import grid_venue, ring_crowd_movement, ring_venue
from .topology import (
    EPS_GEOM,
    BoundaryLocationError,
    DanglingIdError,
    Door,
    DoorNotIncidentError,
    Location,
    LocationError,
    MappingConsistencyError,
    OutsideVenueError,
    Partition,
    SchemaError,
    Topology,
    TopologyError,
    adjacency_matrix,
    door_to_door_distance,
    dump_topology,
    host_partition,
    load_topology,
)
from .trajectory import (
    GroundTruth,
    MovementConfig,
    PositioningRecord,
    Segment,
    Trajectory,
    TrajectoryStore,
    UnreachableWaypointError,
    generate_movement,
    ingest_records,
    read_ground_truth,
    read_trajectories,
    true_population,
    write_ground_truth,
    write_trajectories,
)

__version__ = "0.1.0"
