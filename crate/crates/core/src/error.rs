use thiserror::Error;

/// Errors raised while declaring or querying mesh entities.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("{kind} `{name}` is already declared")]
    DuplicateName { kind: &'static str, name: String },
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("map `{map}`: table has {actual} entries, expected {expected}")]
    MapLength {
        map: String,
        expected: usize,
        actual: usize,
    },
    #[error("map `{map}`: entry {value} at position {position} is outside [1, {to_size}]")]
    MapRange {
        map: String,
        position: usize,
        value: i64,
        to_size: usize,
    },
    #[error("map `{map}`: arity must be positive")]
    ZeroArity { map: String },
    #[error("dat `{dat}`: payload has {actual} values, expected {expected}")]
    DatLength {
        dat: String,
        expected: usize,
        actual: usize,
    },
    #[error("dat `{dat}`: dim must be positive")]
    ZeroDim { dat: String },
    #[error("`{name}` holds {actual} data, {expected} was requested")]
    KindMismatch {
        name: String,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("mesh is frozen; cannot {action} after execution started")]
    Frozen { action: String },
    #[error("loop `{lp}` argument {arg}: {reason}")]
    InvalidArg {
        lp: String,
        arg: usize,
        reason: String,
    },
}

/// Errors from the text mesh format reader.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unexpected end of input: {0}")]
    Eof(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenumberError {
    #[error("set `{0}` has no incident map to derive an ordering from")]
    NoIncidentMap(String),
    #[error("permutation was computed for mesh version {computed}, mesh is at version {current}")]
    Stale { computed: u64, current: u64 },
    #[error("permutation is not a bijection on {0} elements")]
    NotBijective(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("nranks must be at least 1")]
    NoRanks,
    #[error("recursive bisection needs a power-of-two rank count, got {0}")]
    NotPowerOfTwo(usize),
    #[error("coordinates must be float64 with dim 2 or 3 on the partitioned set")]
    BadCoordinates,
    #[error("set `{0}` has no rank assignment")]
    Unassigned(String),
    #[error("assignment for `{set}` has {actual} entries, set has {expected}")]
    AssignmentLength {
        set: String,
        expected: usize,
        actual: usize,
    },
    #[error("balance factor must be positive, got {0}")]
    BadBalance(f64),
}

/// Errors raised by the executors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("kernel of loop `{lp}` failed at element {element}: {msg}")]
    KernelFault {
        lp: String,
        element: usize,
        msg: String,
    },
    #[error("rank {rank} timed out in loop `{lp}` waiting for {what}")]
    Timeout {
        rank: usize,
        lp: String,
        what: String,
    },
    #[error("rank {rank} disconnected")]
    Disconnected { rank: usize },
    #[error("loop `{lp}` uses map `{map}` in a way the rank layout was not built for")]
    NotCovered { lp: String, map: String },
    #[error("reduction: {0}")]
    Reduction(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("diffusion residual grew at step {step} with dt = {dt}; stable bound is dt <= {bound}")]
    Unstable { step: usize, dt: f64, bound: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Top-level error used by the driver, tuner and report writers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Renumber(#[from] RenumberError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
