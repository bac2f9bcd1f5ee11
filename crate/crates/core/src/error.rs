use alloc::string::String;
use core::fmt;

/// Errors raised by the simulation and solver kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its admissible range.
    InvalidParameter { name: &'static str, detail: String },
    /// A rectangle or grid extent with negative size.
    NegativeExtent,
    /// The requested lattice extent does not fit in memory indexing.
    ExtentOverflow,
    /// A dense grid would exceed the configured memory cap.
    MemoryBudget { requested_bytes: usize, cap_bytes: usize },
    /// A lattice site lies outside the wedge `j >= -i 1{i <= 0}`.
    OutsideWedge { i: i64, j: i64 },
    /// An initial density outside `[0, 1]`.
    DensityOutOfRange(f64),
    /// A frozen boundary influenced a reported site; the run is invalid.
    BufferOverrun { site: i64, time: f64 },
    /// An iterative search exceeded its hard cap.
    CapReached { what: &'static str, limit: f64 },
    /// Two grids that must match do not.
    GridMismatch(&'static str),
    /// A test function is not supported inside the computational domain.
    SupportOutsideDomain,
    /// The operation needs a field that depends on the spatial variable only.
    NotSpatialOnly,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, detail } => write!(f, "invalid parameter `{name}`: {detail}"),
            Error::NegativeExtent => f.write_str("negative extent"),
            Error::ExtentOverflow => f.write_str("lattice extent overflows the index range"),
            Error::MemoryBudget { requested_bytes, cap_bytes } => write!(
                f,
                "grid needs {requested_bytes} bytes, above the memory cap of {cap_bytes} bytes"
            ),
            Error::OutsideWedge { i, j } => write!(f, "site ({i}, {j}) is outside the wedge"),
            Error::DensityOutOfRange(r) => write!(f, "density {r} is outside [0, 1]"),
            Error::BufferOverrun { site, time } => write!(
                f,
                "buffer overrun: frozen boundary reached reported site {site} at time {time}"
            ),
            Error::CapReached { what, limit } => write!(f, "{what} exceeded its hard cap {limit}"),
            Error::GridMismatch(what) => write!(f, "grid mismatch: {what}"),
            Error::SupportOutsideDomain => f.write_str("test function support leaves the domain"),
            Error::NotSpatialOnly => f.write_str("speed field depends on more than the spatial variable"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidParameter { name, detail: detail.into() }
}
