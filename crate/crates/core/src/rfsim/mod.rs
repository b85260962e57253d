//! Trace-driven timing model of one SM's two-level register file.
//!
//! The main register file is banked and slow; a small register cache holds
//! the working sets of the active warps. Prefetching designs load a warp's
//! interval working set on entry to each interval and while one warp waits
//! for its prefetch the others keep issuing.

mod config;
mod hw;
mod sim;
mod sweep;
mod trace;
mod workload;

pub use config::{table2_multipliers, table2_row, ConfigError, Design, DesignPoint, RegisterFileConfig, TABLE2};
pub use hw::{AddressAllocationUnit, CacheAccess, RegisterCache, WarpControlBlock};
pub use sim::{simulate, IntervalPrefetchStats, SimError, SimulationReport};
pub use sweep::{max_tolerable_latency, sweep, SweepPoint, TolerableLatency};
pub use trace::{generate_traces, parse_traces, traces_to_text, TraceError, TraceEvent, TraceKnobs, WarpTrace};
pub use workload::{prepare_workload, simulate_workload, Workload, WorkloadError};
