//! Measure-preserving coupling layers and their compositions.

mod layer;
mod net;
pub mod serial;
mod shift;
pub mod verify;

pub(crate) use layer::with_inserted;
pub use layer::{Layer, LayerKind};
pub use net::{MPNet, NetGrads};
pub use shift::{AnalyticShift, FixedShift, ShiftFn, ShiftRegistry};
