//! A distributed-object runtime. Live objects are deployed as services
//! addressed by name or GUID; each value crossing a node boundary travels by
//! value or by reference according to a run-time configurable rule set.

pub mod codec;
pub mod error;
pub mod json;
pub mod model;
pub mod node;
pub mod policy;
pub mod registry;
pub mod remote;
pub mod toolkit;

pub use error::{Error, Result};
pub use model::{Depth, Endpoint, Guid, Object, ObjectRef, PeerKind, PolicyKind, Rior, TransmissionDecision, Value};
pub use node::{Node, NodeConfig, Runtime};
pub use policy::PolicyManager;
pub use registry::{AppFault, Registry, TypeDef};
pub use remote::Handle;
