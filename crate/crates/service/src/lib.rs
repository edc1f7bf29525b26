//! HTTP elicitation service: interactive pairwise and group preference
//! sessions backed by append-only event logs.

pub mod engine;
pub mod error;
pub mod http;
pub mod render;
pub mod session;
pub mod store;

pub use engine::{CreateResponse, EstimateView, Export, FinalView, LabelRequest, QueryView, Service, ServiceConfig};
pub use error::{ServiceError, ServiceResult};
pub use http::{router, serve};
pub use session::{CreateRequest, EstimateSnapshot, LabelChoice, Mode, SessionEvent, SessionState, Status};
