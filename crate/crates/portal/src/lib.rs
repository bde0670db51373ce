//! Network front end for the cloudroid portal: the websocket session
//! endpoint, the REST management API, and a [`WsLink`] that lets a stub
//! talk to a remote portal.

pub mod config;
pub mod server;
pub mod ws_link;

pub use config::{ConfigError, PortalConfig};
pub use server::{router, RunningPortal};
pub use ws_link::WsLink;
