#![allow(dead_code)]

use cloudroid::samples::{DETECTOR_MANIFEST, MAPPER_MANIFEST};
use cloudroid_portal::{PortalConfig, RunningPortal};

pub const TOKEN: &str = "test-token";

/// A portal on an ephemeral port with the sample services deployed.
pub async fn start() -> RunningPortal {
    let rp = start_empty().await;
    rp.portal
        .deploy(DETECTOR_MANIFEST.as_bytes(), false)
        .unwrap();
    rp.portal.deploy(MAPPER_MANIFEST.as_bytes(), false).unwrap();
    rp
}

pub async fn start_empty() -> RunningPortal {
    let cfg = PortalConfig::new("127.0.0.1:0".parse().unwrap(), TOKEN);
    RunningPortal::start(&cfg).await.unwrap()
}

pub fn http() -> reqwest::Client {
    reqwest::Client::new()
}
