//! Bringing an enclave from boot to the operation phase.

use std::sync::{Arc, Mutex};

use omg_core::crypto::{measure, PlatformIdentity};
use omg_core::enclave::Sanctuary;
use omg_core::fixtures::reference_enclave_image;
use omg_core::modelstore::{MemStorage, UntrustedStorage};
use omg_core::protocol::{
    run_initialization, run_preparation, EnclaveHost, EnclavePk, InProcessLink, Prepared, UserClient, VendorLink,
    VendorState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

/// An enclave host in the operation phase.
#[derive(Debug)]
pub struct Deployment {
    pub host: EnclaveHost,
    pub prepared: Prepared,
}

impl Deployment {
    pub fn enclave_pk(&self) -> EnclavePk {
        self.host.enclave().public_key().expect("deployed enclave is live")
    }
}

/// Launches `image` on `core`, then runs preparation and initialization
/// against the vendor behind `link`.
pub fn deploy(
    platform: &Sanctuary,
    image: &[u8],
    core: usize,
    storage: Box<dyn UntrustedStorage>,
    link: &mut dyn VendorLink,
) -> Result<Deployment, CliError> {
    let mut host = EnclaveHost::launch(platform, image, core, storage)?;
    let mut user = UserClient::new(platform.root_cert().clone(), measure(image));
    let prepared = run_preparation(link, &mut host, &mut user)?;
    if !prepared.user_accepted {
        log::warn!("user rejected the enclave's boot attestation");
    }
    log::info!(
        "prepared model v{} ({})",
        prepared.model_version,
        if prepared.provisioned { "provisioned" } else { "already current" }
    );
    run_initialization(link, &mut host)?;
    Ok(Deployment { host, prepared })
}

/// Platform, vendor and enclave in one process, deterministic in `seed`.
pub struct LocalDeployment {
    pub platform: Sanctuary,
    pub vendor: Arc<Mutex<VendorState>>,
    pub link: InProcessLink,
    pub deployment: Deployment,
}

impl std::fmt::Debug for LocalDeployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalDeployment").field("deployment", &self.deployment).finish_non_exhaustive()
    }
}

pub fn deploy_local(model: Vec<u8>, seed: u64) -> Result<LocalDeployment, CliError> {
    let platform = Sanctuary::new(PlatformIdentity::from_seed(ChaCha8Rng::seed_from_u64(seed).gen()));
    let image = reference_enclave_image();
    let vendor = Arc::new(Mutex::new(VendorState::with_seed(model, measure(&image), platform.root_cert().clone(), seed)));
    let mut link = InProcessLink::new(vendor.clone());
    let deployment = deploy(&platform, &image, 0, Box::new(MemStorage::new()), &mut link)?;
    Ok(LocalDeployment { platform, vendor, link, deployment })
}
