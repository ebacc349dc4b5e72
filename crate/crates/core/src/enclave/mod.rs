//! In-process simulation of a user-space enclave on a dedicated core.
//!
//! Lifecycle: `UNLOADED → SETUP → BOOTED → EXECUTING ⇄ PARKED → TORNDOWN`,
//! with teardown also allowed from `BOOTED`. The private region is locked for
//! the whole time between setup and teardown, including while parked, and
//! is zeroized before it is unlocked. Access control is enforced by the
//! region abstraction, not by page tables: every normal-world access goes
//! through [`EnclaveInstance::os_read_memory`] / [`EnclaveInstance::os_write_memory`].
//!
//! Private region layout: `code ‖ input buffer (one 1 s clip) ‖ heap`.

mod ledger;
mod memory;
mod peripheral;

use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::audio::{AudioClip, CLIP_SAMPLES};
use crate::crypto::{derive_enclave_keypair, measure, sign_attestation, AttestationReport, Certificate, EnclaveKeyPair, Measurement, Nonce, PlatformIdentity};

pub use ledger::{SwitchLedger, TraceEvent, TraceLog, WORLD_SWITCH_US};
pub use memory::{AccessDenied, MemoryRegion, RegionId, RegionOwner};
pub use peripheral::{PeripheralKind, SimulatedPeripheral};

/// Octa-core SoC.
pub const DEFAULT_CORE_COUNT: usize = 8;
pub const INPUT_BUFFER_LEN: usize = CLIP_SAMPLES * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnclaveState {
    Unloaded,
    Setup,
    Booted,
    Executing,
    Parked,
    TornDown,
}

impl EnclaveState {
    pub const ALL: [Self; 6] = [Self::Unloaded, Self::Setup, Self::Booted, Self::Executing, Self::Parked, Self::TornDown];

    /// Edges of the lifecycle graph. Self-loops are not transitions.
    pub fn can_transition_to(self, next: Self) -> bool {
        use EnclaveState::*;
        matches!(
            (self, next),
            (Unloaded, Setup)
                | (Setup, Booted)
                | (Booted, Executing)
                | (Executing, Parked)
                | (Parked, Executing)
                | (Booted | Executing | Parked, TornDown)
        )
    }

    pub fn is_live(self) -> bool {
        matches!(self, Self::Setup | Self::Booted | Self::Executing | Self::Parked)
    }
}

impl fmt::Display for EnclaveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unloaded => "UNLOADED",
            Self::Setup => "SETUP",
            Self::Booted => "BOOTED",
            Self::Executing => "EXECUTING",
            Self::Parked => "PARKED",
            Self::TornDown => "TORNDOWN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("core {0} is already reserved")]
    CoreBusy(usize),
    #[error("core {0} does not exist")]
    InvalidCore(usize),
    #[error("no free core to resume on")]
    NoFreeCore,
    #[error("{op} not allowed in state {state}")]
    WrongState { op: &'static str, state: EnclaveState },
    #[error("peripheral has no pending input")]
    EmptyPeripheral,
    #[error("no peripheral attached to the enclave")]
    NoPeripheral,
    #[error("patch outside the loaded code image")]
    PatchOutOfBounds,
    #[error("clip does not fit the enclave input buffer")]
    InputTooLarge,
}

#[derive(Debug, Clone)]
struct CorePool {
    reserved: Arc<Mutex<Vec<bool>>>,
}

impl CorePool {
    fn new(n: usize) -> Self {
        Self { reserved: Arc::new(Mutex::new(vec![false; n])) }
    }

    fn reserve(&self, core: usize) -> Result<(), EnclaveError> {
        let mut cores = self.reserved.lock().unwrap();
        match cores.get_mut(core) {
            None => Err(EnclaveError::InvalidCore(core)),
            Some(true) => Err(EnclaveError::CoreBusy(core)),
            Some(slot) => {
                *slot = true;
                Ok(())
            }
        }
    }

    fn reserve_any(&self) -> Option<usize> {
        let mut cores = self.reserved.lock().unwrap();
        let idx = cores.iter().position(|r| !r)?;
        cores[idx] = true;
        Some(idx)
    }

    fn release(&self, core: usize) {
        if let Some(slot) = self.reserved.lock().unwrap().get_mut(core) {
            *slot = false;
        }
    }

    fn is_reserved(&self, core: usize) -> bool {
        self.reserved.lock().unwrap().get(core).copied().unwrap_or(false)
    }
}

/// The device: platform trust root plus the core pool enclaves are bound to.
/// Cheap to clone; clones share cores.
#[derive(Clone)]
pub struct Sanctuary {
    identity: Arc<PlatformIdentity>,
    cores: CorePool,
    next_id: Arc<AtomicU64>,
}

impl fmt::Debug for Sanctuary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sanctuary").field("identity", &self.identity).finish_non_exhaustive()
    }
}

impl Sanctuary {
    pub fn new(identity: PlatformIdentity) -> Self {
        Self::with_cores(identity, DEFAULT_CORE_COUNT)
    }

    pub fn with_cores(identity: PlatformIdentity, cores: usize) -> Self {
        Self { identity: Arc::new(identity), cores: CorePool::new(cores), next_id: Arc::new(AtomicU64::new(1)) }
    }

    pub fn root_cert(&self) -> &Certificate {
        self.identity.cert()
    }

    pub fn identity(&self) -> &PlatformIdentity {
        &self.identity
    }

    pub fn core_reserved(&self, core: usize) -> bool {
        self.cores.is_reserved(core)
    }

    /// Copies `code` into a fresh private region locked to `core_id`.
    pub fn setup<A: EnclaveApp>(&self, code: &[u8], core_id: usize, app: A) -> Result<EnclaveInstance<A>, EnclaveError> {
        self.cores.reserve(core_id)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut private = code.to_vec();
        private.resize(code.len() + INPUT_BUFFER_LEN, 0);
        let mut inst = EnclaveInstance {
            id,
            state: EnclaveState::Unloaded,
            code_len: code.len(),
            measurement: None,
            keypair: None,
            private: MemoryRegion::new(RegionId(id * 2), RegionOwner::Enclave, private),
            shared: MemoryRegion::new(RegionId(id * 2 + 1), RegionOwner::Shared, Vec::new()),
            core: Some(core_id),
            ledger: SwitchLedger::default(),
            trace: TraceLog::default(),
            platform: self.clone(),
            peripheral: None,
            app,
        };
        inst.private.lock();
        inst.transition(EnclaveState::Setup, "setup");
        Ok(inst)
    }
}

/// Code running inside the enclave. `handle` sees the enclave only through
/// [`EnclaveEnv`].
pub trait EnclaveApp {
    type Request;
    type Response;

    fn handle(&mut self, env: &mut EnclaveEnv<'_>, req: Self::Request) -> Self::Response;

    /// Drops any secret state held outside the private region. Called at teardown.
    fn wipe(&mut self) {}
}

/// What an enclave application can reach while executing.
pub struct EnclaveEnv<'a> {
    id: u64,
    code_len: usize,
    measurement: &'a Measurement,
    keypair: &'a EnclaveKeyPair,
    private: &'a mut MemoryRegion,
    shared: &'a mut MemoryRegion,
    ledger: &'a mut SwitchLedger,
    trace: &'a mut TraceLog,
    peripheral: Option<&'a mut SimulatedPeripheral>,
}

impl EnclaveEnv<'_> {
    pub fn measurement(&self) -> &Measurement {
        self.measurement
    }

    pub fn keypair(&self) -> &EnclaveKeyPair {
        self.keypair
    }

    pub fn attest(&self, nonce: &Nonce) -> AttestationReport {
        sign_attestation(self.keypair, self.measurement, nonce)
    }

    fn heap_start(&self) -> usize {
        self.code_len + INPUT_BUFFER_LEN
    }

    /// Replaces the private heap with `bytes`; the old heap is zeroized first.
    pub fn store_private(&mut self, bytes: &[u8]) -> Range<usize> {
        let start = self.heap_start();
        self.private.truncate_wiped(start);
        self.private.write(start, bytes);
        start..start + bytes.len()
    }

    pub fn wipe_private_heap(&mut self) {
        let start = self.heap_start();
        self.private.truncate_wiped(start);
    }

    pub fn private_bytes(&self, range: Range<usize>) -> &[u8] {
        &self.private.bytes()[range]
    }

    /// Publishes bytes to the shared (normal-world readable) region.
    pub fn publish(&mut self, bytes: &[u8]) {
        self.shared.truncate_wiped(0);
        self.shared.write(0, bytes);
    }

    /// Copies a clip handed over by the host into the private input buffer.
    pub fn load_input(&mut self, clip: &AudioClip) -> Result<(), EnclaveError> {
        fill_input(self.private, self.code_len, clip)
    }

    /// Reads the attached peripheral through the secure world.
    pub fn world_switch_read(&mut self) -> Result<AudioClip, EnclaveError> {
        let p = self.peripheral.as_deref_mut().ok_or(EnclaveError::NoPeripheral)?;
        secure_read(self.id, self.code_len, p, self.private, self.ledger, self.trace)
    }
}

fn secure_read(
    id: u64,
    code_len: usize,
    peripheral: &mut SimulatedPeripheral,
    private: &mut MemoryRegion,
    ledger: &mut SwitchLedger,
    trace: &mut TraceLog,
) -> Result<AudioClip, EnclaveError> {
    let mut log_switch = |ledger: &mut SwitchLedger, dir: &str| {
        ledger.record(1);
        trace.push(TraceEvent {
            enclave: id,
            fields: vec![
                ("event", "world_switch".into()),
                ("dir", dir.into()),
                ("switches", ledger.switches().to_string()),
                ("sim_us", ledger.simulated_us().to_string()),
            ],
        });
    };
    log_switch(ledger, "to_secure");
    let clip = peripheral.pop();
    log_switch(ledger, "to_enclave");
    let clip = clip.ok_or(EnclaveError::EmptyPeripheral)?;
    fill_input(private, code_len, &clip)?;
    Ok(clip)
}

fn fill_input(private: &mut MemoryRegion, code_len: usize, clip: &AudioClip) -> Result<(), EnclaveError> {
    let pcm = clip.to_pcm_bytes();
    if pcm.len() > INPUT_BUFFER_LEN {
        return Err(EnclaveError::InputTooLarge);
    }
    let mut buf = vec![0u8; INPUT_BUFFER_LEN];
    buf[..pcm.len()].copy_from_slice(&pcm);
    private.write(code_len, &buf);
    Ok(())
}

/// Which region a normal-world access targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Private,
    Shared,
}

pub struct EnclaveInstance<A> {
    id: u64,
    state: EnclaveState,
    code_len: usize,
    measurement: Option<Measurement>,
    keypair: Option<EnclaveKeyPair>,
    private: MemoryRegion,
    shared: MemoryRegion,
    core: Option<usize>,
    ledger: SwitchLedger,
    trace: TraceLog,
    platform: Sanctuary,
    peripheral: Option<SimulatedPeripheral>,
    app: A,
}

impl<A> fmt::Debug for EnclaveInstance<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnclaveInstance")
            .field("id", &self.id)
            .field("state", &self.state)
            .field("core", &self.core)
            .field("measurement", &self.measurement)
            .finish_non_exhaustive()
    }
}

impl<A: EnclaveApp> EnclaveInstance<A> {
    fn wrong_state(&self, op: &'static str) -> EnclaveError {
        EnclaveError::WrongState { op, state: self.state }
    }

    fn transition(&mut self, next: EnclaveState, op: &'static str) {
        debug_assert!(self.state.can_transition_to(next), "{} -> {next}", self.state);
        let mut fields = vec![
            ("event", "transition".to_string()),
            ("op", op.to_string()),
            ("from", self.state.to_string()),
            ("to", next.to_string()),
        ];
        if let Some(core) = self.core {
            fields.push(("core", core.to_string()));
        }
        self.trace.push(TraceEvent { enclave: self.id, fields });
        self.state = next;
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> EnclaveState {
        self.state
    }

    pub fn core_id(&self) -> Option<usize> {
        self.core
    }

    pub fn measurement(&self) -> Option<&Measurement> {
        self.measurement.as_ref()
    }

    pub fn public_key(&self) -> Option<[u8; 32]> {
        self.keypair.as_ref().map(EnclaveKeyPair::pk_bytes)
    }

    pub fn ledger(&self) -> &SwitchLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn app(&self) -> &A {
        &self.app
    }

    pub fn private_region(&self) -> &MemoryRegion {
        &self.private
    }

    pub fn shared_region(&self) -> &MemoryRegion {
        &self.shared
    }

    pub fn attach_peripheral(&mut self, p: SimulatedPeripheral) {
        self.peripheral = Some(p);
    }

    pub fn peripheral_mut(&mut self) -> Option<&mut SimulatedPeripheral> {
        self.peripheral.as_mut()
    }

    /// Overwrites part of the loaded code image before it is measured,
    /// modelling a manipulated enclave binary. Only valid in `SETUP`.
    pub fn patch_before_boot(&mut self, offset: usize, bytes: &[u8]) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Setup {
            return Err(self.wrong_state("patch_before_boot"));
        }
        if offset + bytes.len() > self.code_len {
            return Err(EnclaveError::PatchOutOfBounds);
        }
        self.private.write(offset, bytes);
        Ok(())
    }

    /// Measures the loaded image, derives the enclave key pair and signs an
    /// attestation report over `nonce`.
    pub fn boot(&mut self, nonce: &Nonce) -> Result<AttestationReport, EnclaveError> {
        if self.state != EnclaveState::Setup {
            return Err(self.wrong_state("boot"));
        }
        let m = measure(&self.private.bytes()[..self.code_len]);
        let kp = derive_enclave_keypair(self.platform.identity(), &m);
        let report = sign_attestation(&kp, &m, nonce);
        self.measurement = Some(m);
        self.keypair = Some(kp);
        self.transition(EnclaveState::Booted, "boot");
        Ok(report)
    }

    /// Fresh attestation for a verifier-supplied nonce.
    pub fn attest(&self, nonce: &Nonce) -> Result<AttestationReport, EnclaveError> {
        match (&self.keypair, &self.measurement, self.state) {
            (Some(kp), Some(m), EnclaveState::Booted | EnclaveState::Executing) => Ok(sign_attestation(kp, m, nonce)),
            _ => Err(self.wrong_state("attest")),
        }
    }

    pub fn execute(&mut self, req: A::Request) -> Result<A::Response, EnclaveError> {
        if !matches!(self.state, EnclaveState::Booted | EnclaveState::Executing) {
            return Err(self.wrong_state("execute"));
        }
        if self.state == EnclaveState::Booted {
            self.transition(EnclaveState::Executing, "execute");
        }
        let mut env = EnclaveEnv {
            id: self.id,
            code_len: self.code_len,
            measurement: self.measurement.as_ref().expect("booted"),
            keypair: self.keypair.as_ref().expect("booted"),
            private: &mut self.private,
            shared: &mut self.shared,
            ledger: &mut self.ledger,
            trace: &mut self.trace,
            peripheral: self.peripheral.as_mut(),
        };
        Ok(self.app.handle(&mut env, req))
    }

    /// Secure-world read of `peripheral` into the private input buffer;
    /// costs two world switches.
    pub fn world_switch_read(&mut self, peripheral: &mut SimulatedPeripheral) -> Result<AudioClip, EnclaveError> {
        if self.state != EnclaveState::Executing {
            return Err(self.wrong_state("world_switch_read"));
        }
        secure_read(self.id, self.code_len, peripheral, &mut self.private, &mut self.ledger, &mut self.trace)
    }

    /// Hands the core back to the OS; private memory stays locked.
    pub fn park(&mut self) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Executing {
            return Err(self.wrong_state("park"));
        }
        self.transition(EnclaveState::Parked, "park");
        if let Some(core) = self.core.take() {
            self.platform.cores.release(core);
        }
        Ok(())
    }

    /// Maps the locked memory onto the lowest free core.
    pub fn resume(&mut self) -> Result<(), EnclaveError> {
        if self.state != EnclaveState::Parked {
            return Err(self.wrong_state("resume"));
        }
        let core = self.platform.cores.reserve_any().ok_or(EnclaveError::NoFreeCore)?;
        self.core = Some(core);
        self.transition(EnclaveState::Executing, "resume");
        Ok(())
    }

    /// Zeroizes then unlocks the private region and releases the core.
    pub fn teardown(&mut self) -> Result<(), EnclaveError> {
        if !matches!(self.state, EnclaveState::Booted | EnclaveState::Executing | EnclaveState::Parked) {
            return Err(self.wrong_state("teardown"));
        }
        self.app.wipe();
        self.private.zeroize();
        self.private.unlock();
        self.keypair = None;
        self.transition(EnclaveState::TornDown, "teardown");
        if let Some(core) = self.core.take() {
            self.platform.cores.release(core);
        }
        Ok(())
    }

    pub fn os_read_memory(&self, region: RegionKind) -> Result<Vec<u8>, AccessDenied> {
        match region {
            RegionKind::Private => self.private.os_read(),
            RegionKind::Shared => self.shared.os_read(),
        }
    }

    pub fn os_write_memory(&mut self, region: RegionKind, offset: usize, bytes: &[u8]) -> Result<(), AccessDenied> {
        match region {
            RegionKind::Private => self.private.os_write(offset, bytes),
            RegionKind::Shared => self.shared.os_write(offset, bytes),
        }
    }

    /// Everything the normal world can currently read.
    pub fn os_visible_memory(&self) -> Vec<Vec<u8>> {
        [RegionKind::Private, RegionKind::Shared].into_iter().filter_map(|r| self.os_read_memory(r).ok()).collect()
    }
}

impl<A> Drop for EnclaveInstance<A> {
    fn drop(&mut self) {
        self.private.zeroize();
        if let Some(core) = self.core.take() {
            self.platform.cores.release(core);
        }
    }
}
