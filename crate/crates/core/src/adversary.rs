//! OS-level and network adversary harness.
//!
//! [`World`] wires platform, vendor, user and one enclave host together over
//! an in-process link. Scenarios and the protocol fuzzer drive it the way a
//! compromised OS would: rewriting storage, replaying containers, patching
//! the enclave image before boot, poking at locked memory, and tampering with
//! frames on the vendor link.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use crate::crypto::{measure, PlatformIdentity};
use crate::enclave::{RegionKind, Sanctuary, SimulatedPeripheral};
use crate::fixtures::{contains_marker, keyword_clip, reference_enclave_image, reference_model_bytes};
use crate::modelstore::{MemStorage, UntrustedStorage, MODEL_SLOT};
use crate::protocol::{
    handle_query, run_initialization, run_preparation, Adversary, Direction, EnclaveHost, EnclavePk, InProcessLink, Phase,
    Prepared, ProtocolError, QueryInput, Tamper, UserClient, VendorState,
};

pub const ENCLAVE_CORE: usize = 2;

/// Where a plaintext marker was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Wire,
    Storage,
    OsMemory,
}

pub struct World {
    pub platform: Sanctuary,
    pub code: Vec<u8>,
    pub vendor: Arc<Mutex<VendorState>>,
    pub storage: MemStorage,
    pub host: EnclaveHost,
    pub user: UserClient,
    pub link: InProcessLink,
    seed: u64,
    boots: u64,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World").field("seed", &self.seed).field("host", &self.host).finish_non_exhaustive()
    }
}

impl World {
    /// Reference model and enclave image, deterministic in `seed`.
    pub fn new(seed: u64) -> Self {
        Self::build(seed, reference_model_bytes(), None)
    }

    /// Same, but the loaded enclave image is overwritten at `offset` before boot.
    pub fn with_patched_enclave(seed: u64, offset: usize, bytes: &[u8]) -> Self {
        Self::build(seed, reference_model_bytes(), Some((offset, bytes)))
    }

    pub fn with_model(seed: u64, model: Vec<u8>) -> Self {
        Self::build(seed, model, None)
    }

    fn build(seed: u64, model: Vec<u8>, patch: Option<(usize, &[u8])>) -> Self {
        let platform = Sanctuary::new(PlatformIdentity::from_seed(ChaCha8Rng::seed_from_u64(seed).gen()));
        let code = reference_enclave_image();
        let expected = measure(&code);
        let vendor = Arc::new(Mutex::new(VendorState::with_seed(model, expected, platform.root_cert().clone(), seed)));
        let storage = MemStorage::new();
        let mut enclave = platform
            .setup(&code, ENCLAVE_CORE, crate::protocol::OmgApp::new(Box::new(storage.clone())))
            .expect("fresh platform has free cores");
        if let Some((offset, bytes)) = patch {
            enclave.patch_before_boot(offset, bytes).expect("patch inside the image");
        }
        let host = EnclaveHost::boot(enclave, ChaCha20Rng::seed_from_u64(seed ^ 0xB007)).expect("setup → boot");
        let user = UserClient::new(platform.root_cert().clone(), expected);
        let link = InProcessLink::new(vendor.clone());
        Self { platform, code, vendor, storage, host, user, link, seed, boots: 1 }
    }

    pub fn prepare(&mut self) -> Result<Prepared, ProtocolError> {
        run_preparation(&mut self.link, &mut self.host, &mut self.user)
    }

    pub fn initialize(&mut self) -> Result<(), ProtocolError> {
        run_initialization(&mut self.link, &mut self.host)
    }

    pub fn query(&mut self, class: usize, variant: u64) -> Result<crate::inference::Classification, ProtocolError> {
        handle_query(&mut self.host, QueryInput::Clip(keyword_clip(class, variant)))
    }

    pub fn enclave_pk(&self) -> EnclavePk {
        self.host.enclave().public_key().expect("booted")
    }

    pub fn phase(&self) -> Phase {
        self.host.phase()
    }

    /// Tears the enclave down and starts a fresh one from the same image on
    /// the same storage, as after a device restart.
    pub fn reboot(&mut self) -> Result<(), ProtocolError> {
        let _ = self.host.teardown();
        self.boots += 1;
        let enclave = self.platform.setup(&self.code, ENCLAVE_CORE, crate::protocol::OmgApp::new(Box::new(self.storage.clone())))?;
        self.host = EnclaveHost::boot(enclave, ChaCha20Rng::seed_from_u64(self.seed ^ self.boots))?;
        Ok(())
    }

    pub fn stored_bytes(&self) -> Option<Vec<u8>> {
        self.storage.get(MODEL_SLOT).ok().flatten()
    }

    pub fn overwrite_storage(&mut self, bytes: &[u8]) {
        self.storage.put(MODEL_SLOT, bytes).expect("memory storage");
    }

    /// Surfaces currently holding the marker. Wire covers both the host's and
    /// the vendor's transcript.
    pub fn marker_exposure(&self) -> Vec<Surface> {
        let mut found = Vec::new();
        let wire = self.host.transcript().entries().iter().chain(self.link.vendor_transcript().entries());
        if wire.into_iter().any(|e| contains_marker(&e.wire)) {
            found.push(Surface::Wire);
        }
        if self.storage.dump().expect("memory storage").iter().any(|(_, b)| contains_marker(b)) {
            found.push(Surface::Storage);
        }
        if self.host.os_visible_memory().iter().any(|b| contains_marker(b)) {
            found.push(Surface::OsMemory);
        }
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    TamperModel,
    Rollback,
    Revoke,
    TamperEnclave,
    OsRead,
}

impl Scenario {
    pub const ALL: [Self; 5] = [Self::TamperModel, Self::Rollback, Self::Revoke, Self::TamperEnclave, Self::OsRead];

    pub fn name(self) -> &'static str {
        match self {
            Self::TamperModel => "tamper-model",
            Self::Rollback => "rollback",
            Self::Revoke => "revoke",
            Self::TamperEnclave => "tamper-enclave",
            Self::OsRead => "os-read",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub defended: bool,
    pub detail: String,
}

fn report(scenario: Scenario, defended: bool, detail: impl Into<String>) -> ScenarioReport {
    ScenarioReport { scenario, defended, detail: detail.into() }
}

/// Runs one attack end to end and checks that the expected defense fires.
pub fn run_scenario(scenario: Scenario, seed: u64) -> ScenarioReport {
    match scenario {
        Scenario::TamperModel => {
            let mut w = World::new(seed);
            if let Err(e) = w.prepare() {
                return report(scenario, false, format!("honest preparation failed: {e}"));
            }
            let mut bytes = w.stored_bytes().expect("container stored");
            let i = bytes.len() / 2;
            bytes[i] ^= 0x01;
            w.overwrite_storage(&bytes);
            match w.initialize() {
                Err(ProtocolError::UnsealFailed) if w.phase() != Phase::Operation => {
                    report(scenario, true, "flipped ciphertext byte rejected at unseal")
                }
                other => report(scenario, false, format!("unexpected outcome {other:?}")),
            }
        }
        Scenario::Rollback => {
            let mut w = World::new(seed);
            if let Err(e) = w.prepare() {
                return report(scenario, false, format!("honest preparation failed: {e}"));
            }
            let old = w.stored_bytes().expect("container stored");
            let new_model = reference_model_bytes();
            if let Err(e) = w.vendor.lock().unwrap().rotate_model(new_model) {
                return report(scenario, false, format!("rotation failed: {e}"));
            }
            if let Err(e) = w.prepare() {
                return report(scenario, false, format!("re-provisioning failed: {e}"));
            }
            w.overwrite_storage(&old);
            match w.initialize() {
                Err(ProtocolError::Rollback(_) | ProtocolError::UnsealFailed) if w.phase() != Phase::Operation => {
                    report(scenario, true, "stale container refused after model update")
                }
                other => report(scenario, false, format!("unexpected outcome {other:?}")),
            }
        }
        Scenario::Revoke => {
            let mut w = World::new(seed);
            if let Err(e) = w.prepare() {
                return report(scenario, false, format!("honest preparation failed: {e}"));
            }
            let pk = w.enclave_pk();
            w.vendor.lock().unwrap().revoke(&pk).expect("registered");
            match w.initialize() {
                Err(ProtocolError::LicenseDenied(_)) if w.phase() != Phase::Operation => {
                    report(scenario, true, "key release denied after revocation")
                }
                other => report(scenario, false, format!("unexpected outcome {other:?}")),
            }
        }
        Scenario::TamperEnclave => {
            let mut w = World::with_patched_enclave(seed, 0, b"X");
            match w.prepare() {
                Err(ProtocolError::AttestationRejected(_)) if w.stored_bytes().is_none() => {
                    report(scenario, true, "vendor refused to provision a modified enclave")
                }
                other => report(scenario, false, format!("unexpected outcome {other:?}")),
            }
        }
        Scenario::OsRead => {
            let mut w = World::new(seed);
            let mut denied = w.host.os_read(RegionKind::Private).is_err();
            let steps: [fn(&mut World) -> Result<(), ProtocolError>; 3] = [
                |w| w.prepare().map(|_| ()),
                |w| w.initialize(),
                |w| w.query(2, 0).map(|_| ()),
            ];
            for step in steps {
                if let Err(e) = step(&mut w) {
                    return report(scenario, false, format!("honest run failed: {e}"));
                }
                denied &= w.host.os_read(RegionKind::Private).is_err();
                denied &= w.host.enclave_mut().os_write_memory(RegionKind::Private, 0, b"evil").is_err();
            }
            let _ = w.host.teardown();
            let after = w.host.os_read(RegionKind::Private);
            let zeroed = after.as_ref().is_ok_and(|m| m.iter().all(|&b| b == 0));
            report(scenario, denied && zeroed, format!("locked reads denied: {denied}, zeroed after teardown: {zeroed}"))
        }
    }
}

/// On-path adversary choosing randomly among pass, drop, replay of an
/// earlier frame, byte flip and truncation.
#[derive(Debug)]
pub struct LinkFuzzer {
    rng: ChaCha8Rng,
    tamper_rate: f64,
    seen: Vec<Vec<u8>>,
}

impl LinkFuzzer {
    pub fn new(seed: u64, tamper_rate: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), tamper_rate, seen: Vec::new() }
    }
}

impl Adversary for LinkFuzzer {
    fn intercept(&mut self, _direction: Direction, frame: &[u8]) -> Tamper {
        self.seen.push(frame.to_vec());
        if !self.rng.gen_bool(self.tamper_rate) {
            return Tamper::Pass;
        }
        match self.rng.gen_range(0..4) {
            0 => Tamper::Drop,
            1 => Tamper::Replace(self.seen[self.rng.gen_range(0..self.seen.len())].clone()),
            2 => {
                let mut b = frame.to_vec();
                if !b.is_empty() {
                    let i = self.rng.gen_range(0..b.len());
                    b[i] ^= self.rng.gen_range(1..=255);
                }
                Tamper::Replace(b)
            }
            _ => Tamper::Replace(frame[..self.rng.gen_range(0..=frame.len())].to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuzzOp {
    Prepare,
    Initialize,
    QueryInline,
    QueryPeripheral,
    Rotate,
    Revoke,
    Grant,
    FlipStoredByte,
    RestoreOldContainer,
    OsProbe,
    Reboot,
}

const FUZZ_OPS: [FuzzOp; 11] = [
    FuzzOp::Prepare,
    FuzzOp::Initialize,
    FuzzOp::QueryInline,
    FuzzOp::QueryPeripheral,
    FuzzOp::Rotate,
    FuzzOp::Revoke,
    FuzzOp::Grant,
    FuzzOp::FlipStoredByte,
    FuzzOp::RestoreOldContainer,
    FuzzOp::OsProbe,
    FuzzOp::Reboot,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzOutcome {
    pub ops: Vec<FuzzOp>,
    pub exposures: Vec<(usize, Surface)>,
    /// Operations that ran with a model loaded in the enclave.
    pub operation_steps: usize,
    /// Key gating violations: `OPERATION` reached without a valid release.
    pub gating_violations: usize,
}

/// One randomized protocol run; the marker is scanned for after every step.
pub fn fuzz_run(seed: u64) -> FuzzOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = World::new(seed);
    if rng.gen_bool(0.5) {
        let fuzzer = LinkFuzzer::new(seed ^ 0xF022, rng.gen_range(0.05..0.4));
        w.link = InProcessLink::new(w.vendor.clone()).with_adversary(Box::new(fuzzer));
    }
    let mut mic = SimulatedPeripheral::microphone();
    for v in 0..4 {
        mic.push(keyword_clip(2 + v as usize, v));
    }
    w.host.attach_microphone(mic.clone());
    let len = rng.gen_range(3..14);
    let mut outcome = FuzzOutcome { ops: Vec::new(), exposures: Vec::new(), operation_steps: 0, gating_violations: 0 };
    let mut snapshots: Vec<Vec<u8>> = Vec::new();
    for step in 0..len {
        let op = FUZZ_OPS[rng.gen_range(0..FUZZ_OPS.len())];
        outcome.ops.push(op);
        let was_operation = w.phase() == Phase::Operation;
        let pk = w.enclave_pk();
        match op {
            FuzzOp::Prepare => {
                let _ = w.prepare();
            }
            FuzzOp::Initialize => {
                let released = w.initialize().is_ok();
                if w.phase() == Phase::Operation && !released && !was_operation {
                    outcome.gating_violations += 1;
                }
                if released {
                    let v = w.vendor.lock().unwrap();
                    let lic = v.license(&pk).copied();
                    if lic.map_or(true, |l| !l.authorized) {
                        outcome.gating_violations += 1;
                    }
                }
            }
            FuzzOp::QueryInline => {
                let _ = w.query(rng.gen_range(0..12), rng.gen());
            }
            FuzzOp::QueryPeripheral => {
                if w.host.microphone_mut().is_some_and(|m| m.is_empty()) {
                    w.host.attach_microphone(mic.clone());
                }
                let _ = handle_query(&mut w.host, QueryInput::Peripheral);
            }
            FuzzOp::Rotate => {
                let _ = w.vendor.lock().unwrap().rotate_model(reference_model_bytes());
            }
            FuzzOp::Revoke => {
                let _ = w.vendor.lock().unwrap().revoke(&pk);
            }
            FuzzOp::Grant => {
                let _ = w.vendor.lock().unwrap().grant(&pk);
            }
            FuzzOp::FlipStoredByte => {
                if let Some(mut b) = w.stored_bytes() {
                    let i = rng.gen_range(0..b.len());
                    b[i] ^= rng.gen_range(1..=255);
                    w.overwrite_storage(&b);
                }
            }
            FuzzOp::RestoreOldContainer => {
                if !snapshots.is_empty() {
                    let old = snapshots[rng.gen_range(0..snapshots.len())].clone();
                    w.overwrite_storage(&old);
                }
            }
            FuzzOp::OsProbe => {
                let _ = w.host.enclave_mut().os_write_memory(RegionKind::Private, rng.gen_range(0..64), b"\xFF");
            }
            FuzzOp::Reboot => {
                let _ = w.reboot();
            }
        }
        if let Some(b) = w.stored_bytes() {
            if !snapshots.contains(&b) {
                snapshots.push(b);
            }
        }
        if w.phase() == Phase::Operation {
            outcome.operation_steps += 1;
        }
        outcome.exposures.extend(w.marker_exposure().into_iter().map(|s| (step, s)));
    }
    let _ = w.host.teardown();
    outcome.exposures.extend(w.marker_exposure().into_iter().map(|s| (len, s)));
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_is_defended() {
        for sc in Scenario::ALL {
            let r = run_scenario(sc, 11);
            assert!(r.defended, "{sc}: {}", r.detail);
        }
    }

    #[test]
    fn scenario_names_roundtrip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert!("meltdown".parse::<Scenario>().is_err());
    }

    #[test]
    fn fuzz_runs_never_expose_the_marker() {
        for seed in 0..20 {
            let o = fuzz_run(seed);
            assert!(o.exposures.is_empty(), "seed {seed}: {:?} after {:?}", o.exposures, o.ops);
            assert_eq!(o.gating_violations, 0, "seed {seed}: {:?}", o.ops);
        }
    }

    #[test]
    fn marker_scan_detects_a_leak() {
        let mut w = World::new(1);
        assert!(w.marker_exposure().is_empty());
        w.overwrite_storage(&reference_model_bytes());
        assert_eq!(w.marker_exposure(), vec![Surface::Storage]);
    }
}
