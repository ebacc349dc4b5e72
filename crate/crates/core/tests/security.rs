use omg_core::adversary::{fuzz_run, run_scenario, Scenario, World};
use omg_core::enclave::{EnclaveState, RegionKind};
use omg_core::fixtures::{contains_marker, reference_model_bytes};
use omg_core::protocol::{Phase, ProtocolError};

#[test]
fn every_scenario_is_defended() {
    for seed in [1, 2, 3] {
        for sc in Scenario::ALL {
            let r = run_scenario(sc, seed);
            assert!(r.defended, "{sc} seed {seed}: {}", r.detail);
        }
    }
}

#[test]
fn revoked_enclave_never_reaches_operation() {
    let mut w = World::new(11);
    w.prepare().unwrap();
    let pk = w.enclave_pk();
    w.vendor.lock().unwrap().revoke(&pk).unwrap();
    for _ in 0..3 {
        assert!(matches!(w.initialize(), Err(ProtocolError::LicenseDenied(_))));
        assert_ne!(w.phase(), Phase::Operation);
        assert!(matches!(w.query(2, 0), Err(ProtocolError::WrongPhase { .. })));
    }
}

#[test]
fn locked_memory_is_denied_at_every_lifecycle_point() {
    let mut w = World::new(12);
    let mut seen = vec![w.host.enclave().state()];
    let check = |w: &mut World| {
        assert!(w.host.os_read(RegionKind::Private).is_err(), "{}", w.host.enclave().state());
        assert!(w.host.enclave_mut().os_write_memory(RegionKind::Private, 0, &[0xFF]).is_err());
    };
    check(&mut w);
    w.prepare().unwrap();
    seen.push(w.host.enclave().state());
    check(&mut w);
    w.initialize().unwrap();
    check(&mut w);
    w.query(4, 1).unwrap();
    seen.push(w.host.enclave().state());
    check(&mut w);
    w.host.enclave_mut().resume().unwrap();
    seen.push(w.host.enclave().state());
    check(&mut w);
    assert!(seen.contains(&EnclaveState::Booted));
    assert!(seen.contains(&EnclaveState::Executing));
    assert!(seen.contains(&EnclaveState::Parked));

    w.host.teardown().unwrap();
    let after = w.host.os_read(RegionKind::Private).unwrap();
    assert!(!after.is_empty());
    assert!(after.iter().all(|&b| b == 0));
}

#[test]
fn marker_stays_inside_the_enclave_in_an_honest_run() {
    assert!(contains_marker(&reference_model_bytes()));
    let mut w = World::new(13);
    w.prepare().unwrap();
    w.initialize().unwrap();
    w.query(6, 0).unwrap();
    assert!(w.marker_exposure().is_empty());
}

#[test]
fn fuzzed_runs_never_expose_the_marker() {
    for seed in 0..50 {
        let out = fuzz_run(seed);
        assert!(out.exposures.is_empty(), "seed {seed}: {:?}", out.exposures);
        assert_eq!(out.gating_violations, 0, "seed {seed}");
    }
}
