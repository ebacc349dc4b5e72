use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use omg_core::audio::{make_fingerprint, write_wav};
use omg_core::fixtures::{keyword_clip, reference_model};
use omg_core::inference::classify;

fn omg() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_omg"));
    for var in ["OMG_MODEL", "OMG_IMAGE", "OMG_PLATFORM_DIR", "OMG_VENDOR_ADDR", "OMG_ENCLAVE_ADDR", "OMG_STORAGE_DIR", "OMG_LISTEN", "OMG_ROOT"] {
        cmd.env_remove(var);
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn omg")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.split_whitespace().find_map(|f| f.strip_prefix(key)?.strip_prefix('='))
}

/// A long-running `omg` child, killed on drop.
struct Daemon {
    child: Child,
    lines: Vec<String>,
}

impl Daemon {
    /// Spawns and waits for its `listening=` line.
    fn spawn(cmd: &mut Command) -> Self {
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn().expect("spawn daemon");
        let mut reader = BufReader::new(child.stdout.take().unwrap());
        let mut lines = Vec::new();
        loop {
            let mut line = String::new();
            assert!(reader.read_line(&mut line).unwrap() > 0, "daemon exited early: {lines:?}");
            let done = line.starts_with("listening=");
            lines.push(line.trim().to_string());
            if done {
                break;
            }
        }
        Self { child, lines }
    }

    fn value(&self, key: &str) -> String {
        self.lines.iter().find_map(|l| field(l, key)).unwrap_or_else(|| panic!("no {key} in {:?}", self.lines)).to_string()
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_clip(dir: &Path, name: &str, class: usize, variant: u64) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, write_wav(&keyword_clip(class, variant))).unwrap();
    p
}

fn expected_label(class: usize) -> String {
    classify(&make_fingerprint(&keyword_clip(class, 0)).unwrap(), reference_model()).unwrap().label
}

fn stereo_wav() -> Vec<u8> {
    let data_len = 16u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes()); // PCM
    b.extend_from_slice(&2u16.to_le_bytes()); // channels
    b.extend_from_slice(&16_000u32.to_le_bytes());
    b.extend_from_slice(&64_000u32.to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    b.extend_from_slice(&[0; 16]);
    b
}

#[test]
fn transcribe_matches_reference_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let clip = write_clip(dir.path(), "yes_000.wav", 2, 0);
    let expected = classify(&make_fingerprint(&keyword_clip(2, 0)).unwrap(), reference_model()).unwrap();
    let out = run(omg().args(["client", "transcribe"]).arg(&clip));
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(field(&text, "label"), Some(expected.label.as_str()));
    assert_eq!(field(&text, "score"), Some(format!("{:.6}", expected.score).as_str()));
}

#[test]
fn wrong_format_wav_exits_with_audio_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stereo.wav");
    std::fs::write(&p, stereo_wav()).unwrap();
    let out = run(omg().args(["client", "transcribe"]).arg(&p));
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"), "{out:?}");
}

#[test]
fn missing_file_and_bad_usage_have_distinct_codes() {
    let out = run(omg().args(["client", "transcribe", "/nonexistent/clip.wav"]));
    assert_eq!(out.status.code(), Some(3));
    let out = run(omg().args(["bench", "--protected", "--unprotected"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(omg().args(["demo-attack", "bribe-the-vendor"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let clip = write_clip(dir.path(), "no_000.wav", 3, 0);
    let bad = dir.path().join("bad.tcv1");
    std::fs::write(&bad, b"not a model").unwrap();
    let good = dir.path().join("good.tcv1");
    assert!(run(omg().args(["model", "reference", "--out"]).arg(&good)).status.success());

    let out = run(omg().env("OMG_MODEL", &bad).args(["client", "transcribe"]).arg(&clip));
    assert_eq!(out.status.code(), Some(7), "{out:?}");
    let out = run(omg().env("OMG_MODEL", &bad).args(["client", "transcribe", "--model"]).arg(&good).arg(&clip));
    assert!(out.status.success(), "{out:?}");
}

#[test]
fn bench_modes_print_identical_labels() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(omg().args(["fixtures", "--per-class", "2", "--out"]).arg(dir.path())).status.success());
    let clips = dir.path().join("clips");
    let labels = |mode: &str| {
        let out = run(omg().args(["bench", mode, "--format", "kv"]).arg(&clips));
        assert!(out.status.success(), "{out:?}");
        let text = stdout(&out);
        let summary = text.lines().find(|l| l.starts_with("record=summary")).unwrap().to_string();
        let labels: Vec<String> =
            text.lines().filter(|l| l.starts_with("record=query")).map(|l| field(l, "label").unwrap().to_string()).collect();
        (labels, summary)
    };
    let (p, p_sum) = labels("--protected");
    let (u, u_sum) = labels("--unprotected");
    assert_eq!(p.len(), 24);
    assert_eq!(p, u);
    assert_eq!(field(&p_sum, "switches"), Some("48"));
    assert_eq!(field(&p_sum, "switch_overhead_ms"), Some("14.400"));
    assert_eq!(field(&u_sum, "switches"), Some("0"));
    assert_eq!(field(&p_sum, "audio_s"), Some("24.000"));
}

#[test]
fn demo_attack_passes_every_scenario() {
    let out = run(omg().arg("demo-attack"));
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
    let out = run(omg().args(["demo-attack", "rollback"]));
    assert_eq!(stdout(&out).lines().count(), 1);
}

#[test]
fn networked_deployment_and_revocation() {
    let dir = tempfile::tempdir().unwrap();
    let plat = dir.path().join("platform");
    let seed = "42".repeat(32);
    assert!(run(omg().args(["platform", "init", "--seed", &seed, "--dir"]).arg(&plat)).status.success());
    let measured = stdout(&run(omg().args(["enclave", "measure", "--platform"]).arg(&plat)));
    let pk = field(&measured, "enclave_pk").unwrap().to_string();

    let vendor = Daemon::spawn(omg().args(["vendor", "serve", "--listen", "127.0.0.1:0", "--root"]).arg(&plat));
    let vaddr = vendor.value("listening");
    let clips = dir.path().join("mic");
    std::fs::create_dir(&clips).unwrap();
    write_clip(&clips, "left_000.wav", 6, 0);
    write_clip(&clips, "stop_000.wav", 10, 0);

    {
        let enclave = Daemon::spawn(
            omg()
                .args(["enclave", "run", "--listen", "127.0.0.1:0", "--max-queries", "3", "--vendor", &vaddr, "--platform"])
                .arg(&plat)
                .arg("--storage")
                .arg(dir.path().join("storage"))
                .arg("--mic-fixture")
                .arg(&clips),
        );
        assert_eq!(enclave.value("enclave_pk"), pk);
        assert_eq!(enclave.value("phase"), "OPERATION");
        let inline = write_clip(dir.path(), "up_000.wav", 4, 0);
        let out = run(omg().args(["client", "transcribe", "--mic-reads", "2", "--enclave", &enclave.value("listening")]).arg(&inline));
        assert!(out.status.success(), "{out:?}");
        let labels: Vec<_> = stdout(&out).lines().map(|l| field(l, "label").unwrap().to_string()).collect();
        assert_eq!(labels, [expected_label(4), expected_label(6), expected_label(10)]);
    }
    assert!(dir.path().join("storage").join(omg_core::modelstore::MODEL_SLOT).exists());

    let transcribe = || {
        run(omg()
            .args(["client", "transcribe", "--vendor", &vaddr, "--platform"])
            .arg(&plat)
            .arg("--storage")
            .arg(dir.path().join("storage"))
            .arg(dir.path().join("up_000.wav")))
    };
    assert!(run(omg().args(["vendor", "revoke", "--vendor", &vaddr, "--pk", &pk])).status.success());
    let out = transcribe();
    assert_eq!(out.status.code(), Some(5), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("license denied"));

    assert!(run(omg().args(["vendor", "grant", "--vendor", &vaddr, "--pk", &pk])).status.success());
    let out = transcribe();
    assert!(out.status.success(), "{out:?}");

    let out = run(omg().args(["vendor", "revoke", "--vendor", &vaddr, "--pk", &"00".repeat(32)]));
    assert_eq!(out.status.code(), Some(8), "{out:?}");
}

#[test]
fn modified_image_is_refused_attestation() {
    let dir = tempfile::tempdir().unwrap();
    let plat = dir.path().join("platform");
    assert!(run(omg().args(["platform", "init", "--dir"]).arg(&plat)).status.success());
    let vendor = Daemon::spawn(omg().args(["vendor", "serve", "--listen", "127.0.0.1:0", "--root"]).arg(&plat));
    let image = dir.path().join("patched.img");
    let mut bytes = omg_core::fixtures::reference_enclave_image();
    bytes[100] ^= 0xFF;
    std::fs::write(&image, bytes).unwrap();
    let clip = write_clip(dir.path(), "go_000.wav", 11, 0);
    let out = run(omg()
        .args(["client", "transcribe", "--vendor", &vendor.value("listening"), "--platform"])
        .arg(&plat)
        .arg("--image")
        .arg(&image)
        .arg(&clip));
    assert_eq!(out.status.code(), Some(6), "{out:?}");
}
