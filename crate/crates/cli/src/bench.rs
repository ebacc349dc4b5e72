//! Runtime and real-time-factor measurement, with and without the enclave.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use omg_core::audio::{make_fingerprint, read_wav_file, AudioClip};
use omg_core::fixtures::{benchmark_clips, label_from_path};
use omg_core::inference::{classify, load_model, Classification, LABELS};
use omg_core::protocol::{handle_query, QueryInput};

use crate::error::CliError;
use crate::pipeline::deploy_local;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Protected,
    Unprotected,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Protected => "protected",
            Self::Unprotected => "unprotected",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "protected" => Ok(Self::Protected),
            "unprotected" => Ok(Self::Unprotected),
            other => Err(format!("unknown bench mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchClip {
    pub name: String,
    pub truth: Option<usize>,
    pub clip: AudioClip,
}

/// Every `*.wav` in `dir`, sorted by name; ground truth from `<label>_<n>.wav`.
pub fn load_clip_dir(dir: &Path) -> Result<Vec<BenchClip>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(format!("read {}", dir.display()), e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no .wav files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let clip = read_wav_file(&p)?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(BenchClip { name, truth: label_from_path(&p), clip })
        })
        .collect()
}

/// The built-in 100-clip set: ten clips per keyword class.
pub fn fixture_clips() -> Vec<BenchClip> {
    let mut counters = [0usize; LABELS.len()];
    benchmark_clips()
        .into_iter()
        .map(|(class, clip)| {
            let name = format!("{}_{:03}.wav", LABELS[class], counters[class]);
            counters[class] += 1;
            BenchClip { name, truth: Some(class), clip }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub name: String,
    pub label: String,
    pub score: f64,
    pub truth: Option<usize>,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mode: Mode,
    pub queries: Vec<QueryRecord>,
    pub audio_secs: f64,
    pub switches: u64,
    pub switch_overhead_ms: f64,
}

impl BenchReport {
    pub fn per_query_ms(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.ms).collect()
    }

    pub fn total_ms(&self) -> f64 {
        self.queries.iter().map(|q| q.ms).sum()
    }

    pub fn mean_ms(&self) -> f64 {
        if self.queries.is_empty() {
            0.0
        } else {
            self.total_ms() / self.queries.len() as f64
        }
    }

    /// Total runtime over total audio duration.
    pub fn rtf(&self) -> f64 {
        if self.audio_secs == 0.0 {
            return 0.0;
        }
        self.total_ms() / 1000.0 / self.audio_secs
    }

    pub fn labels(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.label.as_str()).collect()
    }

    /// Fraction correct over the clips with a known label.
    pub fn accuracy(&self) -> Option<f64> {
        let known: Vec<_> = self.queries.iter().filter_map(|q| q.truth.map(|t| (t, q))).collect();
        if known.is_empty() {
            return None;
        }
        let correct = known.iter().filter(|(t, q)| LABELS[*t] == q.label).count();
        Some(correct as f64 / known.len() as f64)
    }

    /// One `record=query` line per clip, then one `record=summary` line.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            let truth = q.truth.map_or("-", |t| LABELS[t]);
            let _ = writeln!(
                out,
                "record=query mode={} clip={} label={} score={:.6} truth={} ms={:.3}",
                self.mode, q.name, q.label, q.score, truth, q.ms
            );
        }
        let _ = write!(
            out,
            "record=summary mode={} clips={} audio_s={:.3} total_ms={:.3} mean_ms={:.3} rtf={:.6} switches={} switch_overhead_ms={:.3}",
            self.mode,
            self.queries.len(),
            self.audio_secs,
            self.total_ms(),
            self.mean_ms(),
            self.rtf(),
            self.switches,
            self.switch_overhead_ms
        );
        if let Some(acc) = self.accuracy() {
            let _ = write!(out, " accuracy={acc:.4}");
        }
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>6} {:>10} {:>10} {:>10} {:>9} {:>9}", "mode", "clips", "accuracy", "mean ms", "rtf", "switches", "sim ms");
        let acc = self.accuracy().map_or("-".to_string(), |a| format!("{:.1}%", a * 100.0));
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>10} {:>10.3} {:>10.5} {:>9} {:>9.1}",
            self.mode.name(),
            self.queries.len(),
            acc,
            self.mean_ms(),
            self.rtf(),
            self.switches,
            self.switch_overhead_ms
        );
        out
    }
}

/// Seed for the in-process platform and vendor of protected runs.
pub const BENCH_SEED: u64 = 0x0B3C;

/// Classifies every clip. Protected mode feeds clips through the enclave's
/// microphone path; unprotected mode runs the same f32 pipeline directly.
/// Setup (provisioning, key release, model parsing) is not timed.
pub fn run_bench(clips: &[BenchClip], model: &[u8], mode: Mode) -> Result<BenchReport, CliError> {
    let audio_secs = clips.iter().map(|c| c.clip.duration_secs()).sum();
    let mut queries = Vec::with_capacity(clips.len());
    let record = |c: &BenchClip, result: Classification, ms: f64| QueryRecord {
        name: c.name.clone(),
        label: result.label,
        score: result.score,
        truth: c.truth,
        ms,
    };
    let (switches, switch_overhead_ms) = match mode {
        Mode::Unprotected => {
            let model = load_model::<f32>(model)?;
            for c in clips {
                let t = Instant::now();
                let fp = make_fingerprint(&c.clip)?;
                let result = classify(&fp, &model)?;
                queries.push(record(c, result, t.elapsed().as_secs_f64() * 1000.0));
            }
            (0, 0.0)
        }
        Mode::Protected => {
            let mut local = deploy_local(model.to_vec(), BENCH_SEED)?;
            let host = &mut local.deployment.host;
            let mut mic = omg_core::enclave::SimulatedPeripheral::microphone();
            for c in clips {
                mic.push(c.clip.clone());
            }
            host.attach_microphone(mic);
            let before = *host.enclave().ledger();
            for c in clips {
                let t = Instant::now();
                let result = handle_query(host, QueryInput::Peripheral)?;
                queries.push(record(c, result, t.elapsed().as_secs_f64() * 1000.0));
            }
            let after = *host.enclave().ledger();
            let switches = after.switches() - before.switches();
            (switches, (after.simulated_us() - before.simulated_us()) as f64 / 1000.0)
        }
    };
    Ok(BenchReport { mode, queries, audio_secs, switches, switch_overhead_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use omg_core::fixtures::{keyword_clip, reference_model_bytes};

    fn few() -> Vec<BenchClip> {
        [(2, 0), (5, 1), (11, 2)]
            .into_iter()
            .map(|(c, v)| BenchClip { name: format!("{}_{v}", LABELS[c]), truth: Some(c), clip: keyword_clip(c, v) })
            .collect()
    }

    #[test]
    fn rtf_is_runtime_over_audio() {
        let q = |ms| QueryRecord { name: String::new(), label: "yes".into(), score: 1.0, truth: None, ms };
        let r = BenchReport {
            mode: Mode::Unprotected,
            queries: vec![q(10.0), q(30.0)],
            audio_secs: 100.0,
            switches: 0,
            switch_overhead_ms: 0.0,
        };
        assert_eq!(r.rtf(), 0.04 / 100.0);
        assert_eq!(r.mean_ms(), 20.0);
        assert_eq!(r.accuracy(), None);
    }

    #[test]
    fn modes_agree_and_ledger_counts_two_switches_per_query() {
        let clips = few();
        let model = reference_model_bytes();
        let p = run_bench(&clips, &model, Mode::Protected).unwrap();
        let u = run_bench(&clips, &model, Mode::Unprotected).unwrap();
        assert_eq!(p.labels(), u.labels());
        assert_eq!(p.switches, 2 * clips.len() as u64);
        assert_eq!(p.switch_overhead_ms, 1.8);
        assert_eq!(u.switches, 0);
        assert_eq!(p.audio_secs, 3.0);
    }

    #[test]
    fn kv_lines_are_parseable() {
        let r = run_bench(&few(), &reference_model_bytes(), Mode::Unprotected).unwrap();
        let text = r.to_kv_lines();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        for line in &lines {
            for field in line.split(' ') {
                assert!(field.split_once('=').is_some(), "{field}");
            }
        }
        assert!(lines[3].starts_with("record=summary mode=unprotected clips=3"));
    }

    #[test]
    fn fixture_set_has_ten_per_keyword() {
        let clips = fixture_clips();
        assert_eq!(clips.len(), 100);
        assert_eq!(clips[0].name, "yes_000.wav");
        assert_eq!(clips[99].name, "go_009.wav");
    }

    #[test]
    fn mode_parses() {
        assert_eq!("protected".parse::<Mode>().unwrap(), Mode::Protected);
        assert!("both".parse::<Mode>().is_err());
    }
}
