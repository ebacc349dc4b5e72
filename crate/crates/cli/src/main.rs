use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omg_core::adversary::Scenario;
use omg_core::audio::read_wav_file;
use omg_core::crypto::{measure, Measurement};
use omg_core::enclave::{Sanctuary, SimulatedPeripheral};
use omg_core::fixtures::{labeled_clips, reference_enclave_image, reference_model_bytes, write_fixture_dir};
use omg_core::inference::{load_model, Classification};
use omg_core::modelstore::{DirStorage, MemStorage, UntrustedStorage};
use omg_core::protocol::{
    handle_query, query_enclave, serve_queries, set_license, QueryInput, QuerySource, TcpLink, VendorServer, VendorState,
};
use omg_cli::bench::{fixture_clips, load_clip_dir, run_bench, Mode};
use omg_cli::pipeline::{deploy, deploy_local, Deployment};
use omg_cli::{demo_attack, format_scenario, platform, CliError};

/// Sealed keyword-spotting models served to an attested enclave.
///
/// Flags override `OMG_*` environment variables, which override defaults.
#[derive(Debug, Parser)]
#[command(name = "omg", version)]
struct Cli {
    /// More log output (repeat for debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Device identity management.
    #[command(subcommand)]
    Platform(PlatformCmd),
    #[command(subcommand)]
    Enclave(EnclaveCmd),
    #[command(subcommand)]
    Model(ModelCmd),
    /// Writes synthetic labeled clips, the reference model and enclave image.
    Fixtures(FixturesArgs),
    #[command(subcommand)]
    Vendor(VendorCmd),
    #[command(subcommand)]
    Client(ClientCmd),
    /// Runtime and real-time factor over a directory of clips.
    Bench(BenchArgs),
    /// Runs OS-level attacks and checks that each one is stopped.
    DemoAttack(DemoAttackArgs),
}

#[derive(Debug, Subcommand)]
enum PlatformCmd {
    /// Creates `platform.key` and `root.cert` in DIR.
    Init {
        #[arg(long, env = "OMG_PLATFORM_DIR")]
        dir: PathBuf,
        /// 32-byte hex seed for a reproducible identity.
        #[arg(long)]
        seed: Option<String>,
    },
}

#[derive(Debug, Args)]
struct ImageArg {
    /// Enclave application image; the built-in reference image if omitted.
    #[arg(long, env = "OMG_IMAGE")]
    image: Option<PathBuf>,
}

impl ImageArg {
    fn load(&self) -> Result<Vec<u8>, CliError> {
        match &self.image {
            Some(p) => read_file(p),
            None => Ok(reference_enclave_image()),
        }
    }
}

#[derive(Debug, Args)]
struct ModelArg {
    /// TCV1 model file; the built-in reference model if omitted.
    #[arg(long, env = "OMG_MODEL")]
    model: Option<PathBuf>,
}

impl ModelArg {
    fn load(&self) -> Result<Vec<u8>, CliError> {
        let bytes = match &self.model {
            Some(p) => read_file(p)?,
            None => reference_model_bytes(),
        };
        load_model::<f32>(&bytes)?;
        Ok(bytes)
    }
}

#[derive(Debug, Subcommand)]
enum EnclaveCmd {
    /// Prints the image measurement, and the enclave key on a given platform.
    Measure {
        #[command(flatten)]
        image: ImageArg,
        #[arg(long, env = "OMG_PLATFORM_DIR")]
        platform: Option<PathBuf>,
    },
    /// Prepares and initializes an enclave, then serves queries.
    Run {
        #[command(flatten)]
        image: ImageArg,
        #[arg(long, env = "OMG_PLATFORM_DIR")]
        platform: PathBuf,
        /// Untrusted storage for the sealed model.
        #[arg(long, env = "OMG_STORAGE_DIR")]
        storage: PathBuf,
        #[arg(long, env = "OMG_VENDOR_ADDR")]
        vendor: String,
        #[arg(long, env = "OMG_LISTEN", default_value = "127.0.0.1:7420")]
        listen: String,
        /// Directory of WAV clips feeding the simulated microphone.
        #[arg(long)]
        mic_fixture: Option<PathBuf>,
        #[arg(long, env = "OMG_CORE", default_value_t = 0)]
        core: usize,
        /// Exit after this many queries.
        #[arg(long)]
        max_queries: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Writes the reference TCV1 model.
    Reference {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct FixturesArgs {
    #[arg(long)]
    out: PathBuf,
    /// Clips per class, for all twelve classes. Without it, the 100-clip
    /// keyword benchmark set is written.
    #[arg(long)]
    per_class: Option<usize>,
    /// First variant index (held-out clips start at 0).
    #[arg(long, default_value_t = 0)]
    first_variant: u64,
}

#[derive(Debug, Subcommand)]
enum VendorCmd {
    /// Serves attestation, provisioning and key release.
    Serve {
        #[command(flatten)]
        model: ModelArg,
        /// Trusted platform root: a platform directory or `root.cert`.
        #[arg(long, env = "OMG_ROOT")]
        root: PathBuf,
        #[command(flatten)]
        image: ImageArg,
        /// Expected measurement in hex, instead of measuring an image.
        #[arg(long, conflicts_with = "image")]
        measurement: Option<String>,
        #[arg(long, env = "OMG_LISTEN", default_value = "127.0.0.1:7410")]
        listen: String,
        /// Newly attested enclaves start without a license.
        #[arg(long)]
        deny_new: bool,
    },
    /// Revokes an enclave's license.
    Revoke(LicenseArgs),
    /// Restores an enclave's license.
    Grant(LicenseArgs),
}

#[derive(Debug, Args)]
struct LicenseArgs {
    #[arg(long, env = "OMG_VENDOR_ADDR")]
    vendor: String,
    /// Enclave public key in hex (see `omg enclave measure --platform`).
    #[arg(long)]
    pk: String,
}

#[derive(Debug, Subcommand)]
enum ClientCmd {
    /// Classifies clips and prints label and score.
    ///
    /// With --enclave the clips go to a running enclave host. With --vendor
    /// an enclave is brought up in this process against that vendor.
    /// Otherwise vendor and enclave both run in-process.
    Transcribe(TranscribeArgs),
}

#[derive(Debug, Args)]
struct TranscribeArgs {
    wavs: Vec<PathBuf>,
    /// Directory of WAV clips fed through the secure microphone path.
    #[arg(long, conflicts_with = "enclave")]
    mic_fixture: Option<PathBuf>,
    #[arg(long, env = "OMG_ENCLAVE_ADDR", conflicts_with = "vendor")]
    enclave: Option<String>,
    /// Microphone reads to request from a remote enclave.
    #[arg(long, default_value_t = 0, requires = "enclave")]
    mic_reads: usize,
    #[arg(long, env = "OMG_VENDOR_ADDR")]
    vendor: Option<String>,
    #[arg(long, env = "OMG_PLATFORM_DIR")]
    platform: Option<PathBuf>,
    #[arg(long, env = "OMG_STORAGE_DIR")]
    storage: Option<PathBuf>,
    #[command(flatten)]
    image: ImageArg,
    #[command(flatten)]
    model: ModelArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Kv,
    Both,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of `<label>_<n>.wav` clips; the built-in set if omitted.
    dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "unprotected", required_unless_present = "unprotected")]
    protected: bool,
    #[arg(long)]
    unprotected: bool,
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Debug, Args)]
struct DemoAttackArgs {
    /// tamper-model, rollback, revoke, tamper-enclave, os-read. All if omitted.
    scenarios: Vec<Scenario>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(format!("read {}", path.display()), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("write {}", path.display()), e))
}

/// Prints a line and flushes, so scripts waiting on it see it immediately.
fn announce(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn print_result(source: &str, c: &Classification) {
    announce(&format!("label={} score={:.6} source={source}", c.label, c.score));
}

fn open_storage(dir: Option<&Path>) -> Result<Box<dyn UntrustedStorage>, CliError> {
    Ok(match dir {
        Some(d) => Box::new(DirStorage::open(d).map_err(|e| CliError::io(format!("open {}", d.display()), e))?),
        None => Box::new(MemStorage::new()),
    })
}

fn deploy_remote(platform_dir: &Path, image: &[u8], storage: Option<&Path>, vendor: &str, core: usize) -> Result<(Sanctuary, Deployment), CliError> {
    let platform = platform::load_platform(platform_dir)?;
    let mut link = TcpLink::new(vendor).map_err(|e| CliError::io(format!("resolve {vendor}"), e))?;
    let deployment = deploy(&platform, image, core, open_storage(storage)?, &mut link)?;
    announce(&format!("enclave_pk={}", hex::encode(deployment.enclave_pk())));
    Ok((platform, deployment))
}

fn cmd_platform(cmd: PlatformCmd) -> Result<(), CliError> {
    let PlatformCmd::Init { dir, seed } = cmd;
    let seed = seed.as_deref().map(platform::parse_seed).transpose()?;
    let identity = platform::init(&dir, seed)?;
    announce(&format!("platform_pk={}", hex::encode(identity.public_key())));
    announce(&format!("root_cert={}", platform::cert_path(&dir).display()));
    Ok(())
}

fn cmd_enclave(cmd: EnclaveCmd) -> Result<(), CliError> {
    match cmd {
        EnclaveCmd::Measure { image, platform: dir } => {
            let image = image.load()?;
            announce(&format!("measurement={}", measure(&image)));
            if let Some(dir) = dir {
                let identity = platform::load_identity(&dir)?;
                announce(&format!("enclave_pk={}", hex::encode(platform::enclave_pk(&identity, &image))));
            }
            Ok(())
        }
        EnclaveCmd::Run { image, platform: dir, storage, vendor, listen, mic_fixture, core, max_queries } => {
            let image = image.load()?;
            let (_platform, mut deployment) = deploy_remote(&dir, &image, Some(&storage), &vendor, core)?;
            if let Some(mic) = mic_fixture {
                deployment.host.attach_microphone(SimulatedPeripheral::microphone_from_dir(&mic)?);
            }
            announce(&format!("phase={}", deployment.host.phase()));
            let listener = TcpListener::bind(&listen).map_err(|e| CliError::io(format!("bind {listen}"), e))?;
            let addr = listener.local_addr().map_err(|e| CliError::io("listener address", e))?;
            announce(&format!("listening={addr}"));
            let served = serve_queries(&listener, &mut deployment.host, max_queries).map_err(|e| CliError::io("serve queries", e))?;
            log::info!("served {served} queries");
            deployment.host.teardown()?;
            Ok(())
        }
    }
}

fn cmd_fixtures(args: FixturesArgs) -> Result<(), CliError> {
    let clips = match args.per_class {
        Some(n) => labeled_clips(n, args.first_variant),
        None => fixture_clips().into_iter().map(|c| (c.truth.expect("fixture labels"), c.clip)).collect(),
    };
    let clip_dir = args.out.join("clips");
    let paths = write_fixture_dir(&clip_dir, &clips).map_err(|e| CliError::io(format!("write {}", clip_dir.display()), e))?;
    write_file(&args.out.join("model.tcv1"), &reference_model_bytes())?;
    write_file(&args.out.join("enclave.img"), &reference_enclave_image())?;
    announce(&format!("clips={} dir={}", paths.len(), clip_dir.display()));
    Ok(())
}

fn cmd_vendor(cmd: VendorCmd) -> Result<(), CliError> {
    match cmd {
        VendorCmd::Serve { model, root, image, measurement, listen, deny_new } => {
            let model = model.load()?;
            let root = platform::load_root_cert(&root)?;
            let expected: Measurement = match measurement {
                Some(hex) => hex.parse().map_err(|e| CliError::Usage(format!("measurement: {e}")))?,
                None => measure(&image.load()?),
            };
            let mut vendor = VendorState::new(model, expected, root);
            vendor.set_authorize_new(!deny_new);
            let server = VendorServer::bind(&listen, std::sync::Arc::new(std::sync::Mutex::new(vendor)))
                .map_err(|e| CliError::io(format!("bind {listen}"), e))?;
            announce(&format!("measurement={expected}"));
            announce(&format!("listening={}", server.local_addr()));
            server.join();
            Ok(())
        }
        VendorCmd::Revoke(args) => license(&args, false),
        VendorCmd::Grant(args) => license(&args, true),
    }
}

fn license(args: &LicenseArgs, authorized: bool) -> Result<(), CliError> {
    let pk = platform::parse_pk(&args.pk)?;
    set_license(args.vendor.as_str(), pk, authorized)?;
    announce(&format!("enclave_pk={} authorized={authorized}", args.pk.trim()));
    Ok(())
}

fn cmd_client(cmd: ClientCmd) -> Result<(), CliError> {
    let ClientCmd::Transcribe(args) = cmd;
    if args.wavs.is_empty() && args.mic_fixture.is_none() && args.mic_reads == 0 {
        return Err(CliError::Usage("give WAV files, --mic-fixture or --mic-reads".into()));
    }
    let clips = args
        .wavs
        .iter()
        .map(|p| Ok((p.display().to_string(), read_wav_file(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    if let Some(addr) = &args.enclave {
        for (source, clip) in clips {
            let (label, score) = query_enclave(addr.as_str(), QuerySource::Inline(clip))?;
            print_result(&source, &Classification { index: 0, label, score });
        }
        for i in 0..args.mic_reads {
            let (label, score) = query_enclave(addr.as_str(), QuerySource::Peripheral)?;
            print_result(&format!("mic:{i}"), &Classification { index: 0, label, score });
        }
        return Ok(());
    }

    let mic = args.mic_fixture.as_deref().map(SimulatedPeripheral::microphone_from_dir).transpose()?;
    let mut deployment = match &args.vendor {
        Some(vendor) => {
            let dir = args.platform.as_deref().ok_or_else(|| CliError::Usage("--vendor needs --platform".into()))?;
            deploy_remote(dir, &args.image.load()?, args.storage.as_deref(), vendor, 0)?.1
        }
        None => deploy_local(args.model.load()?, rand::random())?.deployment,
    };
    let host = &mut deployment.host;
    for (source, clip) in clips {
        print_result(&source, &handle_query(host, QueryInput::Clip(clip))?);
    }
    if let Some(mic) = mic {
        let n = mic.len();
        host.attach_microphone(mic);
        for i in 0..n {
            print_result(&format!("mic:{i}"), &handle_query(host, QueryInput::Peripheral)?);
        }
    }
    host.teardown()?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let clips = match &args.dir {
        Some(d) => load_clip_dir(d)?,
        None => fixture_clips(),
    };
    let mode = if args.protected { Mode::Protected } else { Mode::Unprotected };
    let report = run_bench(&clips, &args.model.load()?, mode)?;
    let mut out = std::io::stdout().lock();
    if matches!(args.format, Format::Table | Format::Both) {
        let _ = write!(out, "{}", report.to_table());
    }
    if matches!(args.format, Format::Kv | Format::Both) {
        let _ = write!(out, "{}", report.to_kv_lines());
    }
    Ok(())
}

fn cmd_demo_attack(args: DemoAttackArgs) -> Result<(), CliError> {
    let scenarios = if args.scenarios.is_empty() { Scenario::ALL.to_vec() } else { args.scenarios };
    let (reports, outcome) = demo_attack(&scenarios, args.seed);
    for r in &reports {
        announce(&format_scenario(r));
    }
    outcome
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Platform(cmd) => cmd_platform(cmd),
        Command::Enclave(cmd) => cmd_enclave(cmd),
        Command::Model(ModelCmd::Reference { out }) => write_file(&out, &reference_model_bytes()),
        Command::Fixtures(args) => cmd_fixtures(args),
        Command::Vendor(cmd) => cmd_vendor(cmd),
        Command::Client(cmd) => cmd_client(cmd),
        Command::Bench(args) => cmd_bench(args),
        Command::DemoAttack(args) => cmd_demo_attack(args),
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}
