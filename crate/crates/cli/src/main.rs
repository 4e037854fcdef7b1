use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ais_lva::channel::{add_noise_with, noise_variance, superpose, SceneDescription, SlotScene};
use ais_lva::config::{Config, Grid, ReceiverSpec};
use ais_lva::decoder::{DecodeWindow, Detector, ListConfig, Receiver};
use ais_lva::frame::{bits_to_hex, hex_to_bits, Payload, PAYLOAD_BITS, SLOT_BITS};
use ais_lva::gmsk::{make_phase_pulse, ModulationConfig};
use ais_lva::scenario::{observe_transmission, ArrivalProcess, Transmission};
use ais_lva::seed::rng_for;
use ais_lva::selftest;
use ais_lva::sweep::{per_sweep, thread_pool, throughput_sweep, two_user_sweep, SweepResult};

const PER_COLUMNS: &str = "\
CSV columns:
  detector          coherent | differential:K
  paths, candidates list sizes P and C
  power_delta_db    interferer power relative to the user of interest, dB (empty if single user)
  overlap           fraction of the data region hit by the interferer (empty if single user)
  ebn0_db           Eb/N0 of the user of interest, dB
  packets, errors   trials run and packets lost
  per               errors / packets
  ci_low, ci_high   Wilson 95% interval of the PER
  ci_half_width     (ci_high - ci_low) / 2
  wall_time_s       seconds spent on the point (only with --timing)";

const THROUGHPUT_COLUMNS: &str = "\
CSV columns:
  detector          coherent | differential:K
  paths, candidates list sizes P and C
  offered_load      mean packets per slot
  frames, slots     frames simulated and total slots
  transmitted       packets sent
  received          packets decoded correctly
  throughput        received / slots, packets per slot
  ci_half_width     Wilson 95% half width of the throughput, packets per slot
  per               1 - received / transmitted
  wall_time_s       seconds spent on the load point (only with --timing)";

/// Bad input from the user; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

#[derive(Parser)]
#[command(name = "ais-lva", version, about = "List Viterbi detection of colliding AIS packets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-user AWGN packet error rate versus Eb/N0.
    #[command(after_help = PER_COLUMNS)]
    PerSweep(PerSweepArgs),
    /// Packet error rate of the user of interest in a two-packet collision,
    /// for a grid of list sizes.
    #[command(after_help = PER_COLUMNS)]
    TwoUser(TwoUserArgs),
    /// Slotted ALOHA throughput seen by a LEO satellite.
    #[command(after_help = THROUGHPUT_COLUMNS)]
    Throughput(ThroughputArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
    /// Print the effective configuration as TOML.
    Config(ConfigArgs),
    /// Build a packet and print it as hex, optionally with its field layout.
    Encode(EncodeArgs),
    /// Send one packet through AWGN and print decoder diagnostics.
    Decode(DecodeArgs),
    /// Export a modulated packet or a multi-user scene as I/Q samples.
    Waveform(WaveformArgs),
    /// Print the states and transitions of a detector trellis.
    Trellis(TrellisArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Add a wall_time_s column (the output is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// No progress lines on standard error.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Default)]
struct ListArgs {
    /// coherent, differential (K = 3) or differential:K.
    #[arg(long)]
    detector: Option<Detector>,
    /// Survivor paths kept per state (P).
    #[arg(long, value_name = "P")]
    paths: Option<usize>,
    /// Candidates extracted at the end of the trellis (C).
    #[arg(long, value_name = "C")]
    candidates: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    /// Stop at the end of the burst and score the pulse tail.
    Burst,
    /// Decode a whole slot after the start flag.
    Slot,
}

impl From<WindowArg> for DecodeWindow {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Burst => DecodeWindow::Burst,
            WindowArg::Slot => DecodeWindow::Slot,
        }
    }
}

#[derive(Args)]
struct PerSweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    list: ListArgs,
    /// Eb/N0 grid in dB: start:stop:step, a,b,c or a single value (inf allowed).
    #[arg(long, value_name = "GRID")]
    ebn0: Option<Grid>,
    /// Packets per point at most.
    #[arg(long)]
    packets: Option<u64>,
    /// Stop a point after this many packet errors, 0 to disable.
    #[arg(long)]
    max_errors: Option<u64>,
    #[arg(long, value_enum)]
    window: Option<WindowArg>,
    /// Start the trellis from every state instead of the one fixed by the training sequence.
    #[arg(long)]
    uniform_init: bool,
}

#[derive(Args)]
struct TwoUserArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    list: ListArgs,
    /// List-size cells as PxC, comma separated (e.g. 1x1,64x256).
    #[arg(long, value_delimiter = ',', value_name = "PxC")]
    cells: Vec<String>,
    /// Fractions of the data region overlapped by the interferer.
    #[arg(long, value_delimiter = ',')]
    overlaps: Vec<f64>,
    /// Interferer power relative to the user of interest, dB.
    #[arg(long, allow_hyphen_values = true)]
    power_delta: Option<f64>,
    /// Interferer Doppler offset relative to the user of interest, Hz.
    #[arg(long, allow_hyphen_values = true)]
    doppler_delta: Option<f64>,
    #[arg(long, value_name = "GRID")]
    ebn0: Option<Grid>,
    #[arg(long)]
    packets: Option<u64>,
    #[arg(long)]
    max_errors: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrivalArg {
    Poisson,
    Fixed,
}

#[derive(Args)]
struct ThroughputArgs {
    #[command(flatten)]
    common: Common,
    /// A single receiver; overrides the configured list.
    #[command(flatten)]
    list: ListArgs,
    /// Receiver as detector(P,C), repeatable; overrides the configured list.
    #[arg(long = "receiver", value_name = "SPEC")]
    receivers: Vec<ReceiverSpec>,
    /// Offered loads in packets per slot.
    #[arg(long, value_name = "GRID")]
    loads: Option<Grid>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_enum)]
    arrivals: Option<ArrivalArg>,
    /// Eb/N0 of a vessel at nadir, dB.
    #[arg(long, allow_hyphen_values = true)]
    reference_ebn0: Option<f64>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run the checks at full size (minutes).
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PayloadArgs {
    /// 168-bit payload as 42 hex digits (MSB first); random if absent.
    #[arg(long, value_name = "HEX")]
    payload: Option<String>,
    /// Seed for the random payload, phase and noise.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl PayloadArgs {
    fn transmission(&self) -> Result<Transmission> {
        match &self.payload {
            Some(hex) => {
                let bits = hex_to_bits(hex, PAYLOAD_BITS).map_err(usage)?;
                let payload = Payload::new(bits).map_err(usage)?;
                Transmission::new(payload).map_err(usage)
            }
            None => Ok(Transmission::random(&mut rng_for(self.seed, &[0]))),
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    payload: PayloadArgs,
    /// Also print the field layout.
    #[arg(long)]
    layout: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    payload: PayloadArgs,
    #[command(flatten)]
    list: ListArgs,
    #[arg(long, default_value_t = 8.0)]
    ebn0: f64,
    #[arg(long, value_enum, default_value = "burst")]
    window: WindowArg,
    /// Print the outcome of every candidate tried.
    #[arg(long)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum IqFormat {
    /// Little-endian f64 pairs (I, Q).
    Iq,
    /// time_s,i,q rows with a header.
    Csv,
}

#[derive(Args)]
struct WaveformArgs {
    #[command(flatten)]
    payload: PayloadArgs,
    /// Scene description (TOML with [[user]] tables); each user sends a random packet.
    #[arg(long, value_name = "FILE")]
    scene: Option<PathBuf>,
    /// Eb/N0 in dB relative to a unit-gain user; inf for no noise.
    #[arg(long, default_value = "inf")]
    ebn0: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: IqFormat,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrellisArgs {
    #[arg(long, default_value = "coherent")]
    detector: Detector,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::PerSweep(a) => run_per_sweep(a)?,
        Command::TwoUser(a) => run_two_user(a)?,
        Command::Throughput(a) => run_throughput(a)?,
        Command::Selftest(a) => return run_selftest(a),
        Command::Config(a) => {
            let cfg = load_config(a.config.as_deref())?;
            print_text(&cfg.to_toml_string())?;
        }
        Command::Encode(a) => run_encode(a)?,
        Command::Decode(a) => return run_decode(a),
        Command::Waveform(a) => run_waveform(a)?,
        Command::Trellis(a) => {
            let rx = Receiver::new(ModulationConfig::default(), a.detector, ListConfig::VITERBI)?;
            print_text(&rx.trellis().dump())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes `text` to standard output in one go.
fn print_text(text: &str) -> Result<()> {
    let mut w = io::stdout().lock();
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Config::from_toml_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Config file plus the flags shared by every sweep.
fn layered(common: &Common) -> Result<Config> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn validated(cfg: Config) -> Result<Config> {
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn emit(result: &SweepResult, common: &Common) -> Result<()> {
    match &common.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = io::BufWriter::new(file);
            result.write_csv(&mut w, common.timing)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            result.write_csv(&mut w, common.timing)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn progress(quiet: bool) -> impl FnMut(&dyn fmt::Display) {
    move |line| {
        if !quiet {
            eprintln!("{line}");
        }
    }
}

fn run_per_sweep(a: PerSweepArgs) -> Result<()> {
    let mut cfg = layered(&a.common)?;
    let p = &mut cfg.per_sweep;
    if let Some(d) = a.list.detector {
        p.detector = d;
    }
    if let Some(v) = a.list.paths {
        p.paths = v;
    }
    if let Some(v) = a.list.candidates {
        p.candidates = v;
    }
    if let Some(g) = a.ebn0 {
        p.ebn0 = g;
    }
    if let Some(v) = a.packets {
        p.packets = v;
    }
    if let Some(v) = a.max_errors {
        p.max_errors = v;
    }
    if let Some(w) = a.window {
        p.window = w.into();
    }
    p.uniform_init |= a.uniform_init;
    let cfg = validated(cfg)?;
    let pool = thread_pool(cfg.workers);
    let mut log = progress(a.common.quiet);
    let result = per_sweep(&cfg.per_sweep, &cfg.modulation, cfg.seed, &pool, |r| {
        log(&format_args!(
            "{} Eb/N0 {} dB: {}/{} errors, PER {:.3e}",
            r.receiver, r.ebn0_db, r.count.errors, r.count.trials, r.per()
        ))
    })?;
    emit(&result, &a.common)
}

fn parse_cell(s: &str) -> Result<(usize, usize)> {
    let (p, c) = s
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("cell {s:?}: expected PxC")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("cell {s:?}: bad number {v:?}")))
    };
    Ok((num(p)?, num(c)?))
}

fn run_two_user(a: TwoUserArgs) -> Result<()> {
    let mut cfg = layered(&a.common)?;
    let t = &mut cfg.two_user;
    if let Some(d) = a.list.detector {
        t.detector = d;
    }
    if !a.cells.is_empty() {
        t.cells = a.cells.iter().map(|s| parse_cell(s)).collect::<Result<_>>()?;
    }
    match (a.list.paths, a.list.candidates) {
        (None, None) => {}
        (Some(p), Some(c)) => t.cells.push((p, c)),
        _ => bail!(usage("--paths and --candidates must be given together here")),
    }
    if !a.overlaps.is_empty() {
        t.overlaps = a.overlaps;
    }
    if let Some(v) = a.power_delta {
        t.power_delta_db = v;
    }
    if let Some(v) = a.doppler_delta {
        t.doppler_delta_hz = v;
    }
    if let Some(g) = a.ebn0 {
        t.ebn0 = g;
    }
    if let Some(v) = a.packets {
        t.packets = v;
    }
    if let Some(v) = a.max_errors {
        t.max_errors = v;
    }
    let cfg = validated(cfg)?;
    let pool = thread_pool(cfg.workers);
    let mut log = progress(a.common.quiet);
    let result = two_user_sweep(&cfg.two_user, &cfg.modulation, cfg.seed, &pool, |r| {
        let (delta, overlap) = r.interferer.unwrap_or_default();
        log(&format_args!(
            "{} {delta} dB, overlap {overlap}, Eb/N0 {} dB: {}/{} errors, PER {:.3e}",
            r.receiver, r.ebn0_db, r.count.errors, r.count.trials, r.per()
        ))
    })?;
    emit(&result, &a.common)
}

fn run_throughput(a: ThroughputArgs) -> Result<()> {
    let mut cfg = layered(&a.common)?;
    let t = &mut cfg.throughput;
    if !a.receivers.is_empty() {
        t.receivers = a.receivers;
    }
    if a.list.detector.is_some() || a.list.paths.is_some() || a.list.candidates.is_some() {
        t.receivers = vec![ReceiverSpec::new(
            a.list.detector.unwrap_or(Detector::Coherent),
            a.list.paths.unwrap_or(1),
            a.list.candidates.unwrap_or(1),
        )];
    }
    if let Some(g) = a.loads {
        t.loads = g;
    }
    if let Some(v) = a.slots {
        t.n_slots = v;
    }
    if let Some(v) = a.frames {
        t.n_frames = v;
    }
    if let Some(v) = a.arrivals {
        t.arrivals = match v {
            ArrivalArg::Poisson => ArrivalProcess::Poisson,
            ArrivalArg::Fixed => ArrivalProcess::Fixed,
        };
    }
    if let Some(v) = a.reference_ebn0 {
        t.link.reference_ebn0_db = v;
    }
    let cfg = validated(cfg)?;
    let pool = thread_pool(cfg.workers);
    let mut log = progress(a.common.quiet);
    let result = throughput_sweep(&cfg.throughput, &cfg.modulation, cfg.seed, &pool, |r| {
        log(&format_args!(
            "{} load {}: throughput {:.4} +- {:.4}",
            r.receiver,
            r.offered_load,
            r.throughput(),
            r.half_width()
        ))
    })?;
    emit(&result, &a.common)
}

fn run_selftest(a: SelftestArgs) -> Result<ExitCode> {
    let results = if a.full {
        vec![
            ("fcs_oracle", selftest::fcs_oracle(10_000, a.seed)),
            ("codec_round_trip", selftest::codec_round_trip(10_000, a.seed)),
            ("trellis_state_counts", selftest::state_counts()),
            ("noiseless_decode", selftest::noiseless_decode()),
            ("brute_force_lists", selftest::brute_force_lists(100, 8, 3.0, a.seed)),
            ("viterbi_reduction", selftest::viterbi_reduction(1000, 5.0, a.seed)),
            ("noise_calibration_4db", selftest::noise_calibration(4.0, 1_000_000, 3.0, a.seed)),
            ("noise_calibration_6db", selftest::noise_calibration(6.0, 1_000_000, 3.0, a.seed)),
        ]
        .into_iter()
        .map(|(name, r)| selftest::CheckResult {
            name,
            passed: r.is_ok(),
            detail: r.unwrap_or_else(|e| e),
        })
        .collect()
    } else {
        selftest::run_all(a.seed)
    };
    let mut out = String::new();
    let mut failed = 0;
    for r in &results {
        writeln!(out, "{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
        failed += usize::from(!r.passed);
    }
    print_text(&out)?;
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", results.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_encode(a: EncodeArgs) -> Result<()> {
    let tx = a.payload.transmission()?;
    let packet = &tx.packet;
    let mut out = String::new();
    writeln!(out, "payload {}", bits_to_hex(tx.payload.bits()))?;
    writeln!(out, "packet {}", bits_to_hex(&packet.bits))?;
    writeln!(out, "bits {}", packet.total_len())?;
    if a.layout {
        out += &packet.dump();
    }
    print_text(&out)
}

fn run_decode(a: DecodeArgs) -> Result<ExitCode> {
    let tx = a.payload.transmission()?;
    let list = ListConfig::new(a.list.paths.unwrap_or(1), a.list.candidates.unwrap_or(1)).map_err(usage)?;
    let rx = Receiver::new(ModulationConfig::default(), a.list.detector.unwrap_or(Detector::Coherent), list)?
        .with_window(a.window.into())
        .with_stop_criterion(!a.verbose);
    let mut rng = rng_for(a.payload.seed, &[1]);
    let obs = observe_transmission(tx, rx.config(), rx.pulse(), a.ebn0, &mut rng);
    let mut out = String::new();
    writeln!(out, "receiver {}{}", rx.detector(), rx.list())?;
    writeln!(out, "sent {}", bits_to_hex(obs.payload.bits()))?;
    let (report, ok) = match rx.decode_packet(&obs.received, &obs.target) {
        Ok(s) => {
            writeln!(out, "decoded {}", bits_to_hex(s.payload.bits()))?;
            let ok = s.payload == obs.payload;
            (s.report, ok)
        }
        Err(f) => {
            writeln!(out, "decoded none")?;
            (f.report, false)
        }
    };
    writeln!(out, "correct {ok}")?;
    out += &report.to_text();
    if a.verbose {
        for (i, o) in report.outcomes.iter().enumerate() {
            writeln!(out, "candidate {} {}", i + 1, o.as_ref().map_or("pass", |r| r.name()))?;
        }
    }
    print_text(&out)?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_waveform(a: WaveformArgs) -> Result<()> {
    let cfg = ModulationConfig::default();
    let pulse = make_phase_pulse(&cfg);
    let ebn0: f64 = match a.ebn0.trim() {
        "inf" | "+inf" => f64::INFINITY,
        s => s.parse().map_err(|_| usage(format!("bad --ebn0 {s:?}")))?,
    };
    let mut wave = match &a.scene {
        None => {
            let tx = a.payload.transmission()?;
            tx.waveform(&cfg, &pulse)
        }
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let desc = SceneDescription::from_toml_str(&text).map_err(usage)?;
            let channels = desc.channels(&cfg).map_err(usage)?;
            let users: Vec<_> = channels
                .into_iter()
                .enumerate()
                .map(|(i, ch)| {
                    let tx = Transmission::random(&mut rng_for(a.payload.seed, &[2, i as u64]));
                    (tx.waveform(&cfg, &pulse), ch)
                })
                .collect();
            let last = users.iter().map(|(_, ch)| ch.delay).fold(0.0, f64::max);
            let span = last + (SLOT_BITS + cfg.memory) as f64 * cfg.symbol_period;
            superpose(&SlotScene { users, start_time: 0.0, span })?
        }
    };
    add_noise_with(
        &mut wave,
        noise_variance(ebn0, cfg.symbol_energy, &cfg),
        &mut rng_for(a.payload.seed, &[3]),
    );
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = io::BufWriter::new(file);
            write_wave(&wave, a.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = io::BufWriter::new(stdout.lock());
            write_wave(&wave, a.format, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_wave(wave: &ais_lva::gmsk::Waveform, format: IqFormat, w: &mut impl Write) -> io::Result<()> {
    match format {
        IqFormat::Iq => wave.write_iq(w),
        IqFormat::Csv => wave.write_csv(w),
    }
}

