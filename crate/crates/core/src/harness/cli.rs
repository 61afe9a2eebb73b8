//! The `mfp` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 oracle or protocol error,
//! 4 check failure. Results go to stdout, diagnostics to stderr.

use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::encoder::{EncoderConfig, PatchEncoder, TokenSource};
use crate::error::Error;
use crate::fusion::{fuse_sequence_traced, init_params};
use crate::gradcheck::{check_instance, FusionInstance, Tolerance, DEFAULT_ABS_FLOOR};
use crate::harness::formats::{self, read_caption_records, read_ground_truth, read_pope, read_synonyms};
use crate::harness::image_io::{load_image, save_image};
use crate::harness::mock::{MockMode, MockOracle};
use crate::harness::sweep::{sweep, SweepConfig};
use crate::metrics::{chair, pope_f1};
use crate::spectral::{decompose, decompose_attenuated, AttenuationSpec, CutoffFrequency, DEFAULT_CUTOFF};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mfp", version, about = "Multi-frequency image perturbation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split an image into low- and high-frequency components.
    Decompose(DecomposeArgs),
    /// Check fusion gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Encode an image and its frequency components, then fuse the tokens.
    FuseDemo(FuseDemoArgs),
    /// Score captions (CHAIR) or yes/no answers (POPE).
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Run a cutoff-frequency sweep and print CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bundled deterministic captioner speaking the oracle protocol.
    MockOracle(MockArgs),
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be a positive number, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("must lie in [0, 1], got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUTOFF, value_parser = positive, allow_negative_numbers = true)]
    cutoff: f64,
    #[arg(long)]
    out_low: PathBuf,
    #[arg(long)]
    out_high: PathBuf,
    /// Attenuation bound; without it no attenuation is applied.
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiply by gamma instead of sampling U[0, gamma).
    #[arg(long)]
    const_gamma: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    positions: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5, value_parser = positive)]
    eps: f64,
    /// Check this many instances with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    instances: u64,
}

#[derive(Debug, Args)]
struct FuseDemoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CUTOFF, value_parser = positive, allow_negative_numbers = true)]
    cutoff: f64,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fused token file.
    #[arg(long, default_value = "fused_tokens.bin")]
    out: PathBuf,
    /// Load fusion parameters instead of initializing from the seed.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    save_params: Option<PathBuf>,
    #[arg(long, value_parser = unit_interval, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long)]
    const_gamma: bool,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    Chair {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        synonyms: PathBuf,
    },
    Pope {
        /// One file per split; F1 is averaged over files.
        #[arg(long, required = true, num_args = 1..)]
        answers: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MockModeArg {
    Echo,
    Energy,
    Truth,
    Fixed,
}

#[derive(Debug, Args)]
struct MockArgs {
    #[arg(long, value_enum)]
    mode: MockModeArg,
    /// Mean squared intensity above which `energy` mode names true objects.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    threshold: f64,
    /// Comma-separated objects named when no ground truth is given.
    #[arg(long, value_delimiter = ',')]
    objects: Vec<String>,
    /// Comma-separated objects named below the energy threshold.
    #[arg(long, value_delimiter = ',')]
    hallucinated: Vec<String>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, default_value = "")]
    caption: String,
    /// Answer in reverse order after reading every request.
    #[arg(long)]
    reverse: bool,
}

enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<crate::error::ImageError> for Failure {
    fn from(e: crate::error::ImageError) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Oracle(_) => EXIT_ORACLE,
        _ => EXIT_DATA,
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Lib(Error::io("<stdout>", e))
}

/// Parses `args` (including the program name) and runs one subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Check(msg)) => {
            let _ = writeln!(err, "check failed: {msg}");
            EXIT_CHECK
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn attenuation(gamma: Option<f64>, seed: u64, constant: bool) -> Option<AttenuationSpec> {
    gamma.map(|g| {
        if constant {
            AttenuationSpec::constant(g)
        } else {
            AttenuationSpec::random(g, seed)
        }
    })
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Decompose(a) => cmd_decompose(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::FuseDemo(a) => cmd_fuse_demo(a, out),
        Command::Eval {
            which: EvalCommand::Chair { captions, synonyms },
        } => {
            let table = read_synonyms(&synonyms)?;
            let records = read_caption_records(&captions, &table)?;
            let r = chair(&records)?;
            writeln!(
                out,
                "chair_i={:.4}, chair_s={:.4}, precision={:.4}, recall={:.4}, f1={:.4}, captions={}, mentions={}",
                r.chair_i, r.chair_s, r.precision, r.recall, r.f1, r.captions, r.mentions
            )
            .map_err(io_err)
        }
        Command::Eval {
            which: EvalCommand::Pope { answers },
        } => {
            let mut total = 0.0;
            for path in &answers {
                let r = pope_f1(&read_pope(path)?).map_err(|e| Error::data(path, e.to_string()))?;
                total += r.f1;
                writeln!(
                    out,
                    "{}: precision={:.4}, recall={:.4}, f1={:.4}, accuracy={:.4}",
                    path.display(),
                    r.precision,
                    r.recall,
                    r.f1,
                    r.accuracy
                )
                .map_err(io_err)?;
            }
            writeln!(out, "average_f1={:.4}", total / answers.len() as f64).map_err(io_err)
        }
        Command::Sweep { config, out: csv_path } => {
            let cfg = SweepConfig::load(&config)?;
            let result = sweep(&cfg)?;
            let csv = result.to_csv();
            match csv_path {
                Some(p) => formats::write_bytes(&p, csv.as_bytes())?,
                None => out.write_all(csv.as_bytes()).map_err(io_err)?,
            }
            Ok(())
        }
        Command::MockOracle(a) => cmd_mock(a, out, err),
    }
}

fn cmd_decompose(a: DecomposeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cutoff = CutoffFrequency::new(a.cutoff).map_err(|e| Failure::Usage(format!("--cutoff: {e}")))?;
    let image = load_image::<f64>(&a.input)?;
    let (low, high) = match attenuation(a.gamma, a.seed, a.const_gamma) {
        Some(spec) => decompose_attenuated(&image, cutoff, &spec)?,
        None => decompose(&image, cutoff)?,
    };
    save_image(&low, &a.out_low)?;
    save_image(&high, &a.out_high)?;
    writeln!(
        out,
        "decomposed {}x{} image at cutoff {} -> {}, {}",
        image.height(),
        image.width(),
        a.cutoff,
        a.out_low.display(),
        a.out_high.display()
    )
    .map_err(io_err)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.dim == 0 || a.positions == 0 || a.instances == 0 {
        return Err(Failure::Usage("--dim, --positions and --instances must be at least 1".into()));
    }
    let tol = Tolerance {
        eps: a.eps,
        rel: a.tol,
        abs_floor: DEFAULT_ABS_FLOOR,
    };
    let mut failed = 0usize;
    for k in 0..a.instances {
        let seed = a.seed.wrapping_add(k);
        let inst = FusionInstance::<f64>::random(a.dim, a.positions, seed)?;
        let report = check_instance(&inst, &tol)?;
        for t in &report.targets {
            writeln!(
                out,
                "seed={seed} {:<4} entries={:<3} max_rel={:.3e} max_abs={:.3e} {}",
                t.target.name(),
                t.entries,
                t.max_rel,
                t.max_abs,
                if t.failures == 0 { "ok" } else { "FAIL" }
            )
            .map_err(io_err)?;
            failed += t.failures;
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} gradient entries exceed tolerance {}", a.tol)));
    }
    writeln!(out, "all gradients within tolerance {}", a.tol).map_err(io_err)
}

fn cmd_fuse_demo(a: FuseDemoArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cutoff = CutoffFrequency::new(a.cutoff).map_err(|e| Failure::Usage(format!("--cutoff: {e}")))?;
    if a.patch == 0 || a.dim == 0 {
        return Err(Failure::Usage("--patch and --dim must be at least 1".into()));
    }
    let image = load_image::<f64>(&a.input)?;
    let (low, high) = match attenuation(a.gamma, a.seed, a.const_gamma) {
        Some(spec) => decompose_attenuated(&image, cutoff, &spec)?,
        None => decompose(&image, cutoff)?,
    };
    let encoder = PatchEncoder::<f64>::new(EncoderConfig {
        patch_size: a.patch,
        dim: a.dim,
        projection_seed: a.seed,
    })?;
    let (v_o, v_l, v_h) = (encoder.encode(&image)?, encoder.encode(&low)?, encoder.encode(&high)?);
    let params = match &a.params {
        Some(p) => formats::read_params(p)?,
        None => init_params(a.dim, a.seed)?,
    };
    if params.dim() != a.dim {
        return Err(Failure::Lib(Error::Dimension(format!(
            "parameter dim {} does not match --dim {}",
            params.dim(),
            a.dim
        ))));
    }
    let (fused, traces) = fuse_sequence_traced(&v_o, &v_l, &v_h, &params)?;
    formats::write_bytes(&a.out, &formats::encode_tokens(&fused))?;
    if let Some(p) = &a.save_params {
        formats::write_bytes(p, &formats::encode_params(&params))?;
    }

    let n = fused.len() as f64;
    let shift = fused
        .tokens()
        .zip(v_o.tokens())
        .map(|(f, o)| f.iter().zip(o).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    let w_low = traces.iter().map(|t| t.weights[0]).sum::<f64>() / n;
    let values = fused.as_slice();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    writeln!(out, "tokens={} dim={}", fused.len(), fused.dim()).map_err(io_err)?;
    writeln!(out, "fused_mean={mean:.6} fused_std={:.6}", var.sqrt()).map_err(io_err)?;
    writeln!(out, "mean_shift_norm={shift:.6}").map_err(io_err)?;
    writeln!(out, "mean_weight_low={w_low:.6} mean_weight_high={:.6}", 1.0 - w_low).map_err(io_err)?;
    writeln!(out, "wrote {}", a.out.display()).map_err(io_err)
}

fn split_list(items: Vec<String>) -> Vec<String> {
    items.into_iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect()
}

fn cmd_mock(a: MockArgs, out: &mut dyn Write, _err: &mut dyn Write) -> Result<(), Failure> {
    let mode = match a.mode {
        MockModeArg::Echo => MockMode::Echo,
        MockModeArg::Energy => MockMode::Energy { threshold: a.threshold },
        MockModeArg::Truth => MockMode::Truth,
        MockModeArg::Fixed => MockMode::Fixed { caption: a.caption },
    };
    if matches!(mode, MockMode::Truth) && a.ground_truth.is_none() {
        return Err(Failure::Usage("--mode truth requires --ground-truth".into()));
    }
    let mut mock = MockOracle::new(mode);
    mock.objects = split_list(a.objects);
    let hallucinated = split_list(a.hallucinated);
    if !hallucinated.is_empty() {
        mock.hallucinated = hallucinated;
    }
    mock.ground_truth = a.ground_truth.as_deref().map(read_ground_truth).transpose()?;
    mock.reverse = a.reverse;
    let stdin = std::io::stdin();
    mock.serve(BufReader::new(stdin.lock()), out)?;
    Ok(())
}
