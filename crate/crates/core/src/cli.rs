//! Command-line front end. `run` parses argv, dispatches, and maps errors to
//! exit codes: 0 success, 1 validation failure, 2 filesystem failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::numerics::{Precision, RngStream};
use crate::objective::psnr;
use crate::pipeline::data::{center_crop, read_pnm, write_ppm};
use crate::pipeline::{dataset_images, evaluate, load_checkpoint, load_images, save_checkpoint, train_stage, Checkpoint, Link, TrainConfig};
use crate::selfcheck;

#[derive(Parser, Debug)]
#[command(name = "diffjscc", version, about = "Rate-adaptive generative joint source-channel coding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one stage or all three and write the resulting checkpoint.
    Train(TrainArgs),
    /// Send one image through the link and write the reconstruction.
    Transmit(TransmitArgs),
    /// Sweep a directory of images over SNR values and write a metric table.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Run every acceptance criterion, including a full desk training run.
    Selftest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` file applied over the defaults (or over `--ckpt`'s settings).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint of the previous stage; required for `--stage 2` and `3`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Directory of PPM/PGM training images, replacing the configured dataset.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, default_value = "all", value_parser = ["1", "2", "3", "all"])]
    stage: String,
    /// Optimizer steps for every stage that runs.
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct TransmitArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Channel output as a frame file.
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Channel SNR in dB; defaults to the training SNR.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_test: Option<u32>,
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Comma-separated SNR values in dB.
    #[arg(long, default_value = "0,5,10,15")]
    snr: String,
    /// Output table; printed to stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_test: Option<u32>,
    #[arg(long, value_parser = ["32", "64"])]
    precision: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check this seed only instead of the full set.
    #[arg(long)]
    seed: Option<u64>,
}

/// Parses a single value or a comma-separated list of SNRs in dB.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::InvalidArgument(format!("bad SNR value {p:?}")))
        })
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::InvalidArgument("empty SNR list".into()));
    }
    Ok(v)
}

fn echo_config(out: &mut dyn Write, cfg: &TrainConfig) -> Result<()> {
    writeln!(out, "# resolved config")?;
    for (k, v) in cfg.to_pairs() {
        writeln!(out, "{k} = {v}")?;
    }
    Ok(())
}

fn checkpoint_with(path: &Path, n_test: Option<u32>, precision: &Option<String>) -> Result<Checkpoint> {
    let mut ckpt = load_checkpoint(path)?;
    if let Some(n) = n_test {
        ckpt.config.set("n_test", &n.to_string())?;
    }
    if let Some(p) = precision {
        ckpt.config.set("precision", p)?;
    }
    ckpt.config.validate()?;
    Ok(ckpt)
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let previous = a.ckpt.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = previous.as_ref().map(|c| c.config.clone()).unwrap_or_default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        cfg.apply_text(&text)?;
    }
    if let Some(dir) = &a.images {
        cfg.set("dataset", &dir.to_string_lossy())?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.precision {
        cfg.set("precision", p)?;
    }
    if let Some(n) = a.steps {
        let n = n as usize;
        (cfg.steps_stage1, cfg.steps_stage2, cfg.steps_stage3) = (n, n, n);
    }
    cfg.validate()?;
    echo_config(out, &cfg)?;

    let stages: Vec<u8> = match a.stage.as_str() {
        "all" => vec![1, 2, 3],
        s => vec![s.parse().expect("value_parser admits only 1, 2, 3")],
    };
    let needs_previous = stages[0] > 1;
    let mut ckpt = match (needs_previous, previous) {
        (true, None) => return Err(Error::InvalidArgument(format!("--stage {} needs --ckpt with a stage-{} checkpoint", stages[0], stages[0] - 1))),
        (false, Some(_)) => return Err(Error::InvalidArgument("stage 1 starts from scratch; drop --ckpt".into())),
        (_, p) => p,
    };
    let images = dataset_images(&cfg.dataset, cfg.seed, cfg.image_size)?;
    writeln!(out, "training on {} images", images.len())?;
    for stage in stages {
        let total = cfg.steps(stage);
        let mut log_err = None;
        let mut observer = |r: &crate::pipeline::StepRecord| {
            if (r.step + 1) % 10 == 0 || r.step + 1 == total {
                let rep = &r.report;
                if let Err(e) = writeln!(
                    out,
                    "stage {} step {:>5}/{total} loss {:.5} d_jscc {:.5} d_comp {:.5} rate_bits {:.1} k_total {:.1}",
                    r.stage,
                    r.step + 1,
                    rep.total,
                    rep.jscc_distortion,
                    rep.compression_distortion,
                    rep.rate_bits,
                    r.mean_k_total
                ) {
                    log_err.get_or_insert(e);
                }
            }
        };
        let result = train_stage(&cfg, stage, ckpt.as_ref(), &images, &mut observer)?;
        if let Some(e) = log_err {
            return Err(e.into());
        }
        ckpt = Some(result.checkpoint);
    }
    let ckpt = ckpt.expect("at least one stage ran");
    save_checkpoint(&ckpt, &a.out)?;
    writeln!(out, "wrote stage-{} checkpoint to {}", ckpt.stage, a.out.display())?;
    Ok(())
}

fn transmit(a: &TransmitArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint_with(&a.ckpt, a.n_test, &a.precision)?;
    ckpt.expect_stage_at_least(2)?;
    echo_config(out, &ckpt.config)?;
    let snr = match &a.snr {
        None => ckpt.config.snr_db_train,
        Some(s) => match parse_snr_list(s)?.as_slice() {
            [one] => *one,
            _ => return Err(Error::InvalidArgument("transmit takes a single --snr value".into())),
        },
    };
    let image = center_crop(&read_pnm(&a.input)?);
    let root = RngStream::new(a.seed);
    let (mut ch, mut sm) = (root.substream(&[1]), root.substream(&[2]));
    let n_test = ckpt.config.n_test;
    let t = match ckpt.config.precision {
        Precision::F64 => Link::<f64>::from_checkpoint(&ckpt)?.transmit(&image, snr, n_test, &mut ch, &mut sm)?,
        Precision::F32 => Link::<f32>::from_checkpoint(&ckpt)?.transmit(&image, snr, n_test, &mut ch, &mut sm)?,
    };
    write_ppm(&t.reconstruction, &a.out)?;
    if let Some(path) = &a.frame {
        std::fs::write(path, &t.frame_bytes).map_err(|e| Error::file(path, e))?;
    }
    writeln!(
        out,
        "snr {snr} dB: k_total {} cbr {:.6} rate_bits {:.1} psnr {:.2} dB",
        t.rate_map.k_total(),
        t.cbr,
        t.rate_bits,
        psnr(&image, &t.reconstruction, 1.0)?
    )?;
    Ok(())
}

/// Without `--csv` the table owns stdout and the commentary goes to stderr.
fn eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (table_out, out): (&mut dyn Write, &mut dyn Write) = if a.csv.is_some() { (err, out) } else { (out, err) };
    let ckpt = checkpoint_with(&a.ckpt, a.n_test, &a.precision)?;
    echo_config(out, &ckpt.config)?;
    let snrs = parse_snr_list(&a.snr)?;
    let images: Vec<(String, _)> = load_images(&a.images)?
        .into_iter()
        .map(|(p, t)| (p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), t))
        .collect();
    let table = evaluate(&ckpt, &images, &snrs, a.seed, ckpt.config.n_test)?;
    let csv = table.to_csv();
    match &a.csv {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::file(path, e))?;
            writeln!(out, "wrote {} rows to {}", table.row_count(), path.display())?;
        }
        None => table_out.write_all(csv.as_bytes())?,
    }
    for (s, p) in snrs.iter().zip(table.mean_psnr_by_snr(&snrs)) {
        writeln!(out, "mean psnr at {s} dB: {p:.2}")?;
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let seeds: Vec<u64> = match a.seed {
        Some(s) => vec![s],
        None => (0..selfcheck::GRADCHECK_SEEDS).collect(),
    };
    let mut all_passed = true;
    for seed in seeds {
        for r in selfcheck::gradient_reports(seed)? {
            all_passed &= r.passed();
            writeln!(
                out,
                "[{}] seed {seed} {:<18} checked {:>5} skipped {:>3} max rel err {:.2e}{}",
                if r.passed() { "PASS" } else { "FAIL" },
                r.name,
                r.checked,
                r.skipped,
                r.max_rel_err,
                if r.passed() { String::new() } else { format!(" ({})", r.worst) }
            )?;
        }
    }
    Ok(all_passed)
}

fn selftest(out: &mut dyn Write) -> Result<bool> {
    let mut outcomes = Vec::new();
    let mut emit = |o: selfcheck::Outcome, out: &mut dyn Write| -> Result<()> {
        writeln!(out, "{}", o.line())?;
        outcomes.push(o);
        Ok(())
    };
    emit(selfcheck::criterion_gradients(&mut |_, _| {}), out)?;
    for o in selfcheck::fast_criteria() {
        emit(o, out)?;
    }
    let cfg = selfcheck::desk_config();
    echo_config(out, &cfg)?;
    let run = selfcheck::desk_run(&cfg, &mut |_| {});
    for o in selfcheck::trained_criteria(&run) {
        emit(o, out)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    writeln!(out, "{} of {} checks passed", outcomes.len() - failed, outcomes.len())?;
    Ok(failed == 0)
}

/// Runs one command line and returns the process exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{}", e.render());
                0
            } else {
                let _ = write!(err, "{}", e.render());
                1
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a, out).map(|_| true),
        Command::Transmit(a) => transmit(a, out).map(|_| true),
        Command::Eval(a) => eval(a, out, err).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Selftest => selftest(out),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => {
            let _ = writeln!(err, "error: some checks failed");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
