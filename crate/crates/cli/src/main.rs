//! `rpattn` command-line driver: one experiment per invocation.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or a run
//! aborts, 2 on configuration or usage errors.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use rpattn::analysis::scaling::{constant_dummy, dense_mechanism, linear_dummy, quadratic_dummy, rp_mechanism};
use rpattn::analysis::shift::{init_patch_embed, patch_embed, structured_image};
use rpattn::analysis::{em_agreement, export_assignment_maps, flops_estimate, measure_scaling, softmax_flops, FlopsBreakdown, SlopeBand};
use rpattn::harness::{train, write_params, Variant};
use rpattn::{gradcheck, init_params, par, rpattention_forward, AttnConfig};

use config::{BenchConfig, EmConfig, FlopsConfig, GradcheckConfig, MapsConfig, ShiftConfig, TrainFileConfig};

#[derive(Parser, Debug)]
#[command(name = "rpattn", version, about = "Representative attention experiments", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV and PGM artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic vs finite-difference gradients over several seeds.
    Gradcheck(Common),
    /// Closed-form cost of one layer.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        m: Option<u64>,
        #[arg(long)]
        c: Option<u64>,
        #[arg(long)]
        k: Option<u64>,
    },
    /// Runtime scaling with self-calibrating dummies.
    Bench(Common),
    /// Latent cosine similarity under image translation.
    Shift(Common),
    /// Train one variant on the synthetic task.
    Train(Common),
    /// Train every listed variant and check trainability and determinism.
    Ablate(Common),
    /// Gather step vs the straight-loop EM oracle.
    Emcheck(Common),
    /// Export soft assignment maps as PGM images.
    Maps(Common),
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(rpattn::Error),
}

impl From<rpattn::Error> for CliError {
    fn from(e: rpattn::Error) -> Self {
        match e {
            rpattn::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult = Result<bool, CliError>;

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_gradcheck(common: &Common) -> CliResult {
    let cfg: GradcheckConfig = load(common.config.as_deref())?;
    let attn = cfg.layer.attn();
    if cfg.seeds.is_empty() {
        return Err(CliError::Config("gradcheck needs at least one seed".into()));
    }
    let mut csv = String::from("seed,parameter,max_rel_error,max_abs_error,skipped,pass\n");
    let mut worst = (0.0f64, String::new());
    let mut all = true;
    for &seed in &cfg.seeds {
        let report = gradcheck(&attn, seed, cfg.step, cfg.tolerance)?;
        all &= report.passed;
        for e in &report.entries {
            let _ = writeln!(
                csv,
                "{seed},{},{:.6e},{:.6e},{},{}",
                e.name, e.max_rel_error, e.max_abs_error, e.skipped, e.passed
            );
            if e.max_rel_error >= worst.0 {
                worst = (e.max_rel_error, format!("{}@seed{seed}", e.name));
            }
        }
    }
    write(&common.out, "gradcheck.csv", &csv)?;
    println!(
        "gradcheck {}: {} seeds, worst relative error {:.3e} ({}), tolerance {:.1e}",
        verdict(all),
        cfg.seeds.len(),
        worst.0,
        worst.1,
        cfg.tolerance
    );
    Ok(all)
}

fn cmd_flops(common: &Common, n: Option<u64>, m: Option<u64>, c: Option<u64>, k: Option<u64>) -> CliResult {
    let mut cfg: FlopsConfig = load(common.config.as_deref())?;
    cfg.n = n.unwrap_or(cfg.n);
    cfg.m = m.unwrap_or(cfg.m);
    cfg.c = c.unwrap_or(cfg.c);
    cfg.k = k.unwrap_or(cfg.k);
    let f = flops_estimate(cfg.n, cfg.m, cfg.c, cfg.k)?;
    let dense = softmax_flops(cfg.n, cfg.c)?;
    let csv = format!(
        "{},softmax\n{},{},{},{},{},{},{},{},{},{},{dense}\n",
        FlopsBreakdown::CSV_HEADER,
        cfg.n,
        cfg.m,
        cfg.c,
        cfg.k,
        f.proj,
        f.gather,
        f.interaction,
        f.distribute,
        f.dwc,
        f.total
    );
    write(&common.out, "flops.csv", &csv)?;
    println!(
        "flops N={} M={} C={} k={}: proj={} gather={} interaction={} distribute={} dwc={} total={} (softmax {dense})",
        cfg.n, cfg.m, cfg.c, cfg.k, f.proj, f.gather, f.interaction, f.distribute, f.dwc, f.total
    );
    Ok(true)
}

fn cmd_bench(common: &Common) -> CliResult {
    let cfg: BenchConfig = load(common.config.as_deref())?;
    let dummies = [quadratic_dummy(), linear_dummy(), constant_dummy()];
    let bands = [SlopeBand::QUADRATIC_DUMMY, SlopeBand::LINEAR_DUMMY, SlopeBand::CONSTANT_DUMMY];
    let calib = measure_scaling(&dummies, &cfg.sizes, cfg.reps, cfg.warmup, cfg.iters)?;
    let calibrated = calib.mechanisms.iter().zip(bands).all(|(m, b)| b.contains(m.slope));
    let mut csv = calib.to_csv();
    let mut summary: Vec<String> = calib.mechanisms.iter().map(|m| format!("{}={:.3}", m.name, m.slope)).collect();
    let mut pass = calibrated;
    if calibrated {
        let mut mechs = vec![rp_mechanism(cfg.channels, cfg.heads, cfg.num_representatives, cfg.seed)];
        let mut mech_bands = vec![SlopeBand::RPATTENTION];
        if cfg.include_dense {
            mechs.push(dense_mechanism(cfg.channels, cfg.heads, cfg.seed));
            mech_bands.push(SlopeBand::SOFTMAX_DENSE);
        }
        let report = measure_scaling(&mechs, &cfg.sizes, cfg.reps, cfg.warmup, cfg.iters)?;
        for (m, b) in report.mechanisms.iter().zip(mech_bands) {
            pass &= b.contains(m.slope);
            summary.push(format!("{}={:.3} [{}, {}]", m.name, m.slope, b.lo, b.hi));
        }
        csv.push_str(report.to_csv().lines().skip(2).map(|l| format!("{l}\n")).collect::<String>().as_str());
    } else {
        summary.push("calibration out of band, mechanisms not measured".into());
    }
    write(&common.out, "scaling.csv", &csv)?;
    println!("bench {}: slopes {}", verdict(pass), summary.join(", "));
    Ok(pass)
}

fn cmd_shift(common: &Common) -> CliResult {
    let cfg: ShiftConfig = load(common.config.as_deref())?;
    let report = cfg.experiment().run()?;
    write(&common.out, "shift.csv", &report.to_csv())?;
    let mut pass = true;
    let mut violations = Vec::new();
    for ((&s, &rp), &pooled) in report.shifts.iter().zip(&report.cosine_rp).zip(&report.cosine_pooled) {
        if s == 0 {
            pass &= (rp - 1.0).abs() <= 1e-6 && (pooled - 1.0).abs() <= 1e-6;
        } else if rp < pooled {
            pass = false;
            violations.push(s);
        }
    }
    let last = report.shifts.len().saturating_sub(1);
    println!(
        "shift {}: {} seeds, rp>=pooled at every nonzero shift: {} (violations {:?}); at s={} rp={:.4} pooled={:.4}",
        verdict(pass),
        cfg.seeds.len(),
        violations.is_empty(),
        violations,
        report.shifts.get(last).copied().unwrap_or(0),
        report.cosine_rp.get(last).copied().unwrap_or(f64::NAN),
        report.cosine_pooled.get(last).copied().unwrap_or(f64::NAN)
    );
    Ok(pass)
}

fn parse_variant(tag: &str) -> Result<Variant, CliError> {
    Ok(tag.parse::<Variant>()?)
}

fn check_train(cfg: &TrainFileConfig) -> Result<(), CliError> {
    if !(cfg.lr > 0.0) {
        return Err(CliError::Config("learning rate must be positive".into()));
    }
    Ok(())
}

fn cmd_train(common: &Common) -> CliResult {
    let cfg: TrainFileConfig = load(common.config.as_deref())?;
    check_train(&cfg)?;
    let variant = parse_variant(&cfg.variant)?;
    let task = cfg.task.task();
    let tc = cfg.train_config(variant);
    let (model, report) = train(&task, &tc)?;
    write(&common.out, &format!("train_{variant}.csv"), &report.to_csv())?;
    write_params(&common.out.join(format!("params_{variant}.rptn")), &model.attn)?;
    let pass = report.final_loss() < report.initial_loss();
    println!(
        "train {} {variant}: loss {:.4} -> {:.4} over {} steps, eval accuracy {:.3} (chance {:.3})",
        verdict(pass),
        report.initial_loss(),
        report.final_loss(),
        tc.steps,
        report.eval_accuracy,
        1.0 / task.clusters as f64
    );
    Ok(pass)
}

fn cmd_ablate(common: &Common) -> CliResult {
    let cfg: TrainFileConfig = load(common.config.as_deref())?;
    check_train(&cfg)?;
    let variants = cfg.variants.iter().map(|t| parse_variant(t)).collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() {
        return Err(CliError::Config("ablate needs at least one variant".into()));
    }
    let task = cfg.task.task();
    let mut csv = String::from("variant,initial_loss,final_loss,train_accuracy,eval_accuracy,deterministic,pass\n");
    let mut pass = true;
    let mut parts = Vec::new();
    for v in variants {
        let tc = cfg.train_config(v);
        let (_, first) = train(&task, &tc)?;
        let (_, second) = train(&task, &tc)?;
        let deterministic = first.to_csv() == second.to_csv();
        let ok = deterministic && first.final_loss() < first.initial_loss();
        pass &= ok;
        write(&common.out, &format!("ablate_{v}.csv"), &first.to_csv())?;
        let _ = writeln!(
            csv,
            "{v},{:.12e},{:.12e},{:.6},{:.6},{deterministic},{ok}",
            first.initial_loss(),
            first.final_loss(),
            first.train_accuracy,
            first.eval_accuracy
        );
        parts.push(format!("{v} {:.3}->{:.3} acc {:.3}", first.initial_loss(), first.final_loss(), first.eval_accuracy));
    }
    write(&common.out, "ablation.csv", &csv)?;
    println!("ablate {}: {}", verdict(pass), parts.join("; "));
    Ok(pass)
}

fn cmd_emcheck(common: &Common) -> CliResult {
    let cfg: EmConfig = load(common.config.as_deref())?;
    let mut csv = String::from("trial,max_abs_diff,pass\n");
    let mut worst = 0.0f64;
    for t in 0..cfg.trials {
        let diff = em_agreement(
            cfg.seed.wrapping_add(t),
            cfg.heads,
            cfg.tokens,
            cfg.head_dim,
            cfg.num_representatives,
            cfg.epsilon,
        )?;
        worst = worst.max(diff);
        let _ = writeln!(csv, "{t},{diff:.6e},{}", diff <= cfg.tolerance);
    }
    write(&common.out, "emcheck.csv", &csv)?;
    let pass = worst <= cfg.tolerance;
    println!(
        "emcheck {}: {} trials, max abs difference {worst:.3e} (tolerance {:.1e})",
        verdict(pass),
        cfg.trials,
        cfg.tolerance
    );
    Ok(pass)
}

fn cmd_maps(common: &Common) -> CliResult {
    let cfg: MapsConfig = load(common.config.as_deref())?;
    if cfg.patch == 0 || !cfg.image_size.is_multiple_of(cfg.patch) {
        return Err(CliError::Config("image_size must be a positive multiple of patch".into()));
    }
    let g = cfg.image_size / cfg.patch;
    let attn = AttnConfig::new(cfg.channels, cfg.heads, cfg.num_representatives, g, g);
    let image = structured_image(cfg.image_size, cfg.image_size, cfg.in_channels, 0, cfg.seed);
    let embed = init_patch_embed(cfg.patch, cfg.in_channels, cfg.channels, cfg.seed.wrapping_add(1));
    let tokens = patch_embed(&image, &embed, cfg.patch)?;
    let params = init_params::<f64>(&attn, cfg.seed.wrapping_add(2))?;
    let (_, trace) = rpattention_forward(&tokens, &params, &attn)?;
    let paths = export_assignment_maps(&trace, (g, g), &common.out)?;
    println!(
        "maps PASS: wrote {} {g}x{g} assignment maps to {}",
        paths.len(),
        common.out.display()
    );
    Ok(true)
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Gradcheck(c) => cmd_gradcheck(c),
        Command::Flops { common, n, m, c, k } => cmd_flops(common, *n, *m, *c, *k),
        Command::Bench(c) => cmd_bench(c),
        Command::Shift(c) => cmd_shift(c),
        Command::Train(c) => cmd_train(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Emcheck(c) => cmd_emcheck(c),
        Command::Maps(c) => cmd_maps(c),
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("RPATTN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("RPATTN_THREADS must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    let result = thread_cap().and_then(|cap| match cap {
        Some(n) => par::with_threads(n, || dispatch(&cli)),
        None => dispatch(&cli),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
