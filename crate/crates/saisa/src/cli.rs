use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use saisa_core::config::{EncoderGeometry, ModelGeometry, PresetRegistry};
use saisa_core::cost::{flops, flops_ratio, sweep, Architecture, CostQuery, FlopsBreakdown};
use saisa_core::model::{forward, ModelWeights, TokenBatch, Variant};
use saisa_core::train::{
    eval_loss, run_stage, Checkpoint, Rule, Stage, StepLog, SyntheticTask, TrainConfig,
};
use saisa_core::verify::{corrupted_naavit_mask, masks_suite, run_suite, Check, Suite};
use saisa_core::SeededRng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, SavedCheckpoint};
use crate::error::{exit, AppError, AppResult};
use crate::presets::{relevant_flags, resolve_presets};
use crate::report::{sweep_svg, write_bench_csv, write_sweep_csv, write_train_csv, BenchRow};

pub const SCHEMA_VERSION: u32 = 1;
/// Held-out samples used for the before/after loss of `train`.
pub const EVAL_SAMPLES: usize = 32;
/// Largest per-forward cost `bench` will run.
pub const BENCH_GUARD: u64 = 50_000_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "saisa",
    version,
    about = "Inference cost model, property checks and toy training for visual-token-sparse multimodal decoders"
)]
pub struct Cli {
    /// Extra preset file; defaults to $SAISA_PRESETS
    #[arg(long, global = true, value_name = "PATH")]
    pub presets: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form inference FLOPs for one image
    Flops(FlopsArgs),
    /// FLOPs over a grid of visual and text token counts
    Sweep(SweepArgs),
    /// Run the property suites
    Verify(VerifyArgs),
    /// Two-stage training on a synthetic task
    Train(TrainArgs),
    /// Wall-clock forward time, baseline against SAISA
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    Both,
    Llava,
    Saisa,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub llm: String,
    #[arg(long)]
    pub encoder: String,
    /// Visual tokens; defaults to the encoder's
    #[arg(long)]
    pub v: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub t: usize,
    /// Override the encoder feature width
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_enum, default_value_t = ArchChoice::Both)]
    pub arch: ArchChoice,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub llm: String,
    #[arg(long)]
    pub encoder: String,
    /// `start:end:step` (inclusive) or a comma list
    #[arg(long)]
    pub v_grid: String,
    #[arg(long)]
    pub t_grid: String,
    #[arg(long)]
    pub d: Option<usize>,
    /// CSV output path
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a ratio chart
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// masks, equivalence, gradients, flops-oracle, invariants, two-stage, costs, sweep or all
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Swap in a broken NAAViT mask builder
    #[arg(long, hide = true)]
    pub corrupt_mask: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageChoice {
    Pretrain,
    Finetune,
    Both,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// saisa, baseline or pilot; taken from the checkpoint when resuming
    #[arg(long)]
    pub variant: Option<String>,
    /// copy-index, feature-argmax or constant
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_enum, default_value_t = StageChoice::Both)]
    pub stage: StageChoice,
    /// Optimizer steps; `both` gives half to pre-training
    #[arg(long, default_value_t = 300)]
    pub steps: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "saisa.ckpt")]
    pub ckpt: PathBuf,
    /// Loss CSV; defaults to the checkpoint path with a .csv extension
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from an existing checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Standard deviation of the initial weights
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    #[arg(long, default_value = "toy")]
    pub llm: String,
    #[arg(long, default_value = "toy")]
    pub encoder: String,
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Text tokens per sample
    #[arg(long)]
    pub t: Option<usize>,
    /// Pilot variant: skip the FFN on visual rows too
    #[arg(long)]
    pub pilot_frozen_visual: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "toy")]
    pub llm: String,
    #[arg(long, default_value = "toy")]
    pub encoder: String,
    #[arg(long, default_value_t = 512)]
    pub v: usize,
    #[arg(long, default_value = "16,64,256")]
    pub t_grid: String,
    #[arg(long, default_value_t = 9)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// CSV output path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> AppResult<()> {
    let presets = resolve_presets(cli.presets.as_deref())?;
    match &cli.command {
        Command::Flops(a) => cmd_flops(a, presets, out, err),
        Command::Sweep(a) => cmd_sweep(a, presets, out, err),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Train(a) => cmd_train(a, &presets, out),
        Command::Bench(a) => cmd_bench(a, &presets, out),
    }
}

fn stdout_err(e: std::io::Error) -> AppError {
    AppError::io("<stdout>", e)
}

fn lookup_llm(r: &PresetRegistry, id: &str) -> AppResult<ModelGeometry> {
    r.llm(id).map_err(|_| {
        AppError::Usage(format!(
            "unknown LLM preset `{id}` (available: {})",
            r.llm_ids().join(", ")
        ))
    })
}

fn lookup_encoder(r: &PresetRegistry, id: &str) -> AppResult<EncoderGeometry> {
    r.encoder(id).map_err(|_| {
        AppError::Usage(format!(
            "unknown encoder preset `{id}` (available: {})",
            r.encoder_ids().join(", ")
        ))
    })
}

/// Resolves the pair, applying a `--d` override to the registry so that
/// reference cross-checks see it.
fn resolve_pair(
    presets: &mut PresetRegistry,
    llm: &str,
    encoder: &str,
    d: Option<usize>,
) -> AppResult<(ModelGeometry, EncoderGeometry)> {
    let g = lookup_llm(presets, llm)?;
    let mut e = lookup_encoder(presets, encoder)?;
    if let Some(d) = d {
        e.d = d;
        presets.insert_encoder(encoder, e, "--d override")?;
    }
    Ok((g, e))
}

fn warn_flags(presets: &PresetRegistry, llm: &str, encoder: &str, err: &mut dyn Write) {
    for f in relevant_flags(presets, llm, encoder) {
        let _ = writeln!(err, "warning: reference cost mismatch: {f}");
    }
}

/// `start:end:step` (inclusive), `a,b,c` or a single value.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, String> {
    let num = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad grid value `{x}` in `{s}`"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step == 0 || a > b {
                return Err(format!("grid `{s}` needs start <= end and a positive step"));
            }
            (a..=b).step_by(step).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("grid `{s}` is neither start:end:step nor a comma list")),
    };
    if grid.is_empty() {
        return Err(format!("grid `{s}` is empty"));
    }
    Ok(grid)
}

fn breakdown_json(b: &FlopsBreakdown) -> serde_json::Value {
    json!({
        "arch": b.architecture.as_str(),
        "qkvo_proj": b.qkvo_proj,
        "attention_scores": b.attention_scores,
        "ffn": b.ffn,
        "projector": b.projector,
        "total": b.total,
        "tflops": b.tflops(),
    })
}

fn cmd_flops(
    a: &FlopsArgs,
    mut presets: PresetRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> AppResult<()> {
    let (g, e) = resolve_pair(&mut presets, &a.llm, &a.encoder, a.d)?;
    warn_flags(&presets, &a.llm, &a.encoder, err);
    let q = CostQuery::new(g, e, a.v.unwrap_or(e.v), a.t);
    let archs: &[Architecture] = match a.arch {
        ArchChoice::Both => &[Architecture::Llava, Architecture::Saisa],
        ArchChoice::Llava => &[Architecture::Llava],
        ArchChoice::Saisa => &[Architecture::Saisa],
    };
    let results = archs
        .iter()
        .map(|&arch| flops(&q, arch))
        .collect::<saisa_core::Result<Vec<_>>>()?;
    let ratio = match a.arch {
        ArchChoice::Both => Some(flops_ratio(&q)?),
        _ => None,
    };
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(stdout_err);
    match a.format {
        Format::Text => {
            w(out, format!("{} + {}: v={} t={} d={}", a.llm, a.encoder, q.v, q.t, e.d))?;
            w(
                out,
                format!(
                    "{:<6} {:>16} {:>16} {:>16} {:>16} {:>18} {:>8}",
                    "arch", "qkvo_proj", "attention", "ffn", "projector", "total", "TFLOPs"
                ),
            )?;
            for b in &results {
                w(
                    out,
                    format!(
                        "{:<6} {:>16} {:>16} {:>16} {:>16} {:>18} {:>8.2}",
                        b.architecture.as_str(),
                        b.qkvo_proj,
                        b.attention_scores,
                        b.ffn,
                        b.projector,
                        b.total,
                        b.tflops()
                    ),
                )?;
            }
            if let Some(r) = ratio {
                w(out, format!("ratio {r:.6}"))?;
            }
        }
        Format::Json => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "flops",
                "llm": a.llm,
                "encoder": a.encoder,
                "v": q.v,
                "t": q.t,
                "d": e.d,
                "results": results.iter().map(breakdown_json).collect::<Vec<_>>(),
                "ratio": ratio,
            });
            w(out, doc.to_string())?;
        }
        Format::Csv => {
            w(out, "arch,v,t,qkvo_proj,attention_scores,ffn,projector,total,tflops".into())?;
            for b in &results {
                w(
                    out,
                    format!(
                        "{},{},{},{},{},{},{},{},{:.6}",
                        b.architecture.as_str(),
                        q.v,
                        q.t,
                        b.qkvo_proj,
                        b.attention_scores,
                        b.ffn,
                        b.projector,
                        b.total,
                        b.tflops()
                    ),
                )?;
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> AppResult<()> {
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn cmd_sweep(
    a: &SweepArgs,
    mut presets: PresetRegistry,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> AppResult<()> {
    let (g, e) = resolve_pair(&mut presets, &a.llm, &a.encoder, a.d)?;
    warn_flags(&presets, &a.llm, &a.encoder, err);
    let v_grid = parse_grid(&a.v_grid).map_err(AppError::Usage)?;
    let t_grid = parse_grid(&a.t_grid).map_err(AppError::Usage)?;
    let rows = sweep(&g, &e, &v_grid, &t_grid)?;
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).expect("writing to memory");
    write_file(&a.out, &csv)?;
    if let Some(svg) = &a.svg {
        let title = format!("{} + {}: saisa / llava FLOPs", a.llm, a.encoder);
        write_file(svg, sweep_svg(&rows, &title).as_bytes())?;
    }
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display()).map_err(stdout_err)
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> AppResult<()> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(&a.suite).map_err(|e| AppError::Usage(e.to_string()))?]
    };
    let mut checks: Vec<Check> = Vec::new();
    for s in suites {
        if s == Suite::Masks && a.corrupt_mask {
            checks.extend(masks_suite(corrupted_naavit_mask));
        } else {
            checks.extend(run_suite(s));
        }
    }
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    match a.format {
        Format::Json => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "verify",
                "passed": failed.is_empty(),
                "checks": checks.iter().map(|c| json!({
                    "suite": c.suite.as_str(),
                    "name": c.name,
                    "passed": c.passed,
                    "detail": c.detail,
                })).collect::<Vec<_>>(),
            });
            writeln!(out, "{doc}").map_err(stdout_err)?;
        }
        _ => {
            for c in &checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                let detail = if c.detail.is_empty() {
                    String::new()
                } else {
                    format!("  ({})", c.detail)
                };
                writeln!(out, "{mark}  {:<13} {}{detail}", c.suite.as_str(), c.name)
                    .map_err(stdout_err)?;
            }
            writeln!(out, "{} of {} checks passed", checks.len() - failed.len(), checks.len())
                .map_err(stdout_err)?;
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failed
            .iter()
            .map(|c| format!("[{}] {}", c.suite.as_str(), c.name))
            .collect();
        Err(AppError::VerifyFailed(names.join("; ")))
    }
}

fn usage(e: saisa_core::Error) -> AppError {
    AppError::Usage(e.to_string())
}

/// Flag value, checked against the checkpoint's when resuming.
fn merge<T: PartialEq + std::fmt::Debug>(
    flag: Option<T>,
    recorded: Option<T>,
    default: T,
    what: &str,
) -> AppResult<T> {
    match (flag, recorded) {
        (Some(f), Some(r)) if f != r => Err(AppError::Usage(format!(
            "--{what} {f:?} conflicts with the checkpoint's {r:?}"
        ))),
        (Some(f), _) => Ok(f),
        (None, Some(r)) => Ok(r),
        (None, None) => Ok(default),
    }
}

fn cmd_train(a: &TrainArgs, presets: &PresetRegistry, out: &mut dyn Write) -> AppResult<()> {
    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let rec_task = resumed.as_ref().and_then(|s| s.task);
    let rec_variant = resumed.as_ref().map(|s| s.checkpoint.weights.variant);

    let variant = match &a.variant {
        Some(v) => Some(Variant::parse(v).map_err(usage)?),
        None => None,
    };
    let variant = match (variant, rec_variant) {
        (None, None) => {
            return Err(AppError::Usage("--variant is required unless resuming".into()))
        }
        (v, r) => merge(v, r, Variant::Saisa, "variant")?,
    };
    let rule = match &a.task {
        Some(r) => Some(Rule::parse(r).map_err(usage)?),
        None => None,
    };
    let rule = merge(rule, rec_task.map(|t| t.rule), Rule::FeatureArgmax, "task")?;
    let seed = merge(
        a.seed,
        resumed.as_ref().map(|s| s.checkpoint.seed),
        1,
        "seed",
    )?;
    let vocab = merge(a.vocab, resumed.as_ref().map(|s| s.checkpoint.weights.vocab), 16, "vocab")?;
    let t = merge(a.t, rec_task.map(|t| t.t), 5, "t")?;

    let (llm_id, enc_id, mut ckpt) = match resumed {
        Some(s) => (s.llm_preset, s.encoder_preset, s.checkpoint),
        None => {
            let g = lookup_llm(presets, &a.llm)?;
            let e = lookup_encoder(presets, &a.encoder)?;
            let mut w = ModelWeights::init(variant, g, e, vocab, a.init_std, seed).map_err(usage)?;
            w.pilot_frozen_visual = a.pilot_frozen_visual;
            (a.llm.clone(), a.encoder.clone(), Checkpoint::fresh(w, seed))
        }
    };
    let enc = ckpt.weights.encoder;
    let task = SyntheticTask {
        seed,
        vocab,
        v: enc.v,
        d: enc.d,
        t,
        rule,
    };
    task.validate().map_err(usage)?;

    let plan: Vec<(Stage, u64)> = match a.stage {
        StageChoice::Pretrain => vec![(Stage::Pretrain, a.steps)],
        StageChoice::Finetune => vec![(Stage::Finetune, a.steps)],
        StageChoice::Both => vec![
            (Stage::Pretrain, a.steps / 2),
            (Stage::Finetune, a.steps - a.steps / 2),
        ],
    };
    if ckpt.stage == Stage::Finetune && plan[0].0 == Stage::Pretrain {
        return Err(AppError::Core(saisa_core::Error::StageRegression {
            from: Stage::Finetune.as_str(),
            to: Stage::Pretrain.as_str(),
        }));
    }

    let initial = eval_loss(&ckpt.weights, &task, EVAL_SAMPLES)?;
    let mut log: Vec<StepLog> = Vec::new();
    for &(stage, steps) in &plan {
        if steps == 0 {
            continue;
        }
        let cfg = TrainConfig::new(stage, steps, a.batch, a.lr);
        let (next, l) = run_stage(ckpt, &task, &cfg).map_err(|e| match e {
            saisa_core::Error::NonFinite(_) => AppError::Core(e),
            other => usage(other),
        })?;
        ckpt = next;
        log.extend(l);
    }
    let final_loss = eval_loss(&ckpt.weights, &task, EVAL_SAMPLES)?;

    let saved = SavedCheckpoint {
        checkpoint: ckpt,
        llm_preset: llm_id,
        encoder_preset: enc_id,
        task: Some(task),
    };
    save_checkpoint(&saved, &a.ckpt)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.ckpt.with_extension("csv"));
    let mut csv = Vec::new();
    write_train_csv(&log, &mut csv).expect("writing to memory");
    write_file(&log_path, &csv)?;

    let ck = &saved.checkpoint;
    let stages: Vec<String> = plan
        .iter()
        .filter(|p| p.1 > 0)
        .map(|(s, n)| format!("{} ({n} steps)", s.as_str()))
        .collect();
    match a.format {
        Format::Json => {
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "train",
                "variant": variant.as_str(),
                "task": rule.as_str(),
                "seed": seed,
                "stage": ck.stage.as_str(),
                "steps_run": log.len(),
                "total_steps": ck.step,
                "initial_eval_loss": initial,
                "final_eval_loss": final_loss,
                "first_step_loss": log.first().map(|s| s.loss),
                "last_step_loss": log.last().map(|s| s.loss),
                "checkpoint": a.ckpt.display().to_string(),
                "log": log_path.display().to_string(),
            });
            writeln!(out, "{doc}").map_err(stdout_err)?;
        }
        _ => {
            writeln!(
                out,
                "{} on {} (seed {seed}): {}",
                variant.as_str(),
                rule.as_str(),
                if stages.is_empty() { "no steps".into() } else { stages.join(" + ") }
            )
            .map_err(stdout_err)?;
            writeln!(
                out,
                "eval loss {initial:.4} -> {final_loss:.4} ({:.1}% of initial)",
                100.0 * final_loss / initial
            )
            .map_err(stdout_err)?;
            writeln!(
                out,
                "wrote {} ({} at step {}) and {}",
                a.ckpt.display(),
                ck.stage.as_str(),
                ck.step,
                log_path.display()
            )
            .map_err(stdout_err)?;
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn time_forward(w: &ModelWeights, batch: &TokenBatch, warmup: usize, reps: usize) -> AppResult<f64> {
    for _ in 0..warmup {
        forward(w, batch)?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        forward(w, batch)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(times))
}

fn cmd_bench(a: &BenchArgs, presets: &PresetRegistry, out: &mut dyn Write) -> AppResult<()> {
    let g = lookup_llm(presets, &a.llm)?;
    let e = EncoderGeometry {
        v: a.v,
        ..lookup_encoder(presets, &a.encoder)?
    };
    let mut ts = parse_grid(&a.t_grid).map_err(AppError::Usage)?;
    ts.sort_unstable();
    ts.dedup();
    if a.reps == 0 {
        return Err(AppError::Usage("--reps must be positive".into()));
    }
    for &t in &ts {
        let cost = flops(&CostQuery::new(g, e, a.v, t), Architecture::Llava)?.total;
        if cost > BENCH_GUARD {
            return Err(AppError::Usage(format!(
                "v={} t={t} costs {cost} FLOPs per forward, above the bench limit of {BENCH_GUARD}",
                a.v
            )));
        }
    }
    let vocab = 16;
    let baseline = ModelWeights::init(Variant::BaselineEmbed, g, e, vocab, 0.02, 0)?;
    let saisa = ModelWeights::init(Variant::Saisa, g, e, vocab, 0.02, 0)?.with_replicated_projector()?;
    let mut rng = SeededRng::new(0);
    let mut rows = Vec::new();
    for &t in &ts {
        let z = rng.uniform_matrix(e.v, e.d, -1.0, 1.0);
        let batch = TokenBatch::new(z, (0..t).map(|i| i % vocab).collect())?;
        rows.push(BenchRow {
            t,
            v: e.v,
            baseline_ms: time_forward(&baseline, &batch, a.warmup, a.reps)?,
            saisa_ms: time_forward(&saisa, &batch, a.warmup, a.reps)?,
        });
    }
    let mut csv = Vec::new();
    write_bench_csv(&rows, &mut csv).expect("writing to memory");
    match &a.out {
        Some(p) => {
            write_file(p, &csv)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), p.display()).map_err(stdout_err)?;
        }
        None => out.write_all(&csv).map_err(stdout_err)?,
    }
    for r in &rows {
        writeln!(out, "t={}: saisa/baseline time {:.3}", r.t, r.ratio()).map_err(stdout_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("64:256:64").unwrap(), vec![64, 128, 192, 256]);
        assert_eq!(parse_grid("1,5, 16").unwrap(), vec![1, 5, 16]);
        assert_eq!(parse_grid("7").unwrap(), vec![7]);
        assert!(parse_grid("5:1:1").is_err());
        assert!(parse_grid("1:5:0").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
