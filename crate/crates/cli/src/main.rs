use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use trunlearn::dataset::SplitResult;
use trunlearn::eval::{test_metrics, timing_report, utility_report, EvalReport, TimingRecord};
use trunlearn::model::ParamVector;
use trunlearn::pipeline::{
    kl_sweep, load_data, mia_auc, mia_sets, retrain, run_method, split_from_config, train_base, RunConfig,
    SCHEMA_VERSION,
};
use trunlearn::unlearn::{Method, TrStep};
use trunlearn::Error;

const OUT_ENV: &str = "TRUNLEARN_OUT";

#[derive(Parser)]
#[command(name = "trunlearn", version, about = "Certified unlearning with trust-region Newton steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides $TRUNLEARN_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the sweep worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train w* on the full training set and draw the forget split.
    Train,
    /// Retrain from scratch on the retained indices of a split.
    Retrain {
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Run the configured unlearning methods and certify them.
    Unlearn {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Compare certified models with the retrained model.
    Eval {
        #[arg(long)]
        retrained: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Run the KL sweep.
    Sweep,
    /// Print the TR trace stored in a result file.
    InspectTrace { result: PathBuf },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Compute(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Format { .. } | Error::InfeasibleSpec(_) => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Compute(other.to_string()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Compute(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config_hash: String,
    schema_version: u32,
    tool_version: &'static str,
    seed: u64,
    /// Paths relative to the output directory.
    artifacts: Vec<String>,
    started_unix: f64,
    finished_unix: f64,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    started: f64,
    artifacts: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn load_config(cli: &Cli) -> CmdResult<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Validation("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.sweep.workers = w;
    }
    // relative data paths resolve against the config file's directory
    if let trunlearn::pipeline::DataSource::Idx { images, labels } = &mut cfg.data.source {
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [images, labels] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> CmdResult {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.artifacts.push(rel.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CmdResult {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Compute(e.to_string()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(self, command: &'static str) -> CmdResult {
        let manifest = RunManifest {
            command,
            config_hash: self.cfg.config_hash(),
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            artifacts: self.artifacts,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let path = self.out.join(format!("{command}.manifest.json"));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Compute(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

fn require(paths: &[&Path]) -> CmdResult {
    let missing: Vec<String> = paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("missing artifacts: {}", missing.join(", "))))
    }
}

fn load_split(path: &Path) -> CmdResult<SplitResult> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn load_model(cfg: &RunConfig, path: &Path) -> CmdResult<ParamVector> {
    let w = ParamVector::load(path)?;
    if w.len() != cfg.model.param_count() {
        return Err(Failure::Validation(format!(
            "{}: model has {} parameters, the config's model spec needs {}",
            path.display(),
            w.len(),
            cfg.model.param_count()
        )));
    }
    Ok(w)
}

fn cmd_train(mut ctx: Ctx) -> CmdResult {
    let (train, test) = load_data(&ctx.cfg)?;
    let seeds = ctx.cfg.seeds();
    let outcome = train_base(&ctx.cfg, &seeds, &train)?;
    let (train_f1, train_loss) = test_metrics(&ctx.cfg.model, &outcome.params, &train, &train.all_indices())?;
    let (test_f1, test_loss) = test_metrics(&ctx.cfg.model, &outcome.params, &test, &test.all_indices())?;
    let split = split_from_config(&ctx.cfg, &seeds, &train)?;
    ctx.write("model.pvec", &outcome.params.to_bytes())?;
    ctx.write_json("split.json", &split)?;
    ctx.write_json(
        "train_report.json",
        &json!({
            "iterations": outcome.iterations,
            "converged": outcome.converged,
            "grad_norm": outcome.grad_norm,
            "objective": outcome.loss,
            "train_f1": train_f1,
            "train_loss": train_loss,
            "test_f1": test_f1,
            "test_loss": test_loss,
            "deletion_count": split.forget_indices.len(),
            "achieved_kl": split.achieved_kl,
        }),
    )?;
    println!("train: f1={train_f1:.4} test_f1={test_f1:.4} forget={} kl={:.3e}", split.forget_indices.len(), split.achieved_kl);
    ctx.finish("train")
}

fn cmd_retrain(mut ctx: Ctx, split: Option<PathBuf>) -> CmdResult {
    let split_path = split.unwrap_or_else(|| ctx.path("split.json"));
    require(&[&split_path])?;
    let split = load_split(&split_path)?;
    let (train, _) = load_data(&ctx.cfg)?;
    let start = Instant::now();
    let outcome = retrain(&ctx.cfg, &ctx.cfg.seeds(), &train, &split)?;
    let seconds = start.elapsed().as_secs_f64();
    ctx.write("retrained.pvec", &outcome.params.to_bytes())?;
    ctx.write_json("retrain_timing.json", &json!({ "retrain_seconds": seconds }))?;
    println!("retrain: iterations={} grad_norm={:.3e}", outcome.iterations, outcome.grad_norm);
    ctx.finish("retrain")
}

#[derive(Serialize)]
struct FailedMethod {
    method: Method,
    error: String,
    sigma: f64,
}

fn cmd_unlearn(mut ctx: Ctx, model: Option<PathBuf>, split: Option<PathBuf>) -> CmdResult {
    let model_path = model.unwrap_or_else(|| ctx.path("model.pvec"));
    let split_path = split.unwrap_or_else(|| ctx.path("split.json"));
    require(&[&model_path, &split_path])?;
    let w_star = load_model(&ctx.cfg, &model_path)?;
    let split = load_split(&split_path)?;
    let (train, _) = load_data(&ctx.cfg)?;
    let seeds = ctx.cfg.seeds();
    let mut completed = 0;
    let mut timings = Vec::new();
    for method in ctx.cfg.methods.clone() {
        let dir = format!("unlearn/{}", method.name());
        match run_method(&ctx.cfg, &seeds, method, &train, &split, &w_star) {
            Ok(r) => {
                completed += 1;
                ctx.write(&format!("{dir}/pre_noise.pvec"), &r.w_pre_noise.to_bytes())?;
                ctx.write(&format!("{dir}/certified.pvec"), &r.w_certified.to_bytes())?;
                ctx.write_json(&format!("{dir}/result.json"), &r)?;
                timings.push(json!({ "method": method, "unlearn_seconds": r.seconds }));
                println!("{}: sigma={:.4e} bound={:.4e}", method.name(), r.sigma, r.bound.delta);
            }
            Err(e) => {
                eprintln!("{}: failed: {e}", method.name());
                let failed = FailedMethod { method, error: e.to_string(), sigma: f64::NAN };
                ctx.write_json(&format!("{dir}/result.json"), &failed)?;
            }
        }
    }
    ctx.write_json("unlearn/timing.json", &timings)?;
    ctx.finish("unlearn")?;
    if completed == 0 {
        return Err(Failure::Compute("every unlearning method failed".into()));
    }
    Ok(())
}

fn cmd_eval(mut ctx: Ctx, retrained: Option<PathBuf>, split: Option<PathBuf>) -> CmdResult {
    let retrained_path = retrained.unwrap_or_else(|| ctx.path("retrained.pvec"));
    let split_path = split.unwrap_or_else(|| ctx.path("split.json"));
    let certified: Vec<(Method, PathBuf)> =
        ctx.cfg.methods.iter().map(|m| (*m, ctx.path(&format!("unlearn/{}/certified.pvec", m.name())))).collect();
    require(&[&retrained_path, &split_path])?;
    let present: Vec<&(Method, PathBuf)> = certified.iter().filter(|(_, p)| p.is_file()).collect();
    if present.is_empty() {
        let listed: Vec<&Path> = certified.iter().map(|(_, p)| p.as_path()).collect();
        require(&listed)?;
    }
    let w_hat = load_model(&ctx.cfg, &retrained_path)?;
    let split = load_split(&split_path)?;
    let (train, test) = load_data(&ctx.cfg)?;
    let test_idx = test.all_indices();
    let (f, u) =
        mia_sets(&train, &split.forget_indices, &test, &test_idx, ctx.cfg.mia.class_matched, ctx.cfg.seeds().get("mia"));
    let auc_retrain = mia_auc(&ctx.cfg.model, &w_hat, &train, &f, &test, &u);
    let mut reports = serde_json::Map::new();
    let mut all_ok = present.len() == certified.len();
    for (method, path) in &certified {
        let value = if path.is_file() {
            let w = load_model(&ctx.cfg, path)?;
            match utility_report(&ctx.cfg.model, &w, &w_hat, &test, &test_idx) {
                Ok(utility) => {
                    let auc = mia_auc(&ctx.cfg.model, &w, &train, &f, &test, &u);
                    println!("{}: delta_f1={:.4} delta_mia={:.4}", method.name(), utility.delta_f1, (auc_retrain - auc).abs());
                    serde_json::to_value(EvalReport {
                        utility,
                        achieved_kl: split.achieved_kl,
                        mia_auc_retrain: auc_retrain,
                        mia_auc_unlearn: auc,
                        delta_mia: (auc_retrain - auc).abs(),
                    })
                    .map_err(|e| Failure::Compute(e.to_string()))?
                }
                Err(e) => {
                    all_ok = false;
                    json!({ "error": e.to_string() })
                }
            }
        } else {
            json!({ "error": format!("missing {}", path.display()) })
        };
        reports.insert(method.name().to_string(), value);
    }
    ctx.write_json("eval/report.json", &reports)?;
    ctx.finish("eval")?;
    if all_ok {
        Ok(())
    } else {
        Err(Failure::Compute("some evaluations did not complete".into()))
    }
}

fn cmd_sweep(mut ctx: Ctx) -> CmdResult {
    let (train, test) = load_data(&ctx.cfg)?;
    let out = kl_sweep(&ctx.cfg, &train, &test)?;
    ctx.write("sweep/series.csv", out.to_csv().as_bytes())?;
    ctx.write_json("sweep/series.json", &json!({ "rows": out.rows, "summary": out.summary() }))?;
    let timings: &[TimingRecord] = &out.timings;
    ctx.write_json("sweep/timing.json", &json!({ "runs": timings, "table": timing_report(timings) }))?;
    for s in out.summary() {
        println!(
            "point {} kl={:.4} {}: delta_f1 mean={:.4} [{:.4}, {:.4}] failures={}",
            s.point,
            s.kl_mean,
            s.method.name(),
            s.delta_f1_mean,
            s.delta_f1_min,
            s.delta_f1_max,
            s.failures
        );
    }
    ctx.finish("sweep")
}

fn cmd_inspect(path: &Path) -> CmdResult {
    require(&[path])?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let trace: Vec<TrStep> = serde_json::from_value(value.get("trace").cloned().unwrap_or(json!([])))
        .map_err(|e| Failure::Validation(format!("{}: trace: {e}", path.display())))?;
    println!(
        "{:>3} {:>12} {:>10} {:>10} {:>10} {:>10} {:>8} {:>5} {:>10} {:>10} {:>4}",
        "t", "f", "|g|", "radius", "clipped", "L", "rho", "acc", "U_t", "PR_t", "rej"
    );
    for s in &trace {
        let rho = s.rho.map_or("-".to_string(), |r| format!("{r:.3}"));
        println!(
            "{:>3} {:>12.6e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>8} {:>5} {:>10.3e} {:>10.3e} {:>4}",
            s.t, s.f, s.g_norm, s.radius, s.clipped_radius, s.lipschitz, rho, s.accepted, s.u_t, s.pr_t, s.rejections
        );
    }
    if trace.is_empty() {
        println!("(no trace recorded)");
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Command::InspectTrace { result } = &cli.command {
        return cmd_inspect(result);
    }
    let cfg = load_config(&cli)?;
    let out = output_dir(&cli, &cfg);
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let ctx = Ctx { cfg, out, started: unix_now(), artifacts: Vec::new() };
    match cli.command {
        Command::Train => cmd_train(ctx),
        Command::Retrain { split } => cmd_retrain(ctx, split),
        Command::Unlearn { model, split } => cmd_unlearn(ctx, model, split),
        Command::Eval { retrained, split } => cmd_eval(ctx, retrained, split),
        Command::Sweep => cmd_sweep(ctx),
        Command::InspectTrace { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Validation(m) => format!("validation error: {m}"),
                Failure::Compute(m) => format!("error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(f.code())
        }
    }
}
