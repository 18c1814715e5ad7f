//! `eqa`: run, replay, ablate, score and render episodes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eqa_core::agent::{run_episode, Ablation, EpisodeInput, EpisodeOutput, EpisodeTrace};
use eqa_core::eval::{self, EpisodeRow, Harness, MetricsReport};
use eqa_core::memory::{MemoryStore, MockEncoder};
use eqa_core::oracle::{EndpointConfig, Oracle, RemoteOracle, ScriptedOracle};
use eqa_core::simulator::{fixtures, Scene};
use eqa_core::HyperParams;

const TOKEN_ENV: &str = "EQA_ORACLE_TOKEN";

/// Bad invocation: exits 1 rather than 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn must_exist(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Usage(format!("{what} {} does not exist", path.display())).into())
    }
}

#[derive(Parser)]
#[command(name = "eqa", version, about = "Memory-centric embodied question answering in a gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write traces, memory banks and a report.
    Run(RunArgs),
    /// Re-run a trace and check it is reproduced byte for byte.
    Replay(ReplayArgs),
    /// Run the ablation rows over a question set.
    Ablate(AblateArgs),
    /// Aggregate trace files into a metrics report.
    Metrics(MetricsArgs),
    /// Write per-step observations and the final map of a trace.
    Render(RenderArgs),
}

#[derive(Args, Clone)]
struct OracleArgs {
    /// Remote oracle endpoint; the scripted ground-truth oracle is used
    /// when absent. The bearer token is read from EQA_ORACLE_TOKEN.
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long, default_value_t = 60.0)]
    oracle_timeout: f64,
    #[arg(long, default_value_t = 2)]
    oracle_retries: u32,
}

impl OracleArgs {
    fn build(&self, scene: &Scene) -> Box<dyn Oracle> {
        match &self.oracle_url {
            None => Box::new(ScriptedOracle::new(scene.clone())),
            Some(url) => Box::new(RemoteOracle::new(EndpointConfig {
                url: url.clone(),
                token_env: Some(TOKEN_ENV.into()),
                timeout_secs: self.oracle_timeout,
                retries: self.oracle_retries,
                ..EndpointConfig::default()
            })),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Bundled scene name or scene file.
    #[arg(long)]
    scene: String,
    /// Question ids; all questions of the scene when omitted.
    #[arg(long = "question")]
    questions: Vec<String>,
    /// Hyperparameter file, or "default".
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long, default_value = "S+A+P")]
    ablation: Ablation,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    spawn: usize,
    /// Memory bank to start from (each episode gets its own copy).
    #[arg(long)]
    memory_in: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Scene file, when the trace's scene is not bundled.
    #[arg(long)]
    scene: Option<String>,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Bundled scene names or scene files; every bundled scene with
    /// questions when omitted.
    #[arg(long = "scene")]
    scenes: Vec<String>,
    #[arg(long = "question")]
    questions: Vec<String>,
    #[arg(long, default_value = "default")]
    config: String,
    /// Comma-separated flag sets.
    #[arg(long, value_delimiter = ',', default_value = "None,S,S+A,S+A+P")]
    rows: Vec<Ablation>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Where traces and reports go; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// Trace files or directories holding `*.trace.jsonl`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Judge endpoint; adds a judge column.
    #[arg(long)]
    judge_url: Option<String>,
    /// Write the report(s) here as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    trace: PathBuf,
    #[arg(long)]
    scene: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    oracle: OracleArgs,
}

fn load_scene(spec: &str) -> Result<Scene> {
    if fixtures::BUNDLED.contains(&spec) {
        return Ok(fixtures::bundled(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Usage(format!(
            "scene {spec:?} is neither a bundled scene ({}) nor an existing file",
            fixtures::BUNDLED.join(", ")
        ))
        .into());
    }
    Scene::load(path).with_context(|| format!("loading scene {spec}"))
}

fn load_params(spec: &str, seed: Option<u64>) -> Result<HyperParams> {
    let mut p = if spec == "default" {
        HyperParams::default()
    } else {
        must_exist(Path::new(spec), "config")?;
        HyperParams::load(Path::new(spec)).with_context(|| format!("loading config {spec}"))?
    };
    if let Some(s) = seed {
        p.seed = s;
    }
    p.validate()?;
    Ok(p)
}

fn encoder(params: &HyperParams) -> MockEncoder {
    MockEncoder::semantic(params.record_dim(), params.seed)
}

fn load_store(params: &HyperParams, memory_in: Option<&Path>) -> Result<MemoryStore> {
    match memory_in {
        None => Ok(MemoryStore::new(params.record_dim())),
        Some(dir) => {
            must_exist(dir, "memory bank")?;
            let store = MemoryStore::load(dir).with_context(|| format!("loading memory bank {}", dir.display()))?;
            if store.dim() != params.record_dim() {
                bail!(
                    "memory bank {} holds {}-d records, the config expects {}",
                    dir.display(),
                    store.dim(),
                    params.record_dim()
                );
            }
            Ok(store)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_trace(path: &Path) -> Result<EpisodeTrace> {
    must_exist(path, "trace")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EpisodeTrace::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let params = load_params(&a.config, a.seed)?;
    let scene = load_scene(&a.scene)?;
    let selected = eval::select_questions(std::slice::from_ref(&scene), &a.questions)?;
    if selected.is_empty() {
        bail!("scene {} has no questions", scene.name);
    }
    let enc = encoder(&params);
    let memory_in = a.memory_in.as_ref().map(|p| p.display().to_string());
    let results = eval::run_batch(&selected, a.workers, |&(scene, q)| -> Result<(EpisodeTrace, PathBuf)> {
        let mut store = load_store(&params, a.memory_in.as_deref())?;
        let oracle = a.oracle.build(scene);
        let input = EpisodeInput {
            scene,
            question: q,
            params: &params,
            ablation: a.ablation,
            spawn: a.spawn,
            oracle: oracle.as_ref(),
            encoder: &enc,
            keep_frames: false,
        };
        let mut trace = run_episode(&input, &mut store)?.trace;
        trace.header.memory_in = memory_in.clone();
        let stem = format!("{}__{}", scene.name, q.id);
        write_text(&a.out.join(format!("{stem}.trace.jsonl")), &trace.to_jsonl())?;
        let bank = a.out.join("memory").join(&stem);
        store.persist(&bank)?;
        Ok((trace, bank))
    });
    let mut rows = Vec::new();
    let mut failed = 0;
    for (&(scene, q), r) in selected.iter().zip(results) {
        match r {
            Ok((t, bank)) => {
                println!(
                    "{}/{}: {} in {} step(s){} answer {:?} (gold {:?}); bank {}",
                    scene.name,
                    q.id,
                    if t.footer.success { "correct" } else { "wrong" },
                    t.footer.steps,
                    t.footer.forced.map(|f| format!(" [forced: {f:?}]")).unwrap_or_default(),
                    t.footer.answer.as_deref().unwrap_or("-"),
                    q.answer,
                    bank.display()
                );
                rows.push(EpisodeRow::from_trace(&t));
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}/{}: failed: {e:#}", scene.name, q.id);
                rows.push(EpisodeRow::failed(&scene.name, &q.id, a.ablation, format!("{e:#}")));
            }
        }
    }
    let report = MetricsReport::from_rows(&a.ablation.to_string(), rows)?;
    write_text(&a.out.join("report.jsonl"), &report.to_jsonl())?;
    println!("{}", report.summary_line());
    if failed > 0 {
        bail!("{failed} episode(s) failed");
    }
    Ok(())
}

/// Re-runs the episode a trace describes.
fn rerun(trace: &EpisodeTrace, scene: Option<&str>, oracle: &OracleArgs, keep_frames: bool) -> Result<EpisodeOutput> {
    let h = &trace.header;
    let scene = load_scene(scene.unwrap_or(&h.scene))?;
    if scene.name != h.scene {
        bail!("trace was recorded in scene {:?}, not {:?}", h.scene, scene.name);
    }
    let question = scene
        .question(&h.question_id)
        .ok_or_else(|| anyhow!("scene {} has no question {:?}", scene.name, h.question_id))?;
    let mut store = load_store(&h.params, h.memory_in.as_deref().map(Path::new))?;
    let enc = encoder(&h.params);
    let oracle = oracle.build(&scene);
    let input = EpisodeInput {
        scene: &scene,
        question,
        params: &h.params,
        ablation: h.ablation,
        spawn: h.spawn,
        oracle: oracle.as_ref(),
        encoder: &enc,
        keep_frames,
    };
    let mut out = run_episode(&input, &mut store)?;
    out.trace.header.memory_in = h.memory_in.clone();
    Ok(out)
}

/// First differing line, 1-based.
fn first_difference(a: &str, b: &str) -> Option<usize> {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    (0..la.len().max(lb.len())).find(|&i| la.get(i) != lb.get(i)).map(|i| i + 1)
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    must_exist(&a.trace, "trace")?;
    let original_text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let original = EpisodeTrace::from_jsonl(&original_text)?;
    let again = rerun(&original, a.scene.as_deref(), &a.oracle, false)?.trace;
    let (d0, d1) = (original.decisions_jsonl(), again.decisions_jsonl());
    if d0 != d1 {
        bail!(
            "decision sequence differs at step {}",
            first_difference(&d0, &d1).map_or(0, |l| l - 1)
        );
    }
    let full = again.to_jsonl();
    if full != original_text {
        bail!(
            "decisions match but the trace differs at line {}",
            first_difference(&original_text, &full).unwrap_or(0)
        );
    }
    println!("replay identical: {} step(s), {} bytes", again.steps.len(), full.len());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let params = load_params(&a.config, a.seed)?;
    let scenes: Vec<Scene> = if a.scenes.is_empty() {
        fixtures::BUNDLED
            .iter()
            .map(|n| fixtures::bundled(n))
            .filter(|s| s.as_ref().map_or(true, |s| !s.questions.is_empty()))
            .collect::<Result<_, _>>()?
    } else {
        a.scenes.iter().map(|s| load_scene(s)).collect::<Result<_>>()?
    };
    let episodes = eval::select_questions(&scenes, &a.questions)?;
    let enc = encoder(&params);
    let factory = |s: &Scene| -> eqa_core::Result<Box<dyn Oracle>> { Ok(a.oracle.build(s)) };
    let harness = Harness { params: &params, encoder: &enc, oracle_for: &factory, workers: a.workers };
    let rows = eval::ablate(&episodes, &a.rows, &harness)?;
    for r in &rows {
        println!("{}", r.report.summary_line());
        if let Some(out) = &a.out {
            let dir = out.join(r.ablation.to_string());
            for t in &r.traces {
                write_text(
                    &dir.join(format!("{}__{}.trace.jsonl", t.header.scene, t.header.question_id)),
                    &t.to_jsonl(),
                )?;
            }
            write_text(&dir.join("report.jsonl"), &r.report.to_jsonl())?;
        }
    }
    Ok(())
}

fn collect_traces(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = walk(p)?
                .into_iter()
                .filter(|f| f.to_string_lossy().ends_with(".trace.jsonl"))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            must_exist(p, "trace")?;
        }
    }
    if out.is_empty() {
        bail!("no trace files found");
    }
    Ok(out)
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let mut groups: BTreeMap<String, Vec<EpisodeTrace>> = BTreeMap::new();
    for p in collect_traces(&a.traces)? {
        let t = read_trace(&p)?;
        groups.entry(t.header.ablation.to_string()).or_default().push(t);
    }
    let judge = a.judge_url.as_ref().map(|url| {
        RemoteOracle::new(EndpointConfig {
            url: url.clone(),
            token_env: Some(TOKEN_ENV.into()),
            ..EndpointConfig::default()
        })
    });
    let mut text = String::new();
    for (label, traces) in groups {
        let mut report = MetricsReport::from_traces(&label, &traces)?;
        if let Some(j) = &judge {
            report.add_judge(j)?;
        }
        println!("{}", report.summary_line());
        text += &report.to_jsonl();
    }
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    must_exist(&a.trace, "trace")?;
    let original_text = std::fs::read_to_string(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let original = EpisodeTrace::from_jsonl(&original_text)?;
    let out = rerun(&original, a.scene.as_deref(), &a.oracle, true)?;
    if out.trace.decisions_jsonl() != original.decisions_jsonl() {
        bail!("re-running the trace gave different decisions; renders would not match it");
    }
    let written = eval::write_episode_renders(&out, &a.out)?;
    println!("wrote {} file(s) to {}", written.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Usage>() { 1 } else { 2 })
        }
    }
}
