//! `skelfit` — generate synthetic scenes, fit block skeletons inside a
//! parametric body surface, evaluate the fitting regimes, verify derivatives,
//! and benchmark rotation charts.
//!
//! Exit codes: 0 on success, 2 on command-line or configuration errors
//! (clap's default), 3 on runtime failures. Runtime failures emit a one-line
//! error JSON on stderr; fit failures additionally leave `error.json` and a
//! partial `trace.csv` in the output directory.
//!
//! Set `SKELFIT_LOG=info` (or `debug`) for progress logging.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use skelfit_core::io::{
    load_json, save_json, write_chart_csv, write_obj, write_results_csv, write_trace_csv, Manifest,
    ResolvedManifest, ResultRow,
};
use skelfit_core::{
    body_warm_start, build_constraints, compare_rotation_charts, d_mean, fit_body, fit_skeleton,
    gen_models, gen_scene, gradcheck::run_gradcheck, reconstruction_error, skeleton_forward,
    skeleton_landmarks, warm_start, BodyModel, Chart, ChartProblem, EnergySpec, Error, Mode,
    NoiseSpec, OptimizerConfig, PosedSkeleton, Scene, SizeConfig, SkeletonModel, Tier,
};

#[derive(Parser)]
#[command(
    name = "skelfit",
    version,
    about = "Fit anatomically parameterized block skeletons inside a parametric body surface"
)]
struct Cli {
    /// Worker threads for scene batches (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model pair plus a batch of scenes with ground truth.
    Gen(GenArgs),
    /// Fit one scene and write the state, report, and trace.
    Fit(FitArgs),
    /// Fit every scene under one or more regimes and tabulate the results.
    Eval(EvalArgs),
    /// Verify all analytic derivatives against central differences.
    Gradcheck(GradcheckArgs),
    /// Compare rotation charts on paired problems and time each regime.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Base seed; scene i uses seed*1000+i.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    /// Gaussian noise added to projected keypoints.
    #[arg(long, default_value_t = 0.0)]
    sigma_2d: f64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Also export each ground-truth skeleton as OBJ.
    #[arg(long)]
    obj: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Manifest written by `gen`.
    #[arg(long)]
    manifest: PathBuf,
    /// Scene index within the manifest.
    #[arg(long, default_value_t = 0)]
    scene: usize,
    /// Fitting regime: osf, osfplus, plus, or body.
    #[arg(long, default_value = "osf", value_parser = parse_mode)]
    mode: Mode,
    /// Start-state difficulty: exact, warm, or cold.
    #[arg(long, default_value = "warm", value_parser = parse_tier)]
    tier: Tier,
    /// Rotation chart: quat or rodrigues.
    #[arg(long, default_value = "quat", value_parser = parse_chart)]
    chart: Chart,
    /// Override the regime's default round count.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override the regime's default steps per round.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the regime's default learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Energy weights JSON (partial files fill remaining fields with defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also export the fitted skeleton as OBJ.
    #[arg(long)]
    obj: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Regime to evaluate, or "all" for osfplus, osf, and plus.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, default_value = "warm", value_parser = parse_tier)]
    tier: Tier,
    /// Energy weights JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    seed: u64,
    /// Random states per derivative suite.
    #[arg(long, default_value_t = 8)]
    states: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Paired problems to run (capped at the manifest's scene count).
    #[arg(long, default_value_t = 20)]
    problems: usize,
    /// Placement noise (meters) for the paired warm starts.
    #[arg(long, default_value_t = 0.03)]
    sigma_t: f64,
    /// Orientation noise (degrees) for the paired warm starts.
    #[arg(long, default_value_t = 25.0)]
    sigma_r: f64,
    /// Optional chart-comparison CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    s.parse::<Tier>().map_err(|e| e.to_string())
}

fn parse_chart(s: &str) -> Result<Chart, String> {
    match s.to_ascii_lowercase().as_str() {
        "quat" | "quaternion" => Ok(Chart::Quat),
        "rodrigues" | "rotvec" => Ok(Chart::Rodrigues),
        other => Err(format!(
            "unknown chart '{other}' (expected quat or rodrigues)"
        )),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SKELFIT_LOG")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            ExitCode::from(3)
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let size = SizeConfig::default();
    let (body, skel) = gen_models(args.seed, &size)?;
    save_json(args.out.join("body.json"), &body)?;
    save_json(args.out.join("skeleton.json"), &skel)?;
    log::info!("models written to {}", args.out.display());

    let noise = NoiseSpec {
        sigma_2d: args.sigma_2d,
        ..NoiseSpec::exact()
    };
    let scenes: Vec<(usize, Scene)> = (0..args.scenes)
        .into_par_iter()
        .map(|i| {
            let seed = args.seed.wrapping_mul(1000).wrapping_add(i as u64);
            let mut scene = gen_scene(&body, &skel, seed, &noise)?;
            scene.model = format!("gen-{}", args.seed);
            Ok((i, scene))
        })
        .collect::<Result<_, Error>>()?;

    let mut paths = Vec::with_capacity(scenes.len());
    for (i, scene) in &scenes {
        let rel = format!("scenes/scene_{i:03}.json");
        save_json(args.out.join(&rel), scene)?;
        if args.obj {
            let posed = skeleton_forward(&skel, scene.skeleton_gt.as_ref().unwrap())?;
            write_obj(
                args.out.join(format!("scenes/scene_{i:03}.obj")),
                &skel,
                &posed,
            )?;
        }
        paths.push(rel);
    }
    let manifest = Manifest {
        body: "body.json".into(),
        skeleton: "skeleton.json".into(),
        scenes: paths,
    };
    save_json(args.out.join("manifest.json"), &manifest)?;
    println!(
        "generated {} scenes (seed {}) under {}",
        scenes.len(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct Loaded {
    body: BodyModel,
    skel: SkeletonModel,
    scenes: Vec<PathBuf>,
}

fn load_manifest(path: &Path) -> anyhow::Result<Loaded> {
    let manifest: Manifest =
        load_json(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let ResolvedManifest {
        body,
        skeleton,
        scenes,
    } = manifest.resolved(dir);
    let body: BodyModel = load_json(&body)?;
    let skel: SkeletonModel = load_json(&skeleton)?;
    body.validate()?;
    skel.validate()?;
    Ok(Loaded { body, skel, scenes })
}

fn load_scene(loaded: &Loaded, index: usize) -> anyhow::Result<Scene> {
    let path = loaded.scenes.get(index).with_context(|| {
        format!(
            "scene index {index} out of range ({} scenes)",
            loaded.scenes.len()
        )
    })?;
    Ok(load_json(path)?)
}

fn spec_from(config: &Option<PathBuf>) -> anyhow::Result<EnergySpec> {
    let spec: EnergySpec = match config {
        Some(path) => load_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => EnergySpec::default(),
    };
    spec.validate()?;
    Ok(spec)
}

fn optimizer_for(args: &FitArgs) -> OptimizerConfig {
    let mut config = OptimizerConfig::for_mode(args.mode);
    config.chart = args.chart;
    if let Some(r) = args.rounds {
        config.rounds = r;
    }
    if let Some(s) = args.steps {
        config.steps_per_round = s;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    config
}

/// Write the failure artifacts for a diverged optimization: `error.json` plus
/// the partial trace as CSV.
fn write_failure(out: &Path, err: &Error) -> anyhow::Result<()> {
    if let Error::Numerical {
        message,
        round,
        step,
        trace,
    } = err
    {
        let trace_path = out.join("trace.csv");
        let mut text = String::from("round,step,total\n");
        for (r, s, f) in trace {
            text.push_str(&format!("{r},{s},{f}\n"));
        }
        std::fs::create_dir_all(out)?;
        std::fs::write(&trace_path, text)?;
        save_json(
            out.join("error.json"),
            &serde_json::json!({
                "error": message,
                "round": round,
                "step": step,
                "trace": trace_path.display().to_string(),
            }),
        )?;
    } else {
        save_json(
            out.join("error.json"),
            &serde_json::json!({ "error": err.to_string() }),
        )?;
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let loaded = load_manifest(&args.manifest)?;
    let scene = load_scene(&loaded, args.scene)?;
    let spec = spec_from(&args.config)?;
    let config = optimizer_for(&args);

    if args.mode == Mode::Body {
        let init = body_warm_start(&scene, &args.tier.noise())?;
        let result = match fit_body(&loaded.body, &scene.j_gt, &init, &spec, &config) {
            Ok(r) => r,
            Err(e) => {
                write_failure(&args.out, &e)?;
                bail!("body fit failed: {e} (details in {})", args.out.display());
            }
        };
        save_json(args.out.join("state.json"), &result.state)?;
        save_json(args.out.join("report.json"), &result.report)?;
        write_trace_csv(args.out.join("trace.csv"), &result.report)?;
        println!(
            "body fit: reprojection error {:.3e}, energy {:.6e}, {:.2}s, converged {}",
            result.reproj_error,
            result.report.best_f,
            result.report.wall_time_s,
            result.report.converged
        );
        return Ok(());
    }

    let body_state = scene
        .body
        .as_ref()
        .context("scene carries no body state; only `body` mode can fit it from keypoints")?;
    let warm = warm_start(&loaded.body, &scene, &args.tier.noise())?;
    let constraints = build_constraints(&loaded.skel, 300)?;
    let result = match fit_skeleton(
        &loaded.skel,
        &loaded.body,
        body_state,
        &warm,
        &spec,
        &constraints,
        &config,
    ) {
        Ok(r) => r,
        Err(e) => {
            write_failure(&args.out, &e)?;
            bail!(
                "skeleton fit failed: {e} (details in {})",
                args.out.display()
            );
        }
    };

    save_json(args.out.join("state.json"), &result.state)?;
    save_json(args.out.join("report.json"), &result.report)?;
    write_trace_csv(args.out.join("trace.csv"), &result.report)?;
    if let Some(kp) = &result.kp_matrix {
        save_json(args.out.join("kp.json"), kp)?;
    }
    let posed = skeleton_forward(&loaded.skel, &result.state)?;
    if args.obj {
        write_obj(args.out.join("skeleton.obj"), &loaded.skel, &posed)?;
    }

    let mut against_gt = String::new();
    if let Some(gt) = &scene.skeleton_gt {
        let gt_posed = skeleton_forward(&loaded.skel, gt)?;
        let recon = reconstruction_error(&posed, &gt_posed)?;
        let dm = d_mean(
            &skeleton_landmarks(&loaded.skel, &posed)?,
            &skeleton_landmarks(&loaded.skel, &gt_posed)?,
        )?;
        against_gt = format!(", reconstruction {recon:.3} mm, landmark gap {dm:.5}");
    }
    println!(
        "{} fit ({} tier): energy {:.6e}{}, {:.2}s, converged {}",
        args.mode,
        args.tier,
        result.report.best_f,
        against_gt,
        result.report.wall_time_s,
        result.report.converged
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn scene_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    if values.is_empty() {
        return f64::NAN;
    }
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let loaded = load_manifest(&args.manifest)?;
    let spec = spec_from(&args.config)?;
    let modes: Vec<Mode> = match args.mode.as_str() {
        "all" => vec![Mode::OsfPlus, Mode::Osf, Mode::Plus],
        other => vec![parse_mode(other).map_err(anyhow::Error::msg)?],
    };
    if modes.contains(&Mode::Body) {
        bail!("eval covers the skeleton regimes; use `skelfit fit --mode body` for the body fit");
    }
    let constraints = build_constraints(&loaded.skel, 300)?;
    let noise = args.tier.noise();

    let rows: Vec<Vec<ResultRow>> = loaded
        .scenes
        .par_iter()
        .map(|path| -> anyhow::Result<Vec<ResultRow>> {
            let scene: Scene = load_json(path)?;
            let label = scene_label(path);
            let gt = scene
                .skeleton_gt
                .as_ref()
                .with_context(|| format!("{label} has no ground truth"))?;
            let gt_posed = skeleton_forward(&loaded.skel, gt)?;
            let gt_lms = skeleton_landmarks(&loaded.skel, &gt_posed)?;
            let warm = warm_start(&loaded.body, &scene, &noise)?;

            let measure = |posed: &PosedSkeleton| -> anyhow::Result<(f64, f64)> {
                let recon = reconstruction_error(posed, &gt_posed)?;
                let dm = d_mean(&skeleton_landmarks(&loaded.skel, posed)?, &gt_lms)?;
                Ok((recon, dm))
            };

            let mut out = Vec::with_capacity(modes.len() + 1);
            let warm_posed = skeleton_forward(&loaded.skel, &warm)?;
            let (recon, dm) = measure(&warm_posed)?;
            out.push(ResultRow {
                scene: label.clone(),
                method: "warm".into(),
                reconstruction_error_mm: recon,
                d_mean: dm,
                total_time_s: 0.0,
            });
            for &mode in &modes {
                let result = fit_skeleton(
                    &loaded.skel,
                    &loaded.body,
                    scene.body.as_ref().unwrap(),
                    &warm,
                    &spec,
                    &constraints,
                    &OptimizerConfig::for_mode(mode),
                )?;
                let posed = skeleton_forward(&loaded.skel, &result.state)?;
                let (recon, dm) = measure(&posed)?;
                out.push(ResultRow {
                    scene: label.clone(),
                    method: mode.to_string(),
                    reconstruction_error_mm: recon,
                    d_mean: dm,
                    total_time_s: result.report.wall_time_s,
                });
            }
            Ok(out)
        })
        .collect::<anyhow::Result<_>>()?;

    let mut rows: Vec<ResultRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.scene.cmp(&b.scene).then(a.method.cmp(&b.method)));
    write_results_csv(&args.out, &rows)?;

    let mut methods: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
    methods.insert(0, "warm".into());
    println!(
        "{} scenes, {} tier -> {}",
        loaded.scenes.len(),
        args.tier,
        args.out.display()
    );
    println!(
        "{:<10} {:>16} {:>12} {:>10}",
        "method", "recon med [mm]", "d_mean med", "time med"
    );
    for method in methods {
        let pick = |f: fn(&ResultRow) -> f64| {
            median(rows.iter().filter(|r| r.method == method).map(f).collect())
        };
        println!(
            "{:<10} {:>16.3} {:>12.6} {:>9.2}s",
            method,
            pick(|r| r.reconstruction_error_mm),
            pick(|r| r.d_mean),
            pick(|r| r.total_time_s)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let report = run_gradcheck(args.seed, args.states)?;
    println!("{report}");
    if let Some(out) = &args.out {
        save_json(out, &report)?;
    }
    if !report.all_pass() {
        bail!("derivative checks failed");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let loaded = load_manifest(&args.manifest)?;
    let spec = EnergySpec::default();
    let constraints = build_constraints(&loaded.skel, 300)?;
    let noise = NoiseSpec {
        sigma_t: args.sigma_t,
        sigma_r: args.sigma_r,
        sigma_2d: 0.0,
        sigma_beta: 0.3,
    };

    let count = args.problems.min(loaded.scenes.len());
    if count == 0 {
        bail!("manifest has no scenes");
    }
    let mut problems = Vec::with_capacity(count);
    let mut first_scene: Option<Scene> = None;
    for path in &loaded.scenes[..count] {
        let scene: Scene = load_json(path)?;
        problems.push(ChartProblem {
            label: scene_label(path),
            body_state: scene.body.clone().context("scene has no body state")?,
            warm: warm_start(&loaded.body, &scene, &noise)?,
        });
        if first_scene.is_none() {
            first_scene = Some(scene);
        }
    }

    let config = OptimizerConfig::for_mode(Mode::Osf);
    let cmp = compare_rotation_charts(
        &loaded.skel,
        &loaded.body,
        &problems,
        &spec,
        &constraints,
        &config,
    )?;
    println!(
        "chart comparison over {} problems: quaternion final energy wins {}/{}",
        cmp.pairs.len(),
        cmp.quat_wins(),
        cmp.pairs.len()
    );
    if let Some(out) = &args.out {
        write_chart_csv(out, &cmp)?;
        println!("pairs written to {}", out.display());
    }

    // Wall time of each regime on the first scene, from a shared warm start.
    let scene = first_scene.unwrap();
    let warm = warm_start(&loaded.body, &scene, &Tier::Warm.noise())?;
    println!("{:<10} {:>10} {:>12}", "regime", "time", "energy");
    for mode in [Mode::OsfPlus, Mode::Osf, Mode::Plus] {
        let result = fit_skeleton(
            &loaded.skel,
            &loaded.body,
            scene.body.as_ref().unwrap(),
            &warm,
            &spec,
            &constraints,
            &OptimizerConfig::for_mode(mode),
        )?;
        println!(
            "{:<10} {:>9.3}s {:>12.4e}",
            mode.to_string(),
            result.report.wall_time_s,
            result.report.best_f
        );
    }
    Ok(())
}
