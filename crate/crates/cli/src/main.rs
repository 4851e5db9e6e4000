//! `hjhom`: command-line frontend for solves, cell problems, decoupling
//! iterations and the homogenization experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use hjhom::config::{Origin, Settings};
use hjhom::fd_solver::{gradient_box, solve_cauchy, OutputTimes, SchemeConfig};
use hjhom::grid::TorusGrid;
use hjhom::harness::{
    build_effective, run_action_gap, run_example11, run_iteration, run_rate_experiment, run_stationary_rate,
    ActionSettings, BackendKind, CacheSettings, Example11Settings, GridSettings, IterationSettings, RateSettings,
    StationarySettings,
};
use hjhom::io::{write_field, Manifest};
use hjhom::model::problems::Problem;
use hjhom::{parallel, Error};

#[derive(Parser, Debug)]
#[command(name = "hjhom", version, about = "Homogenization of weakly coupled Hamilton-Jacobi systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Solve the Cauchy problem at one ε (or the effective problem without --eps).
    Solve,
    /// Build the effective-Hamiltonian cache and report its diagnostics.
    Cell,
    /// Run the decoupling iteration seeded with the effective solution.
    Iterate {
        /// Iterate the discounted stationary system at --lambda.
        #[arg(long)]
        stationary: bool,
    },
    /// Homogenization error sweep of the Cauchy problem and its rate.
    Rate,
    /// Lower bound of the two-equation sharpness example.
    Example11,
    /// Point-to-point action gaps over the ε sweep.
    ActionGap,
    /// Homogenization error sweep of the discounted stationary problem.
    Stationary,
    /// Print the settings table with defaults.
    Defaults,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Cell => "cell",
            Command::Iterate { .. } => "iterate",
            Command::Rate => "rate",
            Command::Example11 => "example11",
            Command::ActionGap => "action-gap",
            Command::Stationary => "stationary",
            Command::Defaults => "defaults",
        }
    }
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Settings file (`[section]` tables of `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in problem: example11, eikonal-1d, linear-coupling-2sys.
    #[arg(long, global = true)]
    problem: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    /// Comma-separated, strictly decreasing; fractions such as 1/20 are accepted.
    #[arg(long, global = true)]
    eps_list: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Coupling constant Θ.
    #[arg(long, global = true)]
    theta: Option<String>,
    /// Coupling amplitude.
    #[arg(long, global = true)]
    coupling: Option<String>,
    /// Fast potential: tent, cosine or zero.
    #[arg(long, global = true)]
    potential: Option<String>,
    /// Grid points on the period (solve).
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    t_end: Option<String>,
    /// Evaluation times (example11).
    #[arg(long, global = true)]
    t: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "HJHOM_OUT")]
    out: Option<PathBuf>,
    /// Worker threads, 0 for the hardware count.
    #[arg(long, global = true)]
    threads: Option<String>,
    /// Decoupled solver of the iteration: fd or dp.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Further overrides as section.key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(opts: &Opts) -> anyhow::Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &opts.config {
        s.apply_file(path)?;
    }
    if let Some(out) = &opts.out {
        // clap reads HJHOM_OUT into the same field; tell the two apart for the manifest.
        let from_env = std::env::var_os("HJHOM_OUT").is_some_and(|v| Path::new(&v) == out.as_path())
            && !std::env::args().any(|a| a == "--out" || a.starts_with("--out="));
        let origin = if from_env { Origin::Environment } else { Origin::Flag };
        s.set("run.out", &out.to_string_lossy(), origin)?;
    }
    let flags = [
        ("run.problem", &opts.problem),
        ("solve.eps", &opts.eps),
        ("solve.eps_list", &opts.eps_list),
        ("solve.lambda", &opts.lambda),
        ("problem.theta", &opts.theta),
        ("problem.coupling", &opts.coupling),
        ("problem.potential", &opts.potential),
        ("solve.grid", &opts.grid),
        ("solve.t_end", &opts.t_end),
        ("solve.t_list", &opts.t),
        ("run.threads", &opts.threads),
        ("run.backend", &opts.backend),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, v, Origin::Flag)?;
        }
    }
    for item in &opts.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{item}'")))?;
        s.set(k.trim(), v.trim(), Origin::Flag)?;
    }
    Ok(s)
}

fn overridden(s: &Settings, key: &str) -> bool {
    s.overrides().iter().any(|(k, _, _)| k == key)
}

fn grid_settings(s: &Settings) -> anyhow::Result<GridSettings> {
    Ok(GridSettings {
        per_eps: s.usize("grid.per_eps")?,
        effective: s.usize("grid.effective")?,
        levels: s.usize("grid.levels")?,
        flux: s.flux()?,
    })
}

fn cache_settings(s: &Settings) -> anyhow::Result<CacheSettings> {
    Ok(CacheSettings {
        x_points: s.usize("cache.x_points")?,
        p_points: s.usize("cache.p_points")?,
        cell_points: s.usize("cache.cell_points")?,
        ..CacheSettings::default()
    })
}

/// `--eps` wins over the sweep list.
fn eps_list(s: &Settings) -> anyhow::Result<Vec<f64>> {
    Ok(match s.opt_f64("solve.eps")? {
        Some(e) => vec![e],
        None => s.list("solve.eps_list")?,
    })
}

fn problem(s: &Settings) -> anyhow::Result<Problem> {
    Ok(Problem::builtin(&s.string("run.problem"), &s.problem_params()?)?)
}

fn manifest(s: &Settings, p: Option<&Problem>, eps: Option<f64>, grid_points: usize) -> Manifest {
    let mut settings = s.pairs();
    for (k, v, origin) in s.overrides() {
        settings.push((format!("override.{k}"), format!("{v} ({origin})")));
    }
    Manifest {
        problem: p.map_or_else(|| s.string("run.problem"), |p| p.id.clone()),
        eps,
        grid_points,
        period: p.map_or(1.0, |p| p.spec.slow_period()),
        dimension: p.map_or(1, |p| p.spec.n()),
        settings,
    }
}

fn finish(out: &Path, m: &Manifest, summary: &str) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    m.write(&out.join("manifest.toml"))?;
    fs::write(out.join("summary.txt"), summary)?;
    print!("{summary}");
    Ok(())
}

fn acceptance(ok: bool, what: &str) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Acceptance(what.to_string()).into())
    }
}

fn run(cmd: Command, s: &Settings) -> anyhow::Result<()> {
    let threads = s.usize("run.threads")?;
    if threads > 0 && !parallel::init_threads(threads) {
        log::warn!("worker pool already initialised; --threads ignored");
    }
    let out = PathBuf::from(s.string("run.out"));
    match cmd {
        Command::Defaults => {
            print!("{}", Settings::describe_defaults());
            Ok(())
        }
        Command::Solve => solve(s, &out),
        Command::Cell => cell(s, &out),
        Command::Iterate { stationary } => {
            let p = problem(s)?;
            let eps = s
                .opt_f64("solve.eps")?
                .ok_or_else(|| Error::Precondition("iterate needs --eps".into()))?;
            let backend = match s.string("run.backend").as_str() {
                "fd" => BackendKind::Fd,
                "dp" => BackendKind::Dp,
                other => return Err(Error::Config(format!("unknown backend '{other}' (fd or dp)")).into()),
            };
            let settings = IterationSettings {
                eps,
                t_end: s.f64("solve.t_end")?,
                lambda: if stationary { Some(s.f64("solve.lambda")?) } else { None },
                tol: s.f64("iterate.tol")?,
                max_iter: s.usize("iterate.max_iter")?,
                backend,
                grid: grid_settings(s)?,
                cache: cache_settings(s)?,
                ..IterationSettings::default()
            };
            let r = run_iteration(&p, &settings)?;
            r.write(&out)?;
            let points = r.trace.limit().grid().points();
            finish(&out, &manifest(s, Some(&p), Some(eps), points), &r.summary())?;
            acceptance(r.contraction_ok(), "contraction ratio above its predicted limit")?;
            acceptance(r.limit_ok(), "iteration limit differs from the direct coupled solve")
        }
        Command::Rate => {
            let p = problem(s)?;
            let settings = RateSettings {
                eps_list: eps_list(s)?,
                t_end: s.f64("solve.t_end")?,
                grid: grid_settings(s)?,
                cache: cache_settings(s)?,
            };
            let r = run_rate_experiment(&p, &settings)?;
            info!("rate finished in {:.1}s", r.seconds);
            r.write(&out)?;
            finish(&out, &manifest(s, Some(&p), None, r.effective_points), &r.summary())
        }
        Command::Stationary => {
            let p = problem(s)?;
            let settings = StationarySettings {
                eps_list: eps_list(s)?,
                lambda: s.f64("solve.lambda")?,
                grid: grid_settings(s)?,
                cache: cache_settings(s)?,
            };
            let r = run_stationary_rate(&p, &settings)?;
            r.write(&out)?;
            finish(&out, &manifest(s, Some(&p), None, r.effective_points), &r.summary())?;
            acceptance(r.bounds_hold(), "sup-norm bound M/lambda violated")
        }
        Command::Example11 => {
            let mut settings = Example11Settings {
                grid: grid_settings(s)?,
                ..Example11Settings::default()
            };
            if s.is_set("solve.eps") || overridden(s, "solve.eps_list") {
                settings.eps_list = eps_list(s)?;
            }
            if overridden(s, "solve.t_list") {
                settings.t_list = s.list("solve.t_list")?;
            }
            if let Some(c) = s.problem_params()?.coupling {
                settings.coupling = c;
            }
            if let Some(v) = s.problem_params()?.potential {
                settings.potential = v;
            }
            for key in ["cache.x_points", "cache.p_points", "cache.cell_points"] {
                if overridden(s, key) {
                    settings.cache = cache_settings(s)?;
                }
            }
            let r = run_example11(&settings)?;
            r.write(&out)?;
            let mut m = manifest(s, None, None, 0);
            m.problem = "example11".into();
            finish(&out, &m, &r.summary())?;
            acceptance(r.all_hold(), "lower bound min{t, eps/3} violated")
        }
        Command::ActionGap => {
            let p = problem(s)?;
            let settings = ActionSettings {
                eps_list: eps_list(s)?,
                endpoints: s.endpoints()?,
                component: s.usize("action.component")?,
                slow: s.f64("action.slow")?,
                steps_per_eps: s.f64("action.steps_per_eps")?,
                dv: s.f64("action.dv")?,
                v_bound: s.f64("action.v_bound")?,
                p_points: s.usize("action.p_points")?,
                cell_points: s.usize("cache.cell_points")?,
                ..ActionSettings::default()
            };
            let r = run_action_gap(&p, &settings)?;
            r.write(&out)?;
            finish(&out, &manifest(s, Some(&p), None, 0), &r.summary())?;
            acceptance(r.bounded(), "gap/eps grows as eps decreases")
        }
    }
}

fn solve(s: &Settings, out: &Path) -> anyhow::Result<()> {
    let p = problem(s)?;
    let spec = &p.spec;
    let period = spec.slow_period();
    let t_end = s.f64("solve.t_end")?;
    let eps = s.opt_f64("solve.eps")?;
    let gs = grid_settings(s)?;
    let points = match (s.opt_usize("solve.grid")?, eps) {
        (Some(n), _) => n,
        (None, Some(e)) => {
            let cells = period / e;
            if (cells - cells.round()).abs() > 1e-9 * cells || cells.round() < 1.0 {
                return Err(Error::Precondition(format!("period {period} is not a multiple of eps = {e}")).into());
            }
            cells.round() as usize * gs.per_eps
        }
        (None, None) => gs.effective,
    };
    let flux = if spec.n() == 1 { gs.flux } else { Default::default() };
    let output = match eps {
        Some(e) => OutputTimes::for_eps(e),
        None => OutputTimes::Uniform {
            max_interval: t_end / 16.0,
            extra: Vec::new(),
        },
    };
    let cfg = SchemeConfig::new(TorusGrid::new(spec.n(), period, points)?, t_end)
        .with_output(output)
        .with_flux(flux);
    let mut summary = String::new();
    let field = match eps {
        Some(e) => solve_cauchy(spec, &p.data, Some(e), &cfg)?,
        None => {
            let gb = gradient_box(spec, &p.data, t_end);
            let eff = build_effective(spec, 1.25 * gb.radius, gb.u_bound, &cache_settings(s)?)?;
            let _ = writeln!(summary, "effective cache: {} values, interpolation error {:.3e}", eff.cache.len(), eff.interpolation_error);
            solve_cauchy(&eff.spec, &p.data, None, &cfg)?
        }
    };
    let m = manifest(s, Some(&p), eps, points);
    let csv = write_field(out, "solution", &field, &m)?;
    let _ = writeln!(
        summary,
        "solve {}: eps {}, {} points, T = {t_end}, {} stored times, sup |u| = {:.6e}",
        p.id,
        eps.map_or("none (effective)".to_string(), |e| e.to_string()),
        points,
        field.stamps().len(),
        field.sup_norm()
    );
    let _ = writeln!(summary, "written {}", csv.display());
    finish(out, &m, &summary)
}

fn cell(s: &Settings, out: &Path) -> anyhow::Result<()> {
    let p = problem(s)?;
    let t_end = s.f64("solve.t_end")?;
    let gb = gradient_box(&p.spec, &p.data, t_end);
    let eff = build_effective(&p.spec, 1.25 * gb.radius, gb.u_bound, &cache_settings(s)?)?;
    fs::create_dir_all(out)?;
    eff.cache.save(&out.join("cache.csv"))?;
    let d = eff.cache.diagnostics();
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "cell {}: {} cached values on |p| <= {:.4}",
        p.id,
        eff.cache.len(),
        1.25 * gb.radius
    );
    let _ = writeln!(summary, "convexity slack {:.3e}", d.convexity_slack);
    let _ = writeln!(summary, "Lipschitz in x {:.4}, in p {:.4}, in c {:.4}", d.lip_x, d.lip_p, d.lip_c);
    let _ = writeln!(summary, "discount vs large-time discrepancy {:.3e}", d.max_discrepancy);
    let _ = writeln!(summary, "interpolation error at midpoints {:.3e}", eff.interpolation_error);
    finish(out, &manifest(s, Some(&p), None, 0), &summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = resolve(&cli.opts).and_then(|s| {
        info!("{} with {} overrides", cli.command.name(), s.overrides().len());
        run(cli.command, &s).with_context(|| cli.command.name())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
