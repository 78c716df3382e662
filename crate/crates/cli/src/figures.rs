//! Data series and gnuplot scripts for the standard figures.

use std::collections::BTreeMap;
use std::time::Instant;

use frameless_core::{
    estimate_pmf_and_per, run_exact, run_feedback_campaign, run_static_campaign,
    simulate_irsa_trials, simulate_unresolved, ApproxCurves, BetaGrid, EmpiricalPmf,
    ExactOptions, ExactResult, FeedbackPolicy, IrsaConfig, SlotType, SystemConfig,
};

use crate::commands::{
    curves_table, describe, freq_table, out_dir, per_table, pmf_table, prune_eps,
    write_audit, DEFAULT_SEED,
};
use crate::output::{gnuplot, Cell, Series, Sink, Table};
use crate::settings::{parse_scale, CliError, CliResult, FileSettings};
use crate::FigureArgs;

pub const FIGURES: &[&str] = &[
    "example_p_dist",
    "ripple_cloud_mean_std",
    "approx_error_scaling",
    "ripple_dist",
    "per_approx",
    "per_dynamic",
];

const FIGURE_EPS: f64 = 1e-16;

/// Resolved inputs shared by all figures.
struct Ctx {
    scale: BTreeMap<String, usize>,
    trials: Option<u64>,
    seed: u64,
    eps: f64,
    t: Option<usize>,
    sink: Sink,
}

impl Ctx {
    fn n(&self, default: usize) -> usize {
        self.scale.get("n").copied().unwrap_or(default)
    }

    fn trials(&self, default: u64) -> u64 {
        self.trials
            .or_else(|| self.scale.get("trials").map(|&t| t as u64))
            .unwrap_or(default)
    }

    fn exact(&self, cfg: &SystemConfig, ripple_pmf: bool) -> CliResult<ExactResult> {
        let opts = ExactOptions {
            prune_eps: self.eps,
            record_ripple_pmf: ripple_pmf,
            ..ExactOptions::default()
        };
        Ok(run_exact(cfg, &cfg.spectra(), &opts)?)
    }

    fn exact_comment(&self, cfg: &SystemConfig) -> String {
        format!("frameless exact (frameless-core exact): {} prune_eps={:e}", describe(cfg), self.eps)
    }
}

fn two_types(n: usize, m1: usize, b1: f64, m2: usize, b2: f64) -> CliResult<SystemConfig> {
    Ok(SystemConfig::new(n, vec![SlotType::new(m1, b1), SlotType::new(m2, b2)])?)
}

fn series<'a>(file: &'a str, y: usize, title: &'a str) -> Series<'a> {
    Series { file, x: 1, y, title, err: None }
}

pub fn reproduce(a: FigureArgs) -> CliResult<String> {
    let start = Instant::now();
    if !FIGURES.contains(&a.name.as_str()) {
        return Err(CliError::config(
            "name",
            format!("unknown figure `{}` (expected one of {})", a.name, FIGURES.join(", ")),
        ));
    }
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let scale = match &a.scale {
        Some(text) => parse_scale(text)?,
        None => BTreeMap::new(),
    };
    if scale.get("trials") == Some(&0) || a.trials == Some(0) {
        return Err(CliError::config("trials", "at least one trial is required"));
    }
    let mut ctx = Ctx {
        scale,
        trials: fs.pick(a.trials, "trials")?,
        seed: fs.pick(a.seed, "seed")?.unwrap_or(DEFAULT_SEED),
        eps: prune_eps(&fs, a.prune_eps, FIGURE_EPS)?,
        t: fs.pick(a.t, "t")?,
        sink: Sink::new(&out_dir(&fs, &a.common)?)?,
    };
    let summary = match a.name.as_str() {
        "example_p_dist" => example_p_dist(&mut ctx)?,
        "ripple_cloud_mean_std" => ripple_cloud_mean_std(&mut ctx)?,
        "approx_error_scaling" => approx_error_scaling(&mut ctx)?,
        "ripple_dist" => ripple_dist(&mut ctx)?,
        "per_approx" => per_approx(&mut ctx)?,
        _ => per_dynamic(&mut ctx)?,
    };
    Ok(format!(
        "{} files={} {summary} runtime={:.2}s",
        a.name,
        ctx.sink.written().len(),
        start.elapsed().as_secs_f64()
    ))
}

/// Exact and simulated distributions of unresolved users, one and two slot types.
fn example_p_dist(ctx: &mut Ctx) -> CliResult<String> {
    let n = ctx.n(50);
    let share = |f: f64| ((f * n as f64).round() as usize).max(1);
    let single = SystemConfig::single(n, share(1.2), 2.68)?;
    let two = two_types(n, share(1.0), 3.0, share(0.2), 5.0)?;
    let trials = ctx.trials(100_000);
    let mut pers = Vec::new();
    for (tag, cfg) in [("single", &single), ("two", &two)] {
        let res = ctx.exact(cfg, false)?;
        let comment = ctx.exact_comment(cfg);
        ctx.sink.csv(&format!("example_p_dist_exact_{tag}.csv"), &pmf_table(&comment, &res.pmf))?;
        let counts = simulate_unresolved(cfg, trials, ctx.seed);
        let est = EmpiricalPmf::from_counts(n, counts);
        let comment = format!(
            "frameless simulate (frameless-core sim): {} trials={trials} seed={} rng=ChaCha8",
            describe(cfg),
            ctx.seed
        );
        ctx.sink.csv(&format!("example_p_dist_sim_{tag}.csv"), &freq_table(&comment, &est))?;
        pers.push(format!("per_{tag}={:.3}", res.per));
    }
    let script = gnuplot(
        "Distribution of unresolved users",
        "u",
        "P_u",
        true,
        &[
            series("example_p_dist_exact_single.csv", 2, "exact, one type"),
            Series { err: Some(3), ..series("example_p_dist_sim_single.csv", 2, "simulation, one type") },
            series("example_p_dist_exact_two.csv", 2, "exact, two types"),
            Series { err: Some(3), ..series("example_p_dist_sim_two.csv", 2, "simulation, two types") },
        ],
    );
    ctx.sink.text("example_p_dist.gp", &script)?;
    Ok(pers.join(" "))
}

/// Exact moments divided by `m` next to the closed-form curves.
fn ripple_cloud_mean_std(ctx: &mut Ctx) -> CliResult<String> {
    let n = ctx.n(100);
    let mh = (0.95 * n as f64).round() as usize;
    let cfg = two_types(n, mh, 2.5, mh, 3.0)?;
    let res = ctx.exact(&cfg, false)?;
    let m = cfg.total_slots() as f64;

    let mut exact = Table::new(
        ctx.exact_comment(&cfg) + " (moments divided by m, x = u/n)",
        &["x", "C1", "C2", "R", "sigma_R"],
    );
    for mo in res.moments.iter().skip(1) {
        exact.push(vec![
            (mo.stage as f64 / n as f64).into(),
            (mo.clouds[0] / m).into(),
            (mo.clouds[1] / m).into(),
            (mo.ripple / m).into(),
            (mo.ripple_sd() / m).into(),
        ]);
    }
    ctx.sink.csv("ripple_cloud_mean_std_exact.csv", &exact)?;
    let curves = ApproxCurves::fit(&cfg, &cfg.spectra())?;
    let comment = format!("frameless approx (frameless-core approx): {}", describe(&cfg));
    ctx.sink.csv("ripple_cloud_mean_std_approx.csv", &curves_table(&comment, &curves))?;

    let (e, a) = ("ripple_cloud_mean_std_exact.csv", "ripple_cloud_mean_std_approx.csv");
    let script = gnuplot(
        "Normalized ripple and cloud sizes",
        "x = u/n",
        "size / m",
        false,
        &[
            series(e, 2, "C1 exact"),
            series(e, 3, "C2 exact"),
            series(e, 4, "R exact"),
            series(e, 5, "sigma_R exact"),
            series(a, 2, "C1 approx"),
            series(a, 3, "C2 approx"),
            series(a, 4, "R approx"),
            series(a, 5, "sigma_R approx"),
        ],
    );
    ctx.sink.text("ripple_cloud_mean_std.gp", &script)?;
    Ok(format!("n={n} per={:.3e} lost={:.1e}", res.per, res.lost_mass))
}

/// Largest gap between exact moments and the curves as `n` grows.
fn approx_error_scaling(ctx: &mut Ctx) -> CliResult<String> {
    let sizes = match ctx.scale.get("n") {
        Some(&top) => vec![(top / 4).max(4), (top / 2).max(4), top],
        None => vec![50, 100, 200],
    };
    let mut table = Table::new(
        format!(
            "frameless approx vs exact (frameless-core exact, approx): m_h = round(0.95 n), mean degrees 2.5 and 3.0, prune_eps={:e}, max abs gap over u in n/4, n/2, 3n/4, n",
            ctx.eps
        ),
        &["n", "R", "C1", "C2", "lost_mass"],
    );
    let mut last = String::new();
    for n in sizes {
        let mh = (0.95 * n as f64).round() as usize;
        let cfg = two_types(n, mh, 2.5, mh, 3.0)?;
        let res = ctx.exact(&cfg, false)?;
        let curves = ApproxCurves::fit(&cfg, &cfg.spectra())?;
        let m = cfg.total_slots() as f64;
        let mut gap = [0.0f64; 3];
        for u in [n / 4, n / 2, 3 * n / 4, n] {
            let x = u as f64 / n as f64;
            let mo = &res.moments[u];
            gap[0] = gap[0].max((mo.ripple / m - curves.ripple(x)).abs());
            for h in 0..2 {
                gap[h + 1] = gap[h + 1].max((mo.clouds[h] / m - curves.cloud(h, x)).abs());
            }
        }
        let mut row: Vec<Cell> = vec![n.into()];
        row.extend(gap.iter().map(|&g| Cell::from(g)));
        row.push(res.lost_mass.into());
        table.push(row);
        log::info!("approx_error_scaling n={n} done");
        last = format!("n={n} R_gap={:.2e}", gap[0]);
    }
    ctx.sink.csv("approx_error_scaling.csv", &table)?;
    let f = "approx_error_scaling.csv";
    let script = gnuplot(
        "Gap between exact moments and curves",
        "n",
        "max abs gap",
        true,
        &[series(f, 2, "R"), series(f, 3, "C1"), series(f, 4, "C2")],
    );
    ctx.sink.text("approx_error_scaling.gp", &script)?;
    Ok(last)
}

/// Exact ripple distributions with the Gaussian heuristic overlaid.
fn ripple_dist(ctx: &mut Ctx) -> CliResult<String> {
    let n = ctx.n(100);
    let mh = (0.95 * n as f64).round() as usize;
    let cfg = two_types(n, mh, 2.5, mh, 3.0)?;
    let res = ctx.exact(&cfg, true)?;
    let curves = ApproxCurves::fit(&cfg, &cfg.spectra())?;
    let m = cfg.total_slots() as f64;
    let pmfs = res.ripple_pmf.as_ref().expect("ripple pmf requested");
    let stages = [n, 3 * n / 4, n / 2, n / 4];
    let mut names = Vec::new();
    for &u in &stages {
        let x = u as f64 / n as f64;
        let (mean, sd) = (m * curves.ripple(x), m * curves.ripple_sd(x));
        let mut t = Table::new(
            format!(
                "{} u={u}; pmf of the ripple r over the states alive at stage u (r = 0 means decoding stops here); gaussian has mean m*R(x) + 1 = {} and sd m*sigma(x) = {}",
                ctx.exact_comment(&cfg),
                mean + 1.0,
                sd
            ),
            &["r", "pmf", "gaussian"],
        );
        for (r, &p) in pmfs[u].iter().enumerate() {
            let density = if sd > 0.0 {
                let z = (r as f64 - 1.0 - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            } else {
                0.0
            };
            t.push(vec![r.into(), p.into(), density.into()]);
        }
        let name = format!("ripple_dist_u{u}.csv");
        ctx.sink.csv(&name, &t)?;
        names.push((u, name));
    }
    let titles: Vec<(String, String)> = names
        .iter()
        .map(|(u, _)| (format!("exact u={u}"), format!("gaussian u={u}")))
        .collect();
    let mut plot = Vec::new();
    for ((_, file), (te, tg)) in names.iter().zip(&titles) {
        plot.push(series(file, 2, te));
        plot.push(series(file, 3, tg));
    }
    let script = gnuplot("Ripple distribution", "r", "probability", false, &plot);
    ctx.sink.text("ripple_dist.gp", &script)?;
    Ok(format!("n={n} per={:.3e}", res.per))
}

/// Exact error rate and its Gaussian estimate against `m/n`.
fn per_approx(ctx: &mut Ctx) -> CliResult<String> {
    let n = ctx.n(100);
    let mut table = Table::new(
        format!(
            "frameless exact and approx (frameless-core exact, approx): n={n}, m_h = m/2, mean degrees 2.5 and 3.0, prune_eps={:e}",
            ctx.eps
        ),
        &["m_over_n", "m", "exact", "approx", "lost_mass"],
    );
    let mut worst = 0.0f64;
    for step in 0..=12 {
        let ratio = 1.0 + 0.1 * step as f64;
        let m = (ratio * n as f64).round() as usize;
        let cfg = two_types(n, m / 2, 2.5, m - m / 2, 3.0)?;
        let exact = ctx.exact(&cfg, false)?;
        let approx = estimate_pmf_and_per(&ApproxCurves::fit(&cfg, &cfg.spectra())?).per;
        if exact.per > 0.0 && approx > 0.0 {
            worst = worst.max((approx.log10() - exact.per.log10()).abs());
        }
        table.push(vec![ratio.into(), m.into(), exact.per.into(), approx.into(), exact.lost_mass.into()]);
        log::info!("per_approx m/n={ratio:.1} done");
    }
    ctx.sink.csv("per_approx.csv", &table)?;
    let f = "per_approx.csv";
    let script = gnuplot(
        "Packet error rate",
        "m/n",
        "PER",
        true,
        &[series(f, 3, "exact"), series(f, 4, "approximation")],
    );
    ctx.sink.text("per_approx.gp", &script)?;
    Ok(format!("max_log10_gap={worst:.3}"))
}

/// Feedback campaigns for several subperiod lengths, the best static
/// access probability, and frame-based IRSA.
fn per_dynamic(ctx: &mut Ctx) -> CliResult<String> {
    let n = ctx.n(50);
    let target = 2 * n;
    let trials = ctx.trials(20_000);
    let lengths: Vec<usize> = match ctx.t {
        Some(t) => vec![t],
        None => vec![5, 10, 20, 50],
    };
    let mut plot_files = Vec::new();
    let mut summary = Vec::new();
    for &t in &lengths {
        let policy = FeedbackPolicy::new(t, target, BetaGrid::default())?;
        let seed = ctx.seed.wrapping_add(t as u64);
        let res = run_feedback_campaign(n, &policy, trials, seed)?;
        let comment = format!(
            "frameless feedback (frameless-core feedback): n={n} t={t} m_target={target} beta_grid=0.5:8:0.05 estimator=Approximate trials={trials} seed={seed} rng=ChaCha8"
        );
        ctx.sink.csv(&format!("per_dynamic_t{t}.csv"), &per_table(&comment, &res))?;
        write_audit(&mut ctx.sink, &format!("per_dynamic_t{t}"), &comment, &res)?;
        summary.push(format!("t{t}={:.2e}", res.final_per().0));
        plot_files.push((format!("per_dynamic_t{t}.csv"), format!("feedback t={t}")));
    }

    let seed = ctx.seed.wrapping_add(1_000);
    let fixed = run_static_campaign(n, 2.94, target, trials, seed)?;
    let comment = format!(
        "frameless static (frameless-core feedback): n={n} beta=2.94 m_target={target} trials={trials} seed={seed} rng=ChaCha8"
    );
    ctx.sink.csv("per_dynamic_static.csv", &per_table(&comment, &fixed))?;
    summary.push(format!("static={:.2e}", fixed.final_per().0));
    plot_files.push(("per_dynamic_static.csv".into(), "static beta=2.94".into()));

    let seed = ctx.seed.wrapping_add(2_000);
    let degrees = IrsaConfig::reference_distribution();
    let mut irsa = Table::new(
        format!(
            "frameless irsa (frameless-core sim): n={n} degrees=2:0.25,3:0.6,8:0.15 trials={trials} seed={seed}+frame rng=ChaCha8"
        ),
        &["m", "per", "stderr"],
    );
    let first_frame = degrees.len() - 1;
    for frame in first_frame..=target {
        let cfg = IrsaConfig::new(n, frame, degrees.clone())?;
        let counts = simulate_irsa_trials(&cfg, trials, seed.wrapping_add(frame as u64));
        let (per, se) = EmpiricalPmf::from_counts(n, counts).per();
        irsa.push(vec![frame.into(), per.into(), se.into()]);
    }
    ctx.sink.csv("per_dynamic_irsa.csv", &irsa)?;
    plot_files.push(("per_dynamic_irsa.csv".into(), "IRSA".into()));

    let plot: Vec<Series> = plot_files
        .iter()
        .map(|(f, t)| Series { err: Some(3), ..series(f, 2, t) })
        .collect();
    let script = gnuplot("Packet error rate against elapsed slots", "m", "PER", true, &plot);
    ctx.sink.text("per_dynamic.gp", &script)?;
    Ok(summary.join(" "))
}
