use std::path::PathBuf;
use std::time::Instant;

use frameless_core::exact::DEFAULT_STATE_BUDGET;
use frameless_core::{
    estimate_pmf_and_per, run_exact, run_feedback_campaign, simulate_irsa_trials,
    simulate_unresolved, ApproxCurves, BetaGrid, CampaignResult, EmpiricalPmf, Estimator,
    ExactOptions, ExactResult, FeedbackPolicy, IrsaConfig, SystemConfig, ThinningMode,
};

use crate::output::{gnuplot, Cell, Series, Sink, Table, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use crate::settings::{parse_degrees, parse_grid, system, CliError, CliResult, FileSettings};
use crate::{ApproxArgs, CommonArgs, ExactArgs, FeedbackArgs, IrsaArgs, SimulateArgs};

pub const DEFAULT_TRIALS: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 1;

/// Output directory: flag, then config file, then environment, then default.
pub fn out_dir(fs: &FileSettings, common: &CommonArgs) -> CliResult<PathBuf> {
    if let Some(p) = fs.pick(common.out.clone(), "out")? {
        return Ok(p);
    }
    Ok(std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)))
}

pub fn prune_eps(fs: &FileSettings, flag: Option<f64>, default: f64) -> CliResult<f64> {
    let eps = fs.pick(flag, "prune_eps")?.unwrap_or(default);
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(CliError::config("prune-eps", format!("{eps} must be a nonnegative number")));
    }
    Ok(eps)
}

fn runtime(start: Instant) -> String {
    format!("runtime={:.2}s", start.elapsed().as_secs_f64())
}

pub fn describe(cfg: &SystemConfig) -> String {
    format!("n={} slots={}", cfg.users(), cfg.slots_string())
}

pub fn pmf_table(comment: &str, pmf: &[f64]) -> Table {
    let mut t = Table::new(comment, &["u", "pmf"]);
    for (u, &p) in pmf.iter().enumerate() {
        t.push(vec![u.into(), p.into()]);
    }
    t
}

/// `u,C1..Ck,R,sigma_R`, divided by `scale`.
pub fn moments_table(comment: &str, res: &ExactResult, scale: f64) -> Table {
    let k = res.moments.first().map_or(0, |m| m.clouds.len());
    let mut header = vec!["u".to_string()];
    header.extend((1..=k).map(|h| format!("C{h}")));
    header.extend(["R".to_string(), "sigma_R".to_string()]);
    let mut t = Table::with_header(comment, header);
    for m in &res.moments {
        let mut row: Vec<Cell> = vec![m.stage.into()];
        row.extend(m.clouds.iter().map(|c| Cell::from(c / scale)));
        row.push((m.ripple / scale).into());
        row.push((m.ripple_sd() / scale).into());
        t.push(row);
    }
    t
}

/// `x,C1..Ck,R,sigmaR` at `x = u/n`.
pub fn curves_table(comment: &str, curves: &ApproxCurves) -> Table {
    let k = curves.cloud_consts().len();
    let n = curves.users();
    let mut header = vec!["x".to_string()];
    header.extend((1..=k).map(|h| format!("C{h}")));
    header.extend(["R".to_string(), "sigmaR".to_string()]);
    let mut t = Table::with_header(comment, header);
    for u in 1..=n {
        let x = u as f64 / n as f64;
        let mut row: Vec<Cell> = vec![x.into()];
        row.extend((0..k).map(|h| Cell::from(curves.cloud(h, x))));
        row.push(curves.ripple(x).into());
        row.push(curves.ripple_sd(x).into());
        t.push(row);
    }
    t
}

pub fn freq_table(comment: &str, est: &EmpiricalPmf) -> Table {
    let mut t = Table::new(comment, &["u", "freq", "stderr"]);
    for (u, (f, s)) in est.freq.iter().zip(&est.stderr).enumerate() {
        t.push(vec![u.into(), (*f).into(), (*s).into()]);
    }
    t
}

pub fn trials_table(comment: &str, counts: &[usize]) -> Table {
    let mut t = Table::new(comment, &["trial", "unresolved"]);
    for (i, &u) in counts.iter().enumerate() {
        t.push(vec![i.into(), u.into()]);
    }
    t
}

pub fn per_table(comment: &str, res: &CampaignResult) -> Table {
    let mut t = Table::new(comment, &["m", "per", "stderr"]);
    for (i, (p, s)) in res.per.iter().zip(&res.stderr).enumerate() {
        t.push(vec![(i + 1).into(), (*p).into(), (*s).into()]);
    }
    t
}

pub fn exact(a: ExactArgs) -> CliResult<String> {
    let start = Instant::now();
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let cfg = system(&fs, a.system.n, a.system.slots.clone())?;
    let eps = prune_eps(&fs, a.prune_eps, 0.0)?;
    let budget = fs.pick(a.budget, "budget")?.unwrap_or(DEFAULT_STATE_BUDGET);
    let opts = ExactOptions {
        prune_eps: eps,
        max_states: budget,
        record_ripple_pmf: false,
    };
    let res = run_exact(&cfg, &cfg.spectra(), &opts)?;
    let mut sink = Sink::new(&out_dir(&fs, &a.common)?)?;
    let comment = format!(
        "frameless exact (frameless-core exact): {} prune_eps={eps:e} budget={budget} lost_mass={}",
        describe(&cfg),
        crate::output::fmt_real(res.lost_mass)
    );
    sink.csv("exact_pmf.csv", &pmf_table(&comment, &res.pmf))?;
    sink.csv("exact_moments.csv", &moments_table(&comment, &res, 1.0))?;
    if a.common.plot {
        let script = gnuplot(
            "Unresolved users (exact)",
            "u",
            "P_u",
            true,
            &[Series { file: "exact_pmf.csv", x: 1, y: 2, title: "exact", err: None }],
        );
        sink.text("exact_pmf.gp", &script)?;
    }
    Ok(format!(
        "per={:.3} throughput={:.3} lost={:.3e} peak_states={} {}",
        res.per,
        res.throughput,
        res.lost_mass,
        res.peak_states,
        runtime(start)
    ))
}

pub fn approx(a: ApproxArgs) -> CliResult<String> {
    let start = Instant::now();
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let cfg = system(&fs, a.system.n, a.system.slots.clone())?;
    let curves = ApproxCurves::fit(&cfg, &cfg.spectra())?;
    let est = estimate_pmf_and_per(&curves);
    let mut sink = Sink::new(&out_dir(&fs, &a.common)?)?;
    let comment = format!("frameless approx (frameless-core approx): {}", describe(&cfg));
    sink.csv("approx_pmf.csv", &pmf_table(&comment, &est.pmf))?;
    sink.csv("approx_curves.csv", &curves_table(&comment, &curves))?;
    if a.common.plot {
        let k = cfg.num_types();
        let mut series: Vec<Series> = (0..k)
            .map(|h| Series {
                file: "approx_curves.csv",
                x: 1,
                y: 2 + h,
                title: ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8"].get(h).copied().unwrap_or("C"),
                err: None,
            })
            .collect();
        series.push(Series { file: "approx_curves.csv", x: 1, y: 2 + k, title: "R", err: None });
        series.push(Series { file: "approx_curves.csv", x: 1, y: 3 + k, title: "sigmaR", err: None });
        sink.text("approx_curves.gp", &gnuplot("Normalized ripple and clouds", "x", "", false, &series))?;
    }
    let throughput = cfg.users() as f64 * (1.0 - est.per) / cfg.total_slots() as f64;
    Ok(format!("per={:.3} throughput={throughput:.3} {}", est.per, runtime(start)))
}

fn trials_and_seed(fs: &FileSettings, trials: Option<u64>, seed: Option<u64>) -> CliResult<(u64, u64)> {
    let trials = fs.pick(trials, "trials")?.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(CliError::config("trials", "at least one trial is required"));
    }
    Ok((trials, fs.pick(seed, "seed")?.unwrap_or(DEFAULT_SEED)))
}

pub fn simulate(a: SimulateArgs) -> CliResult<String> {
    let start = Instant::now();
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let cfg = system(&fs, a.system.n, a.system.slots.clone())?;
    let (trials, seed) = trials_and_seed(&fs, a.trials, a.seed)?;
    let counts = simulate_unresolved(&cfg, trials, seed);
    let est = EmpiricalPmf::from_counts(cfg.users(), counts.iter().copied());
    let mut sink = Sink::new(&out_dir(&fs, &a.common)?)?;
    let comment = format!(
        "frameless simulate (frameless-core sim): {} trials={trials} seed={seed} rng=ChaCha8",
        describe(&cfg)
    );
    sink.csv("simulate_trials.csv", &trials_table(&comment, &counts))?;
    sink.csv("simulate_pmf.csv", &freq_table(&comment, &est))?;
    if a.common.plot {
        let script = gnuplot(
            "Unresolved users (simulation)",
            "u",
            "frequency",
            true,
            &[Series { file: "simulate_pmf.csv", x: 1, y: 2, title: "simulation", err: Some(3) }],
        );
        sink.text("simulate_pmf.gp", &script)?;
    }
    let (per, se) = est.per();
    let throughput = cfg.users() as f64 * (1.0 - per) / cfg.total_slots() as f64;
    Ok(format!(
        "per={per:.3} stderr={se:.2e} throughput={throughput:.3} trials={trials} {}",
        runtime(start)
    ))
}

pub fn irsa(a: IrsaArgs) -> CliResult<String> {
    let start = Instant::now();
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let n: usize = fs.require(a.n, "n")?;
    let frame: usize = fs.require(a.frame, "frame")?;
    let degrees = match fs.pick(a.degrees.clone(), "degrees")? {
        Some(text) => parse_degrees(&text)?,
        None => IrsaConfig::reference_distribution(),
    };
    let cfg = IrsaConfig::new(n, frame, degrees)?;
    let (trials, seed) = trials_and_seed(&fs, a.trials, a.seed)?;
    let counts = simulate_irsa_trials(&cfg, trials, seed);
    let est = EmpiricalPmf::from_counts(n, counts.iter().copied());
    let mut sink = Sink::new(&out_dir(&fs, &a.common)?)?;
    let degrees: Vec<String> = cfg
        .degrees
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(d, p)| format!("{d}:{p}"))
        .collect();
    let comment = format!(
        "frameless irsa (frameless-core sim): n={n} frame={frame} degrees={} trials={trials} seed={seed} rng=ChaCha8",
        degrees.join(",")
    );
    sink.csv("irsa_trials.csv", &trials_table(&comment, &counts))?;
    sink.csv("irsa_pmf.csv", &freq_table(&comment, &est))?;
    if a.common.plot {
        let script = gnuplot(
            "Unresolved users (IRSA)",
            "u",
            "frequency",
            true,
            &[Series { file: "irsa_pmf.csv", x: 1, y: 2, title: "IRSA", err: Some(3) }],
        );
        sink.text("irsa_pmf.gp", &script)?;
    }
    let (per, se) = est.per();
    let throughput = n as f64 * (1.0 - per) / frame as f64;
    Ok(format!(
        "per={per:.3} stderr={se:.2e} throughput={throughput:.3} trials={trials} {}",
        runtime(start)
    ))
}

pub fn parse_estimator(text: &str) -> CliResult<Estimator> {
    match text {
        "approx" | "approximate" => Ok(Estimator::Approximate),
        "exact" => Ok(Estimator::Exact),
        other => Err(CliError::config("estimator", format!("`{other}` is not `approx` or `exact`"))),
    }
}

/// Audit rows as JSON lines and, for the first trial, as CSV.
pub fn write_audit(sink: &mut Sink, stem: &str, comment: &str, res: &CampaignResult) -> CliResult<()> {
    let mut lines = String::new();
    for rec in &res.audit {
        let line = serde_json::to_string(rec).map_err(|e| CliError::Io(e.to_string()))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    sink.text(&format!("{stem}_audit.jsonl"), &lines)?;
    let mut t = Table::new(comment, &["subperiod", "u", "beta", "per_hat"]);
    for rec in res.audit.iter().filter(|r| r.trial == 0) {
        t.push(vec![rec.subperiod.into(), rec.u.into(), rec.beta.into(), rec.per_hat.into()]);
    }
    sink.csv(&format!("{stem}_audit.csv"), &t)
}

pub fn feedback(a: FeedbackArgs) -> CliResult<String> {
    let start = Instant::now();
    let fs = FileSettings::load(a.common.config.as_deref())?;
    let n: usize = fs.require(a.n, "n")?;
    let t: usize = fs.require(a.t, "t")?;
    let target: usize = fs.require(a.m_target, "m_target")?;
    let grid = match fs.pick(a.beta_grid.clone(), "beta_grid")? {
        Some(text) => parse_grid(&text)?,
        None => BetaGrid::default(),
    };
    let estimator = match fs.pick(a.estimator.clone(), "estimator")? {
        Some(text) => parse_estimator(&text)?,
        None => Estimator::Approximate,
    };
    let thinning = if fs.flag(a.strict_thinning, "strict_thinning")? {
        ThinningMode::Truncated
    } else {
        ThinningMode::Full
    };
    let (trials, seed) = trials_and_seed(&fs, a.trials, a.seed)?;
    if n == 0 {
        return Err(CliError::config("n", "number of users must be positive"));
    }
    let policy = FeedbackPolicy::new(t, target, grid)?
        .with_estimator(estimator)
        .with_thinning(thinning);
    let res = run_feedback_campaign(n, &policy, trials, seed)?;
    let mut sink = Sink::new(&out_dir(&fs, &a.common)?)?;
    let comment = format!(
        "frameless feedback (frameless-core feedback): n={n} t={t} m_target={target} beta_grid={}:{}:{} estimator={estimator:?} thinning={thinning:?} trials={trials} seed={seed} rng=ChaCha8",
        grid.lower, grid.upper, grid.step
    );
    sink.csv("feedback_per.csv", &per_table(&comment, &res))?;
    write_audit(&mut sink, "feedback", &comment, &res)?;
    if a.common.plot {
        let script = gnuplot(
            "Packet error rate with feedback",
            "m",
            "PER",
            true,
            &[Series { file: "feedback_per.csv", x: 1, y: 2, title: "feedback", err: Some(3) }],
        );
        sink.text("feedback_per.gp", &script)?;
    }
    let (per, se) = res.final_per();
    Ok(format!(
        "per={per:.3e} stderr={se:.2e} m={target} trials={trials} {}",
        runtime(start)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use frameless_core::SystemConfig;

    #[test]
    fn moments_table_has_one_row_per_stage() {
        let cfg = SystemConfig::single(6, 8, 2.0).unwrap();
        let res = run_exact(&cfg, &cfg.spectra(), &ExactOptions::default()).unwrap();
        let text = moments_table("t", &res, 1.0).render();
        assert_eq!(text.lines().count(), 2 + 7);
        assert_eq!(text.lines().nth(1).unwrap(), "u,C1,R,sigma_R");
    }

    #[test]
    fn estimator_names() {
        assert_eq!(parse_estimator("exact").unwrap(), Estimator::Exact);
        assert_eq!(parse_estimator("approx").unwrap(), Estimator::Approximate);
        assert!(parse_estimator("fast").is_err());
    }
}
