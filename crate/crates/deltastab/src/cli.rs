//! Command-line pipeline: each stage of the synthesis workflow as a
//! subcommand over one shared [`RunConfig`], exchanging artifacts through
//! stable filenames in the run's output directory.
//!
//! Exit status: `0` on success, `2` when training finishes without a
//! confirmed certificate, `3` when verification rejects the shipped
//! networks, `1` for operational failures (bad files, bad domains, I/O).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barrier::BoxBarrier;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lipcert::weibull::WeibullFit;
use crate::netio::{load_network, load_trained_aux, save_network, save_trained_aux, TrainedAux};
use crate::plant::bounds::estimate_dynamics_bounds;
use crate::plant::sim::integrate_closed_loop;
use crate::sampling::{build_cover, load_cover, save_cover, verify_cover, Cover};
use crate::synth::budget::{compose_overall_l, ComposedL, LipschitzBudget};
use crate::synth::certify::{
    full_residual_scan, issue_certificate, verify_networks, Certificate, LossReport, Provenance,
    ScanOptions,
};
use crate::synth::envelope::KlEnvelope;
use crate::synth::losses::LambdaSet;
use crate::synth::train::{train, EpochStats, Problem};

/// Joint training and exhaustive sampling-based certification of neural
/// incremental-stability certificates for black-box dynamics.
#[derive(Debug, Parser)]
#[command(name = "deltastab", version)]
pub struct Cli {
    /// Stage to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Pipeline stages.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lay deterministic covers over the state and external-input boxes.
    GenData(CommonArgs),
    /// Estimate the plant's Lipschitz and magnitude bounds from samples.
    EstimateLipschitz(CommonArgs),
    /// Train the certificate and controller against the covers.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the configured epoch count.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
    },
    /// Re-verify shipped networks exhaustively and issue the certificate.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Random probes thrown at each cover's resolution claim.
        #[arg(long, value_name = "N", default_value_t = 100_000)]
        probe: usize,
    },
    /// Integrate closed-loop trajectory pairs under the trained controller.
    Simulate(CommonArgs),
    /// Tabulate the guaranteed convergence and disturbance-gain envelopes.
    KlBounds(CommonArgs),
}

/// Stable artifact names inside a run's output directory.
#[derive(Debug, Clone)]
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    /// Wraps `dir`, creating it if needed.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
        })
    }

    /// State cover.
    #[must_use]
    pub fn cover_x(&self) -> PathBuf {
        self.dir.join("cover_x.csv")
    }

    /// External-input cover.
    #[must_use]
    pub fn cover_w(&self) -> PathBuf {
        self.dir.join("cover_w.csv")
    }

    /// Certificate-network weights.
    #[must_use]
    pub fn clf_weights(&self) -> PathBuf {
        self.dir.join("clf.weights")
    }

    /// Controller-network weights.
    #[must_use]
    pub fn controller_weights(&self) -> PathBuf {
        self.dir.join("controller.weights")
    }

    /// Margin and multipliers.
    #[must_use]
    pub fn trained(&self) -> PathBuf {
        self.dir.join("trained.json")
    }

    /// Certification verdict.
    #[must_use]
    pub fn certificate(&self) -> PathBuf {
        self.dir.join("certificate.json")
    }

    /// Per-epoch training record.
    #[must_use]
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }

    /// Estimated plant constants.
    #[must_use]
    pub fn lipschitz(&self) -> PathBuf {
        self.dir.join("lipschitz.json")
    }

    /// Convergence envelope table.
    #[must_use]
    pub fn kl_beta(&self) -> PathBuf {
        self.dir.join("kl_beta.csv")
    }

    /// Disturbance-gain table.
    #[must_use]
    pub fn kl_gamma(&self) -> PathBuf {
        self.dir.join("kl_gamma.csv")
    }

    /// Trajectory file for pair `i`, side `a` or `b`.
    #[must_use]
    pub fn trajectory(&self, pair: usize, side: char) -> PathBuf {
        self.dir.join(format!("traj_{pair}_{side}.csv"))
    }
}

/// One tail fit as stored in `lipschitz.json`. Mirrors [`WeibullFit`] except
/// that a degenerate (infinite) shape is stored as `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Estimated constant.
    pub estimate: f64,
    /// Largest slope observed.
    pub sample_max: f64,
    /// Fitted tail shape; `null` when the batch maxima were identical.
    pub shape: Option<f64>,
    /// Fitted tail scale.
    pub scale: f64,
    /// Whether the likelihood search converged.
    pub converged: bool,
}

impl From<&WeibullFit> for FitReport {
    fn from(fit: &WeibullFit) -> Self {
        FitReport {
            estimate: fit.estimate,
            sample_max: fit.sample_max,
            shape: fit.shape.is_finite().then_some(fit.shape),
            scale: fit.scale,
            converged: fit.converged,
        }
    }
}

/// Contents of `lipschitz.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// State Lipschitz constant of the dynamics.
    pub l_x: FitReport,
    /// Control Lipschitz constant of the dynamics.
    pub l_u: FitReport,
    /// Magnitude bound on the dynamics.
    pub m_f: FitReport,
}

/// Runs one parsed invocation, returning the process exit status.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::GenData(common) => gen_data(common),
        Command::EstimateLipschitz(common) => estimate_lipschitz(common),
        Command::Train { common, epochs } => train_networks(common, *epochs),
        Command::Verify { common, probe } => verify_certificate(common, *probe),
        Command::Simulate(common) => simulate_pairs(common),
        Command::KlBounds(common) => kl_bounds(common),
    }
}

/// Loads the configuration and applies command-line overrides.
fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.hyper.seed = seed;
    }
    if let Some(out) = &common.out {
        config.run.out_dir.clone_from(out);
    }
    Ok(config)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| Error::Config {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    body.push('\n');
    write_text(path, &body)
}

/// Resolves the full Lipschitz budget for a run: templates and barrier
/// constants are computed from the configuration; plant constants come from
/// the `[lipschitz]` section when present, falling back to the estimator
/// artifact in the output directory.
pub fn compose_constants(config: &RunConfig, out: &OutDir) -> Result<(ComposedL, LipschitzBudget)> {
    let x = config.domains.state()?;
    let w = config.domains.external()?;
    let hp = &config.hyper;
    let (sl1, sl2, sl_u) =
        hp.template_lipschitz(2.0 * x.half_diagonal(), 2.0 * w.half_diagonal());
    let barrier = BoxBarrier::new(x);
    let (l_h, l_dh, m_h) = barrier.constants();

    let given = &config.lipschitz;
    let needs_artifact = given.l_x.is_none() || given.l_u.is_none() || given.m_f.is_none();
    let artifact = out.lipschitz();
    let estimated: Option<LipschitzReport> = if needs_artifact && artifact.is_file() {
        let text = fs::read_to_string(&artifact).map_err(|e| Error::io(&artifact, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::Config {
            path: artifact.display().to_string(),
            detail: e.to_string(),
        })?)
    } else {
        None
    };
    let resolve = |name: &str, own: Option<f64>, est: Option<f64>| -> Result<f64> {
        own.or(est).ok_or_else(|| Error::Config {
            path: format!("lipschitz.{name}"),
            detail: format!(
                "no value for {name}: set it in the [lipschitz] section or run \
                 estimate-lipschitz first (looked for {})",
                artifact.display()
            ),
        })
    };
    let budget = LipschitzBudget {
        l_x: Some(resolve(
            "l_x",
            given.l_x,
            estimated.as_ref().map(|r| r.l_x.estimate),
        )?),
        l_u: Some(resolve(
            "l_u",
            given.l_u,
            estimated.as_ref().map(|r| r.l_u.estimate),
        )?),
        m_f: Some(resolve(
            "m_f",
            given.m_f,
            estimated.as_ref().map(|r| r.m_f.estimate),
        )?),
        l_l: Some(hp.l_l),
        l_dl: Some(hp.l_dl),
        l_c: Some(hp.l_c),
        sl1: Some(sl1),
        sl2: Some(sl2),
        sl_u: Some(sl_u),
        l_h: Some(l_h),
        l_dh: Some(l_dh),
        m_h: Some(m_h),
        m_l: Some(hp.l_l),
    };
    let composed = compose_overall_l(&budget, hp.kappa, hp.mu_h)?;
    Ok((composed, budget))
}

fn gen_data(common: &CommonArgs) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let xs = build_cover(
        &config.domains.state()?,
        config.covers.epsilon_x,
        config.covers.budget,
    )?;
    let ws = build_cover(
        &config.domains.external()?,
        config.covers.epsilon_u,
        config.covers.budget,
    )?;
    save_cover(&xs, &out.cover_x())?;
    save_cover(&ws, &out.cover_w())?;
    println!(
        "wrote {} state points (radius {}) to {}",
        xs.points.len(),
        xs.epsilon,
        out.cover_x().display()
    );
    println!(
        "wrote {} input points (radius {}) to {}",
        ws.points.len(),
        ws.epsilon,
        out.cover_w().display()
    );
    Ok(0)
}

fn estimate_lipschitz(common: &CommonArgs) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let mut plant = config.plant.build()?;
    let bounds = estimate_dynamics_bounds(
        plant.as_mut(),
        &config.domains.state()?,
        &config.domains.control()?,
        &config.weibull.sampling(),
        config.hyper.seed,
    )?;
    let report = LipschitzReport {
        l_x: (&bounds.l_x).into(),
        l_u: (&bounds.l_u).into(),
        m_f: (&bounds.m_f).into(),
    };
    write_json(&out.lipschitz(), &report)?;
    for (name, fit) in [
        ("L_x", &report.l_x),
        ("L_u", &report.l_u),
        ("M_f", &report.m_f),
    ] {
        println!(
            "{name} = {} (sample max {}, tail fit {})",
            fit.estimate,
            fit.sample_max,
            if fit.converged { "converged" } else { "fallback" }
        );
    }
    println!("wrote {}", out.lipschitz().display());
    Ok(0)
}

/// Checks a cover loaded from disk against the run's boxes and validity
/// radius before training trusts it.
fn check_cover(cover: &Cover, expected: &crate::domain::BoxDomain, name: &str, epsilon: f64) -> Result<()> {
    if cover.domain.lo() != expected.lo() || cover.domain.hi() != expected.hi() {
        return Err(Error::DomainViolation {
            context: name.into(),
            detail: "cover was built over a different box than the configuration describes \
                     — rerun gen-data"
                .into(),
        });
    }
    if cover.epsilon > epsilon {
        return Err(Error::DomainViolation {
            context: name.into(),
            detail: format!(
                "cover radius {} exceeds the validity radius {epsilon} — rerun gen-data \
                 with a finer cover",
                cover.epsilon
            ),
        });
    }
    Ok(())
}

/// Writes the per-epoch training record.
fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut text = String::from(
        "epoch,loss,loss_main,loss_lip,loss_validity,eta,eta_s_batch,\
         max_lower_sandwich,max_upper_sandwich,max_decrease,max_barrier,\
         pd_clf,pd_clf_derivative,pd_controller\n",
    );
    for row in history {
        let [a, b, c, d] = row.family_max;
        let [pv, pdv, pc] = row.pd;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.epoch,
            row.loss_total,
            row.loss_main,
            row.loss_lip,
            row.loss_validity,
            row.eta,
            row.eta_s_batch,
            a,
            b,
            c,
            d,
            pv,
            pdv,
            pc
        ));
    }
    write_text(path, &text)
}

fn print_certificate_summary(cert: &Certificate) {
    println!(
        "eta* = {}, L = {}, eps = {}, margin = {}",
        cert.eta_star, cert.lipschitz_constant, cert.epsilon, cert.margin
    );
    println!("verdict: {}", cert.verdict);
    for reason in &cert.reasons {
        println!("  reason: {reason}");
    }
}

fn train_networks(common: &CommonArgs, epochs: Option<usize>) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let mut hp = config.hyper.clone();
    if let Some(e) = epochs {
        hp.epochs = e;
    }

    let xs = load_cover(&out.cover_x())?;
    let ws = load_cover(&out.cover_w())?;
    check_cover(&xs, &config.domains.state()?, "state cover", hp.epsilon)?;
    check_cover(&ws, &config.domains.external()?, "input cover", hp.epsilon)?;

    let (composed, _) = compose_constants(&config, &out)?;
    println!(
        "composed Lipschitz constant L = {} (terms {:?})",
        composed.value, composed.terms
    );

    let problem = Problem {
        barrier: BoxBarrier::new(config.domains.state()?),
        saturation: config.domains.saturation()?,
        v_hidden: config.networks.clf_hidden.clone(),
        v_activation: config.networks.clf_activation,
        g_hidden: config.networks.controller_hidden.clone(),
        g_activation: config.networks.controller_activation,
        overall_l: composed.value,
        d_min: config.scenario.d_min,
        scan_budget: config.scenario.max_tuples,
    };
    let mut plant = config.plant.build()?;
    let result = train(plant.as_mut(), &xs, &ws, &problem, &hp)?;
    println!(
        "trained {} epochs: eta = {}, confirmed = {}",
        result.epochs_run, result.eta, result.converged
    );

    write_history(&out.history(), &result.history)?;
    save_network(&result.v_net, &out.clf_weights())?;
    save_network(&result.g_net, &out.controller_weights())?;
    let last = result.history.last();
    let aux = TrainedAux {
        eta: result.eta,
        lambda_v: result.lambda.v.iter().copied().collect(),
        lambda_dv: result.lambda.dv.iter().copied().collect(),
        lambda_c: result.lambda.c.iter().copied().collect(),
        converged: result.converged,
        epochs_run: result.epochs_run,
        loss_main: last.map_or(0.0, |s| s.loss_main),
        loss_lip: last.map_or(0.0, |s| s.loss_lip),
        loss_validity: last.map_or(0.0, |s| s.loss_validity),
    };
    save_trained_aux(&aux, &out.trained())?;

    // Certificate for the artifacts just written. A run that confirmed
    // convergence already carries its exhaustive scan; otherwise run one
    // now, short-circuiting at the first residual the certificate could
    // not absorb anyway.
    let checks = verify_networks(&result.v_net, &result.g_net, &result.lambda, &hp)?;
    let scan = match result.final_scan {
        Some(scan) => scan,
        None => full_residual_scan(
            plant.as_mut(),
            &result.v_net,
            &result.g_net,
            &problem.barrier,
            &problem.saturation,
            &xs.points,
            &ws.points,
            &hp,
            problem.d_min,
            &ScanOptions {
                stop_above: Some(-composed.value * hp.epsilon),
                max_tuples: problem.scan_budget,
                ..ScanOptions::default()
            },
        )?,
    };
    let loss = LossReport {
        main: aux.loss_main,
        lipschitz: aux.loss_lip,
        validity: aux.loss_validity,
    };
    let provenance = Provenance {
        seed: hp.seed,
        config_sha256: sha256_file(&common.config)?,
        cover_x_sha256: sha256_file(&out.cover_x())?,
        cover_w_sha256: sha256_file(&out.cover_w())?,
    };
    let cert = issue_certificate(
        &scan,
        &checks,
        result.eta,
        composed.value,
        hp.epsilon,
        problem.d_min,
        loss,
        provenance,
    );
    write_json(&out.certificate(), &cert)?;
    print_certificate_summary(&cert);
    Ok(if result.converged { 0 } else { 2 })
}

fn verify_certificate(common: &CommonArgs, probe: usize) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let hp = &config.hyper;

    let v_net = load_network(&out.clf_weights())?;
    let g_net = load_network(&out.controller_weights())?;
    let aux = load_trained_aux(&out.trained())?;

    // Verification trusts nothing it can recompute: covers are rebuilt
    // from the configuration, probed, and written back so the certificate
    // hashes describe exactly what was scanned.
    let x = config.domains.state()?;
    let w = config.domains.external()?;
    let xs = build_cover(&x, config.covers.epsilon_x, config.covers.budget)?;
    let ws = build_cover(&w, config.covers.epsilon_u, config.covers.budget)?;
    for (name, cover, salt) in [("state", &xs, 0), ("input", &ws, 1)] {
        let check = verify_cover(cover, probe, hp.seed ^ salt)?;
        if !check.ok {
            return Err(Error::DomainViolation {
                context: format!("{name} cover"),
                detail: format!(
                    "a probe point sits {} from its nearest cover point, beyond the \
                     claimed radius {}",
                    check.max_nearest, cover.epsilon
                ),
            });
        }
        println!(
            "{name} cover: {} points, {} probes within radius {}",
            cover.points.len(),
            check.probes,
            cover.epsilon
        );
    }
    save_cover(&xs, &out.cover_x())?;
    save_cover(&ws, &out.cover_w())?;

    let lambda = LambdaSet {
        v: DVector::from_vec(aux.lambda_v.clone()),
        dv: DVector::from_vec(aux.lambda_dv.clone()),
        c: DVector::from_vec(aux.lambda_c.clone()),
    };
    let checks = verify_networks(&v_net, &g_net, &lambda, hp)?;
    let (composed, _) = compose_constants(&config, &out)?;

    let barrier = BoxBarrier::new(x);
    let saturation = config.domains.saturation()?;
    let mut plant = config.plant.build()?;
    let scan = full_residual_scan(
        plant.as_mut(),
        &v_net,
        &g_net,
        &barrier,
        &saturation,
        &xs.points,
        &ws.points,
        hp,
        config.scenario.d_min,
        &ScanOptions {
            stop_above: None,
            max_tuples: config.scenario.max_tuples,
            ..ScanOptions::default()
        },
    )?;
    let loss = LossReport {
        main: aux.loss_main,
        lipschitz: aux.loss_lip,
        validity: aux.loss_validity,
    };
    let provenance = Provenance {
        seed: hp.seed,
        config_sha256: sha256_file(&common.config)?,
        cover_x_sha256: sha256_file(&out.cover_x())?,
        cover_w_sha256: sha256_file(&out.cover_w())?,
    };
    let cert = issue_certificate(
        &scan,
        &checks,
        aux.eta,
        composed.value,
        hp.epsilon,
        config.scenario.d_min,
        loss,
        provenance,
    );
    write_json(&out.certificate(), &cert)?;
    print_certificate_summary(&cert);
    Ok(if cert.is_certified() { 0 } else { 3 })
}

fn simulate_pairs(common: &CommonArgs) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let g_net = load_network(&out.controller_weights())?;
    let saturation = config.domains.saturation()?;
    let x = config.domains.state()?;
    let w_box = config.domains.external()?;
    let mut plant = config.plant.build()?;

    let mut pairs: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = config
        .simulate
        .pairs
        .iter()
        .map(|p| {
            (
                DVector::from_column_slice(&p.x0),
                DVector::from_column_slice(&p.x0_hat),
                DVector::from_column_slice(&p.w),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.hyper.seed);
    for _ in 0..config.simulate.random_pairs {
        pairs.push((
            x.sample_uniform(&mut rng),
            x.sample_uniform(&mut rng),
            w_box.sample_uniform(&mut rng),
        ));
    }
    if pairs.is_empty() {
        return Err(Error::Config {
            path: "simulate".into(),
            detail: "nothing to integrate: give explicit pairs or set random_pairs".into(),
        });
    }

    for (i, (x0, x0_hat, w)) in pairs.iter().enumerate() {
        for (name, point) in [("x0", x0), ("x0_hat", x0_hat)] {
            if !x.contains(point, 1e-9) {
                return Err(Error::DomainViolation {
                    context: format!("simulate pair {i}"),
                    detail: format!("{name} {:?} lies outside the state box", point.as_slice()),
                });
            }
        }
        if !w_box.contains(w, 1e-9) {
            return Err(Error::DomainViolation {
                context: format!("simulate pair {i}"),
                detail: format!("w {:?} lies outside the input box", w.as_slice()),
            });
        }
        let traj_a = integrate_closed_loop(
            plant.as_mut(),
            &g_net,
            &saturation,
            x0,
            |_| w.clone(),
            config.simulate.t_final,
            config.simulate.dt,
        )?;
        let traj_b = integrate_closed_loop(
            plant.as_mut(),
            &g_net,
            &saturation,
            x0_hat,
            |_| w.clone(),
            config.simulate.t_final,
            config.simulate.dt,
        )?;
        let path_a = out.trajectory(i, 'a');
        let path_b = out.trajectory(i, 'b');
        traj_a.save_csv(&path_a)?;
        traj_b.save_csv(&path_b)?;
        println!(
            "pair {i}: {} and {} ({} steps each)",
            path_a.display(),
            path_b.display(),
            traj_a.len() - 1
        );
    }
    Ok(0)
}

fn kl_bounds(common: &CommonArgs) -> Result<i32> {
    let config = load_config(common)?;
    let out = OutDir::create(&config.run.out_dir)?;
    let hp = &config.hyper;
    let envelope = KlEnvelope::new(hp, hp.kappa)?;
    let s_max = 2.0 * config.domains.state()?.half_diagonal();
    let r_max = 2.0 * config.domains.external()?.half_diagonal();
    let t_final = config.simulate.t_final;

    let mut beta = String::from("s,t,beta\n");
    for i in 0..=20 {
        let s = s_max * f64::from(i) / 20.0;
        for j in 0..=100 {
            let t = t_final * f64::from(j) / 100.0;
            beta.push_str(&format!("{s},{t},{}\n", envelope.beta(s, t)));
        }
    }
    write_text(&out.kl_beta(), &beta)?;

    let mut gamma = String::from("r,gamma\n");
    for k in 0..=100 {
        let r = r_max * f64::from(k) / 100.0;
        gamma.push_str(&format!("{r},{}\n", envelope.gain(r)));
    }
    write_text(&out.kl_gamma(), &gamma)?;

    println!(
        "wrote {} and {}",
        out.kl_beta().display(),
        out.kl_gamma().display()
    );
    Ok(0)
}
