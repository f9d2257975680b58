use std::path::{Path, PathBuf};
use std::time::Instant;

use gwpd::integrators::Wavepacket;
use gwpd::potentials::PotentialKind;
use gwpd::reference::{fidelity, grid_propagate, harmonic_exact_heller, sample_gaussian_on_grid};
use gwpd::{GaussianHeller, MethodId, PhysicalSetup, PropagateOptions, Propagator, Trajectory};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{Parametrization, RunConfig};
use crate::output::{self, Checks, StateColumns, Summary};
use crate::Failure;

fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf, Failure> {
    let dir = flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.directory.clone());
    output::ensure_dir(&dir)?;
    Ok(dir)
}

fn note(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("gwpd: {}", msg.as_ref());
    }
}

/// Largest |X(t) − X(0)| over the recorded rows.
fn drift(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut worst = 0.0_f64;
    for v in values {
        let x0 = *first.get_or_insert(v);
        worst = worst.max((v - x0).abs());
    }
    worst
}

struct RunOutput {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
    summary: Summary,
}

fn run_states<W: Wavepacket + StateColumns>(
    cfg: &RunConfig,
    prop: &Propagator,
    initial: &W,
    with_reverse: bool,
) -> Result<RunOutput, Failure> {
    let start = Instant::now();
    let scheme = prop.scheme();
    let save_every = cfg.save_every()?;
    let opts = PropagateOptions { save_every, diagnostics: true, renormalize: false };
    let traj: Trajectory<W> = prop.propagate(initial, scheme.steps, opts)?;
    let header = output::trajectory_header::<W>(prop.setup().dim());
    let mut rows = Vec::with_capacity(traj.len());
    for (k, (state, record)) in traj.states.iter().zip(&traj.diagnostics).enumerate() {
        let row = output::trajectory_row(state, record);
        if row.iter().any(|x| !x.is_finite()) {
            let step = (k * save_every).min(scheme.steps);
            return Err(Failure::numerical(format!("non-finite values at step {step} (t = {})", record.t)));
        }
        rows.push(row);
    }
    let reversibility_residual = if with_reverse || cfg.output.reversibility {
        Some(prop.reverse_roundtrip(initial, scheme.steps)?)
    } else {
        None
    };
    let d = &traj.diagnostics;
    let norm_drift = drift(d.iter().map(|r| r.norm));
    let e_drift = drift(d.iter().map(|r| r.energy));
    let e_eff_drift = drift(d.iter().map(|r| r.effective_energy));
    let c = &cfg.checks;
    let checks = (c.max_norm_drift.is_some() || c.max_e_drift.is_some() || c.max_e_eff_drift.is_some()).then(|| {
        let within = |bound: Option<f64>, value: f64| bound.map_or(true, |b| value <= b);
        Checks {
            max_norm_drift: c.max_norm_drift,
            max_e_drift: c.max_e_drift,
            max_e_eff_drift: c.max_e_eff_drift,
            passed: within(c.max_norm_drift, norm_drift)
                && within(c.max_e_drift, e_drift)
                && within(c.max_e_eff_drift, e_eff_drift),
        }
    });
    let summary = Summary {
        method: prop.method().id().to_string(),
        scheme: scheme.label(),
        parametrization: match cfg.scheme.parametrization {
            Parametrization::Heller => "heller".into(),
            Parametrization::Hagedorn => "hagedorn".into(),
        },
        dt: scheme.dt,
        steps: scheme.steps,
        norm_drift,
        e_drift,
        e_eff_drift,
        reversibility_residual,
        checks,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { header, rows, summary })
}

fn build(cfg: &RunConfig) -> Result<(PhysicalSetup, GaussianHeller, Propagator), Failure> {
    let setup = cfg.physical_setup()?;
    let initial = cfg.initial_heller(&setup)?;
    let method = cfg.method(&setup, initial.q())?;
    let prop = Propagator::new(cfg.scheme()?, method)?;
    Ok((setup, initial, prop))
}

/// `run` and `reverse`: trajectory.csv (run only) and summary.json.
pub fn run(config: &Path, out: Option<&Path>, quiet: bool, reverse: bool) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let (setup, initial, prop) = build(&cfg)?;
    let result = match cfg.scheme.parametrization {
        Parametrization::Heller => run_states(&cfg, &prop, &initial, reverse)?,
        Parametrization::Hagedorn => run_states(&cfg, &prop, &cfg.initial_hagedorn(&setup)?, reverse)?,
    };
    let dir = output_dir(&cfg, out)?;
    if !reverse {
        output::write_csv(&dir.join("trajectory.csv"), &result.header, &result.rows)?;
    }
    output::write_json(&dir.join("summary.json"), &result.summary)?;
    let s = &result.summary;
    note(
        quiet,
        format!(
            "{} {} dt={} steps={}: norm drift {:.3e}, E drift {:.3e}, E_eff drift {:.3e}{} -> {}",
            s.method,
            s.scheme,
            s.dt,
            s.steps,
            s.norm_drift,
            s.e_drift,
            s.e_eff_drift,
            s.reversibility_residual.map(|r| format!(", reversibility residual {r:.3e}")).unwrap_or_default(),
            dir.display()
        ),
    );
    Ok(())
}

fn parse_dt_list(text: &str) -> Result<Vec<f64>, Failure> {
    let dts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Failure::config(format!("bad --dt-list entry `{s}`"))))
        .collect::<Result<_, _>>()?;
    if dts.len() < 2 || dts.iter().any(|d| !(*d > 0.0)) {
        return Err(Failure::config("--dt-list needs at least two positive time steps".into()));
    }
    Ok(dts)
}

fn fitted_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn final_heller(cfg: &RunConfig, setup: &PhysicalSetup, prop: &Propagator, steps: usize) -> Result<GaussianHeller, Failure> {
    let opts = PropagateOptions { save_every: steps.max(1), diagnostics: false, renormalize: false };
    Ok(match cfg.scheme.parametrization {
        Parametrization::Heller => prop.propagate(&cfg.initial_heller(setup)?, steps, opts)?.last().clone(),
        Parametrization::Hagedorn => {
            prop.propagate(&cfg.initial_hagedorn(setup)?, steps, opts)?.last().to_heller(setup)?
        }
    })
}

/// Global error at the configured final time against the analytic harmonic
/// solution when one applies, otherwise against the smallest time step.
pub fn converge(config: &Path, out: Option<&Path>, dt_list: Option<&str>, quiet: bool) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let (setup, initial, prop) = build(&cfg)?;
    let t_end = cfg.final_time();
    let mut dts = match dt_list {
        Some(text) => parse_dt_list(text)?,
        None => (0..4).map(|k| cfg.scheme.dt / f64::powi(2.0, k)).collect(),
    };
    dts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut plan = Vec::new();
    for &dt in &dts {
        let steps = (t_end / dt).round() as usize;
        if steps == 0 || ((steps as f64 * dt) - t_end).abs() > 1e-9 * t_end.max(1.0) {
            return Err(Failure::config(format!("dt = {dt} does not divide the final time {t_end}")));
        }
        plan.push((dt, steps));
    }
    let analytic = match prop.method().model().kind() {
        PotentialKind::Harmonic { hessian, center, offset } if *offset == 0.0 && !prop.method().frozen() => {
            Some(harmonic_exact_heller(&initial, hessian, center, &setup, t_end)?)
        }
        _ => None,
    };
    let finals: Vec<GaussianHeller> = plan
        .par_iter()
        .map(|&(dt, steps)| -> Result<GaussianHeller, Failure> {
            let p = Propagator::new(cfg.scheme_with(dt, steps)?, prop.method().clone())?;
            final_heller(&cfg, &setup, &p, steps)
        })
        .collect::<Result<_, _>>()?;
    let (reference, fitted) = match &analytic {
        Some(exact) => (exact, plan.len()),
        None => (finals.last().unwrap(), plan.len() - 1),
    };
    let mut points = Vec::new();
    for (k, &(dt, _)) in plan.iter().take(fitted).enumerate() {
        points.push((dt, finals[k].max_param_diff(reference)));
    }
    if points.len() < 2 {
        return Err(Failure::config("need at least two non-reference time steps to fit a slope".into()));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Failure::numerical("zero or non-finite error; cannot fit a slope".into()));
    }
    let slope = fitted_slope(&points);
    let dir = output_dir(&cfg, out)?;
    let rows: Vec<Vec<f64>> = points.iter().map(|&(dt, e)| vec![dt, e, slope]).collect();
    output::write_csv(&dir.join("convergence.csv"), &["dt", "error", "slope"].map(String::from), &rows)?;
    note(
        quiet,
        format!(
            "{} reference, fitted slope {slope:.4} over {} time steps -> {}",
            if analytic.is_some() { "analytic" } else { "smallest-dt" },
            points.len(),
            dir.display()
        ),
    );
    Ok(())
}

/// Fidelity |⟨ψ_grid|ψ_gauss⟩|² at every saved time; writes fidelity.csv.
pub fn compare_grid(config: &Path, out: Option<&Path>, quiet: bool) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let (setup, initial, prop) = build(&cfg)?;
    let scheme = prop.scheme().clone();
    let save_every = cfg.save_every()?;
    let opts = PropagateOptions { save_every, diagnostics: false, renormalize: false };
    let states: Vec<GaussianHeller> = match cfg.scheme.parametrization {
        Parametrization::Heller => prop.propagate(&initial, scheme.steps, opts)?.states,
        Parametrization::Hagedorn => prop
            .propagate(&cfg.initial_hagedorn(&setup)?, scheme.steps, opts)?
            .states
            .iter()
            .map(|h| h.to_heller(&setup))
            .collect::<Result<_, _>>()?,
    };
    let d = setup.dim();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for s in &states {
        let sigma = s.position_covariance(&setup)?;
        for k in 0..d {
            let half = 8.0 * sigma[(k, k)].sqrt();
            bounds[k].0 = bounds[k].0.min(s.q()[k] - half);
            bounds[k].1 = bounds[k].1.max(s.q()[k] + half);
        }
    }
    let substeps = cfg.grid_substeps()?;
    let spec = cfg.grid_spec(bounds, scheme.dt / substeps as f64, scheme.steps * substeps)?;
    let psi0 = sample_gaussian_on_grid(&initial, &spec, &setup)?;
    let frames = grid_propagate(&psi0, prop.method().model(), &spec, &setup, save_every * substeps)?;
    let fields: Vec<_> = frames.iter().map(|(_, f)| f.clone()).collect();
    let fid = fidelity(&states, &fields, &spec, &setup)?;
    let rows: Vec<Vec<f64>> =
        frames.iter().zip(&fid).map(|((t, f), x)| vec![*t, *x, f.norm_squared(&spec)]).collect();
    let dir = output_dir(&cfg, out)?;
    output::write_csv(&dir.join("fidelity.csv"), &["t", "fidelity", "grid_norm"].map(String::from), &rows)?;
    let worst = fid.iter().copied().fold(1.0_f64, f64::min);
    note(quiet, format!("grid {:?} points, minimum fidelity {worst:.10} -> {}", spec.points, dir.display()));
    Ok(())
}

pub fn list_methods() {
    println!("{:<26} {:<7} description", "id", "width");
    for id in MethodId::ALL {
        println!("{:<26} {:<7} {}", id.name(), if id.is_frozen() { "frozen" } else { "thawed" }, id.description());
    }
}

/// Rebuilds (V0, V1, V2) from the q and width columns of a trajectory.csv.
pub fn emit_coeffs(config: &Path, input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let (setup, _, prop) = build(&cfg)?;
    let d = setup.dim();
    let bad = |e: csv::Error| Failure::config(format!("cannot read {}: {e}", input.display()));
    let mut reader = csv::Reader::from_path(input).map_err(bad)?;
    let header: Vec<String> = reader.headers().map_err(bad)?.iter().map(String::from).collect();
    let col = |name: &str| -> Result<usize, Failure> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::config(format!("{}: missing column `{name}`", input.display())))
    };
    let t_col = col("t")?;
    let q_cols: Vec<usize> = (0..d).map(|i| col(&format!("q_{i}"))).collect::<Result<_, _>>()?;
    let heller = header.iter().any(|h| h.starts_with("ImA_"));
    let mut width_cols = Vec::new();
    if heller {
        for i in 0..d {
            for j in i..d {
                width_cols.push(col(&format!("ImA_{i}_{j}"))?);
            }
        }
    } else {
        for prefix in ["ReQ", "ImQ", "ReP", "ImP"] {
            for i in 0..d {
                for j in 0..d {
                    width_cols.push(col(&format!("{prefix}_{i}_{j}"))?);
                }
            }
        }
    }
    let mut out_header = vec!["t".to_string(), "V0".to_string()];
    out_header.extend((0..d).map(|i| format!("V1_{i}")));
    for i in 0..d {
        for j in i..d {
            out_header.push(format!("V2_{i}_{j}"));
        }
    }
    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(bad)?;
        let num = |k: usize| -> Result<f64, Failure> {
            record
                .get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::config(format!("{}: row {} has a bad value", input.display(), n + 1)))
        };
        let q = DVector::from_iterator(d, q_cols.iter().map(|&k| num(k)).collect::<Result<Vec<_>, _>>()?);
        let vals: Vec<f64> = width_cols.iter().map(|&k| num(k)).collect::<Result<_, _>>()?;
        let im_a = if heller {
            let mut m = DMatrix::zeros(d, d);
            let mut it = vals.iter();
            for i in 0..d {
                for j in i..d {
                    let v = *it.next().unwrap();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        } else {
            let block = |b: usize| DMatrix::from_fn(d, d, |i, j| vals[b * d * d + i * d + j]);
            let big_q = block(0).map(|x| Complex64::new(x, 0.0)) + block(1).map(|x| Complex64::new(0.0, x));
            let big_p = block(2).map(|x| Complex64::new(x, 0.0)) + block(3).map(|x| Complex64::new(0.0, x));
            let q_inv = big_q
                .try_inverse()
                .ok_or_else(|| Failure::config(format!("{}: row {} has a singular Q", input.display(), n + 1)))?;
            (big_p * q_inv).map(|z| z.im)
        };
        let state = GaussianHeller::from_parts(q, DVector::zeros(d), &DMatrix::zeros(d, d), &im_a, Complex64::new(0.0, 0.0))?;
        let k = prop.method().coefficients(&state)?;
        let mut row = vec![num(t_col)?, k.v0];
        row.extend(k.v1.iter());
        for i in 0..d {
            for j in i..d {
                row.push(k.v2[(i, j)]);
            }
        }
        rows.push(row);
    }
    match out {
        Some(dir) => {
            output::ensure_dir(dir)?;
            output::write_csv(&dir.join("coeffs.csv"), &out_header, &rows)
        }
        None => output::write_csv_to(std::io::stdout().lock(), &out_header, &rows),
    }
}
