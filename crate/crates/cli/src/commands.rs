//! The subcommands. Each one returns the tables it wants written.

use gibbs_uniqueness::criteria::{region_curve, PercolationTable, UniquenessBound};
use gibbs_uniqueness::dobrushin_grid::{zbar_of_a, Discretization, ZBar};
use gibbs_uniqueness::mayer::{check_regularity_a3, mayer_integral, Convergence};
use gibbs_uniqueness::sampler::{
    dense_packing_boundary, mcmc_sample, uniqueness_probe, ChainSample, ChainSettings, MoveMix, ProbeRow,
    ProbeSettings, Window, GENERATOR,
};

use crate::config::{BoundarySpec, RunConfig};
use crate::CliError;

pub struct Table {
    pub file: &'static str,
    pub header: &'static str,
    pub rows: Vec<String>,
    /// Extra words for the summary line.
    pub note: String,
}

fn move_mix(cfg: &RunConfig) -> MoveMix {
    let m = &cfg.sampler.move_mix;
    MoveMix { birth: m.birth, death: m.death, translate: m.translate }
}

pub fn mayer(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let tol = cfg.tolerances.quadrature;
    let mut rows = Vec::new();
    for beta in cfg.beta.points() {
        let m = mayer_integral(&p, beta, tol)?;
        rows.push(format!("{},{},{}", beta, m.value, m.error_estimate));
    }
    Ok(Table { file: "mayer.csv", header: "beta,mayer_integral,error_estimate", rows, note: String::new() })
}

pub fn regions(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let methods = cfg.parsed_methods()?;
    let grid = cfg.beta.points();
    let table = PercolationTable::new();
    let mut rows = Vec::new();
    for m in &methods {
        for b in region_curve(&p, *m, &grid, cfg.tolerances.quadrature, &table)? {
            rows.push(b.csv_row());
        }
    }
    let names: Vec<&str> = methods.iter().map(|m| m.as_str()).collect();
    Ok(Table { file: "regions.csv", header: UniquenessBound::<f64>::CSV_HEADER, rows, note: names.join(" ") })
}

pub fn zbar_a(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let modes = cfg.parsed_modes()?;
    let mut rows = Vec::new();
    for a in cfg.mesh_values()? {
        let disc = Discretization::new(p.clone(), a)?;
        for &mode in &modes {
            rows.push(zbar_of_a(&disc, cfg.meshes.beta, mode, cfg.tolerances.activity)?.csv_row());
        }
    }
    Ok(Table { file: "zbar_a.csv", header: ZBar::<f64>::CSV_HEADER, rows, note: format!("beta {}", cfg.meshes.beta) })
}

pub fn check_a3(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let meshes = cfg.mesh_values()?;
    let report = check_regularity_a3(&p, cfg.meshes.beta, &meshes, cfg.tolerances.regularity)?;
    let rows =
        report.rows.iter().map(|r| format!("{},{},{},{}", r.mesh, r.psi_integral, r.mayer_integral, r.gap)).collect();
    let verdict = match report.verdict {
        Convergence::Converged => "converged",
        Convergence::NotYetConverged => "not yet converged",
    };
    let monotone = if report.gaps_strictly_decreasing { "gaps decreasing" } else { "gaps not decreasing" };
    Ok(Table {
        file: "check_a3.csv",
        header: "a,psi_integral,mayer_integral,gap",
        rows,
        note: format!("{verdict}, {monotone}"),
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let s = &cfg.sampler;
    let window = Window::centered_cube(s.window, p.dimension())?;
    let mut settings = ChainSettings::new(s.activity, s.beta, window.clone(), s.steps, cfg.seed);
    settings.burn_in = s.burn_in();
    settings.record_every = s.record_every;
    settings.center_fraction = s.center_fraction;
    settings.move_mix = move_mix(cfg);
    if s.boundary == BoundarySpec::Dense {
        settings.boundary = dense_packing_boundary(&p, &window)?;
    }
    let report = mcmc_sample(&settings, &p)?;
    let rows = report.samples.iter().map(ChainSample::csv_row).collect();
    Ok(Table {
        file: "chain.csv",
        header: ChainSample::<f64>::CSV_HEADER,
        rows,
        note: format!(
            "mean count {:.4} (se {:.2e}); generator {}, seed {}, stream {}",
            report.count.mean, report.count.se, report.generator, report.seed, report.stream
        ),
    })
}

pub fn probe(cfg: &RunConfig) -> Result<Table, CliError> {
    let p = cfg.potential.build()?;
    let s = &cfg.sampler;
    let settings = ProbeSettings {
        steps: s.steps,
        burn_in: s.burn_in(),
        seed: cfg.seed,
        move_mix: move_mix(cfg),
        record_every: s.record_every,
        center_fraction: s.center_fraction,
        ..ProbeSettings::default()
    };
    let report = uniqueness_probe(&p, s.activity, s.beta, &s.probe_windows, &settings)?;
    let rows = report.rows.iter().map(ProbeRow::csv_row).collect();
    let metric = report.largest_window_metric().unwrap_or(f64::NAN);
    Ok(Table {
        file: "probe.csv",
        header: ProbeRow::<f64>::CSV_HEADER,
        rows,
        note: format!("largest-window metric {metric:.3}; generator {GENERATOR}, seed {}", cfg.seed),
    })
}
