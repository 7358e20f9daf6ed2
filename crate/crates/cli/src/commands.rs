use std::time::Instant;

use serde::Serialize;
use specimen_core::config::RunConfig;
use specimen_core::cost::Diagnostics;
use specimen_core::error::{Error, Result};
use specimen_core::filter::continuation_schedule;
use specimen_core::identification::{
    quartiles, reference_topology, sweep_cell, synthesize, NoiseModel, Quartiles, SweepCell, NOISE_FACTOR,
};
use specimen_core::io;
use specimen_core::material::{orthotropic_stiffness, params_from_descriptors, table_grid, StiffnessVector};
use specimen_core::mesh::StructuredMesh;
use specimen_core::optimizer::{OptimizationResult, Optimizer};
use specimen_core::parallel;
use specimen_core::studies::{self, gradient_check};

use crate::Run;

fn row(values: impl IntoIterator<Item = String>) -> Vec<String> {
    values.into_iter().collect()
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    loops: usize,
    iterations: usize,
    final_cost: f64,
    final_volume: f64,
    grey_index: f64,
    diagnostics: Diagnostics,
    binary_diagnostics: Option<Diagnostics>,
    wall_time_s: f64,
}

fn run_optimizer(cfg: &RunConfig, theta: &StiffnessVector, seed: u64) -> Result<Optimizer> {
    let problem = cfg.design_problem(theta)?;
    let schedule = continuation_schedule(cfg.filter.psi_max)?;
    Optimizer::new(problem, cfg.optimizer.clone(), schedule, cfg.filter.phi, seed)
}

pub fn optimize(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let theta = cfg.material.stiffness()?;
    let start = Instant::now();
    let mut opt = run_optimizer(cfg, &theta, cfg.seed)?;
    let mesh = opt.problem.mesh.clone();
    let out = &run.out;
    let mut write_error = None;
    let result = opt.run_with(|snap| {
        let stem = format!("loop_{:02}", snap.loop_index);
        let w = io::write_pgm(&out.join(format!("{stem}.pgm")), &mesh, &snap.rho_phys, &run.hash)
            .and_then(|_| io::write_field_csv(&out.join(format!("{stem}.csv")), &mesh, &snap.rho_phys));
        if let Err(e) = w {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let res: OptimizationResult = match result {
        Ok(r) => r,
        Err(e) => {
            let psi = opt.history().last().map_or(1.0, |r| r.psi);
            io::write_field_csv(&out.join("failure_density.csv"), &mesh, &opt.current_physical(psi))?;
            io::write_history(&out.join("history.csv"), opt.history())?;
            return Err(e);
        }
    };
    io::write_history(&out.join("history.csv"), &res.history)?;
    io::write_pgm(&out.join("final.pgm"), &mesh, &res.rho_phys, &run.hash)?;
    io::write_field_csv(&out.join("final.csv"), &mesh, &res.rho_phys)?;
    io::write_pgm(&out.join("binary.pgm"), &mesh, &res.binary, &run.hash)?;
    io::write_field_csv(&out.join("binary.csv"), &mesh, &res.binary)?;
    let last = res.history.last().expect("at least one iterate");
    io::write_json(
        &out.join("summary.json"),
        &OptimizeSummary {
            command: "optimize",
            config_sha256: &run.hash,
            seed: cfg.seed,
            loops: res.snapshots.len(),
            iterations: res.history.len(),
            final_cost: last.cost,
            final_volume: last.volume,
            grey_index: res.grey_index,
            diagnostics: res.final_diagnostics,
            binary_diagnostics: res.binary_diagnostics,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "optimize: {} loops, grey index {:.4}, kappa_2 {:.4}, output in {}",
        res.snapshots.len(),
        res.grey_index,
        res.final_diagnostics.kappa_2,
        out.display()
    );
    Ok(true)
}

fn topology(cfg: &RunConfig, mesh: &StructuredMesh) -> Result<(String, Vec<f64>)> {
    let id = &cfg.identification;
    match &id.topology {
        Some(path) => {
            let field = io::read_field(path)?;
            if field.len() != mesh.n_elements() {
                return Err(Error::Config(format!(
                    "{}: {} densities for a {}-element mesh",
                    path.display(),
                    field.len(),
                    mesh.n_elements()
                )));
            }
            Ok((path.display().to_string(), field))
        }
        None => {
            let frame = id.frame_layers.map_or_else(|| cfg.frame_layers(mesh), Ok)?;
            let field = reference_topology(mesh, id.holes, id.volume_fraction, frame)?;
            Ok((format!("{}holes@{}", id.holes, id.volume_fraction), field))
        }
    }
}

fn gamma_f(cfg: &RunConfig) -> f64 {
    cfg.identification.gamma_f.unwrap_or(NOISE_FACTOR * cfg.boundary.strain)
}

#[derive(Serialize)]
struct IdentifySummary<'a> {
    command: &'a str,
    config_sha256: &'a str,
    topology: &'a str,
    theta_gt: [f64; 6],
    gamma_f: f64,
    seeds: usize,
    inv_det: f64,
    kappa_2: f64,
    rel_error: Quartiles,
    constant_errors_median: [f64; 4],
}

pub fn identify(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let mesh = cfg.mesh()?;
    let boundary = cfg.boundary_setup(&mesh, cfg.boundary.load);
    let weights = cfg.boundary.weights.resolve(&boundary)?;
    let (name, rho) = topology(cfg, &mesh)?;
    let theta = cfg.material.stiffness()?;
    let exp = synthesize(&mesh, &boundary, &rho, &theta, cfg.material.beta(), weights)?;
    let gamma = gamma_f(cfg);
    let seeds: Vec<u64> = (0..cfg.identification.seeds as u64).map(|s| cfg.seed + s).collect();
    let reports = seeds
        .iter()
        .map(|&seed| exp.identify(&mesh, &boundary, &rho, &NoiseModel { gamma_f: gamma, seed }))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = seeds
        .iter()
        .zip(&reports)
        .map(|(seed, r)| {
            let c = r.constant_errors.unwrap_or([f64::NAN; 4]);
            row([seed.to_string(), r.rel_error.to_string()]
                .into_iter()
                .chain(r.theta.iter().map(f64::to_string))
                .chain(c.iter().map(f64::to_string)))
        })
        .collect();
    let out = &run.out;
    io::write_csv_rows(
        &out.join("identify.csv"),
        "seed,rel_error,d11,d12,d16,d22,d26,d66,err_exx,err_eyy,err_gxy,err_nuxy",
        &rows,
    )?;
    io::write_pgm(&out.join("topology.pgm"), &mesh, &rho, &run.hash)?;
    let q = quartiles(&reports.iter().map(|r| r.rel_error).collect::<Vec<_>>());
    let c = std::array::from_fn(|k| {
        quartiles(&reports.iter().map(|r| r.constant_errors.map_or(f64::NAN, |c| c[k])).collect::<Vec<_>>()).median
    });
    io::write_json(
        &out.join("summary.json"),
        &IdentifySummary {
            command: "identify",
            config_sha256: &run.hash,
            topology: &name,
            theta_gt: theta.0,
            gamma_f: gamma,
            seeds: seeds.len(),
            inv_det: reports[0].inv_det,
            kappa_2: reports[0].kappa_2,
            rel_error: q,
            constant_errors_median: c,
        },
    )?;
    println!("identify: median relative error {:.4e} over {} seeds (kappa_2 {:.4})", q.median, seeds.len(), reports[0].kappa_2);
    Ok(true)
}

const CELL_HEADER: &str =
    "topology,load,alpha1,alpha2,beta,inv_det,kappa_2,median_error,err_exx,err_eyy,err_gxy,err_nuxy,failure";

fn cell_row(c: &SweepCell) -> Vec<String> {
    row([
        c.topology.clone(),
        c.load.clone(),
        c.alpha1.to_string(),
        c.alpha2.to_string(),
        c.beta.to_string(),
        c.inv_det.to_string(),
        c.kappa_2.to_string(),
        c.median_error.to_string(),
    ]
    .into_iter()
    .chain(c.median_constant_errors.iter().map(f64::to_string))
    .chain([c.failure.clone().unwrap_or_default().replace(',', ";")]))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    command: &'a str,
    config_sha256: &'a str,
    cells: usize,
    flagged: usize,
    seeds: usize,
    gamma_f: f64,
}

pub fn sweep(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let sw = &cfg.identification.sweep;
    let mesh = cfg.mesh()?;
    let frame = cfg.identification.frame_layers.map_or_else(|| cfg.frame_layers(&mesh), Ok)?;
    let gamma = gamma_f(cfg);
    let seeds: Vec<u64> = (0..cfg.identification.seeds as u64).map(|s| cfg.seed + s).collect();

    struct Job {
        load: specimen_core::mesh::LoadCase,
        name: String,
        topology: std::result::Result<Vec<f64>, String>,
        material: (f64, f64, f64),
    }
    let mut jobs = Vec::new();
    for &load in &sw.loads {
        for &vm in &sw.volume_fractions {
            for &n in &sw.holes {
                let topo = reference_topology(&mesh, n, vm, frame).map_err(|e| e.to_string());
                for &a1 in &sw.alpha1 {
                    for &a2 in &sw.alpha2 {
                        for &beta in &sw.beta {
                            jobs.push(Job {
                                load,
                                name: format!("{n}holes@{vm}"),
                                topology: topo.clone(),
                                material: (a1, a2, beta),
                            });
                        }
                    }
                }
            }
        }
    }
    let cells = parallel::map(&jobs, run.threads, |_, job| {
        let (a1, a2, beta) = job.material;
        let boundary = cfg.boundary_setup(&mesh, job.load);
        let material = params_from_descriptors(a1, a2, beta, sw.nu_xy, specimen_core::material::DEFAULT_E_SCALE)
            .and_then(|p| orthotropic_stiffness(&p));
        let weights = cfg.boundary.weights.resolve(&boundary);
        match (&job.topology, material, weights) {
            (Ok(topo), Ok(theta), Ok(w)) => {
                sweep_cell(&mesh, &boundary, (&job.name, topo), (a1, a2, beta, theta), w, gamma, &seeds)
            }
            (topo, material, weights) => {
                let reason = topo
                    .as_ref()
                    .err()
                    .cloned()
                    .or_else(|| material.err().map(|e| e.to_string()))
                    .or_else(|| weights.err().map(|e| e.to_string()))
                    .unwrap_or_default();
                SweepCell {
                    topology: job.name.clone(),
                    load: job.load.to_string(),
                    alpha1: a1,
                    alpha2: a2,
                    beta,
                    inv_det: f64::NAN,
                    kappa_2: f64::NAN,
                    median_error: f64::NAN,
                    median_constant_errors: [f64::NAN; 4],
                    failure: Some(reason),
                }
            }
        }
    });
    let out = &run.out;
    io::write_csv_rows(&out.join("sweep_cells.csv"), CELL_HEADER, &cells.iter().map(cell_row).collect::<Vec<_>>())?;

    // Per (topology, load, β): spread over the (α₁, α₂) grid.
    let mut groups: Vec<(String, String, f64)> = Vec::new();
    for c in &cells {
        let key = (c.topology.clone(), c.load.clone(), c.beta);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let summary_rows: Vec<Vec<String>> = groups
        .iter()
        .map(|(t, l, b)| {
            let sel: Vec<&SweepCell> = cells.iter().filter(|c| &c.topology == t && &c.load == l && c.beta == *b).collect();
            let cost = quartiles(&sel.iter().map(|c| c.inv_det).collect::<Vec<_>>());
            let err = quartiles(&sel.iter().map(|c| c.median_error).collect::<Vec<_>>());
            row([t.clone(), l.clone(), b.to_string()]
                .into_iter()
                .chain([cost.q1, cost.median, cost.q3, err.q1, err.median, err.q3].map(|v| v.to_string())))
        })
        .collect();
    io::write_csv_rows(
        &out.join("sweep_summary.csv"),
        "topology,load,beta,cost_q1,cost_median,cost_q3,error_q1,error_median,error_q3",
        &summary_rows,
    )?;
    let flagged = cells.iter().filter(|c| c.failure.is_some()).count();
    io::write_json(
        &out.join("summary.json"),
        &SweepSummary {
            command: "sweep",
            config_sha256: &run.hash,
            cells: cells.len(),
            flagged,
            seeds: seeds.len(),
            gamma_f: gamma,
        },
    )?;
    println!("sweep: {} cells ({flagged} flagged), output in {}", cells.len(), out.display());
    Ok(true)
}

struct GalleryCell {
    alpha1: f64,
    alpha2: f64,
    beta: f64,
    result: Result<(String, OptimizationResult)>,
}

fn gallery_name(a1: f64, a2: f64, beta: f64) -> String {
    format!("a1_{a1:02}_a2_{a2:.2}_beta_{beta:02}")
}

#[derive(Serialize)]
struct GallerySummary<'a> {
    command: &'a str,
    config_sha256: &'a str,
    cells: usize,
    flagged: usize,
}

pub fn gallery(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let mesh = cfg.mesh()?;
    let grid: Vec<(f64, f64, f64)> = table_grid()
        .into_iter()
        .take(cfg.gallery.limit.unwrap_or(usize::MAX))
        .collect();
    let dir = run.out.join("gallery");
    let cells = parallel::map(&grid, run.threads, |_, &(a1, a2, beta)| {
        let result = (|| {
            let theta = orthotropic_stiffness(&params_from_descriptors(
                a1,
                a2,
                beta,
                cfg.gallery.nu_xy,
                specimen_core::material::DEFAULT_E_SCALE,
            )?)?;
            let res = run_optimizer(cfg, &theta, cfg.seed)?.run()?;
            let name = gallery_name(a1, a2, beta);
            io::write_pgm(&dir.join(format!("{name}.pgm")), &mesh, &res.binary, &run.hash)?;
            Ok((name, res))
        })();
        GalleryCell {
            alpha1: a1,
            alpha2: a2,
            beta,
            result,
        }
    });
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let head = [c.alpha1.to_string(), c.alpha2.to_string(), c.beta.to_string()];
            match &c.result {
                Ok((name, r)) => {
                    let d = r.binary_diagnostics.unwrap_or(r.final_diagnostics);
                    row(head.into_iter().chain([
                        name.clone(),
                        r.history.last().map_or(f64::NAN, |h| h.cost).to_string(),
                        d.inv_det.to_string(),
                        d.kappa_2.to_string(),
                        r.grey_index.to_string(),
                        String::new(),
                    ]))
                }
                Err(e) => row(head.into_iter().chain(
                    [String::new(), "NaN".into(), "NaN".into(), "NaN".into(), "NaN".into(), e.to_string().replace(',', ";")],
                )),
            }
        })
        .collect();
    io::write_csv_rows(
        &run.out.join("gallery.csv"),
        "alpha1,alpha2,beta,image,final_cost,binary_inv_det,binary_kappa_2,grey_index,failure",
        &rows,
    )?;
    let flagged = cells.iter().filter(|c| c.result.is_err()).count();
    io::write_json(
        &run.out.join("summary.json"),
        &GallerySummary {
            command: "gallery",
            config_sha256: &run.hash,
            cells: cells.len(),
            flagged,
        },
    )?;
    println!("gallery: {} cells ({flagged} flagged), output in {}", cells.len(), run.out.display());
    Ok(true)
}

pub fn weights_study(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let meshes: Vec<(usize, usize)> = cfg.study.meshes.iter().map(|m| (m[0], m[1])).collect();
    let study = studies::weights_study(
        &StiffnessVector(cfg.study.theta),
        &meshes,
        (cfg.mesh.lx, cfg.mesh.ly),
        cfg.boundary.strain,
        cfg.study.hole_radius,
    )?;
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            row([
                r.mode.name().to_string(),
                r.nx.to_string(),
                r.ny.to_string(),
                r.n_dofs.to_string(),
                r.lambda_r.to_string(),
                r.lambda_q.to_string(),
            ]
            .into_iter()
            .chain(r.eigenvalues.iter().map(f64::to_string))
            .chain([r.inv_det.to_string(), r.kappa_2.to_string()]))
        })
        .collect();
    let out = &run.out;
    io::write_csv_rows(
        &out.join("weights_study.csv"),
        "mode,nx,ny,n_dofs,lambda_r,lambda_q,eig1,eig2,eig3,eig4,eig5,eig6,inv_det,kappa_2",
        &rows,
    )?;
    let slopes: Vec<Vec<String>> = study
        .slopes
        .iter()
        .map(|s| {
            row(std::iter::once(s.mode.name().to_string())
                .chain(s.eigenvalues.iter().map(f64::to_string))
                .chain([s.inv_det.to_string(), s.kappa_2.to_string()]))
        })
        .collect();
    io::write_csv_rows(&out.join("weights_slopes.csv"), "mode,m1,m2,m3,m4,m5,m6,inv_det,kappa_2", &slopes)?;
    io::write_json(&out.join("summary.json"), &study)?;
    for s in &study.slopes {
        println!("weights-study {}: eigenvalue slopes {:?}", s.mode.name(), s.eigenvalues.map(|m| (m * 1e3).round() / 1e3));
    }
    Ok(true)
}

#[derive(Serialize)]
struct GradCheckSummary<'a> {
    command: &'a str,
    config_sha256: &'a str,
    h: f64,
    tolerance: f64,
    max_rel_err: f64,
    max_normwise: f64,
    passed: bool,
}

pub fn grad_check(run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    let g = &cfg.grad_check;
    let problem = cfg.design_problem(&cfg.material.stiffness()?)?;
    let mut rows = Vec::new();
    let (mut worst, mut worst_norm) = (0.0f64, 0.0f64);
    for s in 0..g.samples as u64 {
        for &psi in &g.psi {
            let c = gradient_check(&problem, cfg.filter.phi, psi, cfg.seed + s, g.h)?;
            worst = worst.max(c.max_rel_err);
            worst_norm = worst_norm.max(c.normwise);
            rows.extend(c.rows.iter().map(|r| {
                row([
                    c.seed.to_string(),
                    psi.to_string(),
                    r.variable.to_string(),
                    r.element.to_string(),
                    r.analytic.to_string(),
                    r.fd.to_string(),
                    r.rel_err.to_string(),
                ])
            }));
        }
    }
    let passed = worst < g.tolerance;
    io::write_csv_rows(&run.out.join("grad_check.csv"), "seed,psi,variable,element,analytic,fd,rel_err", &rows)?;
    io::write_json(
        &run.out.join("summary.json"),
        &GradCheckSummary {
            command: "grad-check",
            config_sha256: &run.hash,
            h: g.h,
            tolerance: g.tolerance,
            max_rel_err: worst,
            max_normwise: worst_norm,
            passed,
        },
    )?;
    println!(
        "grad-check: max relative error {worst:.3e} (normwise {worst_norm:.3e}), tolerance {:.1e}: {}",
        g.tolerance,
        if passed { "ok" } else { "exceeded" }
    );
    Ok(passed)
}
