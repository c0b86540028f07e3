//! Pipeline stages. Every stage reads its inputs from the output directory
//! and writes its results back there, so stages can run one at a time.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use spinfield::analysis::{
    baseline_lm, compare, group_summaries, ols_standardized, residual_associations, AnalysisError,
    UnitResults,
};
use spinfield::conformal::{batch_means, conformal_intervals, coverage_adaptivity, repeated_coverage};
use spinfield::energy::{energy_ratio, log_likelihood_ratio, EnergyModel};
use spinfield::graph::spectrum_extremes;
use spinfield::indices::{build_composites, correlation_matrix, external_field, pca, ExternalField};
use spinfield::ingest::{load_dataset, save_dataset, scale_target, synth_dataset, LoadOptions};
use spinfield::linalg::Matrix;
use spinfield::sampler::{pool_recent, posterior_mean, run_parallel, ChainTrace, SamplerError};
use spinfield::stats::SixNumberSummary;
use spinfield::trace_io::{load_trace, save_trace, TracePaths};
use spinfield::{build_graph, Attribute, Dataset, Engine};

use crate::config::{hex_digest, RunConfig};
use crate::error::CliError;

const NA: &str = "NA";

/// Locations of all artifacts under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn trace_stem(engine: Engine, chain: usize) -> String {
        format!("trace_{}_{chain}", engine.name())
    }

    pub fn trace(&self, engine: Engine, chain: usize) -> TracePaths {
        TracePaths::new(&self.traces_dir(), &Self::trace_stem(engine, chain))
    }

    fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf, CliError> {
        let path = self.file(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact { stage, path })
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| NA.to_owned(), num)
}

fn parse_num(s: &str, path: &Path) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Data(format!("{}: `{s}` is not a number", path.display())))
}

/// Writes a header and rows of pre-formatted cells.
fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a header-keyed table as string records.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err(path))?;
    Ok((header, rows))
}

fn column_index(header: &[String], name: &str, path: &Path) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Data(format!("{}: missing column `{name}`", path.display())))
}

/// Checks that a per-unit table lists exactly the dataset's units in order.
fn check_units(d: &Dataset, ids: &[String], path: &Path) -> Result<(), CliError> {
    if ids.len() != d.len() || ids.iter().zip(&d.records).any(|(a, r)| *a != r.unit_id) {
        return Err(CliError::Data(format!(
            "{}: unit ordering differs from the validated dataset",
            path.display()
        )));
    }
    Ok(())
}

fn generate(cfg: &RunConfig) -> Result<Dataset, CliError> {
    synth_dataset(
        cfg.synth.n_units,
        cfg.seed,
        &cfg.synth.params(&cfg.indicators),
    )
    .map_err(CliError::data)
}

/// Writes a synthetic dataset to `path`.
pub fn synth(cfg: &RunConfig, path: &Path) -> Result<usize, CliError> {
    let d = generate(cfg)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_dataset(path, &d, &cfg.data.load_options()).map_err(CliError::data)?;
    Ok(d.len())
}

pub fn validate(cfg: &RunConfig, out: &Layout) -> Result<Dataset, CliError> {
    fs::create_dir_all(&out.root).map_err(io_err(&out.root))?;
    let (d, rejected) = match &cfg.data.path {
        Some(p) => {
            let rep = load_dataset(p, &cfg.indicators, &cfg.data.load_options()).map_err(CliError::data)?;
            (rep.dataset, rep.rejected_rows)
        }
        None => (generate(cfg)?, Vec::new()),
    };
    save_dataset(out.file("validated.csv"), &d, &LoadOptions::default()).map_err(CliError::data)?;
    let rows: Vec<Vec<String>> = rejected.iter().map(|r| vec![r.to_string()]).collect();
    write_table(&out.file("rejected_rows.csv"), &["row"], &rows)?;
    eprintln!("validate: {} units kept, {} rows rejected", d.len(), rejected.len());
    Ok(d)
}

fn load_validated(cfg: &RunConfig, out: &Layout) -> Result<Dataset, CliError> {
    let path = out.require("validated.csv", "validate")?;
    let rep = load_dataset(&path, &cfg.indicators, &LoadOptions::default()).map_err(CliError::data)?;
    if !rep.rejected_rows.is_empty() {
        return Err(CliError::Data(format!(
            "{} has incomplete rows; rerun `validate`",
            path.display()
        )));
    }
    Ok(rep.dataset)
}

pub fn field(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let d = load_validated(cfg, out)?;
    let comp = build_composites::<f64>(&d, &cfg.indices.directions, cfg.indices.sd_convention)
        .map_err(CliError::data)?;
    let p = pca(&comp.values, &comp.names, cfg.indices.pca_retain).map_err(CliError::data)?;
    let f = external_field(&p);
    let k = comp.k();
    let pcs: Vec<String> = (1..=k).map(|c| format!("PC{c}")).collect();

    let mut header = vec!["unit_id"];
    header.extend(comp.names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = d
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            std::iter::once(r.unit_id.clone())
                .chain(comp.values.row(i).iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    write_table(&out.file("composites.csv"), &header, &rows)?;

    let rows: Vec<Vec<String>> = d
        .records
        .iter()
        .zip(&f.h)
        .map(|(r, &h)| vec![r.unit_id.clone(), num(h)])
        .collect();
    write_table(&out.file("field.csv"), &["unit_id", "h"], &rows)?;

    let corr = correlation_matrix(&comp.values, &comp.names).map_err(CliError::data)?;
    let mut header = vec![""];
    header.extend(comp.names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..k)
        .map(|a| {
            std::iter::once(comp.names[a].clone())
                .chain(corr.row(a).iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    write_table(&out.file("field_correlation.csv"), &header, &rows)?;

    let mut header = vec!["Importance of components"];
    header.extend(pcs.iter().map(String::as_str));
    let line = |label: &str, xs: Vec<f64>| -> Vec<String> {
        std::iter::once(label.to_owned()).chain(xs.into_iter().map(num)).collect()
    };
    let rows = vec![
        line("Standard deviation", p.std_devs()),
        line("Proportion of Variance", p.proportions.clone()),
        line("Cumulative Proportion", p.cumulative_proportions()),
    ];
    write_table(&out.file("field_pca.csv"), &header, &rows)?;

    let mut header = vec![""];
    header.extend(pcs.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..k)
        .map(|a| {
            std::iter::once(comp.names[a].clone())
                .chain(p.loadings.row(a).iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    write_table(&out.file("pca_loadings.csv"), &header, &rows)?;

    let rows: Vec<Vec<String>> = (0..k)
        .map(|c| {
            vec![
                pcs[c].clone(),
                num(p.eigenvalues[c]),
                num(p.proportions[c]),
                num(f.weights[c]),
            ]
        })
        .collect();
    write_table(
        &out.file("eigenvalues.csv"),
        &["component", "eigenvalue", "proportion", "weight"],
        &rows,
    )?;
    eprintln!("field: {k} composites, {} components retained", p.retained);
    Ok(())
}

fn load_field(d: &Dataset, out: &Layout) -> Result<ExternalField<f64>, CliError> {
    let path = out.require("field.csv", "field")?;
    let (header, rows) = read_table(&path)?;
    let (id, h) = (
        column_index(&header, "unit_id", &path)?,
        column_index(&header, "h", &path)?,
    );
    let ids: Vec<String> = rows.iter().map(|r| r[id].clone()).collect();
    check_units(d, &ids, &path)?;
    let h = rows
        .iter()
        .map(|r| parse_num(&r[h], &path))
        .collect::<Result<_, _>>()?;
    Ok(ExternalField::from_values(h))
}

fn load_composites(d: &Dataset, out: &Layout) -> Result<(Vec<String>, Matrix<f64>), CliError> {
    let path = out.require("composites.csv", "field")?;
    let (header, rows) = read_table(&path)?;
    if header.first().map(String::as_str) != Some("unit_id") {
        return Err(CliError::Data(format!("{}: bad header", path.display())));
    }
    let ids: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    check_units(d, &ids, &path)?;
    let names = header[1..].to_vec();
    let mut data = Vec::with_capacity(rows.len() * names.len());
    for r in &rows {
        for cell in &r[1..] {
            data.push(parse_num(cell, &path)?);
        }
    }
    Ok((names.clone(), Matrix::from_row_major(rows.len(), names.len(), data)))
}

pub fn graph(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let d = load_validated(cfg, out)?;
    let g = build_graph(&d);
    let mut header = vec!["group"];
    header.extend(Attribute::ALL.iter().map(|a| a.column()));
    header.push("size");
    let rows: Vec<Vec<String>> = g
        .groups
        .iter()
        .enumerate()
        .map(|(k, grp)| {
            std::iter::once(k.to_string())
                .chain(grp.profile.0.iter().map(u8::to_string))
                .chain(std::iter::once(grp.members.len().to_string()))
                .collect()
        })
        .collect();
    write_table(&out.file("groups.csv"), &header, &rows)?;

    let (hi, lo) = spectrum_extremes::<f64>(&g);
    let largest = g.group_sizes().into_iter().max().unwrap_or(0);
    write_table(
        &out.file("spectrum.csv"),
        &["n_units", "n_groups", "n_edges", "largest_group", "lambda_max", "lambda_min"],
        &[vec![
            g.n_units().to_string(),
            g.groups.len().to_string(),
            g.edge_count().to_string(),
            largest.to_string(),
            num(hi),
            num(lo),
        ]],
    )?;
    eprintln!("graph: {} groups, {} edges", g.groups.len(), g.edge_count());
    Ok(())
}

fn model(cfg: &RunConfig, d: &Dataset, out: &Layout) -> Result<EnergyModel<f64>, CliError> {
    let field = load_field(d, out)?;
    EnergyModel::new(build_graph(d), field, cfg.model.lambda, cfg.model.temperature)
        .map_err(|e| CliError::Config(e.to_string()))
}

pub fn simulate(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let d = load_validated(cfg, out)?;
    let m = model(cfg, &d, out)?;
    let dir = out.traces_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for &engine in &cfg.engines {
        let s_ref = scale_target::<f64>(&d, engine.domain());
        let h_ref = m.hamiltonian(&s_ref);
        let chain_cfg = cfg.chain_config(engine);
        let results = run_parallel(
            &m,
            &chain_cfg,
            &s_ref,
            cfg.chains,
            cfg.base_seed(engine),
            cfg.workers,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;

        let mut rows = Vec::with_capacity(results.len());
        for (k, res) in results.into_iter().enumerate() {
            let trace = res.map_err(|e| match e {
                SamplerError::DivergenceDetected { .. } => {
                    CliError::Divergence(format!("{} chain {k}: {e}", engine.name()))
                }
                other => CliError::Config(other.to_string()),
            })?;
            save_trace(&out.trace(engine, k), &trace).map_err(CliError::data)?;
            rows.push(energy_row(&m, &trace, k, h_ref));
        }
        write_table(
            &out.file(&format!("energy_{}.csv", engine.name())),
            &[
                "chain",
                "seed",
                "H_ref",
                "H_final",
                "ratio_final",
                "log_lr_final",
                "retained_H_mean",
                "retained_ratio_max",
                "accept_rate",
                "final_temperature",
            ],
            &rows,
        )?;
        eprintln!("simulate: {} x {} chains done", engine.name(), cfg.chains);
    }
    Ok(())
}

fn energy_row(m: &EnergyModel<f64>, t: &ChainTrace<f64>, chain: usize, h_ref: f64) -> Vec<String> {
    let h_final = m.hamiltonian(&t.final_state);
    let retained: Vec<f64> = t.retained.iter().map(|s| m.hamiltonian(s)).collect();
    let mean = (!retained.is_empty()).then(|| retained.iter().sum::<f64>() / retained.len() as f64);
    let max_ratio = retained
        .iter()
        .filter_map(|&h| energy_ratio(h, h_ref).ok())
        .reduce(f64::max);
    let rate = if t.n_iters == 0 {
        None
    } else {
        Some(t.accept_count as f64 / t.n_iters as f64)
    };
    vec![
        chain.to_string(),
        t.seed.to_string(),
        num(h_ref),
        num(h_final),
        opt(energy_ratio(h_final, h_ref).ok()),
        num(log_likelihood_ratio(h_final, h_ref, m.temperature())),
        opt(mean),
        opt(max_ratio),
        opt(rate),
        num(t.final_temperature),
    ]
}

fn load_traces(cfg: &RunConfig, out: &Layout, engine: Engine) -> Result<Vec<ChainTrace<f64>>, CliError> {
    (0..cfg.chains)
        .map(|k| {
            let paths = out.trace(engine, k);
            if !paths.all_exist() {
                return Err(CliError::MissingArtifact {
                    stage: "simulate",
                    path: paths.meta,
                });
            }
            load_trace(&paths).map_err(CliError::data)
        })
        .collect()
}

pub fn conformal(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let d = load_validated(cfg, out)?;
    let spec = cfg.batch_spec();
    let y_ref: Vec<f64> = d.target_percent();
    for &engine in &cfg.engines {
        let traces = load_traces(cfg, out, engine)?;
        let domain = engine.domain();
        let pool: Vec<Vec<f64>> = pool_recent(&traces, spec.n_total)
            .map_err(CliError::data)?
            .into_iter()
            .map(|s| s.iter().map(|&v| domain.inverse(v)).collect())
            .collect();
        let refs: Vec<&[f64]> = pool.iter().map(Vec::as_slice).collect();
        let batches = batch_means(&refs, &spec).map_err(CliError::data)?;
        let res = conformal_intervals(&batches, &y_ref, &spec).map_err(CliError::data)?;
        let cov = repeated_coverage(&batches, &y_ref, &spec).map_err(CliError::data)?;
        let y_est = posterior_mean(&traces, spec.n_total, domain).map_err(CliError::data)?;

        let rows: Vec<Vec<String>> = (0..d.len())
            .map(|i| {
                vec![
                    d.records[i].unit_id.clone(),
                    num(y_ref[i]),
                    num(y_est[i]),
                    num(res.q_lo[i]),
                    num(res.q_hi[i]),
                    num(res.lo[i]),
                    num(res.hi[i]),
                    num(res.width[i]),
                    if res.is_calibration(i) { "calibration" } else { "test" }.to_owned(),
                    res.covered[i].map_or_else(|| NA.to_owned(), |c| u8::from(c).to_string()),
                    num(cov.coverage[i]),
                    num(cov.width[i]),
                ]
            })
            .collect();
        write_table(
            &out.file(&format!("uncertainty_{}.csv", engine.name())),
            &[
                "unit_id", "y_ref", "y_est", "q_lo", "q_hi", "lo", "hi", "width", "split", "covered",
                "coverage", "mean_width",
            ],
            &rows,
        )?;

        let ca = coverage_adaptivity(&cov);
        let mut header = vec!["measure"];
        header.extend(SixNumberSummary::<f64>::LABELS);
        let line = |label: &str, s: SixNumberSummary<f64>| -> Vec<String> {
            std::iter::once(label.to_owned())
                .chain(s.as_array().into_iter().map(num))
                .collect()
        };
        write_table(
            &out.file(&format!("coverage_{}.csv", engine.name())),
            &header,
            &[line("coverage", ca.coverage), line("adaptivity", ca.adaptivity)],
        )?;

        let split_mean =
            cov.split_coverage.iter().sum::<f64>() / cov.split_coverage.len() as f64;
        write_table(
            &out.file(&format!("conformal_{}.csv", engine.name())),
            &["key", "value"],
            &[
                vec!["alpha".into(), num(spec.alpha)],
                vec!["q_hat".into(), num(res.q_hat)],
                vec!["degenerate".into(), res.degenerate.to_string()],
                vec!["test_coverage".into(), num(res.test_coverage())],
                vec!["mean_split_coverage".into(), num(split_mean)],
                vec!["repetitions".into(), spec.repetitions.to_string()],
            ],
        )?;
        eprintln!(
            "conformal: {} q_hat {:.4}, test coverage {:.3}",
            engine.name(),
            res.q_hat,
            res.test_coverage()
        );
    }
    Ok(())
}

struct Uncertainty {
    y_ref: Vec<f64>,
    y_est: Vec<f64>,
    coverage: Vec<f64>,
    width: Vec<f64>,
}

fn load_uncertainty(d: &Dataset, out: &Layout, engine: Engine) -> Result<Uncertainty, CliError> {
    let path = out.require(&format!("uncertainty_{}.csv", engine.name()), "conformal")?;
    let (header, rows) = read_table(&path)?;
    let id = column_index(&header, "unit_id", &path)?;
    let ids: Vec<String> = rows.iter().map(|r| r[id].clone()).collect();
    check_units(d, &ids, &path)?;
    let col = |name: &str| -> Result<Vec<f64>, CliError> {
        let j = column_index(&header, name, &path)?;
        rows.iter().map(|r| parse_num(&r[j], &path)).collect()
    };
    Ok(Uncertainty {
        y_ref: col("y_ref")?,
        y_est: col("y_est")?,
        coverage: col("coverage")?,
        width: col("mean_width")?,
    })
}

pub fn analyze(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let d = load_validated(cfg, out)?;
    let (names, comp) = load_composites(&d, out)?;
    let mut comparison = Vec::new();
    let mut assoc = Vec::new();
    let mut ols = Vec::new();
    let mut bench = Vec::new();

    for &engine in &cfg.engines {
        let u = load_uncertainty(&d, out, engine)?;
        let c = compare(&u.y_ref, &u.y_est).map_err(CliError::data)?;
        let t = c.t_test;
        comparison.push(vec![
            engine.label().to_owned(),
            c.n.to_string(),
            num(c.mean_obs),
            num(c.mean_est),
            num(c.mae),
            num(c.rmse),
            opt(c.pearson_r),
            opt(t.map(|t| t.mean_diff)),
            opt(t.map(|t| t.t_stat)),
            t.map_or_else(|| NA.to_owned(), |t| t.df.to_string()),
            opt(t.map(|t| t.p_value)),
            opt(t.map(|t| t.ci95_lo)),
            opt(t.map(|t| t.ci95_hi)),
        ]);
        bench.push(vec![engine.label().to_owned(), num(c.rmse), num(c.mae)]);

        let residuals: Vec<f64> = u.y_ref.iter().zip(&u.y_est).map(|(o, e)| o - e).collect();
        for a in residual_associations(&residuals, &comp, &names).map_err(CliError::data)? {
            assoc.push(vec![
                engine.name().to_owned(),
                a.name,
                opt(a.pearson),
                opt(a.spearman),
            ]);
        }
        match ols_standardized(&residuals, &comp, &names) {
            Ok(coefs) => {
                for c in coefs {
                    ols.push(vec![engine.name().to_owned(), c.name, opt(c.estimate)]);
                }
            }
            Err(AnalysisError::ZeroVariance(_) | AnalysisError::AllCollinear) => {
                for n in &names {
                    ols.push(vec![engine.name().to_owned(), n.clone(), NA.to_owned()]);
                }
            }
            Err(e) => return Err(CliError::data(e)),
        }

        let results = UnitResults {
            y_ref: &u.y_ref,
            y_est: &u.y_est,
            coverage: &u.coverage,
            width: &u.width,
        };
        for attr in Attribute::ALL {
            let rows = group_summaries(results, &d, attr, &comp).map_err(CliError::data)?;
            let mut header = vec![
                "type", "class", "n", "coverage", "adaptivity", "y_ref", "y_est", "delta",
            ];
            header.extend(names.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = rows
                .into_iter()
                .map(|g| {
                    let mut r = vec![
                        g.kind,
                        g.class.to_string(),
                        g.n.to_string(),
                        num(g.coverage),
                        num(g.adaptivity),
                        num(g.y_ref),
                        num(g.y_est),
                        opt(g.delta),
                    ];
                    r.extend(g.mpi_means.into_iter().map(num));
                    r
                })
                .collect();
            write_table(
                &out.file(&format!("groups_{}_{}.csv", engine.name(), attr.column())),
                &header,
                &rows,
            )?;
        }
    }

    let y_ref: Vec<f64> = d.target_percent();
    let lm = baseline_lm(&y_ref, &comp).map_err(CliError::data)?;
    bench.push(vec!["Linear regression".into(), num(lm.rmse), num(lm.mae)]);

    write_table(
        &out.file("comparison.csv"),
        &[
            "model", "n", "mean_obs", "mean_est", "MAE", "RMSE", "pearson_r", "mean_diff", "t", "df",
            "p_value", "ci95_lo", "ci95_hi",
        ],
        &comparison,
    )?;
    write_table(
        &out.file("residual_assoc.csv"),
        &["engine", "index", "pearson", "spearman"],
        &assoc,
    )?;
    write_table(&out.file("ols_residuals.csv"), &["engine", "index", "beta_std"], &ols)?;
    write_table(&out.file("benchmark.csv"), &["Model", "RMSE", "MAE"], &bench)?;
    eprintln!("analyze: {} engines compared", cfg.engines.len());
    Ok(())
}

fn markdown_table(path: &Path) -> Result<String, CliError> {
    let (header, rows) = read_table(path)?;
    let mut s = format!("| {} |\n", header.join(" | "));
    s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    Ok(s)
}

pub fn report(cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let mut sections: Vec<(String, PathBuf)> = Vec::new();
    for &e in &cfg.engines {
        let name = e.name();
        let p = out.require(&format!("energy_{name}.csv"), "simulate")?;
        sections.push((format!("Energy summary ({})", e.label()), p));
    }
    for &e in &cfg.engines {
        let name = e.name();
        let p = out.require(&format!("coverage_{name}.csv"), "conformal")?;
        sections.push((format!("Coverage and adaptivity ({})", e.label()), p));
        let p = out.require(&format!("conformal_{name}.csv"), "conformal")?;
        sections.push((format!("Calibration ({})", e.label()), p));
    }
    for (title, file) in [
        ("Comparison with observed values", "comparison.csv"),
        ("Residual associations", "residual_assoc.csv"),
        ("Standardized OLS of residuals", "ols_residuals.csv"),
        ("Model performance", "benchmark.csv"),
    ] {
        sections.push((title.to_owned(), out.require(file, "analyze")?));
    }
    let field_pca = out.require("field_pca.csv", "field")?;
    sections.insert(0, ("Principal components of the composites".into(), field_pca));

    let mut text = String::from("# Run report\n");
    for (title, path) in sections {
        text.push_str(&format!("\n## {title}\n\n"));
        text.push_str(&markdown_table(&path)?);
    }
    let path = out.file("report.md");
    fs::write(&path, text).map_err(io_err(&path))?;
    eprintln!("report: {}", path.display());
    Ok(path)
}

#[derive(Debug, Serialize)]
struct Manifest {
    version: &'static str,
    config_sha256: String,
    seeds: Seeds,
    traces: Vec<String>,
    artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
struct Seeds {
    global: u64,
    synth: Option<u64>,
    conformal: u64,
    chains: BTreeMap<String, Vec<u64>>,
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, root, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// Runs every stage in order, then records the manifest.
pub fn pipeline(cfg: &RunConfig, out: &Layout) -> Result<(), crate::error::StageError> {
    use crate::error::InStage;
    cfg.validate().in_stage("config")?;
    fs::create_dir_all(&out.root)
        .map_err(io_err(&out.root))
        .in_stage("config")?;
    let resolved = cfg.resolved();
    let cfg_path = out.file("resolved_config.toml");
    fs::write(&cfg_path, resolved.to_toml())
        .map_err(io_err(&cfg_path))
        .in_stage("config")?;

    validate(&resolved, out).in_stage("validate")?;
    field(&resolved, out).in_stage("field")?;
    graph(&resolved, out).in_stage("graph")?;
    simulate(&resolved, out).in_stage("simulate")?;
    conformal(&resolved, out).in_stage("conformal")?;
    analyze(&resolved, out).in_stage("analyze")?;
    report(&resolved, out).in_stage("report")?;
    write_manifest(&resolved, out).in_stage("manifest")
}

fn write_manifest(cfg: &RunConfig, out: &Layout) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect_files(&out.root, &out.root, &mut files)?;
    let mut artifacts = BTreeMap::new();
    for rel in files {
        let path = out.root.join(&rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        artifacts.insert(key, hex_digest(&bytes));
    }
    let mut traces = Vec::new();
    let mut chains = BTreeMap::new();
    for &e in &cfg.engines {
        let base = cfg.base_seed(e);
        chains.insert(
            e.name().to_owned(),
            (0..cfg.chains as u64).map(|k| base.wrapping_add(k)).collect(),
        );
        traces.extend((0..cfg.chains).map(|k| format!("traces/{}", Layout::trace_stem(e, k))));
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seeds: Seeds {
            global: cfg.seed,
            synth: cfg.data.path.is_none().then_some(cfg.seed),
            conformal: cfg.seed,
            chains,
        },
        traces,
        artifacts,
    };
    let path = out.file("manifest.json");
    let f = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(CliError::data)?;
    w.write_all(b"\n").map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}
