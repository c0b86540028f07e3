//! On-disk chain traces: an energy series as delimited text, retained
//! configurations as a little-endian binary matrix, and a JSON sidecar with
//! everything else needed to rebuild the [`ChainTrace`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{AnnealingSchedule, ChainTrace, Engine, EnergyPoint};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SFRT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace file: {0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceIoError + '_ {
    move |source| TraceIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnergyRow {
    iteration: u64,
    #[serde(rename = "H")]
    energy: f64,
    #[serde(rename = "T")]
    temperature: f64,
}

pub fn write_energy_csv<S: Scalar, W: Write>(w: W, points: &[EnergyPoint<S>]) -> Result<(), TraceIoError> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(EnergyRow {
            iteration: p.iteration,
            energy: p.energy.as_f64(),
            temperature: p.temperature.as_f64(),
        })?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_energy_csv<S: Scalar, R: Read>(r: R) -> Result<Vec<EnergyPoint<S>>, TraceIoError> {
    csv::Reader::from_reader(r)
        .deserialize::<EnergyRow>()
        .map(|row| {
            let row = row?;
            Ok(EnergyPoint {
                iteration: row.iteration,
                energy: S::lit(row.energy),
                temperature: S::lit(row.temperature),
            })
        })
        .collect()
}

/// Header, then `n_configs × n_units` f64 values row by row.
pub fn write_retained<S: Scalar, W: Write>(
    mut w: W,
    configs: &[Vec<S>],
    n_units: usize,
) -> Result<(), std::io::Error> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n_units as u64).to_le_bytes())?;
    w.write_all(&(configs.len() as u64).to_le_bytes())?;
    for cfg in configs {
        assert_eq!(cfg.len(), n_units, "configuration length mismatch");
        for v in cfg {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_retained<S: Scalar, R: Read>(mut r: R) -> Result<Vec<Vec<S>>, TraceIoError> {
    let fmt = |e: std::io::Error| TraceIoError::Format(e.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MAGIC {
        return Err(TraceIoError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(fmt)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(TraceIoError::Format(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(fmt)?;
    let n_units = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8).map_err(fmt)?;
    let n_configs = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(n_configs);
    for _ in 0..n_configs {
        let mut cfg = Vec::with_capacity(n_units);
        for _ in 0..n_units {
            r.read_exact(&mut b8).map_err(fmt)?;
            cfg.push(S::lit(f64::from_le_bytes(b8)));
        }
        out.push(cfg);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(fmt)? != 0 {
        return Err(TraceIoError::Format("trailing bytes".into()));
    }
    Ok(out)
}

/// Sidecar metadata of a persisted trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub engine: Engine,
    pub seed: u64,
    pub n_iters: u64,
    pub burn_in: u64,
    pub accept_count: u64,
    pub final_temperature: f64,
    pub schedule: AnnealingSchedule<f64>,
    pub n_units: usize,
    pub n_retained: usize,
    pub final_state: Vec<f64>,
}

fn schedule_f64<S: Scalar>(s: &AnnealingSchedule<S>) -> AnnealingSchedule<f64> {
    AnnealingSchedule {
        t0: s.t0.as_f64(),
        cooling: s.cooling.as_f64(),
        t_min: s.t_min.as_f64(),
        mode: s.mode,
        dt0: s.dt0.as_f64(),
        proposal_sd: s.proposal_sd.as_f64(),
    }
}

fn schedule_from_f64<S: Scalar>(s: &AnnealingSchedule<f64>) -> AnnealingSchedule<S> {
    AnnealingSchedule {
        t0: S::lit(s.t0),
        cooling: S::lit(s.cooling),
        t_min: S::lit(s.t_min),
        mode: s.mode,
        dt0: S::lit(s.dt0),
        proposal_sd: S::lit(s.proposal_sd),
    }
}

impl TraceMeta {
    pub fn of<S: Scalar>(t: &ChainTrace<S>) -> Self {
        Self {
            engine: t.engine,
            seed: t.seed,
            n_iters: t.n_iters,
            burn_in: t.burn_in,
            accept_count: t.accept_count,
            final_temperature: t.final_temperature.as_f64(),
            schedule: schedule_f64(&t.schedule),
            n_units: t.final_state.len(),
            n_retained: t.retained.len(),
            final_state: t.final_state.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// File paths of a trace stored under `stem` in `dir`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracePaths {
    pub energy: PathBuf,
    pub retained: PathBuf,
    pub meta: PathBuf,
}

impl TracePaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            energy: dir.join(format!("{stem}_energy.csv")),
            retained: dir.join(format!("{stem}_retained.bin")),
            meta: dir.join(format!("{stem}_meta.json")),
        }
    }

    pub fn all_exist(&self) -> bool {
        self.energy.is_file() && self.retained.is_file() && self.meta.is_file()
    }
}

pub fn save_trace<S: Scalar>(paths: &TracePaths, t: &ChainTrace<S>) -> Result<(), TraceIoError> {
    let f = File::create(&paths.energy).map_err(io_err(&paths.energy))?;
    write_energy_csv(BufWriter::new(f), &t.energies)?;

    let f = File::create(&paths.retained).map_err(io_err(&paths.retained))?;
    write_retained(BufWriter::new(f), &t.retained, t.final_state.len())
        .map_err(io_err(&paths.retained))?;

    let f = File::create(&paths.meta).map_err(io_err(&paths.meta))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &TraceMeta::of(t))?;
    w.write_all(b"\n").map_err(io_err(&paths.meta))?;
    w.flush().map_err(io_err(&paths.meta))
}

pub fn load_trace<S: Scalar>(paths: &TracePaths) -> Result<ChainTrace<S>, TraceIoError> {
    let f = File::open(&paths.meta).map_err(io_err(&paths.meta))?;
    let meta: TraceMeta = serde_json::from_reader(BufReader::new(f))?;

    let f = File::open(&paths.energy).map_err(io_err(&paths.energy))?;
    let energies = read_energy_csv(BufReader::new(f))?;

    let f = File::open(&paths.retained).map_err(io_err(&paths.retained))?;
    let retained: Vec<Vec<S>> = read_retained(BufReader::new(f))?;
    if retained.len() != meta.n_retained || retained.iter().any(|c| c.len() != meta.n_units) {
        return Err(TraceIoError::Format(
            "retained matrix disagrees with metadata".into(),
        ));
    }

    Ok(ChainTrace {
        engine: meta.engine,
        seed: meta.seed,
        energies,
        retained,
        accept_count: meta.accept_count,
        final_temperature: S::lit(meta.final_temperature),
        final_state: meta.final_state.iter().map(|&v| S::lit(v)).collect(),
        n_iters: meta.n_iters,
        burn_in: meta.burn_in,
        schedule: schedule_from_f64(&meta.schedule),
    })
}
