//! Run folders and the files each command writes.
//!
//! Every JSON artifact carries `config_hash` and `version` fields; every CSV
//! starts with a `# config_hash=..., version=...` comment line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::cmaes::GenerationRecord;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::integrate::Trajectory;
use crate::pipeline::{self, AtStage, Stage, StageResult, Synthesis};
use crate::ssm::ReducedModel;
use crate::system::ControlAffineSystem;
use crate::validate::{sweep_csv, RomSimulation};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable that overrides the base output directory.
pub const OUT_DIR_ENV: &str = "SSMCTL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Reduce,
    Synthesize,
    Simulate,
    Sweep,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Reduce => "reduce",
            Command::Synthesize => "synthesize",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    version: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
    config_hash: String,
}

impl RunDir {
    /// Creates `<base>/<command>-<hash12>-<unix seconds>`, adding a counter
    /// suffix if that folder already exists.
    pub fn create(base: &Path, command: &str, config_hash: &str) -> Result<Self> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let stem = format!("{command}-{}-{secs}", &config_hash[..12.min(config_hash.len())]);
        fs::create_dir_all(base)?;
        let mut path = base.join(&stem);
        let mut k = 1;
        while path.exists() {
            path = base.join(format!("{stem}-{k}"));
            k += 1;
        }
        fs::create_dir(&path)?;
        Ok(Self {
            path,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let doc = Stamped {
            config_hash: &self.config_hash,
            version: VERSION,
            body,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        let p = self.path.join(name);
        fs::write(&p, text)?;
        Ok(p)
    }

    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        fs::write(&p, format!("# config_hash={}, version={VERSION}\n{body}", self.config_hash))?;
        Ok(p)
    }
}

/// Base directory: explicit argument, then `SSMCTL_OUT_DIR`, then the config, then `runs`.
pub fn resolve_base(explicit: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.out_dir.as_deref().map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn numbered(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!(",{prefix}{i}")).collect()
}

/// Columns `t, x0.., y0.., u0..` (s, state units, output units, input units).
pub fn fom_csv(system: &ControlAffineSystem, model: &ReducedModel, traj: &Trajectory) -> String {
    let c = model.controller();
    let m = c.map_or(0, |c| c.inputs());
    let mut s = format!(
        "t{}{}{}\n",
        numbered("x", system.state_dim()),
        numbered("y", system.output_dim()),
        numbered("u", m)
    );
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let y = system.output(x);
        let u = c.map_or_else(Vec::new, |c| c.eval(&y, model.omega() * t).unwrap_or_default());
        row(&mut s, *t, [x.as_slice(), &y, &u]);
    }
    s
}

/// Columns `t, q0.., x0.., y0.., u0.., outside_trust_region`, with `x` the lifted state.
pub fn rom_csv(system: &ControlAffineSystem, model: &ReducedModel, rom: &RomSimulation) -> String {
    let c = model.controller();
    let m = c.map_or(0, |c| c.inputs());
    let mut s = format!(
        "t{}{}{}{},outside_trust_region\n",
        numbered("q", model.reduced_dim()),
        numbered("x", system.state_dim()),
        numbered("y", system.output_dim()),
        numbered("u", m)
    );
    for (k, t) in rom.reduced.times.iter().enumerate() {
        let x = &rom.lifted.states[k];
        let y = system.output(x);
        let u = c.map_or_else(Vec::new, |c| c.eval(&y, model.omega() * t).unwrap_or_default());
        row(&mut s, *t, [rom.reduced.states[k].as_slice(), x, &y, &u]);
        s.pop();
        let _ = writeln!(s, ",{}", u8::from(rom.outside_trust_region[k]));
    }
    s
}

fn row<const N: usize>(s: &mut String, t: f64, cols: [&[f64]; N]) {
    let _ = write!(s, "{t}");
    for v in cols.iter().flat_map(|c| c.iter()) {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
}

/// Columns `generation, evaluations, best, generation_best, median, sigma`.
pub fn trace_csv(history: &[GenerationRecord]) -> String {
    let mut s = String::from("generation,evaluations,best,generation_best,median,sigma\n");
    for g in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            g.generation, g.evaluations, g.best, g.generation_best, g.median, g.sigma
        );
    }
    s
}

fn write_synthesis(dir: &RunDir, syn: &Synthesis) -> Result<()> {
    dir.write_json("params.json", &syn.report())?;
    dir.write_csv("trace.csv", &trace_csv(&syn.outcome.optimizer.history))?;
    Ok(())
}

#[derive(Serialize)]
struct Rows<'a, T: Serialize> {
    rows: &'a T,
}

/// Runs `command` and writes its artifacts into a fresh run folder under `base`.
/// Returns the folder and the command's summary document.
pub fn execute(command: Command, cfg: &ExperimentConfig, base: &Path) -> StageResult<(PathBuf, serde_json::Value)> {
    cfg.validate().at(Stage::Config)?;
    let dir = RunDir::create(base, command.name(), &cfg.hash()).at(Stage::WriteArtifacts)?;
    let w = Stage::WriteArtifacts;
    dir.write_json("config.json", cfg).at(w)?;
    let summary = match command {
        Command::Analyze => {
            let a = pipeline::analyze(cfg)?;
            dir.write_json("analysis.json", &a).at(w)?;
            to_value(&a)
        }
        Command::Reduce => {
            let r = pipeline::reduce(cfg)?;
            dir.write_json("model.json", &r.model.to_json()).at(w)?;
            dir.write_json("residual.json", &r.residual).at(w)?;
            to_value(&r.residual)
        }
        Command::Synthesize => {
            let syn = pipeline::synthesize_controller(cfg)?;
            write_synthesis(&dir, &syn).at(w)?;
            dir.write_json("model.json", &syn.outcome.model.to_json()).at(w)?;
            to_value(&syn.report())
        }
        Command::Simulate => {
            let s = pipeline::setup(cfg)?;
            let (model, syn) = pipeline::nominal_model(cfg, &s)?;
            let sim = pipeline::simulate_model(cfg, &s, &model)?;
            if let Some(syn) = &syn {
                write_synthesis(&dir, syn).at(w)?;
            }
            dir.write_json("metrics.json", &sim.report).at(w)?;
            dir.write_csv("fom_trajectory.csv", &fom_csv(&s.system, &model, &sim.comparison.fom)).at(w)?;
            dir.write_csv("rom_trajectory.csv", &rom_csv(&s.system, &model, &sim.comparison.rom)).at(w)?;
            to_value(&sim.report)
        }
        Command::Sweep => {
            let (rows, syn) = pipeline::sweep(cfg)?;
            if let Some(syn) = &syn {
                write_synthesis(&dir, syn).at(w)?;
            }
            dir.write_csv("sweep.csv", &sweep_csv(&rows)).at(w)?;
            dir.write_json("sweep.json", &Rows { rows: &rows }).at(w)?;
            to_value(&Rows { rows: &rows })
        }
        Command::Pipeline => {
            let run = pipeline::run_pipeline(cfg)?;
            let s = pipeline::setup(cfg)?;
            dir.write_json("analysis.json", &run.report.analysis).at(w)?;
            if let Some(syn) = &run.synthesis {
                write_synthesis(&dir, syn).at(w)?;
            }
            dir.write_json("model.json", &run.model.to_json()).at(w)?;
            dir.write_json("metrics.json", &run.report).at(w)?;
            let cmp = &run.simulation.comparison;
            dir.write_csv("fom_trajectory.csv", &fom_csv(&s.system, &run.model, &cmp.fom)).at(w)?;
            dir.write_csv("rom_trajectory.csv", &rom_csv(&s.system, &run.model, &cmp.rom)).at(w)?;
            to_value(&run.report)
        }
    };
    Ok((dir.path().to_path_buf(), summary))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_names_and_stamps() {
        let tmp = tempfile::tempdir().unwrap();
        let hash = "0123456789abcdef".repeat(4);
        let a = RunDir::create(tmp.path(), "analyze", &hash).unwrap();
        let b = RunDir::create(tmp.path(), "analyze", &hash).unwrap();
        assert_ne!(a.path(), b.path());
        let name = a.path().file_name().unwrap().to_str().unwrap().to_string();
        assert!(name.starts_with("analyze-0123456789ab-"), "{name}");

        let p = a.write_csv("x.csv", "a,b\n1,2\n").unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash}, version={VERSION}"));

        let p = a.write_json("x.json", &serde_json::json!({"k": 1})).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["config_hash"], hash.as_str());
        assert_eq!(v["version"], VERSION);
        assert_eq!(v["k"], 1);
    }

    #[test]
    fn explicit_base_wins() {
        let cfg = ExperimentConfig::preset("pendulum-fig3").unwrap();
        assert_eq!(resolve_base(Some(Path::new("/a")), &cfg), PathBuf::from("/a"));
    }

    #[test]
    fn analyze_writes_stamped_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::preset("pendulum-fig3").unwrap();
        let (dir, summary) = execute(Command::Analyze, &cfg, tmp.path()).unwrap();
        assert_eq!(summary["spectral_quotient"], 122);
        for f in ["config.json", "analysis.json"] {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(f)).unwrap()).unwrap();
            assert_eq!(v["config_hash"], cfg.hash().as_str());
        }
    }

    #[test]
    fn trace_has_one_row_per_generation() {
        let h = vec![
            GenerationRecord {
                generation: 0,
                evaluations: 6,
                best: 2.0,
                generation_best: 2.0,
                median: 3.0,
                sigma: 0.5,
            };
            3
        ];
        assert_eq!(trace_csv(&h).lines().count(), 4);
    }
}
