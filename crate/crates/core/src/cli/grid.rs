use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;

use super::commands::RESULTS_FILE;
use super::manifest::{Recorder, RUN_MANIFEST_FILE};
use super::GridArgs;
use crate::config::KvConfig;
use crate::fsutil::write_atomic;
use crate::models::{Conditioning, Family};
use crate::pipeline::{read_results_csv, render_report, write_results_csv, AngleSource, TrainConfig};
use crate::{Error, Result};

const GRID_KEYS: [&str; 4] = ["conditionings", "backbones", "seeds", "angle_sources"];
const RUN_KEYS: [&str; 4] = ["conditioning", "backbone", "seed", "angle_source"];

/// One cell of an expanded grid: its name and the full training config text.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub name: String,
    pub config_text: String,
}

/// Expands a grid config into training configs. Base keys are copied into
/// every run; `conditionings`, `backbones` and `seeds` are crossed. With
/// `angle_sources`, each conditioned combination is repeated per source while
/// unconditioned runs use `none`.
pub fn expand_grid(text: &str) -> Result<Vec<GridRun>> {
    let kv = KvConfig::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    let conds: Vec<Conditioning> = kv
        .get_list("conditionings")
        .map_err(cfg_err)?
        .unwrap_or(vec![Conditioning::None]);
    let families: Vec<Family> = kv
        .get_list("backbones")
        .map_err(cfg_err)?
        .unwrap_or(vec![Family::Resnet]);
    let seeds: Vec<u64> = kv.get_list("seeds").map_err(cfg_err)?.unwrap_or(vec![0]);
    let sources: Vec<AngleSource> = kv
        .get_list("angle_sources")
        .map_err(cfg_err)?
        .unwrap_or(vec![AngleSource::Reference]);
    for key in RUN_KEYS {
        if kv.raw(key).is_some() {
            return Err(Error::Config(format!(
                "grid configs set `{key}` through its plural list key"
            )));
        }
    }
    let base: String = text
        .lines()
        .filter(|l| {
            let key = l.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim();
            !GRID_KEYS.contains(&key)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let mut runs = Vec::new();
    for &family in &families {
        for &cond in &conds {
            let srcs: Vec<AngleSource> = if cond == Conditioning::None {
                vec![AngleSource::None]
            } else {
                sources.clone()
            };
            for &src in &srcs {
                for &seed in &seeds {
                    let config_text = format!(
                        "{base}conditioning = {cond}\nbackbone = {family}\nangle_source = {src}\nseed = {seed}\n"
                    );
                    let kv = KvConfig::parse(&config_text).map_err(|e| Error::Config(e.to_string()))?;
                    TrainConfig::from_kv(&kv).map_err(cfg_err)?;
                    runs.push(GridRun {
                        name: format!("{family}-{cond}-{src}-s{seed}"),
                        config_text,
                    });
                }
            }
        }
    }
    Ok(runs)
}

fn cfg_err(e: crate::config::ConfigError) -> Error {
    Error::Config(e.to_string())
}

struct Failure {
    name: String,
    code: i32,
}

fn run_child(exe: &Path, args: &GridArgs, cfg: &Path, run_dir: &Path, log: &Path) -> Result<Option<i32>> {
    let log_file = fs::File::create(log).map_err(|e| Error::io(log, e))?;
    let err_file = log_file.try_clone().map_err(|e| Error::io(log, e))?;
    let mut cmd = Command::new(exe);
    cmd.arg("train")
        .arg("--config")
        .arg(cfg)
        .arg("--data")
        .arg(&args.data)
        .arg("--out")
        .arg(run_dir)
        .stdout(Stdio::from(log_file))
        .stderr(Stdio::from(err_file));
    if let Some(a) = &args.aspects {
        cmd.arg("--aspects").arg(a);
    }
    let status = cmd.status().map_err(|e| Error::io(exe, e))?;
    Ok(if status.success() {
        None
    } else {
        Some(status.code().unwrap_or(3))
    })
}

/// Runs every grid cell as its own `train` process, at most `jobs` at a
/// time, then gathers the rows in grid order into `results.csv` and renders
/// `report.md`.
pub fn run_grid(a: &GridArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let runs = expand_grid(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", a.config.display())),
        other => other,
    })?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.aspects.as_deref());
    let rec = Recorder::start("grid", Some(&a.config), None, &inputs)?;
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let cfg_dir = a.out.join("configs");
    let run_root = a.out.join("runs");
    let log_dir = a.out.join("logs");
    for d in [&cfg_dir, &run_root, &log_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut cfg_paths = Vec::with_capacity(runs.len());
    for r in &runs {
        let p = cfg_dir.join(format!("{}.cfg", r.name));
        write_atomic(&p, r.config_text.as_bytes()).map_err(|e| Error::io(&p, e))?;
        cfg_paths.push(p);
    }
    let next = Mutex::new(0usize);
    let failures: Mutex<Vec<Failure>> = Mutex::new(Vec::new());
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(runs.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(run) = runs.get(i) else { break };
                log::info!("grid run {}/{}: {}", i + 1, runs.len(), run.name);
                let log = log_dir.join(format!("{}.log", run.name));
                match run_child(&exe, a, &cfg_paths[i], &run_root.join(&run.name), &log) {
                    Ok(None) => {}
                    Ok(Some(code)) => failures.lock().expect("lock").push(Failure {
                        name: run.name.clone(),
                        code,
                    }),
                    Err(e) => errors.lock().expect("lock").push(e),
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().expect("lock").into_iter().next() {
        return Err(e);
    }
    let failures = failures.into_inner().expect("lock");
    if let Some(worst) = failures.iter().max_by_key(|f| f.code) {
        return Err(Error::Child {
            failed: failures.len(),
            total: runs.len(),
            first: worst.name.clone(),
            code: worst.code,
        });
    }
    let mut rows = Vec::new();
    for r in &runs {
        let p = run_root.join(&r.name).join(RESULTS_FILE);
        let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        rows.extend(read_results_csv(f)?);
    }
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &rows)?;
    let results = a.out.join(RESULTS_FILE);
    write_atomic(&results, &buf).map_err(|e| Error::io(&results, e))?;
    let report = a.out.join("report.md");
    write_atomic(&report, render_report(&rows)?.as_bytes()).map_err(|e| Error::io(&report, e))?;
    let outputs: Vec<PathBuf> = vec![results, report, run_root];
    rec.finish(&outputs, &a.out.join(RUN_MANIFEST_FILE))?;
    println!("{} runs, results in {}", runs.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_the_full_cross_product() {
        let runs = expand_grid(
            "epochs = 2\nconditionings = none, concat, film, cbn\nbackbones = mlp, conv, resnet\nseeds = 0, 1\n",
        )
        .unwrap();
        assert_eq!(runs.len(), 4 * 3 * 2);
        assert_eq!(runs[0].name, "mlp-none-none-s0");
        assert!(runs[2].config_text.contains("conditioning = concat"));
        assert!(runs.iter().all(|r| r.config_text.starts_with("epochs = 2\n")));
        let names: std::collections::BTreeSet<_> = runs.iter().map(|r| &r.name).collect();
        assert_eq!(names.len(), runs.len());
    }

    #[test]
    fn angle_sources_repeat_only_conditioned_runs() {
        let runs = expand_grid("conditionings = none, film\nangle_sources = reference, predicted\n").unwrap();
        let names: Vec<_> = runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "resnet-none-none-s0",
                "resnet-film-reference-s0",
                "resnet-film-predicted-s0"
            ]
        );
    }

    #[test]
    fn rejects_singular_run_keys_and_bad_values() {
        assert!(expand_grid("seed = 3\n").is_err());
        assert!(expand_grid("conditionings = none, bogus\n").is_err());
        assert!(expand_grid("conditionings = none\nepochs = 0\n").is_err());
    }
}
