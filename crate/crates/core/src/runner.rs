//! Runs one configured experiment and writes its output tree:
//! `accuracy.csv`, `cosine.csv`, `gradnorm.csv`, `summary.json` and the
//! resolved `config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{defaults, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fedcore::run_experiment;
use crate::metrics::{
    export_csv, write_summary, MetricsLog, ACCURACY_CSV, COSINE_CSV, GRADNORM_CSV, SUMMARY_JSON,
};

pub const CONFIG_ECHO: &str = "config.toml";

/// Environment variable naming the root for runs without an explicit
/// output directory.
pub const OUTPUT_ROOT_ENV: &str = "LIPSFL_OUTPUT_ROOT";

pub const OUTPUT_FILES: [&str; 5] = [
    ACCURACY_CSV,
    COSINE_CSV,
    GRADNORM_CSV,
    SUMMARY_JSON,
    CONFIG_ECHO,
];

/// `output_dir` if set, else `<root>/<method>-seed<seed>` where the root
/// comes from `LIPSFL_OUTPUT_ROOT` or defaults to `runs`.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(defaults::output_root);
    root.join(format!("{}-seed{}", config.method, config.seed))
}

/// Writes every artifact of a finished run into `dir`. Files are staged in
/// a sibling directory and moved into place only once all of them exist, so
/// a failure never leaves a partial tree behind.
pub fn write_outputs(config: &ExperimentConfig, log: &MetricsLog, dir: &Path) -> Result<()> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let staging = dir.with_file_name(format!(".{name}.partial-{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        export_csv(log, &staging)?;
        write_summary(log, &staging)?;
        let echo = staging.join(CONFIG_ECHO);
        fs::write(&echo, config.to_toml()?).map_err(|e| Error::io(&echo, e))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for file in OUTPUT_FILES {
            let target = dir.join(file);
            fs::rename(staging.join(file), &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}

/// Runs the experiment and writes its artifacts. Returns the output directory.
pub fn run(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let dir = resolve_output_dir(config);
    let log = run_experiment(config)?;
    write_outputs(config, &log, &dir)?;
    Ok(dir)
}
