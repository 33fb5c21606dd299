//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! ```toml
//! task = "tabmwp"              # scienceqa | tabmwp
//! model_id = "gpt-4"
//! mode = "replay"              # live | record | replay
//! cassette = "cassettes/tabmwp.ndjson"
//! strict = false               # replay misses are errors instead of empty responses
//! out = "runs"
//! jobs = 4
//! image_root = "images"
//! inventory = ["plugins/echo.toml"]   # plug-in module files
//! templates = ["plugins/prompts.toml"]
//! disable = ["Knowledge_Retrieval"]
//!
//! [execution]
//! hide_disabled = true
//! skip_disabled = true
//! step_budget_secs = 120
//! full_trace = false
//!
//! [sandbox]
//! interpreter = ["python3"]
//! wall_timeout_secs = 10
//!
//! [adapters]
//! vision = "http://127.0.0.1:8089"
//! search = "http://127.0.0.1:8089/search"
//! timeout_secs = 60
//! ```
//!
//! Relative paths in the file resolve against the file's directory.

use crate::CliError;
use plancompose_core::executor::{Engine, ExecOptions, DEFAULT_MODULE_MODEL, DEFAULT_STEP_BUDGET};
use plancompose_core::gateway::{ChatBackend, Gateway, GatewayError, HttpChatBackend, Mode};
use plancompose_core::inventory::{inventory_for_task, Inventory};
use plancompose_core::modules::adapters::{AdapterEndpoints, Adapters};
use plancompose_core::modules::prompt::TemplateSet;
use plancompose_core::modules::sandbox::SandboxProfile;
use plancompose_core::modules::DEFAULT_SANDBOX_PROFILE;
use plancompose_core::types::Task;
use serde::Deserialize;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

/// Concurrency for live and record runs when `--jobs` is not given.
pub const DEFAULT_LIVE_JOBS: usize = 4;
const LLM_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<String>,
    pub model_id: Option<String>,
    pub mode: Option<String>,
    pub cassette: Option<PathBuf>,
    pub strict: Option<bool>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub image_root: Option<PathBuf>,
    #[serde(default)]
    pub inventory: Vec<PathBuf>,
    #[serde(default)]
    pub templates: Vec<PathBuf>,
    #[serde(default)]
    pub disable: Vec<String>,
    #[serde(default)]
    pub execution: ExecutionConfig,
    #[serde(default)]
    pub sandbox: SandboxConfig,
    #[serde(default)]
    pub adapters: AdapterConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    pub hide_disabled: Option<bool>,
    pub skip_disabled: Option<bool>,
    pub step_budget_secs: Option<f64>,
    pub full_trace: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    pub interpreter: Option<Vec<String>>,
    pub wall_timeout_secs: Option<f64>,
    pub denied_imports: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub vision: Option<String>,
    pub search: Option<String>,
    pub timeout_secs: Option<f64>,
}

/// Flag values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub task: Option<String>,
    pub mode: Option<String>,
    pub cassette: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub full_trace: bool,
    pub disable: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub model_id: String,
    pub mode: Mode,
    pub out: PathBuf,
    /// `None`: one worker per core.
    pub jobs: Option<usize>,
    pub image_root: Option<PathBuf>,
    pub inventory_files: Vec<PathBuf>,
    pub template_files: Vec<PathBuf>,
    pub options: ExecOptions,
    pub sandbox: SandboxProfile,
    pub endpoints: AdapterEndpoints,
}

fn secs(v: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v).map_err(|_| CliError::Config(format!("{what} must be a non-negative number of seconds")))
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

impl RunConfig {
    pub fn load(config: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let (file, base) = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
                let file: FileConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        Self::from_parts(file, &base, flags)
    }

    pub fn from_parts(file: FileConfig, base: &Path, flags: Overrides) -> Result<Self, CliError> {
        let task_name = flags
            .task
            .or(file.task)
            .ok_or_else(|| CliError::Config("no task given: pass --task or set `task` in the config".into()))?;
        let task: Task = task_name.parse().map_err(CliError::Config)?;

        let cassette = flags.cassette.or_else(|| file.cassette.map(|p| resolve(base, p)));
        let mode = match flags.mode.or(file.mode).as_deref().unwrap_or("replay") {
            "live" => Mode::Live,
            "record" => Mode::Record {
                cassette: cassette.ok_or_else(|| CliError::Config("record mode needs --cassette".into()))?,
            },
            "replay" => {
                let cassette = cassette.ok_or_else(|| CliError::Config("replay mode needs --cassette".into()))?;
                if !cassette.is_file() {
                    return Err(CliError::Config(format!("cassette {} does not exist", cassette.display())));
                }
                Mode::Replay { cassette, strict: file.strict.unwrap_or(false) }
            }
            other => return Err(CliError::Config(format!("unknown mode {other:?}; expected live, record or replay"))),
        };

        let jobs = match flags.jobs.or(file.jobs) {
            Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
            Some(n) => Some(n),
            // Replay is pure lookup, so let it use every core.
            None if mode.is_replay() => None,
            None => Some(DEFAULT_LIVE_JOBS),
        };

        let mut options = ExecOptions {
            disabled: file.disable.into_iter().chain(flags.disable).collect::<BTreeSet<_>>(),
            ..ExecOptions::default()
        };
        let ex = file.execution;
        options.hide_disabled = ex.hide_disabled.unwrap_or(true);
        options.skip_disabled = ex.skip_disabled.unwrap_or(true);
        options.full_trace = flags.full_trace || ex.full_trace.unwrap_or(false);
        options.step_budget = match ex.step_budget_secs {
            Some(v) => Some(secs(v, "step_budget_secs")?),
            None if mode.is_replay() => None,
            None => Some(DEFAULT_STEP_BUDGET),
        };

        let mut sandbox = SandboxProfile::default();
        if let Some(i) = file.sandbox.interpreter {
            if i.is_empty() {
                return Err(CliError::Config("sandbox.interpreter must name a command".into()));
            }
            sandbox.interpreter = i;
        }
        if let Some(t) = file.sandbox.wall_timeout_secs {
            sandbox.wall_timeout = secs(t, "sandbox.wall_timeout_secs")?;
        }
        if let Some(d) = file.sandbox.denied_imports {
            sandbox.denied_imports = d;
        }

        let endpoints = AdapterEndpoints {
            vision: file.adapters.vision,
            search: file.adapters.search,
            timeout: file.adapters.timeout_secs.map(|t| secs(t, "adapters.timeout_secs")).transpose()?,
        };

        Ok(RunConfig {
            task,
            model_id: file.model_id.unwrap_or_else(|| DEFAULT_MODULE_MODEL.to_string()),
            mode,
            out: flags.out.or_else(|| file.out.map(|p| resolve(base, p))).unwrap_or_else(|| PathBuf::from("runs")),
            jobs,
            image_root: file.image_root.map(|p| resolve(base, p)),
            inventory_files: file.inventory.into_iter().map(|p| resolve(base, p)).collect(),
            template_files: file.templates.into_iter().map(|p| resolve(base, p)).collect(),
            options,
            sandbox,
            endpoints,
        })
    }

    pub fn inventory(&self) -> Result<Inventory, CliError> {
        let mut inv = inventory_for_task(self.task);
        for f in &self.inventory_files {
            inv = inv.extend_from_file(f).map_err(|e| CliError::Config(e.to_string()))?;
        }
        for name in &self.options.disabled {
            if !inv.contains(name) {
                return Err(CliError::Config(format!("--disable {name}: no such module for {}", self.task)));
            }
        }
        Ok(inv)
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        let backend: Option<Arc<dyn ChatBackend>> = if self.mode.needs_backend() {
            Some(Arc::new(HttpChatBackend::from_env(LLM_TIMEOUT).map_err(gateway_config)?))
        } else {
            None
        };
        Gateway::from_mode(&self.mode, backend).map_err(gateway_config)
    }

    /// `default_image_root` applies when the config names none (usually the benchmark's directory).
    pub fn engine(&self, default_image_root: Option<&Path>) -> Result<Engine, CliError> {
        let mut templates = TemplateSet::shipped();
        for f in &self.template_files {
            templates = templates.merge_file(f).map_err(|e| CliError::Config(e.to_string()))?;
        }
        let mut adapters = Adapters::new(self.endpoints.clone());
        if let Some(root) = self.image_root.as_deref().or(default_image_root) {
            adapters = adapters.with_image_root(root);
        }
        let mut engine = Engine::new(self.inventory()?, self.gateway()?)
            .with_templates(templates)
            .with_adapters(adapters)
            .with_sandbox_profile(DEFAULT_SANDBOX_PROFILE, self.sandbox.clone())
            .with_options(self.options.clone());
        engine.model_id = self.model_id.clone();
        engine.planner = engine.planner.clone().with_model(self.model_id.clone());
        Ok(engine)
    }
}

fn gateway_config(e: GatewayError) -> CliError {
    CliError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(task: &str) -> Overrides {
        Overrides { task: Some(task.into()), mode: Some("replay".into()), ..Overrides::default() }
    }

    #[test]
    fn replay_needs_an_existing_cassette() {
        let err = RunConfig::from_parts(FileConfig::default(), Path::new(""), flags("tabmwp")).unwrap_err();
        assert!(matches!(err, CliError::Config(m) if m.contains("--cassette")));
        let mut f = flags("tabmwp");
        f.cassette = Some("/nonexistent/x.ndjson".into());
        assert!(RunConfig::from_parts(FileConfig::default(), Path::new(""), f).is_err());
    }

    #[test]
    fn replay_jobs_default_to_all_cores() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.ndjson");
        std::fs::write(&c, "").unwrap();
        let mut f = flags("scienceqa");
        f.cassette = Some(c);
        let cfg = RunConfig::from_parts(FileConfig::default(), Path::new(""), f).unwrap();
        assert_eq!(cfg.jobs, None);
        assert_eq!(cfg.options.step_budget, None);
    }

    #[test]
    fn file_paths_resolve_against_the_file() {
        let file: FileConfig = toml::from_str(
            "task = \"tabmwp\"\nmode = \"live\"\ninventory = [\"p.toml\"]\n[sandbox]\nwall_timeout_secs = 2\n",
        )
        .unwrap();
        let cfg = RunConfig::from_parts(file, Path::new("/etc/x"), Overrides::default()).unwrap();
        assert_eq!(cfg.inventory_files, [PathBuf::from("/etc/x/p.toml")]);
        assert_eq!(cfg.jobs, Some(DEFAULT_LIVE_JOBS));
        assert_eq!(cfg.sandbox.wall_timeout, Duration::from_secs(2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("tsk = \"tabmwp\"").is_err());
    }
}
