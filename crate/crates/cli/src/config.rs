//! Config file layout and the layering rule: CLI flag, then config file, then
//! built-in default. Partial objects are merged key by key onto the default
//! before being deserialized.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mfsim_core::backends::remote::{RemoteBackend, RemoteConfig};
use mfsim_core::backends::scripted::ScriptedBackend;
use mfsim_core::backends::toy::{Alphabets, ToyModel, ToyModelParams};
use mfsim_core::backends::{
    GenerativeBackend, MeanFieldModel, PolicyModel, TextMeanField, TextPolicy,
};
use mfsim_core::engine::Backends;
use mfsim_core::metrics::{DimensionSchema, Judge, LlmJudge, MockJudge};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Partial `SimulationConfig`.
    #[serde(default)]
    pub simulation: Option<Value>,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub judge: JudgeSpec,
    #[serde(default)]
    pub schema: SchemaSpec,
    #[serde(default)]
    pub window: Option<usize>,
    /// Partial `IBHyper`.
    #[serde(default)]
    pub training: Option<Value>,
    /// Partial `SyntheticGenConfig`.
    #[serde(default)]
    pub synthetic: Option<Value>,
    #[serde(default)]
    pub service: ServiceConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Toy {
        /// Parameter file written by `train-toy`; random logits otherwise.
        #[serde(default)]
        params: Option<PathBuf>,
        #[serde(default = "default_alphabets")]
        alphabets: Alphabets,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
    },
    Scripted {
        response: String,
    },
    Remote(RemoteConfig),
}

fn default_alphabets() -> Alphabets {
    Alphabets {
        states: 6,
        actions: 4,
        mean_field: 8,
    }
}

fn default_init_scale() -> f64 {
    0.5
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Toy {
            params: None,
            alphabets: default_alphabets(),
            init_scale: default_init_scale(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeSpec {
    /// Labels are the action symbols themselves (toy runs).
    #[default]
    #[serde(alias = "mock")]
    Identity,
    Keywords,
    Remote(RemoteConfig),
}

impl JudgeSpec {
    pub fn from_flag(flag: &str, current: &JudgeSpec) -> Result<JudgeSpec> {
        Ok(match flag {
            "mock" | "identity" => JudgeSpec::Identity,
            "keywords" => JudgeSpec::Keywords,
            "remote" => match current {
                JudgeSpec::Remote(_) => current.clone(),
                _ => bail!("--judge remote needs a remote judge section in --config"),
            },
            other => bail!("unknown judge {other:?} (expected mock, keywords or remote)"),
        })
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Judge>> {
        Ok(match self {
            JudgeSpec::Identity => Box::new(MockJudge::Identity { dimension: 0 }),
            JudgeSpec::Keywords => Box::new(MockJudge::opinion_keywords()),
            JudgeSpec::Remote(cfg) => {
                let mut j = LlmJudge::new(Arc::new(RemoteBackend::new(cfg.clone())?));
                j.seed = seed;
                Box::new(j)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaSpec {
    Toy { labels: usize },
    Opinion,
}

impl Default for SchemaSpec {
    fn default() -> Self {
        SchemaSpec::Toy { labels: 4 }
    }
}

impl SchemaSpec {
    /// `opinion` or `toy:N`.
    pub fn parse(raw: &str) -> Result<SchemaSpec> {
        if raw == "opinion" {
            return Ok(SchemaSpec::Opinion);
        }
        match raw.strip_prefix("toy:").map(str::parse::<usize>) {
            Some(Ok(labels)) if labels > 0 => Ok(SchemaSpec::Toy { labels }),
            _ => bail!("unknown schema {raw:?} (expected opinion or toy:N)"),
        }
    }

    pub fn build(&self) -> Result<DimensionSchema> {
        Ok(match self {
            SchemaSpec::Toy { labels } => DimensionSchema::toy(*labels)?,
            SchemaSpec::Opinion => DimensionSchema::opinion(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_addr")]
    pub addr: String,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_addr() -> String {
    "127.0.0.1:8080".into()
}
fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_workers() -> usize {
    2
}
fn default_batch() -> usize {
    16
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: default_addr(),
            runs_dir: default_runs_dir(),
            workers: default_workers(),
            batch_size: default_batch(),
        }
    }
}

/// Recursively overlay `patch` onto `base`. Objects merge by key, anything
/// else replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Serialize `base`, apply each patch in order, and read the result back.
pub fn layered<T>(base: &T, patches: &[Option<&Value>]) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut v = serde_json::to_value(base)?;
    for p in patches.iter().flatten() {
        if !p.is_object() {
            bail!("config section must be a JSON object, got {p}");
        }
        merge(&mut v, p);
    }
    Ok(serde_json::from_value(v)?)
}

/// Policy and mean-field models built from a [`BackendSpec`].
pub enum Models {
    Toy(ToyModel),
    Text {
        policy: TextPolicy,
        mean_field: TextMeanField,
    },
}

impl Models {
    pub fn build(spec: &BackendSpec, seed: u64) -> Result<Models> {
        let text = |backend: Arc<dyn GenerativeBackend>| Models::Text {
            policy: TextPolicy::new(backend.clone()),
            mean_field: TextMeanField::new(backend),
        };
        Ok(match spec {
            BackendSpec::Toy {
                params,
                alphabets,
                init_scale,
            } => {
                let p = match params {
                    Some(path) => read_params(path)?,
                    None => ToyModelParams::random(*alphabets, *init_scale, seed),
                };
                Models::Toy(ToyModel::new(p)?)
            }
            BackendSpec::Scripted { response } => {
                text(Arc::new(ScriptedBackend::constant(response.clone())))
            }
            BackendSpec::Remote(cfg) => text(Arc::new(RemoteBackend::new(cfg.clone())?)),
        })
    }

    pub fn backends(&self) -> Backends<'_> {
        match self {
            Models::Toy(m) => Backends {
                policy: m,
                mean_field: m,
            },
            Models::Text { policy, mean_field } => Backends { policy, mean_field },
        }
    }

    pub fn policy(&self) -> &dyn PolicyModel {
        self.backends().policy
    }

    pub fn mean_field(&self) -> &dyn MeanFieldModel {
        self.backends().mean_field
    }
}

pub fn read_params(path: &Path) -> Result<ToyModelParams> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p: ToyModelParams =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    p.validate()?;
    Ok(p)
}
