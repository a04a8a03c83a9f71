//! Layered settings: config file, then `--set` entries, then flags.
//!
//! The config file is TOML. Top-level keys mirror the flag names; the
//! `[gen]`, `[inducer_train]`, `[fusion_train]` and `[fusion_arch]` tables
//! override fields of the corresponding structures.

use std::path::{Path, PathBuf};

use mvfusion::combiner::Method;
use mvfusion::datagen::GenConfig;
use mvfusion::evaluator::ExperimentConfig;
use mvfusion::fusion::FusionArch;
use mvfusion::{Error, Result, TaskId};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

const TOP_LEVEL: &[&str] = &[
    "seed",
    "out",
    "dataset",
    "checkpoints",
    "task",
    "models",
    "methods",
    "subset",
    "k",
    "window",
    "sustain",
    "preset",
    "occlusion",
    "cascade",
    "svg",
];
const SECTIONS: &[&str] = &["gen", "inducer_train", "fusion_train", "fusion_arch"];

#[derive(Debug, Default)]
pub struct Settings {
    doc: Table,
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl Settings {
    pub fn load(config: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut doc = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
                toml::from_str::<Table>(&text)
                    .map_err(|e| Error::Format(format!("{}: {}", path.display(), e.message())))?
            }
            None => Table::new(),
        };
        for entry in sets {
            let (key, raw) =
                entry.split_once('=').ok_or_else(|| Error::Input(format!("--set expects KEY=VALUE, got `{entry}`")))?;
            let value = parse_value(raw.trim());
            match key.trim().split_once('.') {
                Some((section, field)) => {
                    let table = doc
                        .entry(section.to_string())
                        .or_insert_with(|| Value::Table(Table::new()))
                        .as_table_mut()
                        .ok_or_else(|| Error::Input(format!("`{section}` is not a table")))?;
                    table.insert(field.to_string(), value);
                }
                None => {
                    doc.insert(key.trim().to_string(), value);
                }
            }
        }
        for (key, value) in &doc {
            let known =
                if value.is_table() { SECTIONS.contains(&key.as_str()) } else { TOP_LEVEL.contains(&key.as_str()) };
            if !known {
                return Err(Error::Input(format!("unknown setting `{key}`")));
            }
        }
        Ok(Settings { doc })
    }

    /// Flags win over anything loaded.
    pub fn flag<T: Into<Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.doc.insert(key.to_string(), v.into());
        }
    }

    pub fn flag_path(&mut self, key: &str, value: Option<&PathBuf>) {
        self.flag(key, value.map(|p| p.display().to_string()));
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.doc.get(key)
    }

    pub fn str(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(Error::Input(format!("`{key}` must be a string, got {other}"))),
        }
    }

    pub fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(other) => Err(Error::Input(format!("`{key}` must be a non-negative integer, got {other}"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(Error::Input(format!("`{key}` must be a boolean, got {other}"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.uint("seed")?
            .ok_or_else(|| Error::Input("a seed is required (--seed or `seed` in the config file)".into()))
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.str(key)?.map(PathBuf::from))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)?.ok_or_else(|| Error::Input(format!("--{key} is required")))
    }

    pub fn tasks(&self) -> Result<Vec<TaskId>> {
        match self.str("task")?.as_deref() {
            None | Some("all") => Ok(TaskId::ALL.to_vec()),
            Some(key) => Ok(vec![key.parse()?]),
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        match self.str("methods")?.as_deref() {
            None | Some("all") => Ok(Method::ALL.to_vec()),
            Some(list) => list.split(',').map(|k| Method::from_key(k.trim())).collect(),
        }
    }

    fn section<T: Serialize + DeserializeOwned>(&self, name: &str, base: T) -> Result<T> {
        let Some(overrides) = self.get(name).and_then(Value::as_table) else {
            return Ok(base);
        };
        let mut merged = serde_json::to_value(&base)?;
        let fields = merged.as_object_mut().ok_or_else(|| Error::Input(format!("`{name}` is not a table")))?;
        for (key, value) in overrides {
            if !fields.contains_key(key) {
                return Err(Error::Input(format!("unknown setting `{name}.{key}`")));
            }
            fields.insert(key.clone(), serde_json::to_value(value)?);
        }
        serde_json::from_value(merged).map_err(|e| Error::Input(format!("`{name}`: {e}")))
    }

    /// Generator settings seeded by `seed` unless `gen.rng_seed` is given.
    pub fn gen_config(&self, seed: u64) -> Result<GenConfig> {
        let mut gen = self.section("gen", GenConfig { rng_seed: seed, ..Default::default() })?;
        if self.str("occlusion")?.as_deref() == Some("off") {
            gen = gen.without_occlusion();
        }
        gen.validate()?;
        Ok(gen)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let preset = self.str("preset")?.unwrap_or_else(|| "desk".into());
        let base = ExperimentConfig::default();
        let config = ExperimentConfig {
            inducer_train: self.section("inducer_train", base.inducer_train)?,
            fusion_train: self.section("fusion_train", base.fusion_train)?,
            fusion_arch: self.section("fusion_arch", FusionArch::preset(&preset)?)?,
            inducer_hidden: base.inducer_hidden,
        };
        config.inducer_train.validate()?;
        config.fusion_train.validate()?;
        Ok(config)
    }
}
