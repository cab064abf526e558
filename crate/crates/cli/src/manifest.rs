//! Experiment manifests: a TOML file describing one or more verb invocations
//! with pinned seeds and declared inputs/outputs. Rerunning a manifest at the
//! same tool version reproduces every output byte for byte.
//!
//! Steps form a DAG through their files: a step that reads another step's
//! output waits for it; independent steps run in parallel. Each output is
//! written to a temporary sibling and renamed into place.

use crate::io;
use crate::{execute, Cli};
use clap::Parser;
use kawaflow::error::{Error, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

const MODULE_VERBS: [&str; 7] = ["graph", "ising", "dyn", "fi", "decomp", "mp", "matroid"];

pub struct Step {
    pub id: String,
    pub verb: String,
    pub seed: u64,
    pub params: BTreeMap<String, toml::Value>,
    /// name → path as written in the manifest.
    pub inputs: BTreeMap<String, String>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Manifest {
    pub id: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    pub root: PathBuf,
    pub sha256: String,
}

/// 64-bit stream seed for a task, from the root seed and the task id.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: msg.into(),
    }
}

fn str_map(
    table: &toml::Table,
    key: &str,
    path: &Path,
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if let Some(v) = table.get(key) {
        let sub = v
            .as_table()
            .ok_or_else(|| bad(path, format!("{key} must be a table")))?;
        for (name, val) in sub {
            let s = val
                .as_str()
                .ok_or_else(|| bad(path, format!("{key}.{name} must be a string")))?;
            out.insert(name.clone(), s.to_string());
        }
    }
    Ok(out)
}

fn parse_step(table: &toml::Table, root_seed: u64, path: &Path, index: usize) -> Result<Step> {
    let id = table
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("step{index}"));
    let verb = table
        .get("verb")
        .and_then(|v| v.as_str())
        .ok_or_else(|| bad(path, format!("step {id} has no verb")))?
        .to_string();
    let module = verb.split_whitespace().next().unwrap_or("");
    if !MODULE_VERBS.contains(&module) {
        return Err(bad(
            path,
            format!("step {id}: verb {verb:?} is not a module operation"),
        ));
    }
    let seed = match table.get("seed") {
        Some(v) => v
            .as_integer()
            .map(|s| s as u64)
            .ok_or_else(|| bad(path, format!("step {id}: seed must be an integer")))?,
        None => derive_seed(root_seed, &id),
    };
    let params = match table.get("params") {
        Some(v) => v
            .as_table()
            .ok_or_else(|| bad(path, format!("step {id}: params must be a table")))?
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        None => BTreeMap::new(),
    };
    let outputs = str_map(table, "outputs", path)?;
    if !outputs.contains_key("report") {
        return Err(bad(path, format!("step {id}: outputs.report is required")));
    }
    Ok(Step {
        id,
        verb,
        seed,
        params,
        inputs: str_map(table, "inputs", path)?,
        input_digests: str_map(table, "input_digests", path)?,
        outputs,
    })
}

pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| bad(path, e.to_string()))?;
    let id = table
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| bad(path, "manifest needs a string id"))?
        .to_string();
    let seed = match table.get("seed") {
        Some(v) => v
            .as_integer()
            .map(|s| s as u64)
            .ok_or_else(|| bad(path, "seed must be an integer"))?,
        None => 0,
    };
    if let Some(v) = table.get("version") {
        let pinned = v
            .as_str()
            .ok_or_else(|| bad(path, "version must be a string"))?;
        if pinned != env!("CARGO_PKG_VERSION") {
            return Err(Error::parameter(format!(
                "manifest pins tool version {pinned}, this binary is {}",
                env!("CARGO_PKG_VERSION")
            )));
        }
    }
    let steps = match table.get("steps") {
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| bad(path, "steps must be an array of tables"))?;
            arr.iter()
                .enumerate()
                .map(|(i, s)| {
                    s.as_table()
                        .ok_or_else(|| bad(path, format!("steps[{i}] must be a table")))
                        .and_then(|t| parse_step(t, seed, path, i))
                })
                .collect::<Result<Vec<_>>>()?
        }
        // Single-step shorthand: verb/params/… at the top level.
        None => vec![parse_step(&table, seed, path, 0)?],
    };
    let mut ids = BTreeSet::new();
    for s in &steps {
        if !ids.insert(s.id.clone()) {
            return Err(bad(path, format!("duplicate step id {:?}", s.id)));
        }
    }
    let root = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok(Manifest {
        id,
        seed,
        steps,
        root,
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Params whose value carries this prefix are treated as input files: the
/// path after the prefix is resolved against the manifest directory and the
/// file is digested like a declared input.
const FILE_PREFIX: &str = "file:";

fn toml_to_json(v: &toml::Value) -> Result<Value> {
    match v {
        toml::Value::String(s) => Ok(json!(s)),
        toml::Value::Integer(i) => Ok(json!(i)),
        toml::Value::Float(f) => Ok(json!(f)),
        toml::Value::Boolean(b) => Ok(json!(b)),
        toml::Value::Array(a) => Ok(Value::Array(
            a.iter().map(toml_to_json).collect::<Result<_>>()?,
        )),
        other => Err(Error::parameter(format!(
            "unsupported parameter value {other}"
        ))),
    }
}

fn param_token(v: &toml::Value) -> Result<Option<String>> {
    Ok(match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(true) => None, // bare flag
        toml::Value::Boolean(false) => {
            return Err(Error::parameter(
                "boolean parameters must be true (omit the key to disable)",
            ))
        }
        other => {
            return Err(Error::parameter(format!(
                "unsupported parameter value {other}"
            )))
        }
    })
}

fn run_step(step: &Step, root: &Path) -> Result<Value> {
    let resolve = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            root.join(pb)
        }
    };

    // Collect inputs: declared ones plus file-prefixed params.
    let mut inputs: BTreeMap<String, (String, PathBuf)> = BTreeMap::new();
    for (name, given) in &step.inputs {
        inputs.insert(name.clone(), (given.clone(), resolve(given)));
    }
    let mut argv: Vec<String> = vec!["kawaflow".into()];
    argv.extend(step.verb.split_whitespace().map(str::to_string));
    argv.push("--seed".into());
    argv.push(step.seed.to_string());
    for (key, value) in &step.params {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::String(s) if s.starts_with(FILE_PREFIX) => {
                let given = &s[FILE_PREFIX.len()..];
                let resolved = resolve(given);
                inputs.insert(key.clone(), (given.to_string(), resolved.clone()));
                argv.push(flag);
                argv.push(format!("{FILE_PREFIX}{}", resolved.display()));
            }
            other => {
                argv.push(flag);
                if let Some(token) = param_token(other)? {
                    argv.push(token);
                }
            }
        }
    }
    for (name, (_, resolved)) in &inputs {
        if step.params.contains_key(name) {
            continue; // already synthesized with its file: prefix
        }
        argv.push(format!("--{}", name.replace('_', "-")));
        argv.push(resolved.display().to_string());
    }
    let report_path = resolve(&step.outputs["report"]);
    for (name, given) in &step.outputs {
        if name == "report" {
            continue;
        }
        argv.push(format!("--{}", name.replace('_', "-")));
        argv.push(resolve(given).display().to_string());
    }

    // Digest inputs up front; verify any pinned digests.
    let mut input_echo = serde_json::Map::new();
    for (name, (given, resolved)) in &inputs {
        let digest = io::sha256_hex(resolved)?;
        if let Some(pinned) = step.input_digests.get(name) {
            if pinned != &digest {
                return Err(Error::CheckFailed(format!(
                    "step {}: input {name} digest {digest} does not match pinned {pinned}",
                    step.id
                )));
            }
        }
        input_echo.insert(name.clone(), json!({ "path": given, "sha256": digest }));
    }
    for name in step.input_digests.keys() {
        if !inputs.contains_key(name) {
            return Err(Error::parameter(format!(
                "step {}: input_digests.{name} has no matching input",
                step.id
            )));
        }
    }

    // Location-independent instance hash: verb, seed, params, input digests.
    let mut hasher = Sha256::new();
    hasher.update(step.verb.as_bytes());
    hasher.update(step.seed.to_le_bytes());
    for (k, v) in &step.params {
        hasher.update(k.as_bytes());
        hasher.update(v.to_string().as_bytes());
    }
    for (name, entry) in &input_echo {
        hasher.update(name.as_bytes());
        hasher.update(entry["sha256"].as_str().unwrap_or("").as_bytes());
    }
    let instance = format!("{:x}", hasher.finalize())[..16].to_string();

    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        Error::parameter(format!("step {}: {}", step.id, e.to_string().trim_end()))
    })?;
    let mut value = execute(&cli.command, step.seed)?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("instance".into(), json!(instance));
        obj.insert("seed".into(), json!(step.seed));
        obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    }
    io::write_json(&report_path, &value)?;

    let mut output_echo = serde_json::Map::new();
    for (name, given) in &step.outputs {
        let resolved = resolve(given);
        if !resolved.is_file() {
            return Err(Error::CheckFailed(format!(
                "step {}: declared output {name} ({given}) was not produced",
                step.id
            )));
        }
        let digest = io::sha256_hex(&resolved)?;
        output_echo.insert(name.clone(), json!({ "path": given, "sha256": digest }));
    }
    Ok(json!({
        "verb": step.verb,
        "seed": step.seed,
        "instance": instance,
        "params": step.params.iter()
            .map(|(k, v)| Ok((k.clone(), toml_to_json(v)?)))
            .collect::<Result<serde_json::Map<_, _>>>()?,
        "inputs": input_echo,
        "outputs": output_echo,
    }))
}

/// Dependency layers: a step consuming a path another step writes runs in a
/// later layer. Layers are found by repeatedly peeling steps whose inputs are
/// all external or already produced.
fn layers(manifest: &Manifest) -> Result<Vec<Vec<usize>>> {
    let resolve = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            manifest.root.join(pb)
        }
    };
    let writers: BTreeMap<PathBuf, usize> = manifest
        .steps
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.outputs.values().map(move |p| (resolve(p), i)))
        .collect();
    let needs: Vec<BTreeSet<usize>> = manifest
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut deps: BTreeSet<usize> = s
                .inputs
                .values()
                .map(String::as_str)
                .chain(s.params.values().filter_map(|v| {
                    v.as_str().and_then(|s| s.strip_prefix(FILE_PREFIX))
                }))
                .filter_map(|p| writers.get(&resolve(p)).copied())
                .collect();
            deps.remove(&i);
            deps
        })
        .collect();
    let mut done: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    while done.len() < manifest.steps.len() {
        let layer: Vec<usize> = (0..manifest.steps.len())
            .filter(|i| !done.contains(i) && needs[*i].iter().all(|d| done.contains(d)))
            .collect();
        if layer.is_empty() {
            return Err(Error::parameter(
                "manifest steps form a dependency cycle".to_string(),
            ));
        }
        done.extend(layer.iter().copied());
        out.push(layer);
    }
    Ok(out)
}

pub fn run_manifest(path: &Path) -> Result<Value> {
    let manifest = parse_manifest(path)?;
    let mut echoes: BTreeMap<String, Value> = BTreeMap::new();
    for layer in layers(&manifest)? {
        let results = Mutex::new(Vec::new());
        rayon::scope(|scope| {
            for &i in &layer {
                let results = &results;
                let manifest = &manifest;
                scope.spawn(move |_| {
                    let outcome = run_step(&manifest.steps[i], &manifest.root);
                    results.lock().expect("step result lock").push((i, outcome));
                });
            }
        });
        let mut results = results.into_inner().expect("step result lock");
        results.sort_by_key(|(i, _)| *i);
        for (i, outcome) in results {
            let step = &manifest.steps[i];
            match outcome {
                Ok(o) => {
                    echoes.insert(step.id.clone(), o.echo);
                }
                Err(e) => {
                    eprintln!("step {} failed: {e}", step.id);
                    return Err(e);
                }
            }
        }
    }
    Ok(json!({
        "id": manifest.id,
        "seed": manifest.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "manifest_sha256": manifest.sha256,
        "steps": echoes,
    }))
}
