//! Parameter container: a text manifest followed by a little-endian `f64`
//! payload.
//!
//! ```text
//! graphsent-checkpoint 1
//! seed 7
//! config_hash <hex>
//! config <one line of the resolved config, escaped>
//! array <name> <dims separated by x> f64 <offset> <count>
//! payload_sha256 <hex>
//! end
//! <payload bytes>
//! ```

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::nodeformer::{Model, ParamSet};
use crate::{Error, Result};

pub const FORMAT: &str = "graphsent-checkpoint";
pub const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// A named list of `f64` arrays with the run configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: RunConfig,
    pub arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut header = format!(
            "{FORMAT} {VERSION}\nseed {}\nconfig_hash {}\nconfig {}\n",
            self.config.seed,
            self.config.hash(),
            escape(&self.config.to_toml())
        );
        for (name, shape, data) in &self.arrays {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "array {name} {} f64 {} {}\n",
                if dims.is_empty() { "scalar".to_string() } else { dims.join("x") },
                payload.len(),
                data.len()
            ));
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        header.push_str(&format!("payload_sha256 {}\nend\n", hex(&Sha256::digest(&payload))));
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Persistence(m);
        let marker = b"\nend\n";
        let pos = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| err("manifest terminator not found".into()))?;
        let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| err("manifest is not UTF-8".into()))?;
        let payload = &bytes[pos + marker.len()..];
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let mut it = first.split(' ');
        if it.next() != Some(FORMAT) {
            return Err(err(format!("not a checkpoint (header '{first}')")));
        }
        let version: u32 = it.next().and_then(|v| v.parse().ok()).unwrap_or(0);
        if version != VERSION {
            return Err(err(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let mut config = None;
        let mut hash = None;
        let mut sum = None;
        let mut dir = Vec::new();
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "seed" => {}
                "config_hash" => hash = Some(rest.to_string()),
                "config" => config = Some(RunConfig::from_toml(&unescape(rest))?),
                "payload_sha256" => sum = Some(rest.to_string()),
                "array" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 5 || f[2] != "f64" {
                        return Err(err(format!("malformed array entry '{line}'")));
                    }
                    let shape: Vec<usize> = if f[1] == "scalar" {
                        vec![]
                    } else {
                        f[1].split('x')
                            .map(|d| d.parse().map_err(|_| err(format!("bad shape in '{line}'"))))
                            .collect::<Result<_>>()?
                    };
                    let off: usize = f[3].parse().map_err(|_| err(format!("bad offset in '{line}'")))?;
                    let count: usize = f[4].parse().map_err(|_| err(format!("bad count in '{line}'")))?;
                    dir.push((f[0].to_string(), shape, off, count));
                }
                other => return Err(err(format!("unknown manifest key '{other}'"))),
            }
        }
        let config = config.ok_or_else(|| err("manifest has no config".into()))?;
        if hash.as_deref() != Some(config.hash().as_str()) {
            return Err(err("config hash does not match the embedded config".into()));
        }
        if sum.as_deref() != Some(hex(&Sha256::digest(payload)).as_str()) {
            return Err(err("payload checksum mismatch (truncated or corrupted file)".into()));
        }
        let arrays = dir
            .into_iter()
            .map(|(name, shape, off, count)| {
                let end = off + count * 8;
                if end > payload.len() || shape.iter().product::<usize>() != count {
                    return Err(err(format!("array {name} lies outside the payload")));
                }
                let data = payload[off..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Ok((name, shape, data))
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, arrays })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let b = std::fs::read(path).map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&b)
    }

    pub fn get(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f64>)> {
        self.arrays.iter().find(|a| a.0 == name)
    }
}

pub fn model_container(model: &Model, config: &RunConfig) -> Container {
    Container {
        config: config.clone(),
        arrays: model
            .params
            .names
            .iter()
            .zip(&model.params.tensors)
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().to_vec()))
            .collect(),
    }
}

/// Rebuilds the model described by a container's config and arrays.
pub fn model_from_container(c: &Container) -> Result<Model> {
    let cfg = c.config.model();
    let n = cfg.n_stocks;
    let template = Model::new(cfg.clone(), &vec![0.0; n * n], 0)?;
    let mut tensors = Vec::with_capacity(template.params.len());
    for name in &template.params.names {
        let (_, shape, data) = c
            .get(name)
            .ok_or_else(|| Error::Persistence(format!("checkpoint lacks parameter {name}")))?;
        tensors.push(crate::autograd::Tensor::new(shape, data.clone())?);
    }
    if c.arrays.len() != tensors.len() {
        return Err(Error::Persistence("checkpoint has extra arrays".into()));
    }
    Model::from_params(
        cfg,
        ParamSet {
            names: template.params.names.clone(),
            tensors,
            groups: template.params.groups.clone(),
        },
    )
}

pub fn save_model(model: &Model, config: &RunConfig, path: &std::path::Path) -> Result<()> {
    model_container(model, config).save(path)
}

pub fn load_model(path: &std::path::Path) -> Result<(Model, RunConfig)> {
    let c = Container::load(path)?;
    Ok((model_from_container(&c)?, c.config))
}
