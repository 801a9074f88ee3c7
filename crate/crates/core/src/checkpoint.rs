//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` header
//! length, a JSON header, then the raw little-endian `f32` payload. The
//! header lists every tensor as `(group, name, shape, offset, len)`; groups
//! are the six networks, their optimizer moments and (optionally) the image
//! pools.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamSet};
use crate::optim::Adam;
use crate::pool::ImagePool;
use crate::seed::Purpose;
use crate::trainer::{TrainState, GROUPS};

pub const MAGIC: &[u8; 8] = b"AGCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolMeta {
    pub capacity: usize,
    pub swap_prob: f64,
    pub seed: u64,
    pub purpose: Purpose,
    pub queries: u64,
    pub item_shape: Option<[usize; 3]>,
    pub swaps: u64,
    pub returned: u64,
    pub items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub epoch: usize,
    pub step: u64,
    pub step_in_epoch: usize,
    /// Config snapshot in the config-file format.
    pub config: String,
    /// Network groups present in this file.
    pub groups: Vec<String>,
    pub optimizer_steps: [u64; 2],
    /// Whether the image pools were saved; when false a resumed run starts
    /// with empty pools.
    pub pool_contents: bool,
    pub pools: Option<[PoolMeta; 2]>,
    pub tensors: Vec<TensorEntry>,
}

/// A decoded checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    tensors: BTreeMap<(String, String), (Vec<usize>, Vec<f32>)>,
}

fn networks(state: &TrainState) -> Vec<(&'static str, &ParamSet<f32>)> {
    let mut v = vec![
        (GROUPS[0], &state.g_xy.network().params),
        (GROUPS[1], &state.g_yx.network().params),
        (GROUPS[2], &state.d_x.network().params),
        (GROUPS[3], &state.d_y.network().params),
    ];
    if let Some(d) = &state.d_xa {
        v.push((GROUPS[4], &d.network().params));
    }
    if let Some(d) = &state.d_ya {
        v.push((GROUPS[5], &d.network().params));
    }
    v
}

fn networks_mut(state: &mut TrainState) -> Vec<(&'static str, &mut ParamSet<f32>)> {
    let mut v = vec![
        (GROUPS[0], &mut state.g_xy.network_mut().params),
        (GROUPS[1], &mut state.g_yx.network_mut().params),
        (GROUPS[2], &mut state.d_x.network_mut().params),
        (GROUPS[3], &mut state.d_y.network_mut().params),
    ];
    if let Some(d) = &mut state.d_xa {
        v.push((GROUPS[4], &mut d.network_mut().params));
    }
    if let Some(d) = &mut state.d_ya {
        v.push((GROUPS[5], &mut d.network_mut().params));
    }
    v
}

fn pool_meta(p: &ImagePool<f32>) -> PoolMeta {
    PoolMeta {
        capacity: p.capacity,
        swap_prob: p.swap_prob,
        seed: p.seed,
        purpose: p.purpose,
        queries: p.queries,
        item_shape: p.item_shape,
        swaps: p.swaps,
        returned: p.returned,
        items: p.stored.len(),
    }
}

/// Writes `state` to `path`.
pub fn save(state: &TrainState, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, String, Vec<usize>, &[f32])> = Vec::new();
    let nets = networks(state);
    for (group, params) in &nets {
        for e in params.entries() {
            entries.push((group.to_string(), e.name.clone(), e.shape.clone(), &e.data));
        }
    }
    let opt_nets: [(&str, &Adam<f32>, Vec<&str>); 2] = [
        ("opt_g", &state.opt_g, vec![GROUPS[0], GROUPS[1]]),
        ("opt_d", &state.opt_d, nets[2..].iter().map(|(g, _)| *g).collect()),
    ];
    for (prefix, adam, owners) in &opt_nets {
        for (slot, owner) in owners.iter().enumerate() {
            let params = nets.iter().find(|(g, _)| g == owner).map(|(_, p)| *p).expect("owner");
            for (j, e) in params.entries().iter().enumerate() {
                if e.kind != ParamKind::Trainable {
                    continue;
                }
                for (which, store) in [("m", &adam.m), ("v", &adam.v)] {
                    entries.push((format!("{prefix}.{which}.{owner}"), e.name.clone(), e.shape.clone(), &store[slot][j]));
                }
            }
        }
    }
    let pools = cfg.checkpoint_pools.then(|| [pool_meta(&state.pool_y), pool_meta(&state.pool_x)]);
    if cfg.checkpoint_pools {
        for (group, pool) in [("pool_y", &state.pool_y), ("pool_x", &state.pool_x)] {
            let shape = pool.item_shape.map(|s| s.to_vec()).unwrap_or_default();
            for (i, item) in pool.stored.iter().enumerate() {
                entries.push((group.to_string(), format!("item{i:05}"), shape.clone(), item));
            }
        }
    }

    let mut offset = 0u64;
    let tensors: Vec<TensorEntry> = entries
        .iter()
        .map(|(group, name, shape, data)| {
            let e = TensorEntry {
                group: group.clone(),
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: data.len() as u64,
            };
            offset += data.len() as u64;
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: "f32".into(),
        epoch: state.epoch,
        step: state.step,
        step_in_epoch: state.step_in_epoch,
        config: cfg.to_text(),
        groups: nets.iter().map(|(g, _)| g.to_string()).collect(),
        optimizer_steps: [state.opt_g.t, state.opt_d.t],
        pool_contents: cfg.checkpoint_pools,
        pools,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for (_, _, _, data) in &entries {
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let hlen = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; hlen];
        r.read_exact(&mut json).map_err(io)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.dtype != "f32" {
            return Err(Error::Checkpoint(format!("unsupported dtype `{}`", header.dtype)));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(io)?;
        let mut tensors = BTreeMap::new();
        for t in &header.tensors {
            let (start, end) = (t.offset as usize * 4, (t.offset + t.len) as usize * 4);
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor {}/{} runs past end of file", t.group, t.name)));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert((t.group.clone(), t.name.clone()), (t.shape.clone(), data));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_text(&self.header.config)
    }

    fn tensor(&self, group: &str, name: &str) -> Option<&(Vec<usize>, Vec<f32>)> {
        self.tensors.get(&(group.to_string(), name.to_string()))
    }

    /// Differences between the networks stored here and those of `state`.
    pub fn architecture_diff(&self, state: &TrainState) -> Vec<String> {
        let mut diff = Vec::new();
        let nets = networks(state);
        for (group, params) in &nets {
            if !self.header.groups.iter().any(|g| g == group) {
                diff.push(format!("{group}: network missing from checkpoint"));
                continue;
            }
            for e in params.entries() {
                match self.tensor(group, &e.name) {
                    None => diff.push(format!("{group}/{}: missing from checkpoint", e.name)),
                    Some((shape, _)) if *shape != e.shape => {
                        diff.push(format!("{group}/{}: checkpoint {:?} vs model {:?}", e.name, shape, e.shape))
                    }
                    _ => {}
                }
            }
        }
        for t in &self.header.tensors {
            if let Some((_, params)) = nets.iter().find(|(g, _)| *g == t.group) {
                if !params.entries().iter().any(|e| e.name == t.name) {
                    diff.push(format!("{}/{}: not present in model", t.group, t.name));
                }
            } else if GROUPS.contains(&t.group.as_str()) {
                diff.push(format!("{}/{}: network not present in model", t.group, t.name));
            }
        }
        diff
    }

    /// Copies everything into `state`, rejecting architecture mismatches.
    pub fn restore(&self, state: &mut TrainState) -> Result<()> {
        let diff = self.architecture_diff(state);
        if !diff.is_empty() {
            return Err(Error::ShapeMismatch(diff));
        }
        let owners_d: Vec<&'static str> = networks(state)[2..].iter().map(|(g, _)| *g).collect();
        for (group, params) in networks_mut(state) {
            for e in params.entries_mut() {
                let (_, data) = self.tensor(group, &e.name).expect("checked by diff");
                e.data.copy_from_slice(data);
            }
        }
        state.epoch = self.header.epoch;
        state.step = self.header.step;
        state.step_in_epoch = self.header.step_in_epoch;
        state.opt_g.t = self.header.optimizer_steps[0];
        state.opt_d.t = self.header.optimizer_steps[1];
        let gen_names: Vec<Vec<(String, ParamKind)>> = [&state.g_xy, &state.g_yx]
            .iter()
            .map(|g| g.network().params.entries().iter().map(|e| (e.name.clone(), e.kind)).collect())
            .collect();
        let disc_names: Vec<Vec<(String, ParamKind)>> = state
            .disc_params()
            .iter()
            .map(|p| p.entries().iter().map(|e| (e.name.clone(), e.kind)).collect())
            .collect();
        for (prefix, adam, owners, names) in [
            ("opt_g", &mut state.opt_g, vec![GROUPS[0], GROUPS[1]], &gen_names),
            ("opt_d", &mut state.opt_d, owners_d, &disc_names),
        ] {
            for (slot, owner) in owners.iter().enumerate() {
                for (j, (name, kind)) in names[slot].iter().enumerate() {
                    if *kind != ParamKind::Trainable {
                        continue;
                    }
                    for (which, store) in [("m", &mut adam.m), ("v", &mut adam.v)] {
                        let group = format!("{prefix}.{which}.{owner}");
                        let Some((_, data)) = self.tensor(&group, name) else {
                            return Err(Error::Checkpoint(format!("missing optimizer state {group}/{name}")));
                        };
                        if store[slot][j].len() != data.len() {
                            return Err(Error::ShapeMismatch(vec![format!("{group}/{name}: wrong length")]));
                        }
                        store[slot][j].copy_from_slice(data);
                    }
                }
            }
        }
        if let Some(metas) = &self.header.pools {
            for (group, meta, pool) in [
                ("pool_y", &metas[0], &mut state.pool_y),
                ("pool_x", &metas[1], &mut state.pool_x),
            ] {
                pool.capacity = meta.capacity;
                pool.swap_prob = meta.swap_prob;
                pool.seed = meta.seed;
                pool.purpose = meta.purpose;
                pool.queries = meta.queries;
                pool.item_shape = meta.item_shape;
                pool.swaps = meta.swaps;
                pool.returned = meta.returned;
                pool.stored = (0..meta.items)
                    .map(|i| {
                        self.tensor(group, &format!("item{i:05}"))
                            .map(|(_, d)| d.clone())
                            .ok_or_else(|| Error::Checkpoint(format!("missing pool item {group}/{i}")))
                    })
                    .collect::<Result<_>>()?;
            }
        }
        state.r = f64::NAN;
        state.lr = f64::NAN;
        Ok(())
    }
}

/// Reads a checkpoint and rebuilds the training state from its config snapshot.
pub fn load(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let ckpt = Checkpoint::read(path)?;
    let cfg = ckpt.config()?;
    let mut state = TrainState::new(&cfg)?;
    ckpt.restore(&mut state)?;
    state.apply_schedule(&cfg);
    Ok((state, cfg))
}

/// Loads a checkpoint into an existing state built for a (possibly different) config.
pub fn load_into(path: &Path, state: &mut TrainState, cfg: &TrainConfig) -> Result<()> {
    Checkpoint::read(path)?.restore(state)?;
    state.apply_schedule(cfg);
    Ok(())
}
