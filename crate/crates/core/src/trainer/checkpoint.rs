//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic "RADDCKPT", u32 LE format version, u32 LE segment
//! count, then length-prefixed segments (u32 name length, name bytes, u64
//! payload length, payload). The config segment is canonical key=value
//! text; every parameter tensor is u32 rows, u32 cols, then rows·cols f32
//! LE values; optimizer moments and the EMA shadow use the same tensor
//! encoding. Files round-trip bit-exactly through save → load → save.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::diffusion::DenoiserParams;
use crate::error::{RaddError, Result};
use crate::numkernel::{Activation, AdamHyper, AdamState, MlpLayer, MlpParams, Tensor};
use crate::retriever::{RetrieverParams, RETRIEVER_TENSOR_NAMES};
use crate::trainer::config::TrainConfig;

const MAGIC: &[u8; 8] = b"RADDCKPT";
const VERSION: u32 = 1;

/// Dataset dimensions the checkpoint was built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataMeta {
    pub n_entities: usize,
    pub n_relations: usize,
    pub d_visual: usize,
    pub d_textual: usize,
}

/// One validation measurement with the epoch's mean losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValPoint {
    pub epoch: u64,
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub kge: f64,
    pub diff: f64,
    pub distill: f64,
    pub rank: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: DataMeta,
    pub config: TrainConfig,
    pub retriever: RetrieverParams,
    pub denoiser: DenoiserParams,
    pub ema: DenoiserParams,
    pub opt_retriever: AdamState,
    pub opt_denoiser: AdamState,
    pub epoch: u64,
    pub val_history: Vec<ValPoint>,
}

fn tensor_payload(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.len());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.to_f32_vec() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f64s_payload(values: &[f64]) -> Vec<u8> {
    // Moment vectors reuse the tensor encoding as a single row.
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct PayloadReader<'a> {
    data: &'a [u8],
    at: usize,
    what: String,
}

impl<'a> PayloadReader<'a> {
    fn new(data: &'a [u8], what: &str) -> Self {
        PayloadReader {
            data,
            at: 0,
            what: what.to_owned(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(RaddError::Checkpoint {
                path: self.what.clone().into(),
                reason: "truncated segment".into(),
            });
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> Result<()> {
        if self.at != self.data.len() {
            return Err(RaddError::Checkpoint {
                path: self.what.clone().into(),
                reason: "trailing bytes in segment".into(),
            });
        }
        Ok(())
    }
}

fn parse_tensor(name: &str, payload: &[u8], expect: (usize, usize)) -> Result<Tensor> {
    let mut r = PayloadReader::new(payload, name);
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if (rows, cols) != expect {
        return Err(RaddError::Checkpoint {
            path: name.into(),
            reason: format!("tensor shape {rows}x{cols}, expected {}x{}", expect.0, expect.1),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32()?);
    }
    r.done()?;
    Tensor::from_f32_vec(rows, cols, data)
}

fn parse_moments(name: &str, payload: &[u8], expect_len: usize) -> Result<Vec<f64>> {
    let t = parse_tensor(name, payload, (1, expect_len))?;
    Ok(t.data().to_vec())
}

/// Writes the checkpoint; the byte stream is a deterministic function of
/// the checkpoint contents.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut segments: Vec<(String, Vec<u8>)> = Vec::new();
    segments.push(("config".into(), ckpt.config.to_kv().into_bytes()));
    let meta_kv = format!(
        "d_textual={}\nd_visual={}\nepoch={}\nn_entities={}\nn_relations={}\n",
        ckpt.meta.d_textual,
        ckpt.meta.d_visual,
        ckpt.epoch,
        ckpt.meta.n_entities,
        ckpt.meta.n_relations
    );
    segments.push(("meta".into(), meta_kv.into_bytes()));
    let mut hist = Vec::new();
    hist.extend_from_slice(&(ckpt.val_history.len() as u32).to_le_bytes());
    for v in &ckpt.val_history {
        hist.extend_from_slice(&v.epoch.to_le_bytes());
        for x in [v.mrr, v.h1, v.h3, v.h10, v.kge, v.diff, v.distill, v.rank, v.total] {
            hist.extend_from_slice(&x.to_le_bytes());
        }
    }
    segments.push(("val_history".into(), hist));
    for (name, t) in RETRIEVER_TENSOR_NAMES.iter().zip(ckpt.retriever.tensors()) {
        segments.push((format!("retriever.{name}"), tensor_payload(t)));
    }
    for (name, t) in ckpt.denoiser.tensor_names().iter().zip(ckpt.denoiser.tensors()) {
        segments.push((format!("denoiser.{name}"), tensor_payload(t)));
    }
    for (name, t) in ckpt.ema.tensor_names().iter().zip(ckpt.ema.tensors()) {
        segments.push((format!("ema.{name}"), tensor_payload(t)));
    }
    for (prefix, opt) in [("opt_retriever", &ckpt.opt_retriever), ("opt_denoiser", &ckpt.opt_denoiser)] {
        segments.push((
            format!("{prefix}.step"),
            opt.step_count().to_le_bytes().to_vec(),
        ));
        for (i, slot) in opt.slots().iter().enumerate() {
            segments.push((format!("{prefix}.{i}.m"), f64s_payload(&slot.m)));
            segments.push((format!("{prefix}.{i}.v"), f64s_payload(&slot.v)));
        }
    }

    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| RaddError::io(path, e))?,
    );
    let werr = |e| RaddError::io(path, e);
    out.write_all(MAGIC).map_err(werr)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(werr)?;
    out.write_all(&(segments.len() as u32).to_le_bytes()).map_err(werr)?;
    for (name, payload) in &segments {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(werr)?;
        out.write_all(name.as_bytes()).map_err(werr)?;
        out.write_all(&(payload.len() as u64).to_le_bytes()).map_err(werr)?;
        out.write_all(payload).map_err(werr)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: &str| RaddError::Checkpoint {
        path: path.into(),
        reason: reason.to_owned(),
    };
    let bytes = std::fs::read(path).map_err(|e| RaddError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic, not a RADDCKPT file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("format version {version}, expected {VERSION}")));
    }
    let n_segments = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut at = 16usize;
    let mut segments: BTreeMap<String, &[u8]> = BTreeMap::new();
    for _ in 0..n_segments {
        if at + 4 > bytes.len() {
            return Err(bad("truncated segment header"));
        }
        let name_len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if at + name_len + 8 > bytes.len() {
            return Err(bad("truncated segment header"));
        }
        let name = std::str::from_utf8(&bytes[at..at + name_len])
            .map_err(|_| bad("segment name is not utf-8"))?
            .to_owned();
        at += name_len;
        let payload_len = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        at += 8;
        if at + payload_len > bytes.len() {
            return Err(bad(&format!("truncated payload of segment '{name}'")));
        }
        segments.insert(name, &bytes[at..at + payload_len]);
        at += payload_len;
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after last segment"));
    }
    let segment = |name: &str| -> Result<&[u8]> {
        segments
            .get(name)
            .copied()
            .ok_or_else(|| bad(&format!("missing segment '{name}'")))
    };

    let config = TrainConfig::from_kv(
        std::str::from_utf8(segment("config")?).map_err(|_| bad("config is not utf-8"))?,
    )?;
    let meta_text =
        std::str::from_utf8(segment("meta")?).map_err(|_| bad("meta is not utf-8"))?;
    let mut meta_map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in meta_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta_map.insert(k.trim(), v.trim());
        }
    }
    let meta_u64 = |key: &str| -> Result<u64> {
        meta_map
            .get(key)
            .ok_or_else(|| bad(&format!("meta key '{key}' missing")))?
            .parse()
            .map_err(|_| bad(&format!("meta key '{key}' is not an integer")))
    };
    let meta = DataMeta {
        n_entities: meta_u64("n_entities")? as usize,
        n_relations: meta_u64("n_relations")? as usize,
        d_visual: meta_u64("d_visual")? as usize,
        d_textual: meta_u64("d_textual")? as usize,
    };
    let epoch = meta_u64("epoch")?;

    let mut hist_reader = PayloadReader::new(segment("val_history")?, "val_history");
    let n_hist = hist_reader.u32()? as usize;
    let mut val_history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let epoch = hist_reader.u64()?;
        let mut vals = [0.0f64; 9];
        for v in &mut vals {
            *v = hist_reader.f64()?;
        }
        val_history.push(ValPoint {
            epoch,
            mrr: vals[0],
            h1: vals[1],
            h3: vals[2],
            h10: vals[3],
            kge: vals[4],
            diff: vals[5],
            distill: vals[6],
            rank: vals[7],
            total: vals[8],
        });
    }
    hist_reader.done()?;

    // Expected shapes are derived from config + meta; any edited dimension
    // in the file surfaces as a shape mismatch here.
    let width = 2 * config.d;
    let n_rel_eff = config.n_relations_effective(meta.n_relations);
    let ret_shapes: [(usize, usize); 9] = [
        (meta.n_entities, width),
        (n_rel_eff, config.d),
        (n_rel_eff, 3),
        (meta.d_visual, width),
        (1, width),
        (meta.d_textual, width),
        (1, width),
        (1, width),
        (1, width),
    ];
    let mut ret_tensors = Vec::with_capacity(9);
    for (name, expect) in RETRIEVER_TENSOR_NAMES.iter().zip(ret_shapes) {
        let full = format!("retriever.{name}");
        ret_tensors.push(parse_tensor(&full, segment(&full)?, expect)?);
    }
    let mut it = ret_tensors.into_iter();
    let retriever = RetrieverParams {
        dim: config.d,
        structural: it.next().unwrap(),
        relation_phase: it.next().unwrap(),
        gate_logits: it.next().unwrap(),
        proj_visual: it.next().unwrap(),
        proj_visual_bias: it.next().unwrap(),
        proj_textual: it.next().unwrap(),
        proj_textual_bias: it.next().unwrap(),
        default_visual: it.next().unwrap(),
        default_textual: it.next().unwrap(),
        structure_only: config.structure_only,
    };

    let hidden = config.denoiser_hidden_width();
    // context (2d) + relation (2d) + token (2d) + time + direction
    let in_dim = 3 * width + config.d_time + config.d_dir;
    let mlp_dims = [in_dim, hidden, hidden, meta.n_entities];
    let load_denoiser = |prefix: &str| -> Result<DenoiserParams> {
        let token = parse_tensor(
            &format!("{prefix}.token_table"),
            segment(&format!("{prefix}.token_table"))?,
            (meta.n_entities + 1, width),
        )?;
        let direction = parse_tensor(
            &format!("{prefix}.direction"),
            segment(&format!("{prefix}.direction"))?,
            (2, config.d_dir),
        )?;
        let mut layers = Vec::new();
        for (i, w) in mlp_dims.windows(2).enumerate() {
            let weight = parse_tensor(
                &format!("{prefix}.mlp.{i}.weight"),
                segment(&format!("{prefix}.mlp.{i}.weight"))?,
                (w[1], w[0]),
            )?;
            let bias = parse_tensor(
                &format!("{prefix}.mlp.{i}.bias"),
                segment(&format!("{prefix}.mlp.{i}.bias"))?,
                (1, w[1]),
            )?;
            layers.push(MlpLayer { weight, bias });
        }
        let p = DenoiserParams {
            token_table: token,
            direction_emb: direction,
            mlp: MlpParams::new(layers, Activation::GeluTanh)?,
            d_time: config.d_time,
            ctx_width: width,
        };
        p.validate()?;
        Ok(p)
    };
    let denoiser = load_denoiser("denoiser")?;
    let ema = load_denoiser("ema")?;

    let load_opt = |prefix: &str, lr: f64, shapes: &[(usize, usize)]| -> Result<AdamState> {
        let step_bytes = segment(&format!("{prefix}.step"))?;
        if step_bytes.len() != 8 {
            return Err(bad(&format!("{prefix}.step must be 8 bytes")));
        }
        let step = u64::from_le_bytes(step_bytes.try_into().unwrap());
        let mut opt = AdamState::new(AdamHyper::with_lr(lr), shapes);
        opt.set_step(step);
        for (i, slot) in opt.slots_mut().iter_mut().enumerate() {
            let len = slot.m.len();
            slot.m = parse_moments(
                &format!("{prefix}.{i}.m"),
                segment(&format!("{prefix}.{i}.m"))?,
                len,
            )?;
            slot.v = parse_moments(
                &format!("{prefix}.{i}.v"),
                segment(&format!("{prefix}.{i}.v"))?,
                len,
            )?;
        }
        Ok(opt)
    };
    let den_shapes: Vec<(usize, usize)> = denoiser.tensors().iter().map(|t| t.shape()).collect();
    let opt_retriever = load_opt(
        "opt_retriever",
        config.lr_kge,
        &retriever.tensors().map(|t| t.shape()),
    )?;
    let opt_denoiser = load_opt("opt_denoiser", config.lr_denoiser, &den_shapes)?;

    Ok(Checkpoint {
        meta,
        config,
        retriever,
        denoiser,
        ema,
        opt_retriever,
        opt_denoiser,
        epoch,
        val_history,
    })
}
