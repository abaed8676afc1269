//! Single-file checkpoints: a text manifest followed by a blob of
//! little-endian `f32` values.
//!
//! ```text
//! NAMMI-CKPT v1
//! step 200
//! optstep nonar 200
//! tensor param/shared.tok_emb 25x32 0
//! tensor opt/nonar/m/shared.tok_emb 25x32 3200
//! end
//! <blob>
//! ```
//!
//! Offsets are bytes from the start of the blob. Values are stored at
//! `f32` precision, so a loaded checkpoint saves back byte for byte.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{AdamState, Tensor};

pub const HEADER: &str = "NAMMI-CKPT v1";

fn shape_string(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::Load(format!("bad shape {s:?}"))))
        .collect()
}

/// Serialises the step counter, every parameter and the moments of each
/// named optimizer.
pub fn encode(step: u64, store: &ParamStore, opts: &[(&str, &AdamState)]) -> Vec<u8> {
    let mut manifest = format!("{HEADER}\nstep {step}\n");
    for (name, opt) in opts {
        manifest.push_str(&format!("optstep {name} {}\n", opt.step()));
    }
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |manifest: &mut String, key: String, t: &Tensor| {
        manifest.push_str(&format!("tensor {key} {} {}\n", shape_string(t.shape()), blob.len()));
        for &x in t.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for (name, t) in store.iter() {
        push(&mut manifest, format!("param/{name}"), t);
    }
    for (oname, opt) in opts {
        for (id, m, v) in opt.moments() {
            push(&mut manifest, format!("opt/{oname}/m/{}", store.name(id)), m);
            push(&mut manifest, format!("opt/{oname}/v/{}", store.name(id)), v);
        }
    }
    manifest.push_str("end\n");
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&blob);
    out
}

pub fn save(path: &Path, step: u64, store: &ParamStore, opts: &[(&str, &AdamState)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(step, store, opts)).map_err(|e| Error::io(path, e))
}

struct Manifest<'a> {
    step: u64,
    opt_steps: HashMap<String, u64>,
    tensors: HashMap<String, (Vec<usize>, usize)>,
    blob: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Manifest<'_>> {
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Load("manifest terminator not found".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Load("manifest is not UTF-8".into()))?;
    let blob = &bytes[end + marker.len()..];
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Load(format!("missing {HEADER:?} header")));
    }
    let mut m = Manifest {
        step: 0,
        opt_steps: HashMap::new(),
        tensors: HashMap::new(),
        blob,
    };
    let num = |s: &str| s.parse::<u64>().map_err(|_| Error::Load(format!("bad number {s:?}")));
    for line in lines {
        let f: Vec<&str> = line.split(' ').collect();
        match f.as_slice() {
            ["step", n] => m.step = num(n)?,
            ["optstep", name, n] => {
                m.opt_steps.insert((*name).to_owned(), num(n)?);
            }
            ["tensor", key, shape, off] => {
                let shape = parse_shape(shape)?;
                let off = num(off)? as usize;
                let bytes = 4 * shape.iter().product::<usize>();
                if off.checked_add(bytes).is_none_or(|e| e > blob.len()) {
                    return Err(Error::Load(format!("{key}: data runs past the end of the file")));
                }
                m.tensors.insert((*key).to_owned(), (shape, off));
            }
            _ => return Err(Error::Load(format!("unrecognised manifest line {line:?}"))),
        }
    }
    Ok(m)
}

impl Manifest<'_> {
    fn read_into(&self, key: &str, dst: &mut Tensor) -> Result<()> {
        let (shape, off) = self
            .tensors
            .get(key)
            .ok_or_else(|| Error::Load(format!("{key}: missing from checkpoint")))?;
        if shape.as_slice() != dst.shape() {
            return Err(Error::Load(format!(
                "{key}: checkpoint shape {} but model expects {}",
                shape_string(shape),
                shape_string(dst.shape())
            )));
        }
        for (i, x) in dst.data_mut().iter_mut().enumerate() {
            let b = &self.blob[off + 4 * i..off + 4 * i + 4];
            *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        Ok(())
    }
}

/// Restores parameters and optimizer moments in place and returns the
/// step counter. The store and the requested optimizers must have the
/// layout the file was written with; any missing, extra or misshapen entry
/// is reported by name and nothing is modified. Moments of optimizers not
/// requested are skipped, so inference can load a training checkpoint.
pub fn decode_into(bytes: &[u8], store: &mut ParamStore, opts: &mut [(&str, &mut AdamState)]) -> Result<u64> {
    let m = parse(bytes)?;
    let mut expected = 0usize;
    let mut staged_params = Vec::new();
    for id in store.ids().collect::<Vec<_>>() {
        let mut t = store.get(id).clone();
        m.read_into(&format!("param/{}", store.name(id)), &mut t)?;
        staged_params.push((id, t));
        expected += 1;
    }
    let mut staged_opts = Vec::new();
    for (oname, opt) in opts.iter() {
        let step = *m
            .opt_steps
            .get(*oname)
            .ok_or_else(|| Error::Load(format!("optimizer {oname}: missing from checkpoint")))?;
        let mut moments = Vec::new();
        for (id, mt, vt) in opt.moments() {
            let (mut mt, mut vt) = (mt.clone(), vt.clone());
            m.read_into(&format!("opt/{oname}/m/{}", store.name(id)), &mut mt)?;
            m.read_into(&format!("opt/{oname}/v/{}", store.name(id)), &mut vt)?;
            moments.push((mt, vt));
            expected += 2;
        }
        staged_opts.push((step, moments));
    }
    let requested = |k: &str| opts.iter().any(|(o, _)| k.starts_with(&format!("opt/{o}/")));
    let mut unexpected: Vec<&String> = m
        .tensors
        .keys()
        .filter(|k| match k.strip_prefix("param/") {
            Some(n) => store.id(n).is_none(),
            None => !k.starts_with("opt/"),
        })
        .collect();
    unexpected.sort();
    if let Some(k) = unexpected.first() {
        return Err(Error::Load(format!("{k}: not present in the model")));
    }
    let relevant = m.tensors.keys().filter(|k| k.starts_with("param/") || requested(k)).count();
    if relevant != expected {
        return Err(Error::Load(format!("checkpoint has {relevant} tensors, model expects {expected}")));
    }
    for (id, t) in staged_params {
        *store.get_mut(id) = t;
    }
    for ((_, opt), (step, moments)) in opts.iter_mut().zip(staged_opts) {
        opt.set_step(step);
        for ((_, mt, vt), (m2, v2)) in opt.moments_mut().zip(moments) {
            *mt = m2;
            *vt = v2;
        }
    }
    Ok(m.step)
}

pub fn load(path: &Path, store: &mut ParamStore, opts: &mut [(&str, &mut AdamState)]) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, store, opts).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Rounds live state to the precision a checkpoint keeps, so a run that
/// continues in memory matches one resumed from disk.
pub fn round_state(store: &mut ParamStore, opts: &mut [&mut AdamState]) {
    store.round_to_f32();
    for o in opts {
        o.round_to_f32();
    }
}
