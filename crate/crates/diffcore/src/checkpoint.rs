//! Checkpoint files: a plain-text manifest followed by little-endian `f64`
//! payload.
//!
//! ```text
//! ocrl-checkpoint 1
//! step <adam step>
//! meta <key> <value>            (zero or more)
//! tensor <name> <shape> <offset> (one per array, shape as `2x3`, offset in f64 elements)
//! data
//! <payload>
//! ```
//!
//! Each parameter contributes three arrays, in store order: the value, then
//! `<name>#m` and `<name>#v` for the Adam moments. Offsets count `f64`
//! elements from the start of the payload.

use std::io::Write;
use std::path::Path;

use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::params::ParamStore;

const MAGIC: &str = "ocrl-checkpoint 1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub store: ParamStore,
    /// Free-form key/value pairs; keys and values must not contain whitespace
    /// or newlines.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn bad(msg: impl Into<String>) -> DiffError {
    DiffError::Checkpoint(msg.into())
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".to_string();
    }
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(vec![]);
    }
    s.split('x')
        .map(|p| p.parse::<usize>().map_err(|_| bad(format!("bad shape `{s}`"))))
        .collect()
}

pub fn encode(store: &ParamStore, meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut head = String::new();
    head.push_str(MAGIC);
    head.push('\n');
    head.push_str(&format!("step {}\n", store.step()));
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains(['\n', '\r']) {
            return Err(bad(format!("meta entry `{k}` not representable")));
        }
        head.push_str(&format!("meta {k} {v}\n"));
    }
    let mut payload: Vec<&NdArray> = Vec::new();
    let mut offset = 0usize;
    for id in store.ids() {
        let name = store.name(id);
        let (m, v) = store.moments(id);
        for (suffix, arr) in [("", store.get(id)), ("#m", m), ("#v", v)] {
            head.push_str(&format!(
                "tensor {name}{suffix} {} {offset}\n",
                shape_text(arr.shape())
            ));
            offset += arr.len();
            payload.push(arr);
        }
    }
    head.push_str("data\n");
    let mut out = head.into_bytes();
    out.reserve(offset * 8);
    for arr in payload {
        for &x in arr.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated manifest"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not utf-8"))
    };
    if next_line()? != MAGIC {
        return Err(bad("missing header"));
    }
    let step_line = next_line()?;
    let step = step_line
        .strip_prefix("step ")
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| bad(format!("bad step line `{step_line}`")))?;

    let mut meta = Vec::new();
    let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
    loop {
        let line = next_line()?;
        if line == "data" {
            break;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad tensor line `{line}`")));
            }
            let offset = parts[2]
                .parse::<usize>()
                .map_err(|_| bad(format!("bad offset in `{line}`")))?;
            tensors.push((parts[0].to_string(), parse_shape(parts[1])?, offset));
        } else {
            return Err(bad(format!("unexpected manifest line `{line}`")));
        }
    }
    let payload = &bytes[pos..];
    if payload.len() % 8 != 0 {
        return Err(bad("payload length not a multiple of 8"));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let read = |shape: &[usize], offset: usize| -> Result<NdArray> {
        let n: usize = shape.iter().product();
        let slice = floats
            .get(offset..offset + n)
            .ok_or_else(|| bad("tensor extends past payload"))?;
        NdArray::new(shape.to_vec(), slice.to_vec())
    };

    if tensors.len() % 3 != 0 {
        return Err(bad("tensor entries do not come in value/m/v triples"));
    }
    let mut store = ParamStore::new();
    for triple in tensors.chunks(3) {
        let (name, shape, off) = &triple[0];
        let (mname, mshape, moff) = &triple[1];
        let (vname, vshape, voff) = &triple[2];
        if *mname != format!("{name}#m") || *vname != format!("{name}#v") {
            return Err(bad(format!("moments missing for `{name}`")));
        }
        let id = store.insert(name.clone(), read(shape, *off)?)?;
        store.set_optimizer_state(id, read(mshape, *moff)?, read(vshape, *voff)?)?;
    }
    store.set_step(step);
    Ok(Checkpoint { store, meta })
}

pub fn save(path: &Path, store: &ParamStore, meta: &[(String, String)]) -> Result<()> {
    let bytes = encode(store, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
