use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Ml2oParams;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    m: usize,
    hidden: usize,
    out_width: usize,
    arrays: BTreeMap<String, Vec<f64>>,
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: "<file>".into(),
        detail: detail.into(),
    }
}

/// Writes parameters as JSON. Floats use the shortest representation that
/// parses back to the same bits.
pub fn save_checkpoint(params: &Ml2oParams, path: &Path) -> Result<()> {
    if !params.store().all_finite() {
        return Err(Error::NonFinite("parameters being checkpointed".into()));
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        m: params.objectives(),
        hidden: params.hidden(),
        out_width: params.out_width(),
        arrays: params.store().iter().map(|(n, t)| (n.to_owned(), t.data().to_vec())).collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Ml2oParams> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("truncated or malformed JSON: {e}")))?;
    match value.get("version") {
        None => {
            return Err(Error::Checkpoint {
                field: "version".into(),
                detail: "missing".into(),
            })
        }
        Some(v) if v.as_u64() != Some(CHECKPOINT_VERSION as u64) => {
            return Err(Error::Checkpoint {
                field: "version".into(),
                detail: format!("expected {CHECKPOINT_VERSION}, found {v}"),
            })
        }
        _ => {}
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let layout = Ml2oParams::layout(file.m, file.hidden, file.out_width);
    let mut arrays = file.arrays;
    let mut store = ParamStore::new();
    for (name, shape) in layout {
        let data = arrays.remove(&name).ok_or_else(|| Error::Checkpoint {
            field: format!("arrays.{name}"),
            detail: "missing".into(),
        })?;
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::Checkpoint {
                field: format!("arrays.{name}"),
                detail: format!("expected {want} values for shape {shape:?}, found {}", data.len()),
            });
        }
        store.insert(name, Tensor::new(shape, data)?);
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::Checkpoint {
            field: format!("arrays.{extra}"),
            detail: "not part of the network layout".into(),
        });
    }
    Ml2oParams::from_store(file.m, file.hidden, file.out_width, store)
}

/// Loads a checkpoint and checks it was trained for `m` objectives and
/// hidden width `hidden`.
pub fn load_checkpoint_for(path: &Path, m: usize, hidden: Option<usize>) -> Result<Ml2oParams> {
    let p = load_checkpoint(path)?;
    if p.objectives() != m {
        return Err(Error::Checkpoint {
            field: "m".into(),
            detail: format!("checkpoint has {} objectives, run has {m}", p.objectives()),
        });
    }
    if let Some(h) = hidden {
        if p.hidden() != h {
            return Err(Error::Checkpoint {
                field: "hidden".into(),
                detail: format!("checkpoint has hidden width {}, expected {h}", p.hidden()),
            });
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut p = Ml2oParams::random(2, 3, &mut seeded(11)).unwrap();
        p.store_mut().value_mut("head.b").unwrap().data_mut()[0] = 0.1 + 0.2;
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        for ((na, a), (nb, b)) in p.store().iter().zip(q.store().iter()) {
            assert_eq!(na, nb);
            let ba: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let p = Ml2oParams::random(2, 2, &mut seeded(1)).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert!(matches!(
            load_checkpoint_for(&path, 3, None),
            Err(Error::Checkpoint { field, .. }) if field == "m"
        ));

        let text = fs::read_to_string(&path).unwrap();
        let cut = dir.path().join("cut.json");
        fs::write(&cut, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Checkpoint { field, .. }) if field == "<file>"));

        let bumped = dir.path().join("v2.json");
        fs::write(&bumped, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
        assert!(matches!(load_checkpoint(&bumped), Err(Error::Checkpoint { field, .. }) if field == "version"));

        let short = dir.path().join("short.json");
        fs::write(&short, text.replacen("\"hidden\": 2", "\"hidden\": 3", 1)).unwrap();
        assert!(matches!(load_checkpoint(&short), Err(Error::Checkpoint { field, .. }) if field.starts_with("arrays.")));
    }
}
