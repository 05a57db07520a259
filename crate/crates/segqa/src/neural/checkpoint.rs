//! Checkpoint container: ASCII tensor directory + raw little-endian f32
//! payloads, bit-exact on round trips.
//!
//! Layout:
//! ```text
//! DAEW1 <n_tensors>
//! <name> <rank> <d1> ... <dk>      (one line per tensor)
//! <blank line>
//! <concatenated little-endian f32 payloads in header order>
//! ```

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::io::Write as _;
use std::path::Path;

const MAGIC: &str = "DAEW1";

/// Writes every parameter value (name, shape, f32 payload) in store order.
pub fn save_checkpoint(store: &ParamStore<f32>, path: &Path) -> Result<()> {
    let mut header = format!("{MAGIC} {}\n", store.len());
    for p in store.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!(
            "{} {} {}\n",
            p.name,
            p.value.shape().len(),
            dims.join(" ")
        ));
    }
    header.push('\n');

    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(store.value_count() * 4);
    for p in store.iter() {
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint into (name, tensor) pairs in file order.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::MalformedHeader("checkpoint header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..split + 1])
        .map_err(|_| Error::MalformedHeader("checkpoint header is not ASCII".into()))?;
    let payload = &bytes[split + 2..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or("");
    let mut parts = first.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: MAGIC.to_string(),
        });
    }
    let n_tensors: usize = parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad tensor count line {first:?}")))?;

    let mut entries = Vec::with_capacity(n_tensors);
    let mut offset = 0usize;
    for _ in 0..n_tensors {
        let line = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("missing tensor header line".into()))?;
        let mut tok = line.split_whitespace();
        let name = tok
            .next()
            .ok_or_else(|| Error::MalformedHeader(format!("empty tensor line {line:?}")))?
            .to_string();
        let rank: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("bad rank in {line:?}")))?;
        let dims: Vec<usize> = tok
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::MalformedHeader(format!("bad dim in {line:?}")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != rank {
            return Err(Error::MalformedHeader(format!(
                "rank {rank} does not match {} dims in {line:?}",
                dims.len()
            )));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
        let end = offset
            .checked_add(count * 4)
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
        if end > payload.len() {
            return Err(Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected: end,
                got: payload.len(),
            });
        }
        let values: Vec<f32> = payload[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(&dims, values)));
        offset = end;
    }
    if offset != payload.len() {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint has {} trailing payload bytes",
            payload.len() - offset
        )));
    }
    Ok(entries)
}

/// Loads checkpoint values into an existing store. Tensor names, order and
/// shapes must match the store exactly.
pub fn load_into(store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
    let entries = read_checkpoint(path)?;
    if entries.len() != store.len() {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint has {} tensors, network expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (param, (name, tensor)) in store.iter_mut().zip(entries) {
        if param.name != name {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint tensor {name:?} does not match parameter {:?}",
                param.name
            )));
        }
        if param.value.shape() != tensor.shape() {
            return Err(Error::SchemaMismatch(format!(
                "shape of {name:?}: checkpoint {:?} vs network {:?}",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample_store(seed: u64) -> ParamStore<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in [
            ("enc0.conv.w", vec![4usize, 2, 3, 3, 3]),
            ("enc0.conv.b", vec![4]),
            ("enc0.norm.gamma", vec![4]),
        ] {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            store.add(name, Tensor::from_vec(&shape, data));
        }
        store
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.daew");
        let store = sample_store(3);
        save_checkpoint(&store, &path).unwrap();

        let mut other = sample_store(99); // same names/shapes, other values
        load_into(&mut other, &path).unwrap();
        for (a, b) in store.iter().zip(other.iter()) {
            assert_eq!(a.value, b.value);
        }

        // saving the loaded store reproduces identical bytes
        let path2 = dir.path().join("ck2.daew");
        save_checkpoint(&other, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn name_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.daew");
        save_checkpoint(&sample_store(3), &path).unwrap();
        let mut store = ParamStore::new();
        store.add("something.else", Tensor::<f32>::zeros(&[4, 2, 3, 3, 3]));
        store.add("enc0.conv.b", Tensor::<f32>::zeros(&[4]));
        store.add("enc0.norm.gamma", Tensor::<f32>::zeros(&[4]));
        assert!(matches!(
            load_into(&mut store, &path),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.daew");
        save_checkpoint(&sample_store(3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::TruncatedPayload { .. })
        ));
    }
}
