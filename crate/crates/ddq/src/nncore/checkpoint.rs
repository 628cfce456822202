//! Model checkpoint file format.
//!
//! Layout: magic bytes `DDQ1`, then for each tensor (layer order, weight
//! before bias): rank as u32 little-endian, the dims as u32 each, then the
//! elements as little-endian IEEE-754 binary64. A trailing u64 holds the
//! model generation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::model::{LayerParams, ModelParams};
use crate::nncore::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DDQ1";

/// Largest tensor rank / dimension we will accept from a file. Guards
/// against allocating absurd buffers for corrupt input.
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn save_model(model: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for layer in &model.layers {
        write_tensor(&mut w, &layer.weight)?;
        write_tensor(&mut w, &layer.bias)?;
    }
    w.write_all(&model.generation.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &dim in t.shape() {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!(
            "not a model checkpoint: bad magic {magic:?}"
        )));
    }

    // Tensors run until only the 8-byte generation trailer remains. Read the
    // remainder up front so we can see where the trailer starts.
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() < 8 {
        return Err(Error::Config("checkpoint truncated before generation".into()));
    }
    let (body, trailer) = rest.split_at(rest.len() - 8);
    let generation = u64::from_le_bytes(trailer.try_into().unwrap());

    let mut tensors = Vec::new();
    let mut cursor = 0usize;
    while cursor < body.len() {
        let rank = read_u32(body, &mut cursor)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Config(format!("checkpoint tensor rank {rank} invalid")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let dim = read_u32(body, &mut cursor)?;
            numel = numel.saturating_mul(dim as u64);
            shape.push(dim as usize);
        }
        if numel == 0 || numel > MAX_ELEMENTS {
            return Err(Error::Config(format!(
                "checkpoint tensor shape {shape:?} invalid"
            )));
        }
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_bytes::<8>(body, &mut cursor)?));
        }
        tensors.push(Tensor::new(shape, data)?);
    }

    if tensors.len() % 2 != 0 {
        return Err(Error::Config(
            "checkpoint holds an odd number of tensors; expected weight/bias pairs".into(),
        ));
    }
    let mut layers = Vec::with_capacity(tensors.len() / 2);
    let mut iter = tensors.into_iter();
    while let (Some(weight), Some(bias)) = (iter.next(), iter.next()) {
        layers.push(LayerParams { weight, bias });
    }
    Ok(ModelParams { layers, generation })
}

fn read_bytes<const N: usize>(buf: &[u8], cursor: &mut usize) -> Result<[u8; N]> {
    let end = *cursor + N;
    if end > buf.len() {
        return Err(Error::Config("checkpoint truncated mid-tensor".into()));
    }
    let out = buf[*cursor..end].try_into().unwrap();
    *cursor = end;
    Ok(out)
}

fn read_u32(buf: &[u8], cursor: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes::<4>(buf, cursor)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::LayerSpec;
    use crate::rng::Rng64;

    #[test]
    fn save_load_round_trip() {
        let specs = vec![
            LayerSpec::Conv {
                filters: 2,
                width: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { output: 3 },
        ];
        let mut rng = Rng64::seeded(8);
        let mut model = ModelParams::init(&specs, &[1, 4, 4], 0.1, &mut rng).unwrap();
        model.generation = 12345;

        let dir = std::env::temp_dir().join(format!("ddq-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ddq");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn magic_header_bytes() {
        let specs = vec![LayerSpec::FullyConnected { output: 1 }];
        let model = ModelParams::zeros(&specs, &[2]).unwrap();
        let dir = std::env::temp_dir().join(format!("ddq-magic-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ddq");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DDQ1");
        // rank 2, dims 1 and 2, 2 f64, rank 1, dim 1, 1 f64, u64 generation.
        assert_eq!(bytes.len(), 4 + (4 + 8 + 16) + (4 + 4 + 8) + 8);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = std::env::temp_dir().join(format!("ddq-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ddq");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_model(&path).is_err());
        std::fs::write(&path, b"DDQ1\x01").unwrap();
        assert!(load_model(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
