//! Binary model container.
//!
//! Layout (little-endian): magic, format version (u32), six u32 config
//! fields, label vocabulary, word vocabulary (u32 count, then u32 length
//! plus UTF-8 bytes per entry), u32 block count, and every parameter
//! block as a u64 length followed by f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig, ModelError, Vocab};
use crate::Scalar;

pub const MAGIC: [u8; 8] = *b"EUDMODEL";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>, ModelError> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn write_model<T: Scalar, W: Write>(model: &Model<T>, mut w: W) -> Result<(), ModelError> {
    if model.labels.is_empty() {
        return Err(ModelError::EmptyLabelVocab);
    }
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let c = &model.config;
    for v in [
        c.embedding_dim,
        c.recurrent_layers,
        c.arc_hidden,
        c.rel_hidden,
        c.unk_buckets,
        c.min_word_count,
    ] {
        write_u32(&mut w, v)?;
    }
    write_strings(&mut w, &model.labels)?;
    write_strings(&mut w, model.vocab.words())?;

    let blocks = model.params.blocks();
    write_u32(&mut w, blocks.len())?;
    for block in blocks {
        w.write_all(&(block.len() as u64).to_le_bytes())?;
        for &v in block {
            w.write_all(&v.to_f64_lossless().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(mut r: R) -> Result<Model<T>, ModelError> {
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }

    let config = ModelConfig {
        embedding_dim: read_u32(&mut r)? as usize,
        recurrent_layers: read_u32(&mut r)? as usize,
        arc_hidden: read_u32(&mut r)? as usize,
        rel_hidden: read_u32(&mut r)? as usize,
        unk_buckets: read_u32(&mut r)? as usize,
        min_word_count: read_u32(&mut r)? as usize,
    };
    config.validate().map_err(|e| ModelError::Corrupt(e.to_string()))?;

    let labels = read_strings(&mut r)?;
    if labels.is_empty() {
        return Err(ModelError::EmptyLabelVocab);
    }
    let words = read_strings(&mut r)?;
    let vocab = Vocab::new(words, config.unk_buckets);

    let mut model = Model::new(config, vocab, labels, 0)?;
    let count = read_u32(&mut r)? as usize;
    let mut blocks = model.params.blocks_mut();
    if count != blocks.len() {
        return Err(ModelError::Corrupt(format!(
            "expected {} parameter blocks, found {}",
            blocks.len(),
            count
        )));
    }
    for (idx, block) in blocks.iter_mut().enumerate() {
        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len != block.len() {
            return Err(ModelError::Corrupt(format!(
                "block {} has {} values, expected {}",
                idx,
                len,
                block.len()
            )));
        }
        for v in block.iter_mut() {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf)?;
            *v = T::from_f64_lossy(f64::from_le_bytes(buf));
        }
    }

    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Corrupt("trailing bytes after parameters".into()));
    }

    Ok(model)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ModelError::Truncated,
        _ => ModelError::Io(e),
    })
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Corrupt(format!("value {} exceeds u32", v)))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_strings<W: Write>(w: &mut W, strings: &[String]) -> Result<(), ModelError> {
    write_u32(w, strings.len())?;
    for s in strings {
        write_u32(w, s.len())?;
        w.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn read_strings<R: Read>(r: &mut R) -> Result<Vec<String>, ModelError> {
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut buf = Vec::new();
        r.take(len as u64).read_to_end(&mut buf)?;
        if buf.len() != len {
            return Err(ModelError::Truncated);
        }
        out.push(String::from_utf8(buf).map_err(|_| ModelError::Corrupt("non-UTF-8 string".into()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f64> {
        let config = ModelConfig {
            embedding_dim: 6,
            recurrent_layers: 2,
            arc_hidden: 3,
            rel_hidden: 2,
            unk_buckets: 3,
            min_word_count: 1,
        };
        let vocab = Vocab::new(vec!["the".into(), "dog".into()], 3);
        Model::new(config, vocab, vec!["root".into(), "nmod:[case]".into()], 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let loaded: Model<f64> = read_model(&buf[..]).unwrap();
        assert_eq!(loaded, m);

        let words = ["the", "dog", "barks"];
        let a = m.score_sentence(&words);
        let b = loaded.score_sentence(&words);
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.rel.get(1, 2), b.rel.get(1, 2));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_model::<f64, _>(&buf[..]), Err(ModelError::BadMagic)));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        buf[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            read_model::<f64, _>(&buf[..]),
            Err(ModelError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncation_rejected() {
        let mut buf = Vec::new();
        write_model(&model(), &mut buf).unwrap();
        for cut in [4, 20, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(
                read_model::<f64, _>(&buf[..cut]),
                Err(ModelError::Truncated)
            ));
        }
    }

    #[test]
    fn empty_label_vocab_rejected() {
        let mut m = model();
        m.labels.clear();
        assert!(matches!(
            write_model(&m, Vec::new()),
            Err(ModelError::EmptyLabelVocab)
        ));
    }
}
