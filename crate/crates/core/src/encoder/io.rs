//! Encoder model container and training log.
//!
//! Layout of a model file:
//!
//! ```text
//! 8 bytes   magic "CGDRVENC"
//! u32 LE    format version
//! u64 LE    header length in bytes
//! ...       JSON header (ModelHeader)
//! u64 LE    parameter count
//! f64 LE    parameters, in ParamLayout order
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EncoderModel, EpochLoss, FeatureScaler, Hyperparams, ParamLayout};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CGDRVENC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format_version: u32,
    pub inputs: usize,
    pub hidden: usize,
    pub latent: usize,
    pub context_len: usize,
    pub scaler: FeatureScaler,
    pub hyperparams: Option<Hyperparams>,
    pub seed: Option<u64>,
}

pub fn write_model<T: Scalar, W: Write>(
    mut out: W,
    model: &EncoderModel<T>,
    hyperparams: Option<&Hyperparams>,
    seed: Option<u64>,
) -> Result<()> {
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        inputs: model.layout.inputs,
        hidden: model.layout.hidden,
        latent: model.layout.latent,
        context_len: model.context_len,
        scaler: model.scaler.clone(),
        hyperparams: hyperparams.cloned(),
        seed,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for p in &model.params {
        out.write_all(&p.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_model<T: Scalar, R: Read>(mut input: R) -> Result<(EncoderModel<T>, ModelHeader)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let header_len = read_u64(&mut input)? as usize;
    let mut json = vec![0u8; header_len];
    input.read_exact(&mut json)?;
    let header: ModelHeader = serde_json::from_slice(&json)?;
    let layout = ParamLayout {
        inputs: header.inputs,
        hidden: header.hidden,
        latent: header.latent,
    };
    if !(header.inputs == 5 || header.inputs == 6) || header.scaler.mean.len() != header.inputs {
        return Err(Error::ModelFormat("inconsistent input width".into()));
    }
    let n = read_u64(&mut input)? as usize;
    if n != layout.len() {
        return Err(Error::ModelFormat(format!(
            "parameter count {n} does not match layout ({})",
            layout.len()
        )));
    }
    let mut params = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        input.read_exact(&mut b)?;
        let p = f64::from_le_bytes(b);
        if !p.is_finite() {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        params.push(T::lit(p));
    }
    let model = EncoderModel {
        layout,
        context_len: header.context_len,
        include_action: header.inputs == 6,
        scaler: header.scaler.clone(),
        params,
    };
    Ok((model, header))
}

/// CSV with columns `epoch,L1,L2,L3,total`.
pub fn write_training_log<W: Write>(mut out: W, history: &[EpochLoss]) -> Result<()> {
    writeln!(out, "epoch,L1,L2,L3,total")?;
    for e in history {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.l1, e.l2, e.l3, e.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let layout = ParamLayout {
            inputs: 6,
            hidden: 5,
            latent: 2,
        };
        let scaler = FeatureScaler {
            mean: vec![0.1, 2.0, 3.0, 0.25, 0.5, -0.01],
            std: vec![1.5, 20.0, 21.0, 0.3, 0.5, 0.7],
        };
        let model = EncoderModel::<f64>::init(layout, 30, scaler, &mut rng_from(3, &[]));
        let mut buf = Vec::new();
        write_model(&mut buf, &model, Some(&Hyperparams::desk()), Some(7)).unwrap();
        let (back, header) = read_model::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.seed, Some(7));
        let bits: Vec<u64> = back.params.iter().map(|p| p.to_bits()).collect();
        let orig: Vec<u64> = model.params.iter().map(|p| p.to_bits()).collect();
        assert_eq!(bits, orig);

        let mut again = Vec::new();
        write_model(&mut again, &back, Some(&Hyperparams::desk()), Some(7)).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let layout = ParamLayout {
            inputs: 6,
            hidden: 2,
            latent: 2,
        };
        let model = EncoderModel::<f64>::zeros(layout, 3, FeatureScaler::identity(6));
        let mut buf = Vec::new();
        write_model(&mut buf, &model, None, None).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_model::<f64, _>(bad.as_slice()),
            Err(Error::ModelFormat(_))
        ));
        let truncated = &buf[..buf.len() - 4];
        assert!(read_model::<f64, _>(truncated).is_err());
    }

    #[test]
    fn training_log_header() {
        let mut buf = Vec::new();
        write_training_log(
            &mut buf,
            &[EpochLoss {
                epoch: 1,
                l1: 0.5,
                l2: 1.0,
                l3: 0.25,
                total: 2.0,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,L1,L2,L3,total\n1,0.5,1,0.25,2\n"
        );
    }
}
