//! Checkpoint file: 8-byte magic, little-endian `u32` version, `u64`
//! header length, a JSON header, then binary tensors in the order the
//! header lists them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{LayerSpec, NetworkModel};
use crate::optimizers::{ChainedPrior, Hyperparams, KfacFactors, OptimizerState};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VOGNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model, hyperparameters and (optionally) optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: NetworkModel,
    pub hyperparams: Hyperparams,
    pub state: Option<OptimizerState>,
    pub epoch: usize,
    pub iteration: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateHeader {
    step: u64,
    n_eff: f64,
    tau: f64,
    delta_tilde: f64,
    kfac: Vec<bool>,
    prior: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    hyperparams: Hyperparams,
    epoch: usize,
    iteration: u64,
    seed: u64,
    state: Option<StateHeader>,
    tensors: Vec<String>,
}

fn layer_tensors(prefix: &str, p: &ParamSet, names: &mut Vec<String>, out: &mut Vec<Tensor>) {
    for (i, t) in p.layers().iter().enumerate() {
        names.push(format!("{prefix}.{i}"));
        out.push(t.clone());
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let (mut names, mut tensors) = (Vec::new(), Vec::new());
    layer_tensors("params", ck.model.params(), &mut names, &mut tensors);
    for (i, r) in ck.model.running_stats().iter().enumerate() {
        if let Some(r) = r {
            names.push(format!("running_mean.{i}"));
            tensors.push(Tensor::from_vec(r.mean.clone()));
            names.push(format!("running_var.{i}"));
            tensors.push(Tensor::from_vec(r.var.clone()));
        }
    }
    let state = ck.state.as_ref().map(|st| {
        layer_tensors("m", &st.m, &mut names, &mut tensors);
        layer_tensors("s", &st.s, &mut names, &mut tensors);
        for (i, f) in st.kfac.iter().enumerate() {
            if let Some(f) = f {
                names.push(format!("kfac_a.{i}"));
                tensors.push(f.a.clone());
                names.push(format!("kfac_s.{i}"));
                tensors.push(f.s.clone());
            }
        }
        if let Some(p) = &st.prior {
            layer_tensors("prior_mean", &p.mean, &mut names, &mut tensors);
            layer_tensors("prior_precision", &p.precision, &mut names, &mut tensors);
        }
        StateHeader {
            step: st.step,
            n_eff: st.n_eff,
            tau: st.tau,
            delta_tilde: st.delta_tilde,
            kfac: st.kfac.iter().map(Option::is_some).collect(),
            prior: st.prior.is_some(),
        }
    });
    let header = Header {
        input_shape: ck.model.input_shape().to_vec(),
        layers: ck.model.layers().to_vec(),
        hyperparams: ck.hyperparams.clone(),
        epoch: ck.epoch,
        iteration: ck.iteration,
        seed: ck.seed,
        state,
        tensors: names,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &tensors {
        t.write_binary(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn format_err(offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| format_err(*offset, "unexpected end of checkpoint"))?;
    *offset += buf.len() as u64;
    Ok(())
}

struct TensorReader<'a, R: Read> {
    r: &'a mut R,
    offset: u64,
    names: std::vec::IntoIter<String>,
}

impl<R: Read> TensorReader<'_, R> {
    fn next(&mut self, expected: &str) -> Result<Tensor> {
        match self.names.next() {
            Some(n) if n == expected => Tensor::read_binary(self.r, &mut self.offset),
            other => Err(format_err(
                self.offset,
                format!("expected tensor {expected}, header lists {other:?}"),
            )),
        }
    }

    fn layers(&mut self, prefix: &str, sizes: &[usize]) -> Result<ParamSet> {
        let mut out = Vec::with_capacity(sizes.len());
        for (i, &n) in sizes.iter().enumerate() {
            let t = self.next(&format!("{prefix}.{i}"))?;
            if t.len() != n {
                return Err(format_err(
                    self.offset,
                    format!("{prefix}.{i} holds {} values, expected {n}", t.len()),
                ));
            }
            out.push(t);
        }
        Ok(ParamSet(out))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut offset = 0u64;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, &mut offset)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err(0, "not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4, &mut offset)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(format_err(8, format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b8, &mut offset)?;
    let len = u64::from_le_bytes(b8);
    if len > 1 << 30 {
        return Err(format_err(12, format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut r, &mut json, &mut offset)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(20, format!("bad header: {e}")))?;
    let mut model = NetworkModel::new(header.input_shape, header.layers)?;
    let sizes = model.param_sizes();
    let mut tr = TensorReader {
        r: &mut r,
        offset,
        names: header.tensors.into_iter(),
    };
    model.set_params(tr.layers("params", &sizes)?)?;
    for i in 0..sizes.len() {
        if model.running_stats()[i].is_some() {
            let mean = tr.next(&format!("running_mean.{i}"))?.into_values();
            let var = tr.next(&format!("running_var.{i}"))?.into_values();
            let run = model.running_stats_mut()[i].as_mut().unwrap();
            if mean.len() != run.mean.len() || var.len() != run.var.len() {
                return invalid(format!("running statistics of layer {i} have the wrong length"));
            }
            run.mean = mean;
            run.var = var;
        }
    }
    let state = match header.state {
        None => None,
        Some(h) => {
            if h.kfac.len() != sizes.len() {
                return invalid("checkpoint K-FAC slots do not match the layers");
            }
            let m = tr.layers("m", &sizes)?;
            let s = tr.layers("s", &sizes)?;
            let mut kfac = Vec::with_capacity(sizes.len());
            for (i, &present) in h.kfac.iter().enumerate() {
                kfac.push(if present {
                    Some(KfacFactors {
                        a: tr.next(&format!("kfac_a.{i}"))?,
                        s: tr.next(&format!("kfac_s.{i}"))?,
                    })
                } else {
                    None
                });
            }
            let prior = if h.prior {
                Some(ChainedPrior {
                    mean: tr.layers("prior_mean", &sizes)?,
                    precision: tr.layers("prior_precision", &sizes)?,
                })
            } else {
                None
            };
            Some(OptimizerState {
                m,
                s,
                step: h.step,
                n_eff: h.n_eff,
                tau: h.tau,
                delta_tilde: h.delta_tilde,
                kfac,
                prior,
            })
        }
    };
    if let Some(extra) = tr.names.next() {
        return Err(format_err(tr.offset, format!("unexpected tensor {extra}")));
    }
    let mut rest = [0u8; 1];
    if tr.r.read(&mut rest)? != 0 {
        return Err(format_err(tr.offset, "trailing bytes after the last tensor"));
    }
    Ok(Checkpoint {
        model,
        hyperparams: header.hyperparams,
        state,
        epoch: header.epoch,
        iteration: header.iteration,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkBuilder;
    use crate::tensor::RngStream;

    fn sample() -> Checkpoint {
        let mut model = NetworkBuilder::new(&[3])
            .dense(4)
            .batchnorm()
            .relu()
            .dense(2)
            .build()
            .unwrap();
        let mut rng = RngStream::new(1, 0);
        model.init_xavier(&mut rng);
        model.running_stats_mut()[1].as_mut().unwrap().mean = vec![0.1, 0.2, 0.3, 1.0 / 3.0];
        let hp = Hyperparams::default();
        let mut state = OptimizerState::new(&model.param_sizes(), 123.0, &hp).unwrap();
        let draws: Vec<f64> = (0..state.s.total_len()).map(|_| rng.uniform()).collect();
        state.s = ParamSet::from_flat(&state.s.sizes(), &draws).unwrap();
        state.m = state.m.map(|_| 0.0).add(&model.params().scale(0.5)).unwrap();
        state.kfac[3] = Some(KfacFactors {
            a: Tensor::identity(5),
            s: Tensor::identity(2).scale(std::f64::consts::E),
        });
        state.prior = Some(ChainedPrior {
            mean: model.params().clone(),
            precision: model.params().map(|v| v * v + 1.0),
        });
        Checkpoint {
            model,
            hyperparams: hp,
            state: Some(state),
            epoch: 4,
            iteration: 77,
            seed: 5,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, ck);
        let plain = Checkpoint { state: None, ..ck };
        buf.clear();
        write_checkpoint(&mut buf, &plain).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), plain);
    }

    #[test]
    fn corruption_is_reported() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            read_checkpoint(&bad[..]),
            Err(Error::Format { offset: 8, .. })
        ));
        for cut in [4, 15, 40, buf.len() - 1] {
            assert!(read_checkpoint(&buf[..cut]).is_err(), "cut {cut}");
        }
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }
}
