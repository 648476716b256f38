use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ConvBlock, EncoderConfig};
use crate::diff::{Checkpoint, Group, Padding, ParamSet, Scalar, Tape, Tensor, Var};
use crate::edf::Stage;
use crate::error::{Error, Result};

/// Which classifier sits on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Five sleep stages.
    Sl,
    /// Original vs phase-swapped.
    Ssl,
}

impl Head {
    pub fn classes(self) -> usize {
        match self {
            Head::Sl => Stage::N_CLASSES,
            Head::Ssl => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Sl => "sl",
            Head::Ssl => "ssl",
        }
    }
}

/// Encoder plus both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub config: EncoderConfig,
    pub encoder: ParamSet<T>,
    pub sl_head: ParamSet<T>,
    pub ssl_head: ParamSet<T>,
}

fn he_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn dense_head<T: Scalar, R: Rng>(group: Group, n_out: usize, n_in: usize, rng: &mut R) -> ParamSet<T> {
    ParamSet::new(group)
        .with("w", he_uniform(&[n_out, n_in], n_in, rng))
        .and_then(|p| p.with("b", Tensor::zeros(&[n_out])))
        .expect("fresh names")
}

impl<T: Scalar> ModelBundle<T> {
    /// He-uniform weights, zero biases.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = ParamSet::new(Group::Encoder);
        for (name, blocks) in [("small", &config.small), ("large", &config.large)] {
            let mut c_in = config.in_channels;
            for (i, b) in blocks.iter().enumerate() {
                let fan_in = c_in * b.kernel;
                encoder.push(format!("{name}{i}.w"), he_uniform(&[b.filters, c_in, b.kernel], fan_in, &mut rng))?;
                encoder.push(format!("{name}{i}.b"), Tensor::zeros(&[b.filters]))?;
                c_in = b.filters;
            }
        }
        let d = config.feature_dim()?;
        let sl_head = dense_head(Group::SlHead, Head::Sl.classes(), d, &mut rng);
        let ssl_head = dense_head(Group::SslHead, Head::Ssl.classes(), d, &mut rng);
        Ok(Self {
            config,
            encoder,
            sl_head,
            ssl_head,
        })
    }

    pub fn head(&self, head: Head) -> &ParamSet<T> {
        match head {
            Head::Sl => &self.sl_head,
            Head::Ssl => &self.ssl_head,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut ParamSet<T> {
        match head {
            Head::Sl => &mut self.sl_head,
            Head::Ssl => &mut self.ssl_head,
        }
    }

    pub fn numel(&self) -> usize {
        self.encoder.numel() + self.sl_head.numel() + self.ssl_head.numel()
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            sl_head: self.sl_head.cast(),
            ssl_head: self.ssl_head.cast(),
        }
    }

    /// Feature vector `h` for one input (dropout off).
    pub fn encode(&self, x: &[f32]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let enc = tape.bind(&self.encoder);
        let xv = input(&mut tape, &self.config, x)?;
        let h = encode(&mut tape, &self.config, &enc, xv)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Class probabilities of a head applied to `h`.
    pub fn classify(&self, h: &[T], head: Head) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::vector(h.to_vec()));
        let hp = tape.bind(self.head(head));
        let p = classify(&mut tape, hv, &hp)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Stage probabilities for one input.
    pub fn predict(&self, x: &[f32]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let enc = tape.bind(&self.encoder);
        let hp = tape.bind(&self.sl_head);
        let xv = input(&mut tape, &self.config, x)?;
        let h = encode(&mut tape, &self.config, &enc, xv)?;
        let p = classify(&mut tape, h, &hp)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Most probable stage class index (first on ties).
    pub fn predict_class(&self, x: &[f32]) -> Result<usize> {
        let p = self.predict(x)?;
        Ok(p.iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > p[best] { i } else { best }))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<T>> {
        let mut ck = Checkpoint::default();
        ck.set_meta("encoder_config", serde_json::to_string(&self.config)?);
        ck.add_params("encoder", &self.encoder);
        ck.add_params("sl_head", &self.sl_head);
        ck.add_params("ssl_head", &self.ssl_head);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let cfg = ck
            .meta
            .get("encoder_config")
            .ok_or_else(|| Error::Data("checkpoint has no encoder_config".into()))?;
        let config: EncoderConfig = serde_json::from_str(cfg)?;
        let like = Self::new(config.clone(), 0)?;
        Ok(Self {
            encoder: ck.load_params("encoder", &like.encoder)?,
            sl_head: ck.load_params("sl_head", &like.sl_head)?,
            ssl_head: ck.load_params("ssl_head", &like.ssl_head)?,
            config,
        })
    }
}

/// Places one `in_channels x input_len` sample on the tape as a constant.
pub fn input<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &EncoderConfig, x: &[f32]) -> Result<Var> {
    if x.len() != cfg.in_channels * cfg.input_len {
        return Err(Error::shape(
            "encode",
            format!(
                "input has {} values, expected {} x {}",
                x.len(),
                cfg.in_channels,
                cfg.input_len
            ),
        ));
    }
    let data = T::cow_from_f32(x).into_owned();
    Ok(tape.constant(Tensor::new(vec![cfg.in_channels, cfg.input_len], data)?))
}

fn branch<T: Scalar>(tape: &mut Tape<'_, T>, blocks: &[ConvBlock], params: &[Var], x: Var) -> Result<Var> {
    let mut y = x;
    for (b, wb) in blocks.iter().zip(params.chunks_exact(2)) {
        y = tape.conv1d(y, wb[0], wb[1], b.stride, Padding::Same)?;
        y = tape.relu(y)?;
        if b.pool > 1 {
            y = tape.maxpool1d(y, b.pool, b.pool)?;
        }
    }
    tape.flatten(y)
}

/// `h = concat(small(x), large(x))`; `enc` are the encoder leaves in
/// parameter order.
pub fn encode<T: Scalar>(tape: &mut Tape<'_, T>, cfg: &EncoderConfig, enc: &[Var], x: Var) -> Result<Var> {
    let split = 2 * cfg.small.len();
    if enc.len() != split + 2 * cfg.large.len() {
        return Err(Error::ParamMismatch(format!(
            "encoder has {} tensors, config needs {}",
            enc.len(),
            split + 2 * cfg.large.len()
        )));
    }
    let s = branch(tape, &cfg.small, &enc[..split], x)?;
    let l = branch(tape, &cfg.large, &enc[split..], x)?;
    tape.concat(&[s, l])
}

/// Dense layer then softmax; `head` is `[w, b]`.
pub fn classify<T: Scalar>(tape: &mut Tape<'_, T>, h: Var, head: &[Var]) -> Result<Var> {
    let [w, b] = head else {
        return Err(Error::ParamMismatch(format!("head has {} tensors, expected 2", head.len())));
    };
    let z = tape.dense(h, *w, *b)?;
    tape.softmax(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            in_channels: 2,
            input_len: 48,
            small: vec![ConvBlock::new(3, 5, 2, 2)],
            large: vec![ConvBlock::new(2, 12, 6, 2), ConvBlock::new(2, 2, 1, 1)],
            dropout: 0.5,
        }
    }

    fn signal(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_input_and_zero_biases_give_zero_features() {
        let m = ModelBundle::<f32>::new(tiny(), 1).unwrap();
        let h = m.encode(&[0.0; 96]).unwrap();
        assert_eq!(h.len(), tiny().feature_dim().unwrap());
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic() {
        let a = ModelBundle::<f32>::new(tiny(), 7).unwrap();
        let b = ModelBundle::<f32>::new(tiny(), 7).unwrap();
        let x = signal(96, 3);
        let (ha, hb) = (a.encode(&x).unwrap(), b.encode(&x).unwrap());
        assert_eq!(ha.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), hb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let m = ModelBundle::<f32>::new(tiny(), 1).unwrap();
        assert!(matches!(m.encode(&[0.0; 95]), Err(Error::Shape { op: "encode", .. })));
    }

    #[test]
    fn zero_heads_are_uniform() {
        let mut m = ModelBundle::<f64>::new(tiny(), 1).unwrap();
        for head in [Head::Sl, Head::Ssl] {
            for t in m.head_mut(head).tensors_mut() {
                t.fill(0.0);
            }
        }
        let h = m.encode(&signal(96, 2)).unwrap();
        let sl = m.classify(&h, Head::Sl).unwrap();
        let ssl = m.classify(&h, Head::Ssl).unwrap();
        assert!(sl.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!(ssl.iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn dominant_logit_wins() {
        let mut m = ModelBundle::<f64>::new(tiny(), 1).unwrap();
        let d = tiny().feature_dim().unwrap();
        m.sl_head.tensors_mut()[0].fill(0.0);
        m.sl_head.tensors_mut()[1] = Tensor::vector(vec![10.0, 0.0, 0.0, 0.0, 0.0]);
        let p = m.classify(&vec![0.3; d], Head::Sl).unwrap();
        // e^10 / (e^10 + 4)
        assert!((p[0] - 0.999_818_433_253_420_2).abs() < 1e-12 && p[0] > 0.99);
        let h = m.encode(&signal(96, 4)).unwrap();
        assert!(m.classify(&h[..d - 1], Head::Sl).is_err());
    }

    #[test]
    fn predicted_probabilities_lie_on_the_simplex() {
        let m = ModelBundle::<f32>::new(tiny(), 9).unwrap();
        for s in 0..20 {
            let p = m.predict(&signal(96, s)).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = ModelBundle::<f32>::new(tiny(), 5).unwrap();
        let (man, blob) = m.to_checkpoint().unwrap().to_bytes();
        let back = ModelBundle::from_checkpoint(&Checkpoint::from_bytes(&man, &blob).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn heads_match_feature_dim() {
        let m = ModelBundle::<f32>::new(EncoderConfig::desk(), 0).unwrap();
        let d = EncoderConfig::desk().feature_dim().unwrap();
        assert_eq!(m.sl_head.tensors()[0].shape(), &[5, d]);
        assert_eq!(m.ssl_head.tensors()[0].shape(), &[2, d]);
    }
}
