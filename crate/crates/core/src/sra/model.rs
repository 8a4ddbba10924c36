//! Non-causal dilated convolutional autoencoder with encoder-decoder skips.
//!
//! Input is two channels (series with `-1` at gaps, gap indicator); output is
//! one channel of the same length.

use serde::{Deserialize, Serialize};

use crate::nn::ops::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, concat_channels, conv1d, conv1d_backward, relu, relu_backward,
    split_channels, upsample_linear1d, upsample_linear1d_backward, Conv1dSpec,
};
use crate::nn::{NnError, ParamStore, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnAeConfig {
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub latent_len: usize,
    /// Training crop length and recovery window, samples.
    pub crop_len: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TcnAeConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 16, 32, 32],
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8],
            latent_len: 16,
            crop_len: 128,
            lr: 2e-3,
            epochs: 30,
            batch: 8,
            seed: 0,
        }
    }
}

impl TcnAeConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.channels.is_empty() || self.channels.len() != self.dilations.len() {
            return Err("channels and dilations must be non-empty and of equal length".into());
        }
        if self.dilations.windows(2).any(|w| w[0] >= w[1]) || self.dilations[0] == 0 {
            return Err("dilations must be positive and strictly increasing".into());
        }
        if self.kernel_size % 2 == 0 {
            return Err("kernel_size must be odd".into());
        }
        if self.channels.contains(&0) || self.latent_len == 0 || self.batch == 0 {
            return Err("channels, latent_len and batch must be positive".into());
        }
        if self.crop_len < self.receptive_field() {
            return Err(format!(
                "crop_len {} is shorter than the receptive field {}",
                self.crop_len,
                self.receptive_field()
            ));
        }
        Ok(())
    }

    /// Receptive field of the encoder stack, samples.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }

    fn spec(&self, level: usize) -> Conv1dSpec {
        Conv1dSpec::same(self.kernel_size, self.dilations[level])
    }
}

pub(crate) fn init_params<T: Real>(cfg: &TcnAeConfig) -> ParamStore<T> {
    let mut p = ParamStore::new();
    let k = cfg.kernel_size;
    let ch = &cfg.channels;
    let levels = cfg.levels();
    for i in 0..levels {
        let c_in = if i == 0 { 2 } else { ch[i - 1] };
        p.insert_kaiming(&format!("enc.{i}.weight"), &[ch[i], c_in, k], c_in * k, cfg.seed);
        p.insert_bias(&format!("enc.{i}.bias"), ch[i], c_in * k, cfg.seed);
        let c_dec = decoder_input_channels(cfg, i);
        p.insert_kaiming(&format!("dec.{i}.weight"), &[ch[i], c_dec, k], c_dec * k, cfg.seed);
        p.insert_bias(&format!("dec.{i}.bias"), ch[i], c_dec * k, cfg.seed);
    }
    p.insert_kaiming("out.weight", &[1, ch[0], 1], ch[0], cfg.seed);
    p.insert_bias("out.bias", 1, ch[0], cfg.seed);
    p
}

fn decoder_input_channels(cfg: &TcnAeConfig, level: usize) -> usize {
    let ch = &cfg.channels;
    let from_below = if level + 1 == cfg.levels() { ch[level] } else { ch[level + 1] };
    from_below + ch[level]
}

/// Activations kept for the backward pass.
pub(crate) struct Trace<T: Real> {
    input: Tensor<T>,
    enc: Vec<Tensor<T>>,
    dec_in: Vec<Tensor<T>>,
    dec_out: Vec<Tensor<T>>,
}

/// Builds the 2-channel network input from a series with gaps.
pub(crate) fn network_input<T: Real>(values: &[f64], gaps: &[bool]) -> Tensor<T> {
    let mut data: Vec<T> = values.iter().map(|&v| T::of(v)).collect();
    data.extend(gaps.iter().map(|&g| if g { T::one() } else { T::zero() }));
    Tensor::from_vec(&[2, values.len()], data).expect("input shape")
}

pub(crate) fn forward<T: Real>(
    cfg: &TcnAeConfig,
    p: &ParamStore<T>,
    input: Tensor<T>,
) -> Result<(Tensor<T>, Trace<T>), NnError> {
    let len = input.dim(1);
    let levels = cfg.levels();
    let mut enc: Vec<Tensor<T>> = Vec::with_capacity(levels);
    for i in 0..levels {
        let x = if i == 0 { &input } else { &enc[i - 1] };
        let h = conv1d(x, p.value(&format!("enc.{i}.weight")), p.value(&format!("enc.{i}.bias")), cfg.spec(i))?;
        enc.push(relu(&h));
    }
    let latent = adaptive_avg_pool1d(&enc[levels - 1], cfg.latent_len);
    let mut d = upsample_linear1d(&latent, len);
    let mut dec_in = vec![Tensor::zeros(&[0]); levels];
    let mut dec_out = vec![Tensor::zeros(&[0]); levels];
    for j in (0..levels).rev() {
        let x = concat_channels(&d, &enc[j])?;
        let h = conv1d(&x, p.value(&format!("dec.{j}.weight")), p.value(&format!("dec.{j}.bias")), cfg.spec(j))?;
        d = relu(&h);
        dec_in[j] = x;
        dec_out[j] = d.clone();
    }
    let out = conv1d(&d, p.value("out.weight"), p.value("out.bias"), Conv1dSpec::new(1, 1, 0))?;
    Ok((
        out,
        Trace {
            input,
            enc,
            dec_in,
            dec_out,
        },
    ))
}

/// Accumulates parameter gradients for `d loss / d output = grad`.
pub(crate) fn backward<T: Real>(
    cfg: &TcnAeConfig,
    p: &mut ParamStore<T>,
    tr: &Trace<T>,
    grad: &Tensor<T>,
) -> Result<(), NnError> {
    let levels = cfg.levels();
    let len = tr.input.dim(1);
    let (mut g, gw, gb) = conv1d_backward(&tr.dec_out[0], p.value("out.weight"), Conv1dSpec::new(1, 1, 0), grad)?;
    p.accumulate_grad("out.weight", &gw)?;
    p.accumulate_grad("out.bias", &gb)?;

    let mut g_enc: Vec<Tensor<T>> = tr.enc.iter().map(|e| Tensor::zeros(e.shape())).collect();
    for j in 0..levels {
        let gh = relu_backward(&tr.dec_out[j], &g);
        let w = format!("dec.{j}.weight");
        let (gx, gw, gb) = conv1d_backward(&tr.dec_in[j], p.value(&w), cfg.spec(j), &gh)?;
        p.accumulate_grad(&w, &gw)?;
        p.accumulate_grad(&format!("dec.{j}.bias"), &gb)?;
        let below = tr.dec_in[j].dim(0) - tr.enc[j].dim(0);
        let (g_prev, g_skip) = split_channels(&gx, below);
        g_enc[j].add_assign(&g_skip);
        g = g_prev;
    }
    let g_latent = upsample_linear1d_backward(cfg.latent_len, &g);
    g_enc[levels - 1].add_assign(&adaptive_avg_pool1d_backward(len, &g_latent));

    for i in (0..levels).rev() {
        let gh = relu_backward(&tr.enc[i], &g_enc[i]);
        let x = if i == 0 { &tr.input } else { &tr.enc[i - 1] };
        let w = format!("enc.{i}.weight");
        let (gx, gw, gb) = conv1d_backward(x, p.value(&w), cfg.spec(i), &gh)?;
        p.accumulate_grad(&w, &gw)?;
        p.accumulate_grad(&format!("enc.{i}.bias"), &gb)?;
        if i > 0 {
            g_enc[i - 1].add_assign(&gx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::mse;

    fn small() -> TcnAeConfig {
        TcnAeConfig {
            channels: vec![3, 4],
            dilations: vec![1, 2],
            latent_len: 4,
            crop_len: 12,
            ..Default::default()
        }
    }

    /// Finite-difference check of the whole autoencoder in f64.
    #[test]
    fn autoencoder_gradients_match_central_differences() {
        let cfg = small();
        let mut p: ParamStore<f64> = init_params(&cfg);
        let values: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.7).sin() * 0.5 + 0.5).collect();
        let gaps: Vec<bool> = (0..12).map(|i| i % 3 == 1).collect();
        let target = Tensor::from_vec(&[1, 12], values.clone()).unwrap();
        let input: Tensor<f64> = network_input(&values, &gaps);
        let loss = |p: &ParamStore<f64>| {
            let (out, _) = forward(&cfg, p, input.clone()).unwrap();
            mse(&out, &target).unwrap().0
        };
        let (out, tr) = forward(&cfg, &p, input.clone()).unwrap();
        let (_, g) = mse(&out, &target).unwrap();
        p.zero_grad();
        backward(&cfg, &mut p, &tr, &g).unwrap();
        let names: Vec<String> = p.names().map(str::to_string).collect();
        let h = 1e-6;
        for name in names {
            let n = p.value(&name).len();
            for idx in (0..n).step_by((n / 5).max(1)) {
                let analytic = p.get(&name).unwrap().grad.data()[idx];
                let mut plus = p.clone();
                plus.get_mut(&name).unwrap().value.data_mut()[idx] += h;
                let mut minus = p.clone();
                minus.get_mut(&name).unwrap().value.data_mut()[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
                assert!(err < 1e-6, "{name}[{idx}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TcnAeConfig::default().validate().is_ok());
        assert_eq!(TcnAeConfig::default().receptive_field(), 31);
        let bad = TcnAeConfig {
            dilations: vec![1, 4, 2, 8],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let short = TcnAeConfig {
            crop_len: 16,
            ..Default::default()
        };
        assert!(short.validate().is_err());
    }
}
