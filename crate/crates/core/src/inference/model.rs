//! Feature extractor, key classifier and domain discriminator.
//!
//! `G_f`: three same-padded conv blocks, then adaptive pooling to a fixed
//! length. `G_c` and `G_d`: two dense layers each. The discriminator sees the
//! features through a gradient reversal.

use serde::{Deserialize, Serialize};

use crate::nn::ops::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, conv1d, conv1d_backward, cross_entropy, grad_reverse,
    grad_reverse_backward, linear, linear_backward, relu, relu_backward, softmax, Conv1dSpec,
};
use crate::nn::{NnError, ParamStore, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KiConfig {
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool_len: usize,
    pub hidden: usize,
    /// Weight of the domain loss.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for KiConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64],
            kernel_size: 5,
            pool_len: 32,
            hidden: 128,
            lambda: 0.5,
            lr: 1e-3,
            epochs: 12,
            batch: 16,
            seed: 0,
        }
    }
}

impl KiConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err("conv_channels must be non-empty and positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return Err("kernel_size must be odd".into());
        }
        if self.pool_len == 0 || self.hidden == 0 || self.batch == 0 {
            return Err("pool_len, hidden and batch must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.lr >= 0.0) {
            return Err("lambda and lr must be non-negative".into());
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(0) * self.pool_len
    }

    fn spec(&self) -> Conv1dSpec {
        Conv1dSpec::same(self.kernel_size, 1)
    }
}

pub(crate) fn init_params<T: Real>(cfg: &KiConfig, n_keys: usize) -> ParamStore<T> {
    let mut p = ParamStore::new();
    let k = cfg.kernel_size;
    let mut c_in = 2;
    for (i, &c) in cfg.conv_channels.iter().enumerate() {
        p.insert_kaiming(&format!("f.conv{}.weight", i + 1), &[c, c_in, k], c_in * k, cfg.seed);
        p.insert_bias(&format!("f.conv{}.bias", i + 1), c, c_in * k, cfg.seed);
        c_in = c;
    }
    let feat = cfg.feature_len();
    for (head, n_out) in [("c", n_keys), ("d", 2)] {
        p.insert_kaiming(&format!("{head}.fc1.weight"), &[cfg.hidden, feat], feat, cfg.seed);
        p.insert_bias(&format!("{head}.fc1.bias"), cfg.hidden, feat, cfg.seed);
        p.insert_kaiming(&format!("{head}.fc2.weight"), &[n_out, cfg.hidden], cfg.hidden, cfg.seed);
        p.insert_bias(&format!("{head}.fc2.bias"), n_out, cfg.hidden, cfg.seed);
    }
    p
}

/// Linear resampling onto `n` points with both endpoints kept.
pub fn resample_linear(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == n {
        return v.to_vec();
    }
    if v.len() == 1 || n == 1 {
        return vec![v[0]; n];
    }
    let scale = (v.len() - 1) as f64 / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * scale;
            let i0 = (pos.floor() as usize).min(v.len() - 1);
            let i1 = (i0 + 1).min(v.len() - 1);
            let w = pos - i0 as f64;
            v[i0] * (1.0 - w) + v[i1] * w
        })
        .collect()
}

/// Two-channel input for a segment pair; the shorter segment is resampled
/// to the longer one's length.
pub fn pair_input<T: Real>(a: &[f64], b: &[f64]) -> Tensor<T> {
    let n = a.len().max(b.len());
    let mut data: Vec<T> = resample_linear(a, n).into_iter().map(T::of).collect();
    data.extend(resample_linear(b, n).into_iter().map(T::of));
    Tensor::from_vec(&[2, n], data).expect("pair input shape")
}

pub(crate) struct FeatureTrace<T: Real> {
    input: Tensor<T>,
    acts: Vec<Tensor<T>>,
}

pub(crate) fn features<T: Real>(
    cfg: &KiConfig,
    p: &ParamStore<T>,
    input: Tensor<T>,
) -> Result<(Tensor<T>, FeatureTrace<T>), NnError> {
    let mut acts: Vec<Tensor<T>> = Vec::with_capacity(cfg.conv_channels.len());
    for i in 0..cfg.conv_channels.len() {
        let x = if i == 0 { &input } else { &acts[i - 1] };
        let h = conv1d(
            x,
            p.value(&format!("f.conv{}.weight", i + 1)),
            p.value(&format!("f.conv{}.bias", i + 1)),
            cfg.spec(),
        )?;
        acts.push(relu(&h));
    }
    let pooled = adaptive_avg_pool1d(acts.last().expect("at least one block"), cfg.pool_len);
    let flat = pooled.reshape(&[cfg.feature_len()])?;
    Ok((flat, FeatureTrace { input, acts }))
}

pub(crate) fn features_backward<T: Real>(
    cfg: &KiConfig,
    p: &mut ParamStore<T>,
    tr: &FeatureTrace<T>,
    grad: &Tensor<T>,
) -> Result<(), NnError> {
    let last = tr.acts.last().expect("at least one block");
    let g_pool = grad.clone().reshape(&[last.dim(0), cfg.pool_len])?;
    let mut g = adaptive_avg_pool1d_backward(last.dim(1), &g_pool);
    for i in (0..tr.acts.len()).rev() {
        let gh = relu_backward(&tr.acts[i], &g);
        let x = if i == 0 { &tr.input } else { &tr.acts[i - 1] };
        let w = format!("f.conv{}.weight", i + 1);
        let (gx, gw, gb) = conv1d_backward(x, p.value(&w), cfg.spec(), &gh)?;
        p.accumulate_grad(&w, &gw)?;
        p.accumulate_grad(&format!("f.conv{}.bias", i + 1), &gb)?;
        g = gx;
    }
    Ok(())
}

pub(crate) struct HeadTrace<T: Real> {
    input: Tensor<T>,
    hidden: Tensor<T>,
}

pub(crate) fn head<T: Real>(p: &ParamStore<T>, name: &str, x: &Tensor<T>) -> Result<(Tensor<T>, HeadTrace<T>), NnError> {
    let h = relu(&linear(
        x,
        p.value(&format!("{name}.fc1.weight")),
        p.value(&format!("{name}.fc1.bias")),
    )?);
    let out = linear(&h, p.value(&format!("{name}.fc2.weight")), p.value(&format!("{name}.fc2.bias")))?;
    Ok((
        out,
        HeadTrace {
            input: x.clone(),
            hidden: h,
        },
    ))
}

/// Accumulates head gradients and returns the gradient w.r.t. the head input.
pub(crate) fn head_backward<T: Real>(
    p: &mut ParamStore<T>,
    name: &str,
    tr: &HeadTrace<T>,
    grad: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let w2 = format!("{name}.fc2.weight");
    let (gh, gw2, gb2) = linear_backward(&tr.hidden, p.value(&w2), grad);
    p.accumulate_grad(&w2, &gw2)?;
    p.accumulate_grad(&format!("{name}.fc2.bias"), &gb2)?;
    let gh = relu_backward(&tr.hidden, &gh);
    let w1 = format!("{name}.fc1.weight");
    let (gx, gw1, gb1) = linear_backward(&tr.input, p.value(&w1), &gh);
    p.accumulate_grad(&w1, &gw1)?;
    p.accumulate_grad(&format!("{name}.fc1.bias"), &gb1)?;
    Ok(gx)
}

/// Key and domain distributions for a prepared pair input.
pub(crate) fn forward_dists<T: Real>(
    cfg: &KiConfig,
    p: &ParamStore<T>,
    input: Tensor<T>,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let (feat, _) = features(cfg, p, input)?;
    let (key_logits, _) = head(p, "c", &feat)?;
    let (dom_logits, _) = head(p, "d", &grad_reverse(&feat, 1.0))?;
    Ok((softmax(&key_logits), softmax(&dom_logits)))
}

/// Losses of one pair step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub class: f64,
    pub domain: f64,
}

/// Forward and backward for one pair under `Lc + lambda * Ld` with the
/// discriminator behind a unit gradient reversal. Gradients accumulate.
pub(crate) fn adversarial_step<T: Real>(
    cfg: &KiConfig,
    p: &mut ParamStore<T>,
    input: Tensor<T>,
    key: usize,
    delta: usize,
    lambda: f64,
) -> Result<StepLoss, NnError> {
    let (feat, ftr) = features(cfg, p, input)?;
    let (key_logits, ctr) = head(p, "c", &feat)?;
    let (lc, g_key) = cross_entropy(&key_logits, key)?;
    let reversed = grad_reverse(&feat, 1.0);
    let (dom_logits, dtr) = head(p, "d", &reversed)?;
    let (ld, mut g_dom) = cross_entropy(&dom_logits, delta)?;
    g_dom.scale(T::of(lambda));

    let mut g_feat = head_backward(p, "c", &ctr, &g_key)?;
    let g_rev = head_backward(p, "d", &dtr, &g_dom)?;
    g_feat.add_assign(&grad_reverse_backward(&g_rev, 1.0));
    features_backward(cfg, p, &ftr, &g_feat)?;
    Ok(StepLoss { class: lc, domain: ld })
}

/// Forward and backward of the classifier path only.
pub(crate) fn plain_step<T: Real>(
    cfg: &KiConfig,
    p: &mut ParamStore<T>,
    input: Tensor<T>,
    key: usize,
) -> Result<f64, NnError> {
    let (feat, ftr) = features(cfg, p, input)?;
    let (key_logits, ctr) = head(p, "c", &feat)?;
    let (lc, g_key) = cross_entropy(&key_logits, key)?;
    let g_feat = head_backward(p, "c", &ctr, &g_key)?;
    features_backward(cfg, p, &ftr, &g_feat)?;
    Ok(lc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KiConfig {
        KiConfig {
            conv_channels: vec![3, 4],
            kernel_size: 3,
            pool_len: 4,
            hidden: 5,
            ..Default::default()
        }
    }

    /// Central differences on the combined objective `Lc + lambda * Ld`.
    /// Discriminator weights descend on `lambda * Ld`; feature weights see the
    /// reversed discriminator gradient, so they are checked against
    /// `Lc - lambda * Ld`.
    #[test]
    fn adversarial_gradients_match_central_differences() {
        let cfg = small();
        let lambda = 0.7;
        let mut p: ParamStore<f64> = init_params(&cfg, 3);
        let a: Vec<f64> = (0..11).map(|i| (i as f64 * 0.9).sin()).collect();
        let b: Vec<f64> = (0..9).map(|i| (i as f64 * 0.4).cos()).collect();
        let input: Tensor<f64> = pair_input(&a, &b);
        let objective = |p: &ParamStore<f64>, sign: f64| {
            let (feat, _) = features(&cfg, p, input.clone()).unwrap();
            let (kl, _) = head(p, "c", &feat).unwrap();
            let (dl, _) = head(p, "d", &feat).unwrap();
            cross_entropy(&kl, 2).unwrap().0 + sign * lambda * cross_entropy(&dl, 1).unwrap().0
        };
        p.zero_grad();
        adversarial_step(&cfg, &mut p, input.clone(), 2, 1, lambda).unwrap();
        let names: Vec<String> = p.names().map(str::to_string).collect();
        let h = 1e-6;
        for name in names {
            let sign = if name.starts_with("f.") { -1.0 } else { 1.0 };
            let n = p.value(&name).len();
            for idx in (0..n).step_by((n / 4).max(1)) {
                let analytic = p.get(&name).unwrap().grad.data()[idx];
                let mut plus = p.clone();
                plus.get_mut(&name).unwrap().value.data_mut()[idx] += h;
                let mut minus = p.clone();
                minus.get_mut(&name).unwrap().value.data_mut()[idx] -= h;
                let numeric = (objective(&plus, sign) - objective(&minus, sign)) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
                assert!(err < 1e-6, "{name}[{idx}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let cfg = small();
        let p: ParamStore<f64> = init_params(&cfg, 10);
        let (k, d) = forward_dists(&cfg, &p, pair_input::<f64>(&[0.1, 0.5, 0.2], &[0.3; 7])).unwrap();
        assert_eq!(k.len(), 10);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn resampling_keeps_endpoints() {
        let r = resample_linear(&[0.0, 1.0, 0.0], 5);
        assert_eq!(r, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(resample_linear(&[2.0], 3), vec![2.0; 3]);
    }
}
