use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::LayerSpec;
use super::network::{HeadKind, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Smallest probability fed to the log in the cross-entropy term.
const PROB_FLOOR: f32 = 1e-7;

/// One training example. Absent targets contribute nothing to the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    /// 1 = face, 0 = background.
    pub label: Option<usize>,
    pub bbox: Option<[f32; 4]>,
    pub landmarks: Option<[f32; 10]>,
}

impl Sample {
    pub fn classify(input: Tensor, label: usize) -> Self {
        Sample {
            input,
            label: Some(label),
            bbox: None,
            landmarks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub score: f32,
    pub bbox: f32,
    pub landmarks: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            score: 1.0,
            bbox: 0.5,
            landmarks: 0.5,
        }
    }
}

fn forward_trace(layers: &[LayerSpec], input: Tensor) -> Result<Vec<Tensor>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for layer in layers {
        let next = layer.forward(acts.last().expect("non-empty"))?;
        acts.push(next);
    }
    Ok(acts)
}

/// Backpropagates through `layers`, adding parameter gradients into `grads`
/// (aligned with the layers' parameters) and returning the input gradient.
fn backward_trace(
    layers: &[LayerSpec],
    acts: &[Tensor],
    mut grad: Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor> {
    let mut offset: usize = layers.iter().map(|l| l.params().len()).sum();
    for (layer, input) in layers.iter().zip(acts).rev() {
        let (gin, pgrads) = layer.backward(input, &grad)?;
        offset -= pgrads.len();
        for (acc, g) in grads[offset..].iter_mut().zip(pgrads) {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        grad = gin;
    }
    Ok(grad)
}

fn head_loss(kind: HeadKind, out: &Tensor, sample: &Sample, w: &LossWeights) -> Result<Option<(f64, Tensor)>> {
    let squared = |target: &[f32], weight: f32| -> Result<(f64, Tensor)> {
        if out.len() != target.len() {
            return Err(Error::shape("loss", out.shape(), &[target.len()]));
        }
        let mut loss = 0f64;
        let grad = out
            .data()
            .iter()
            .zip(target)
            .map(|(&o, &t)| {
                let d = o - t;
                loss += 0.5 * (d as f64) * (d as f64);
                weight * d
            })
            .collect();
        Ok((weight as f64 * loss, Tensor::new(out.shape().to_vec(), grad)?))
    };
    match kind {
        HeadKind::Score => {
            let Some(label) = sample.label else { return Ok(None) };
            if out.len() != 2 || label > 1 {
                return Err(Error::shape("cross-entropy", out.shape(), &[2]));
            }
            let p = out.data()[label].max(PROB_FLOOR);
            let mut grad = Tensor::zeros(out.shape());
            grad.data_mut()[label] = -w.score / p;
            Ok(Some((-(w.score as f64) * (p as f64).ln(), grad)))
        }
        HeadKind::BoxReg => sample.bbox.map(|t| squared(&t, w.bbox)).transpose(),
        HeadKind::Landmarks => sample.landmarks.map(|t| squared(&t, w.landmarks)).transpose(),
    }
}

fn sample_loss_and_grads(
    net: &NetworkSpec,
    sample: &Sample,
    w: &LossWeights,
    grads: &mut [Tensor],
) -> Result<f64> {
    let trunk_params: usize = net.trunk.iter().map(|l| l.params().len()).sum();
    let acts = forward_trace(&net.trunk, sample.input.clone())?;
    let features = acts.last().expect("non-empty");
    let mut feature_grad: Option<Tensor> = None;
    let mut total = 0f64;
    let mut offset = trunk_params;
    for head in &net.heads {
        let n_params: usize = head.layers.iter().map(|l| l.params().len()).sum();
        let head_acts = forward_trace(&head.layers, features.clone())?;
        if let Some((loss, grad)) = head_loss(head.kind, head_acts.last().expect("non-empty"), sample, w)? {
            total += loss;
            let g = backward_trace(&head.layers, &head_acts, grad, &mut grads[offset..offset + n_params])?;
            match feature_grad.as_mut() {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v),
                None => feature_grad = Some(g),
            }
        }
        offset += n_params;
    }
    if let Some(g) = feature_grad {
        backward_trace(&net.trunk, &acts, g, &mut grads[..trunk_params])?;
    }
    Ok(total)
}

/// Mean loss over `samples`: softmax cross-entropy on the score head plus
/// weighted half squared error on the box and landmark heads where targets exist.
pub fn loss(net: &NetworkSpec, samples: &[Sample], weights: &LossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let mut scratch: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut total = 0f64;
    for s in samples {
        total += sample_loss_and_grads(net, s, weights, &mut scratch)?;
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss and its gradient for every parameter, in [`NetworkSpec::params`] order.
pub fn loss_and_gradients(
    net: &NetworkSpec,
    samples: &[Sample],
    weights: &LossWeights,
) -> Result<(f64, Vec<Tensor>)> {
    let order: Vec<usize> = (0..samples.len()).collect();
    accumulate(net, samples, &order, weights)
}

fn accumulate(
    net: &NetworkSpec,
    samples: &[Sample],
    order: &[usize],
    weights: &LossWeights,
) -> Result<(f64, Vec<Tensor>)> {
    if samples.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let mut grads: Vec<Tensor> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut total = 0f64;
    for &i in order {
        total += sample_loss_and_grads(net, &samples[i], weights, &mut grads)?;
    }
    let scale = 1.0 / samples.len() as f32;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total / samples.len() as f64, grads))
}

/// One plain SGD step on the batch mean loss; returns the loss before the update.
///
/// `seed` fixes the order in which per-sample gradients are accumulated, so a
/// given `(net, batch, seed)` always produces bit-identical parameters.
pub fn train_step(net: &mut NetworkSpec, samples: &[Sample], learning_rate: f32, seed: u64) -> Result<f64> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (loss, grads) = accumulate(net, samples, &order, &LossWeights::default())?;
    if learning_rate != 0.0 {
        for (p, g) in net.params_mut().into_iter().zip(&grads) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= learning_rate * gv;
            }
        }
    }
    Ok(loss)
}
