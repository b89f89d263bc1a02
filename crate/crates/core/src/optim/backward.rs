//! Exact gradients of the batch-mean loss.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::featurize::Example;
use crate::model::{argmax, softmax, DanModel, ForwardTrace, Pooling, PoolTrace};
use crate::optim::loss::{kd_loss, LossMode};

/// Upper bound on partial gradient buffers per batch. Chunking depends only
/// on the batch size, so the reduction order (and the result) is the same
/// whether chunks run serially or in parallel.
const MAX_CHUNKS: usize = 16;

/// Gradient of the batch loss, laid out like the optimizer state: sparse
/// embedding rows keyed by id, dense tensors in [`DanModel::dense_params`]
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: BTreeMap<u32, Vec<f64>>,
    pub dense: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &DanModel) -> Self {
        Gradients {
            embedding: BTreeMap::new(),
            dense: model.dense_params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn add(&mut self, other: Gradients) {
        for (id, row) in other.embedding {
            match self.embedding.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&row).for_each(|(a, b)| *a += b),
                None => {
                    self.embedding.insert(id, row);
                }
            }
        }
        for (acc, g) in self.dense.iter_mut().zip(other.dense) {
            acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }

    fn row(&mut self, id: u32, dim: usize) -> &mut Vec<f64> {
        self.embedding.entry(id).or_insert_with(|| vec![0.0; dim])
    }
}

/// Examples trained together under one loss.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub examples: Vec<&'a Example>,
    pub mode: LossMode,
}

impl<'a> Batch<'a> {
    /// Checks that every example carries the supervision `mode` needs.
    pub fn new(examples: Vec<&'a Example>, mode: LossMode, n_classes: usize) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            check_supervision(ex, mode, n_classes).map_err(|message| Error::DataValidation {
                line: i + 1,
                message,
            })?;
        }
        Ok(Batch { examples, mode })
    }
}

pub(crate) fn check_supervision(ex: &Example, mode: LossMode, n_classes: usize) -> std::result::Result<(), String> {
    match mode {
        LossMode::Kd => match ex.teacher_probs() {
            None => Err("distillation example without teacher probabilities".into()),
            Some(p) if p.len() != n_classes => {
                Err(format!("teacher distribution has {} classes, model {n_classes}", p.len()))
            }
            Some(_) => Ok(()),
        },
        LossMode::Ft => match ex.label() {
            None => Err("fine-tuning example without a label".into()),
            Some(l) if l >= n_classes => Err(format!("label {l} out of range for {n_classes} classes")),
            Some(_) => Ok(()),
        },
    }
}

/// Gradients plus batch statistics.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub gradients: Gradients,
    /// Mean loss over the batch.
    pub loss: f64,
    /// Examples whose argmax matches the target's argmax.
    pub correct: usize,
}

/// Mean-over-batch gradients. `temperature` softens the student's softmax
/// in distillation; fine-tuning always uses 1.
pub fn backward(model: &DanModel, batch: &Batch<'_>, temperature: f64, parallel: bool) -> Result<BatchOutput> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let n = batch.examples.len();
    if n == 0 {
        return Ok(BatchOutput {
            gradients: Gradients::zeros_like(model),
            loss: 0.0,
            correct: 0,
        });
    }
    let scale = 1.0 / n as f64;
    let chunk = n.div_ceil(MAX_CHUNKS.min(n));
    let run = |examples: &[&Example]| -> Result<(Gradients, f64, usize)> {
        let mut g = Gradients::zeros_like(model);
        let mut loss = 0.0;
        let mut correct = 0;
        for ex in examples {
            let (l, c) = accumulate(model, ex, batch.mode, temperature, scale, &mut g)?;
            loss += l;
            correct += c as usize;
        }
        Ok((g, loss, correct))
    };
    let partials: Vec<(Gradients, f64, usize)> = if parallel {
        batch.examples.par_chunks(chunk).map(run).collect::<Result<_>>()?
    } else {
        batch.examples.chunks(chunk).map(run).collect::<Result<_>>()?
    };
    let mut parts = partials.into_iter();
    let (mut gradients, mut loss, mut correct) = parts.next().expect("non-empty batch");
    for (g, l, c) in parts {
        gradients.add(g);
        loss += l;
        correct += c;
    }
    Ok(BatchOutput {
        gradients,
        loss: loss * scale,
        correct,
    })
}

/// Adds `scale * dLoss/dParams` of one example into `grads`; returns the
/// example's loss and whether it was predicted correctly.
fn accumulate(
    model: &DanModel,
    ex: &Example,
    mode: LossMode,
    temperature: f64,
    scale: f64,
    grads: &mut Gradients,
) -> Result<(f64, bool)> {
    let n_classes = model.n_classes();
    check_supervision(ex, mode, n_classes).map_err(Error::structural)?;
    let trace = model.forward(ex.input())?;
    let (target, t) = match mode {
        LossMode::Kd => (ex.teacher_probs().unwrap().to_vec(), temperature),
        LossMode::Ft => (crate::optim::loss::one_hot(ex.label().unwrap(), n_classes), 1.0),
    };
    let student = if t == 1.0 {
        trace.probs.clone()
    } else {
        softmax(&trace.logits.iter().map(|z| z / t).collect::<Vec<_>>())
    };
    let loss = kd_loss(&target, &student)?;
    let correct = argmax(&trace.probs) == argmax(&target);

    let dlogits: Vec<f64> = student
        .iter()
        .zip(&target)
        .map(|(s, y)| scale * (s - y) / t)
        .collect();
    let dpooled = backprop_head(model, &trace, dlogits, grads);
    let de = model.embed_dim();
    let sides: Vec<&[u32]> = match ex {
        Example::Single(e) => vec![&e.ids],
        Example::Pair(p) => vec![&p.left.ids, &p.right.ids],
    };
    if sides.len() == 1 {
        backprop_pool(model, sides[0], &trace.sides[0], &dpooled, grads);
    } else {
        let (h1, h2) = (&trace.sides[0].output, &trace.sides[1].output);
        let block = |k: usize| &dpooled[k * de..(k + 1) * de];
        let (g1, g2, gprod, gabs) = (block(0), block(1), block(2), block(3));
        let mut d1 = vec![0.0; de];
        let mut d2 = vec![0.0; de];
        for i in 0..de {
            let sign = (h1[i] - h2[i]).signum() * ((h1[i] != h2[i]) as u8 as f64);
            d1[i] = g1[i] + gprod[i] * h2[i] + gabs[i] * sign;
            d2[i] = g2[i] + gprod[i] * h1[i] - gabs[i] * sign;
        }
        backprop_pool(model, sides[0], &trace.sides[0], &d1, grads);
        backprop_pool(model, sides[1], &trace.sides[1], &d2, grads);
    }
    Ok((loss, correct))
}

/// Backpropagates through the dense stack, accumulating layer gradients,
/// and returns the gradient with respect to the head input.
fn backprop_head(model: &DanModel, trace: &ForwardTrace<f64>, mut g: Vec<f64>, grads: &mut Gradients) -> Vec<f64> {
    for k in (0..model.layers.len()).rev() {
        let layer = &model.layers[k];
        let x = if k == 0 { &trace.pooled } else { &trace.activations[k - 1] };
        let out = layer.out_dim;
        {
            let dw = &mut grads.dense[2 * k];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (d, &gj) in dw[i * out..(i + 1) * out].iter_mut().zip(&g) {
                    *d += xi * gj;
                }
            }
        }
        grads.dense[2 * k + 1].iter_mut().zip(&g).for_each(|(d, gj)| *d += gj);
        let mut gx: Vec<f64> = (0..layer.in_dim)
            .map(|i| {
                layer.w[i * out..(i + 1) * out]
                    .iter()
                    .zip(&g)
                    .map(|(w, gj)| w * gj)
                    .sum()
            })
            .collect();
        if k > 0 {
            for (v, &z) in gx.iter_mut().zip(&trace.pre_activations[k - 1]) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        g = gx;
    }
    g
}

fn backprop_pool(model: &DanModel, ids: &[u32], trace: &PoolTrace<f64>, g: &[f64], grads: &mut Gradients) {
    if ids.is_empty() {
        return;
    }
    let de = model.embed_dim();
    let k = ids.len() as f64;
    match model.config().pooling {
        Pooling::Sum | Pooling::Mean => {
            let w = if model.config().pooling == Pooling::Mean { 1.0 / k } else { 1.0 };
            for &id in ids {
                grads.row(id, de).iter_mut().zip(g).for_each(|(r, gi)| *r += w * gi);
            }
        }
        Pooling::Max => {
            for &id in ids {
                grads.row(id, de);
            }
            for (d, &pos) in trace.argmax.iter().enumerate() {
                grads.row(ids[pos], de)[d] += g[d];
            }
        }
        Pooling::Attentive => backprop_attention(model, ids, trace, g, grads),
    }
}

fn backprop_attention(model: &DanModel, ids: &[u32], trace: &PoolTrace<f64>, g: &[f64], grads: &mut Gradients) {
    let att = model.attention.as_ref().expect("attentive model");
    let de = model.embed_dim();
    let da = att.dim;
    let n_layers = model.layers.len();
    let (iwg, iwh, iv) = (2 * n_layers, 2 * n_layers + 1, 2 * n_layers + 2);
    let k = ids.len() as f64;
    let a = &trace.attention;

    // d out / d a_i = g . e_i, then through the softmax.
    let da_i: Vec<f64> = ids
        .iter()
        .map(|&id| model.row(id).iter().zip(g).map(|(e, gi)| e * gi).sum())
        .collect();
    let mean_da: f64 = a.iter().zip(&da_i).map(|(ai, d)| ai * d).sum();
    let mut dquery = vec![0.0; da];
    for (pos, &id) in ids.iter().enumerate() {
        let du = a[pos] * (da_i[pos] - mean_da);
        let hidden = &trace.attention_hidden[pos * da..(pos + 1) * da];
        let dpre: Vec<f64> = hidden
            .iter()
            .zip(&att.v)
            .map(|(t, v)| du * v * (1.0 - t * t))
            .collect();
        for (dv, t) in grads.dense[iv].iter_mut().zip(hidden) {
            *dv += du * t;
        }
        let e = model.row(id);
        {
            let dwg = &mut grads.dense[iwg];
            for (r, &er) in e.iter().enumerate() {
                for (d, p) in dwg[r * da..(r + 1) * da].iter_mut().zip(&dpre) {
                    *d += er * p;
                }
            }
        }
        let row = grads.row(id, de);
        for r in 0..de {
            let back: f64 = att.wg[r * da..(r + 1) * da].iter().zip(&dpre).map(|(w, p)| w * p).sum();
            row[r] += a[pos] * g[r] + back;
        }
        dquery.iter_mut().zip(&dpre).for_each(|(q, p)| *q += p);
    }
    {
        let dwh = &mut grads.dense[iwh];
        for (r, &mr) in trace.mean.iter().enumerate() {
            for (d, q) in dwh[r * da..(r + 1) * da].iter_mut().zip(&dquery) {
                *d += mr * q;
            }
        }
    }
    let dmean: Vec<f64> = (0..de)
        .map(|r| att.wh[r * da..(r + 1) * da].iter().zip(&dquery).map(|(w, q)| w * q).sum::<f64>() / k)
        .collect();
    for &id in ids {
        grads.row(id, de).iter_mut().zip(&dmean).for_each(|(r, d)| *r += d);
    }
}
