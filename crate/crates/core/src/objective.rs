//! Training objective: asymmetric multi-label loss plus a normalized
//! orthogonality penalty on each class's prototypes, with exact gradients
//! for prototypes, head weights and biases.
//!
//! Embeddings come from a frozen backbone and are treated as constants.

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::par;
use crate::protonet::{dot, norm, pooled_with_units, sigmoid, unit_cells, PrototypeBank, MIN_PROTOTYPE_NORM};

/// Confidences are clamped to `[CONF_CLAMP, 1 - CONF_CLAMP]` before the log.
pub const CONF_CLAMP: f64 = 1e-7;

/// Instances per gradient chunk; fixed so reductions do not depend on thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub clip_m: f64,
    pub lambda1: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 2.0,
            clip_m: 0.05,
            lambda1: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_pos >= 0.0 && self.gamma_neg >= 0.0 && self.lambda1 >= 0.0) {
            return Err(Error::Config("gamma_pos, gamma_neg and lambda1 must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.clip_m) {
            return Err(Error::Config("clip_m must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Loss of one confidence/label pair and its derivative with respect to the logit.
pub fn asym_element(p: f64, y: bool, cfg: &LossConfig) -> (f64, f64) {
    let clamped = p.clamp(CONF_CLAMP, 1.0 - CONF_CLAMP);
    let live = clamped == p;
    if y {
        let q = 1.0 - clamped;
        let focus = q.powf(cfg.gamma_pos);
        let loss = -focus * clamped.ln();
        let grad = if live {
            focus * (cfg.gamma_pos * clamped * clamped.ln() - q)
        } else {
            0.0
        };
        (loss, grad)
    } else {
        let pm = (clamped - cfg.clip_m).max(0.0);
        if pm <= 0.0 {
            return (0.0, 0.0);
        }
        let log_term = -(1.0 - pm).ln();
        let loss = pm.powf(cfg.gamma_neg) * log_term;
        if !live {
            return (loss, 0.0);
        }
        let mut dl_dpm = pm.powf(cfg.gamma_neg) / (1.0 - pm);
        if cfg.gamma_neg != 0.0 {
            dl_dpm += cfg.gamma_neg * pm.powf(cfg.gamma_neg - 1.0) * log_term;
        }
        (loss, dl_dpm * clamped * (1.0 - clamped))
    }
}

/// Mean asymmetric loss over an `N × C` table and its gradient with respect to the logits.
pub fn asym_loss(conf: &[f64], labels: &[bool], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if conf.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} confidences vs {} labels",
            conf.len(),
            labels.len()
        )));
    }
    if conf.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scale = 1.0 / conf.len() as f64;
    let mut total = 0.0;
    let grad = conf
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (l, g) = asym_element(p, y, cfg);
            total += l;
            g * scale
        })
        .collect();
    Ok((total * scale, grad))
}

/// `1/(C·J²) Σ_c ‖P̃ᶜ P̃ᶜᵀ − I‖²_F` and its gradient with respect to the raw prototypes.
pub fn ortho_loss(bank: &PrototypeBank) -> Result<(f64, Vec<f64>)> {
    let (c, j, d) = (bank.num_classes, bank.per_class, bank.dim);
    let scale = 1.0 / (c * j * j) as f64;
    let mut grad = vec![0.0; bank.prototypes.len()];
    let mut total = 0.0;
    for class in 0..c {
        let mut units = Vec::with_capacity(j * d);
        let mut norms = Vec::with_capacity(j);
        for k in 0..j {
            let p = bank.prototype(class, k);
            let n = norm(p);
            if n < MIN_PROTOTYPE_NORM {
                return Err(Error::ZeroPrototype { class, index: k });
            }
            norms.push(n);
            units.extend(p.iter().map(|x| x / n));
        }
        let unit = |k: usize| &units[k * d..(k + 1) * d];
        // residual = G - I
        let mut residual = vec![0.0; j * j];
        for a in 0..j {
            for b in 0..j {
                let g = dot(unit(a), unit(b)) - if a == b { 1.0 } else { 0.0 };
                residual[a * j + b] = g;
                total += g * g;
            }
        }
        for a in 0..j {
            // dL/dp̃_a = 4 Σ_b R_ab p̃_b
            let mut du = vec![0.0; d];
            for b in 0..j {
                let r = 4.0 * residual[a * j + b] * scale;
                du.iter_mut().zip(unit(b)).for_each(|(g, u)| *g += r * u);
            }
            // project out the radial component: (I − p̃p̃ᵀ) du / ‖p‖
            let ua = unit(a);
            let radial = dot(&du, ua);
            let base = (class * j + a) * d;
            for i in 0..d {
                grad[base + i] = (du[i] - radial * ua[i]) / norms[a];
            }
        }
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub asym: f64,
    pub ortho: f64,
    pub total: f64,
    /// `[C][J][D]`
    pub grad_prototypes: Vec<f64>,
    /// `[C][J]`
    pub grad_weights: Vec<f64>,
    /// `[C]`
    pub grad_bias: Vec<f64>,
}

impl LossReport {
    pub fn grad_norm(&self) -> f64 {
        self.grad_prototypes
            .iter()
            .chain(&self.grad_weights)
            .chain(&self.grad_bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

struct Partial {
    loss: f64,
    gp: Vec<f64>,
    gw: Vec<f64>,
    gb: Vec<f64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.loss += other.loss;
        add_into(&mut self.gp, &other.gp);
        add_into(&mut self.gw, &other.gw);
        add_into(&mut self.gb, &other.gb);
        self
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Total loss `asym + λ₁·ortho` over a batch with gradients.
///
/// `labels` is `N × C` row-major. Classification gradients reach a prototype
/// only through the argmax cell of its similarity map in each instance.
pub fn total_loss_and_grads(
    batch: &[&EmbeddingMap],
    labels: &[bool],
    bank: &PrototypeBank,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let (c, j, d) = (bank.num_classes, bank.per_class, bank.dim);
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n * c {
        return Err(Error::Shape(format!("labels must be {n}x{c}")));
    }
    if let Some(z) = batch.iter().find(|z| z.d != d) {
        return Err(Error::Shape(format!("embedding depth {} vs prototype dim {d}", z.d)));
    }
    bank.check_norms()?;
    let units = bank.unit_prototypes();
    let norms: Vec<f64> = bank.prototypes.chunks_exact(d).map(norm).collect();
    let scale = 1.0 / (n * c) as f64;

    let chunks = n.div_ceil(GRAD_CHUNK);
    let partials = par::map_range(chunks, |ci| {
        let mut part = Partial {
            loss: 0.0,
            gp: vec![0.0; c * j * d],
            gw: vec![0.0; c * j],
            gb: vec![0.0; c],
        };
        for idx in ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(n) {
            let z = batch[idx];
            let cells = unit_cells(z);
            let pooled = pooled_with_units(&cells, z.w, d, &units);
            let y = &labels[idx * c..(idx + 1) * c];
            for class in 0..c {
                let k0 = class * j;
                let logit: f64 = (0..j)
                    .map(|k| bank.head_weights[k0 + k] * pooled.pooled[k0 + k])
                    .sum::<f64>()
                    + bank.head_bias[class];
                let (l, g) = asym_element(sigmoid(logit), y[class], cfg);
                part.loss += l;
                let g = g * scale;
                if g == 0.0 {
                    continue;
                }
                part.gb[class] += g;
                for k in 0..j {
                    let proto = k0 + k;
                    let s = pooled.pooled[proto];
                    part.gw[proto] += g * s;
                    let (h, w) = pooled.argmax[proto];
                    let cell = &cells[(h * z.w + w) * d..(h * z.w + w + 1) * d];
                    if cell.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    // ds/dp = (z̃ − s·p̃) / ‖p‖
                    let coef = g * bank.head_weights[proto] / norms[proto];
                    let pu = &units[proto * d..(proto + 1) * d];
                    let gp = &mut part.gp[proto * d..(proto + 1) * d];
                    for i in 0..d {
                        gp[i] += coef * (cell[i] - s * pu[i]);
                    }
                }
            }
        }
        part
    });
    let summed = par::tree_reduce(partials, Partial::merge).expect("non-empty batch");
    let asym = summed.loss * scale;

    let mut grad_prototypes = summed.gp;
    let ortho = if cfg.lambda1 != 0.0 {
        let (o, og) = ortho_loss(bank)?;
        grad_prototypes
            .iter_mut()
            .zip(og)
            .for_each(|(g, o)| *g += cfg.lambda1 * o);
        o
    } else {
        ortho_loss(bank)?.0
    };
    Ok(LossReport {
        asym,
        ortho,
        total: asym + cfg.lambda1 * ortho,
        grad_prototypes,
        grad_weights: summed.gw,
        grad_bias: summed.gb,
    })
}
