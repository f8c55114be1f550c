//! Full-batch gradient descent on a one-hidden-layer template.
//!
//! The template has `size` hidden ReLU units fed by every input, and each
//! output reads the inputs and all hidden units. After descent the read-out
//! layer is refit exactly by least squares on the learned hidden features.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{Affine, Edge, ReluNetwork, Source};
use crate::error::{Error, Result};
use crate::lstsq::SpanDecomposition;
use crate::population::{mse, Population};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnTrainConfig {
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub refit_output: bool,
}

impl Default for NnTrainConfig {
    fn default() -> Self {
        NnTrainConfig {
            steps: 5000,
            step_size: 1e-2,
            restarts: 4,
            refit_output: true,
        }
    }
}

#[derive(Clone)]
struct Params {
    w: DMatrix<f64>,
    b: DVector<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl Params {
    fn is_finite(&self) -> bool {
        [&self.w, &self.v, &self.a]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
            && self.b.iter().chain(self.c.iter()).all(|x| x.is_finite())
    }

    fn to_network(&self) -> Result<ReluNetwork> {
        let (h, dx) = (self.w.nrows(), self.w.ncols());
        let nodes = (0..h)
            .map(|j| Affine {
                edges: (0..dx)
                    .map(|c| Edge {
                        from: Source::Input(c),
                        weight: self.w[(j, c)],
                    })
                    .collect(),
                bias: self.b[j],
            })
            .collect();
        let outputs = (0..self.c.len())
            .map(|o| Affine {
                edges: (0..dx)
                    .map(|c| Edge {
                        from: Source::Input(c),
                        weight: self.a[(o, c)],
                    })
                    .chain((0..h).map(|j| Edge {
                        from: Source::Node(j),
                        weight: self.v[(o, j)],
                    }))
                    .collect(),
                bias: self.c[o],
            })
            .collect();
        ReluNetwork::new(dx, nodes, outputs)
    }
}

struct Data {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    w: Vec<f64>,
}

fn hidden(p: &Params, data: &Data) -> DMatrix<f64> {
    let mut z = &data.x * p.w.transpose();
    for mut row in z.row_iter_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v + p.b[k]).max(0.0);
        }
    }
    z
}

fn step(p: &mut Params, data: &Data, lr: f64) {
    let h = hidden(p, data);
    let mut out = &h * p.v.transpose() + &data.x * p.a.transpose();
    for mut row in out.row_iter_mut() {
        row += p.c.transpose();
    }
    // rows of r carry 2·w_i·(f(x_i) − y_i)
    let mut r = out - &data.y;
    for (i, mut row) in r.row_iter_mut().enumerate() {
        row *= 2.0 * data.w[i];
    }
    let mut dz = &r * &p.v;
    for (dz_ij, h_ij) in dz.iter_mut().zip(h.iter()) {
        if *h_ij <= 0.0 {
            *dz_ij = 0.0;
        }
    }
    let gv = r.transpose() * &h;
    let ga = r.transpose() * &data.x;
    let gc: DVector<f64> = r.row_sum().transpose();
    let gw = dz.transpose() * &data.x;
    let gb: DVector<f64> = dz.row_sum().transpose();
    p.v -= lr * gv;
    p.a -= lr * ga;
    p.c -= lr * gc;
    p.w -= lr * gw;
    p.b -= lr * gb;
}

/// Exact least-squares read-out on features `[1, x, h(x)]`.
fn refit(p: &mut Params, data: &Data) {
    let h = hidden(p, data);
    let (n, dx, hh) = (data.x.nrows(), data.x.ncols(), h.ncols());
    let k = 1 + dx + hh;
    let phi = DMatrix::from_fn(n, k, |i, j| match j {
        0 => 1.0,
        j if j <= dx => data.x[(i, j - 1)],
        j => h[(i, j - 1 - dx)],
    });
    let mut wphi = phi.clone();
    for (i, mut row) in wphi.row_iter_mut().enumerate() {
        row *= data.w[i];
    }
    let span = SpanDecomposition::new(phi.transpose() * &wphi);
    for o in 0..data.y.ncols() {
        let beta = span.solve(&(wphi.transpose() * data.y.column(o)));
        p.c[o] = beta[0];
        for c in 0..dx {
            p.a[(o, c)] = beta[1 + c];
        }
        for j in 0..hh {
            p.v[(o, j)] = beta[1 + dx + j];
        }
    }
}

fn train_once(
    pop: &Population,
    data: &Data,
    size: usize,
    seed: u64,
    config: &NnTrainConfig,
) -> Result<(ReluNetwork, f64)> {
    let (dx, dy) = (pop.feature_dim(), pop.label_dim());
    let mut rng = rng_for(seed, &[]);
    let scale_in = 1.0 / (dx.max(1) as f64).sqrt();
    let scale_out = 1.0 / (size as f64).sqrt();
    let mut mean = DVector::zeros(dy);
    for (i, row) in data.y.row_iter().enumerate() {
        mean += data.w[i] * row.transpose();
    }
    let mut p = Params {
        w: DMatrix::from_fn(size, dx, |_, _| rng.gen_range(-1.0..1.0) * scale_in),
        b: DVector::from_fn(size, |_, _| rng.gen_range(-0.5..0.5)),
        v: DMatrix::from_fn(dy, size, |_, _| rng.gen_range(-1.0..1.0) * scale_out),
        a: DMatrix::zeros(dy, dx),
        c: mean,
    };
    for _ in 0..config.steps {
        let prev = p.clone();
        step(&mut p, data, config.step_size);
        if !p.is_finite() {
            p = prev;
            break;
        }
    }
    let net = p.to_network()?;
    let risk = mse(&net.compile(pop)?, pop)?;
    if config.refit_output {
        let mut q = p.clone();
        refit(&mut q, data);
        if q.is_finite() {
            let refit_net = q.to_network()?;
            let refit_risk = mse(&refit_net.compile(pop)?, pop)?;
            if refit_risk <= risk {
                return Ok((refit_net, refit_risk));
            }
        }
    }
    Ok((net, risk))
}

/// Best of `config.restarts` seeded runs with `size` hidden units; returns the
/// network and its risk on `pop`. No optimality is claimed.
pub fn train_nn(
    pop: &Population,
    size: usize,
    seed: u64,
    config: &NnTrainConfig,
) -> Result<(ReluNetwork, f64)> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "size budget must be at least 1".into(),
        ));
    }
    if !(config.step_size.is_finite() && config.step_size > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size {} must be positive",
            config.step_size
        )));
    }
    let pts = pop.points();
    let data = Data {
        x: DMatrix::from_fn(pts.len(), pop.feature_dim(), |i, c| pts[i].x[c]),
        y: DMatrix::from_fn(pts.len(), pop.label_dim(), |i, c| pts[i].y[c]),
        w: pts.iter().map(|p| p.w).collect(),
    };
    let runs: Vec<(ReluNetwork, f64)> = (0..config.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            train_once(
                pop,
                &data,
                size,
                crate::seed::derive_seed(seed, &[r]),
                config,
            )
        })
        .collect::<Result<_>>()?;
    // first strictly better run wins, so ties resolve to the lowest restart
    let mut best = None;
    for (net, risk) in runs {
        if best.as_ref().is_none_or(|(_, r)| risk < *r) {
            best = Some((net, risk));
        }
    }
    Ok(best.expect("at least one restart"))
}
