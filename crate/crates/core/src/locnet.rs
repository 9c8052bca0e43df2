//! Polar cluster grid over the target sector and the small fully connected
//! network that reconstructs every cluster's SINR from one observed cluster.
//!
//! UEs are placed on the grid by matching their average SINR against the
//! reconstructed cluster values.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{antenna_gain, AntennaConfig};
use crate::rng::{self, tags};

const DIV_TOL: f64 = 1e-9;

/// Polar tiling of a sector: `n_radial` rings by `n_angular` wedges.
/// Angles are offsets from the sector boresight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGrid {
    pub span_deg: f64,
    pub radius_km: f64,
    pub radial_res_km: f64,
    pub angular_res_deg: f64,
    pub n_radial: usize,
    pub n_angular: usize,
}

fn whole_ratio(a: f64, b: f64, what: &str) -> Result<usize> {
    let r = a / b;
    if (r - r.round()).abs() > DIV_TOL * r.max(1.0) || r.round() < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "{what} {a} is not a whole multiple of the resolution {b}"
        )));
    }
    Ok(r.round() as usize)
}

pub fn build_clusters(
    span_deg: f64,
    radius_km: f64,
    radial_res_km: f64,
    angular_res_deg: f64,
) -> Result<ClusterGrid> {
    if !(radial_res_km > 0.0 && angular_res_deg > 0.0 && radius_km > 0.0 && span_deg > 0.0) {
        return Err(Error::InvalidConfig(
            "cluster extents and resolutions must be > 0".into(),
        ));
    }
    Ok(ClusterGrid {
        span_deg,
        radius_km,
        radial_res_km,
        angular_res_deg,
        n_radial: whole_ratio(radius_km, radial_res_km, "radius")?,
        n_angular: whole_ratio(span_deg, angular_res_deg, "span")?,
    })
}

impl ClusterGrid {
    pub fn n_clusters(&self) -> usize {
        self.n_radial * self.n_angular
    }

    /// Cluster containing `(range, offset)`, or `None` outside the sector.
    /// Points on an outer boundary belong to the last bin.
    pub fn cluster_of(&self, range_km: f64, offset_deg: f64) -> Option<usize> {
        let half = self.span_deg / 2.0;
        if !(0.0..=self.radius_km + DIV_TOL).contains(&range_km)
            || !(-half - DIV_TOL..=half + DIV_TOL).contains(&offset_deg)
        {
            return None;
        }
        let ir = ((range_km / self.radial_res_km).floor() as usize).min(self.n_radial - 1);
        let ia = (((offset_deg + half).max(0.0) / self.angular_res_deg).floor() as usize)
            .min(self.n_angular - 1);
        Some(ir * self.n_angular + ia)
    }

    /// `(range_km, offset_deg)` of the cluster centre.
    pub fn centre(&self, k: usize) -> (f64, f64) {
        let ir = k / self.n_angular;
        let ia = k % self.n_angular;
        (
            (ir as f64 + 0.5) * self.radial_res_km,
            -self.span_deg / 2.0 + (ia as f64 + 0.5) * self.angular_res_deg,
        )
    }

    /// `(r0, r1, a0, a1)` bounds of cluster `k`.
    pub fn bounds(&self, k: usize) -> (f64, f64, f64, f64) {
        let ir = k / self.n_angular;
        let ia = k % self.n_angular;
        let a0 = -self.span_deg / 2.0 + ia as f64 * self.angular_res_deg;
        (
            ir as f64 * self.radial_res_km,
            (ir + 1) as f64 * self.radial_res_km,
            a0,
            a0 + self.angular_res_deg,
        )
    }
}

fn elevation_deg(range_km: f64, height_diff_m: f64) -> f64 {
    (height_diff_m / (range_km * 1000.0)).atan().to_degrees()
}

/// Mean over clusters of the perimeter-averaged `|A(edge) - A(centre)|`
/// (dB) under `config`. Perimeter points at zero range are skipped.
pub fn cluster_quantization_loss(
    grid: &ClusterGrid,
    config: &AntennaConfig,
    height_diff_m: f64,
) -> Result<f64> {
    const PER_SIDE: usize = 32;
    let mut total = 0.0;
    for k in 0..grid.n_clusters() {
        let (rc, ac) = grid.centre(k);
        let gc = antenna_gain(ac, elevation_deg(rc, height_diff_m), config)?;
        let (r0, r1, a0, a1) = grid.bounds(k);
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..=PER_SIDE {
            let t = i as f64 / PER_SIDE as f64;
            let a = a0 + t * (a1 - a0);
            let r = r0 + t * (r1 - r0);
            for (pr, pa) in [(r0, a), (r1, a), (r, a0), (r, a1)] {
                if pr <= 0.0 {
                    continue;
                }
                let g = antenna_gain(pa, elevation_deg(pr, height_diff_m), config)?;
                sum += (g - gc).abs();
                n += 1;
            }
        }
        total += if n == 0 { 0.0 } else { sum / n as f64 };
    }
    Ok(total / grid.n_clusters() as f64)
}

/// Fully connected layer; `w` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                self.b[o]
                    + self.w[o * self.n_in..(o + 1) * self.n_in]
                        .iter()
                        .zip(x)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Affine standardization shared by input and outputs (all are SINRs in dB).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// `1 -> N/4 -> N/2 -> N`, rectifier on both hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNet {
    pub layers: Vec<Dense>,
    pub scaling: Scaling,
}

pub struct Activations {
    /// Layer inputs: `a[0]` is the network input, `a[i]` the post-activation
    /// output of layer `i - 1`.
    pub a: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pub z: Vec<Vec<f64>>,
}

impl ClusterNet {
    pub fn zeros(n_clusters: usize) -> Result<Self> {
        if n_clusters < 4 || n_clusters % 4 != 0 {
            return Err(Error::InvalidConfig(
                "cluster count must be a positive multiple of 4".into(),
            ));
        }
        let sizes = [1, n_clusters / 4, n_clusters / 2, n_clusters];
        Ok(Self {
            layers: sizes.windows(2).map(|s| Dense::zeros(s[0], s[1])).collect(),
            scaling: Scaling::default(),
        })
    }

    /// Uniform `[-r, r]` weights with `r = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn xavier<R: Rng + ?Sized>(n_clusters: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(n_clusters)?;
        for l in &mut net.layers {
            let r = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            l.w.iter_mut().for_each(|w| *w = rng.random_range(-r..=r));
        }
        Ok(net)
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn activations(&self, x: &[f64]) -> Activations {
        let last = self.layers.len() - 1;
        let mut a = vec![x.to_vec()];
        let mut z = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let zi = l.apply(a.last().expect("input present"));
            let ai = if i == last {
                zi.clone()
            } else {
                zi.iter().map(|v| v.max(0.0)).collect()
            };
            z.push(zi);
            a.push(ai);
        }
        Activations { a, z }
    }

    /// Forward pass in standardized units.
    pub fn forward_raw(&self, x: f64) -> Vec<f64> {
        self.activations(&[x]).a.pop().expect("output present")
    }

    /// Predicted cluster values (dB) from one observed cluster value (dB).
    pub fn forward(&self, value_db: f64) -> Result<Vec<f64>> {
        if !value_db.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        let s = self.scaling;
        Ok(self
            .forward_raw((value_db - s.mean) / s.std)
            .into_iter()
            .map(|o| o * s.std + s.mean)
            .collect())
    }

    /// Flat view of all parameters, layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = p[i];
                i += 1;
            }
        }
        Ok(())
    }
}

/// Mean squared error over samples and outputs, in standardized units.
pub fn mse(net: &ClusterNet, xs: &[f64], ys: &[Vec<f64>]) -> f64 {
    let n = net.n_outputs() as f64;
    xs.iter()
        .zip(ys)
        .map(|(&x, y)| {
            net.forward_raw(x)
                .iter()
                .zip(y)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / n
        })
        .sum::<f64>()
        / xs.len() as f64
}

/// Loss and its gradient with respect to [`ClusterNet::params`].
pub fn backprop(net: &ClusterNet, xs: &[f64], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let n_out = net.n_outputs() as f64;
    let n = xs.len() as f64;
    let mut grads: Vec<Dense> = net.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect();
    let mut loss = 0.0;
    for (&x, y) in xs.iter().zip(ys) {
        let act = net.activations(&[x]);
        let out = act.a.last().expect("output present");
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(o, t)| {
                loss += (o - t) * (o - t) / n_out / n;
                2.0 * (o - t) / n_out / n
            })
            .collect();
        for i in (0..net.layers.len()).rev() {
            let l = &net.layers[i];
            let g = &mut grads[i];
            let input = &act.a[i];
            for o in 0..l.n_out {
                g.b[o] += delta[o];
                for j in 0..l.n_in {
                    g.w[o * l.n_in + j] += delta[o] * input[j];
                }
            }
            if i > 0 {
                let zprev = &act.z[i - 1];
                delta = (0..l.n_in)
                    .map(|j| {
                        if zprev[j] <= 0.0 {
                            return 0.0;
                        }
                        (0..l.n_out).map(|o| l.w[o * l.n_in + j] * delta[o]).sum()
                    })
                    .collect();
            }
        }
    }
    let flat = grads
        .iter()
        .flat_map(|l| l.w.iter().chain(&l.b).copied())
        .collect();
    (loss, flat)
}

/// Full cluster vectors; the network input is entry `input_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub input_index: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.vectors.first().ok_or(Error::Empty("training set"))?.len();
        if self.input_index >= n {
            return Err(Error::OutOfRange {
                what: "input cluster",
                index: self.input_index as u64,
                limit: n as u64,
            });
        }
        for v in &self.vectors {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("training sample"));
            }
        }
        Ok(())
    }

    pub fn n_clusters(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Rows of `(input, label_0 .. label_{N-1})`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.vectors
            .iter()
            .map(|v| std::iter::once(v[self.input_index]).chain(v.iter().copied()).collect())
            .collect()
    }

    pub fn from_rows(input_index: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(rows.len());
        for r in rows {
            let (x, label) = r.split_first().ok_or(Error::Empty("training row"))?;
            if label.get(input_index) != Some(x) {
                return Err(Error::InvalidConfig(
                    "input column disagrees with its label column".into(),
                ));
            }
            vectors.push(label.to_vec());
        }
        let set = Self {
            input_index,
            vectors,
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetHyper {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop when the training loss improved by less than `plateau_tol`
    /// (relative) over the last `plateau_window` epochs.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for NetHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_epochs: 5000,
            plateau_window: 200,
            plateau_tol: 1e-4,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub net: ClusterNet,
    pub train_loss: f64,
    pub test_loss: f64,
    pub epochs: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Full-batch gradient descent on the mean squared error. Inputs and labels
/// are standardized with the training inputs' mean and deviation.
pub fn train_net(data: &TrainingSet, hyper: &NetHyper) -> Result<TrainedNet> {
    data.validate()?;
    let n_clusters = data.n_clusters();
    let mut order: Vec<usize> = (0..data.vectors.len()).collect();
    let mut r = rng::stream(hyper.seed, tags::LOCNET_INIT);
    order.shuffle(&mut r);
    let n = order.len();
    let n_test = if n >= 2 {
        ((hyper.test_fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (test_idx, train_idx) = order.split_at(n_test);

    let xs_raw: Vec<f64> = train_idx
        .iter()
        .map(|&i| data.vectors[i][data.input_index])
        .collect();
    let mean = xs_raw.iter().sum::<f64>() / xs_raw.len() as f64;
    let var = xs_raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs_raw.len() as f64;
    let std = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
    let scaling = Scaling { mean, std };
    let prep = |idx: &[usize]| -> (Vec<f64>, Vec<Vec<f64>>) {
        idx.iter()
            .map(|&i| {
                let v = &data.vectors[i];
                (
                    (v[data.input_index] - mean) / std,
                    v.iter().map(|y| (y - mean) / std).collect(),
                )
            })
            .unzip()
    };
    let (xs, ys) = prep(train_idx);
    let (xt, yt) = prep(test_idx);

    let mut net = ClusterNet::xavier(n_clusters, &mut r)?;
    net.scaling = scaling;
    let mut params = net.params();
    let mut history: Vec<f64> = Vec::new();
    let mut epochs = 0;
    for epoch in 0..hyper.max_epochs {
        let (loss, grad) = backprop(&net, &xs, &ys);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step: epoch });
        }
        history.push(loss);
        if history.len() > hyper.plateau_window {
            let old = history[history.len() - 1 - hyper.plateau_window];
            if old - loss < hyper.plateau_tol * old.max(1e-12) {
                break;
            }
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= hyper.learning_rate * g;
        }
        net.set_params(&params)?;
        epochs = epoch + 1;
    }
    let train_loss = mse(&net, &xs, &ys);
    if !train_loss.is_finite() {
        return Err(Error::TrainingDiverged { step: epochs });
    }
    let test_loss = if xt.is_empty() {
        train_loss
    } else {
        mse(&net, &xt, &yt)
    };
    Ok(TrainedNet {
        net,
        train_loss,
        test_loss,
        epochs,
        n_train: xs.len(),
        n_test: xt.len(),
    })
}

/// Nearest cluster value; ties go to the lowest index.
pub fn assign_ue(avg_sinr_db: f64, cluster_values: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in cluster_values.iter().enumerate() {
        let d = (avg_sinr_db - v).abs();
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    best.map(|b| b.0).ok_or(Error::Empty("cluster values"))
}

/// Elementwise mean of the offline cluster vectors.
pub fn fingerprint_baseline(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::Empty("offline cluster vectors"))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::LengthMismatch {
                expected: acc.len(),
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    Ok(acc.into_iter().map(|a| a / vectors.len() as f64).collect())
}

pub fn localization_accuracy(assigned: &[usize], truth: &[usize]) -> Result<f64> {
    if assigned.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: assigned.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("assignments"));
    }
    let hits = assigned.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn rel_err(a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        let m = a.abs().max(b.abs());
        if m < 1e-10 {
            d
        } else {
            d / m
        }
    }

    #[test]
    fn default_grid() {
        let g = build_clusters(120.0, 0.5, 0.1, 30.0).unwrap();
        assert_eq!((g.n_radial, g.n_angular, g.n_clusters()), (5, 4, 20));
        let g = build_clusters(120.0, 0.5, 0.5, 120.0).unwrap();
        assert_eq!(g.n_clusters(), 1);
        assert!(build_clusters(120.0, 0.5, 0.3, 30.0).is_err());
        assert!(build_clusters(120.0, 0.5, 0.1, 50.0).is_err());
        assert!(build_clusters(120.0, 0.5, 0.0, 30.0).is_err());
    }

    #[test]
    fn every_point_has_one_cluster() {
        let g = build_clusters(120.0, 0.5, 0.1, 30.0).unwrap();
        let mut r = rng::stream(0, 9);
        for _ in 0..5000 {
            let rr = r.random_range(0.0..=0.5);
            let a = r.random_range(-60.0..=60.0);
            // Oracle: scan all bins for containment with half-open intervals,
            // closing the outermost edges.
            let hits: Vec<usize> = (0..g.n_clusters())
                .filter(|&k| {
                    let (r0, r1, a0, a1) = g.bounds(k);
                    let in_r = rr >= r0 && (rr < r1 || (r1 >= 0.5 - 1e-12 && rr <= r1));
                    let in_a = a >= a0 && (a < a1 || (a1 >= 60.0 - 1e-12 && a <= a1));
                    in_r && in_a
                })
                .collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(g.cluster_of(rr, a), Some(hits[0]));
        }
        assert_eq!(g.cluster_of(0.6, 0.0), None);
        assert_eq!(g.cluster_of(0.2, 61.0), None);
    }

    #[test]
    fn forward_examples() {
        let net = ClusterNet::zeros(20).unwrap();
        assert_eq!(net.forward_raw(3.0), vec![0.0; 20]);
        let mut net = ClusterNet::zeros(8).unwrap();
        let b: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        net.layers[2].b = b.clone();
        assert_eq!(net.forward_raw(-1.7), b);
        assert_eq!(net.forward(f64::NAN), Err(Error::NonFinite("network input")));
        assert!(ClusterNet::zeros(10).is_err());
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mut r = rng::stream(1, 1);
        let net = ClusterNet::xavier(20, &mut r).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.9, 2.5] {
            // Nested-loop reference with explicit matrices.
            let mut h = vec![x];
            for (li, l) in net.layers.iter().enumerate() {
                let mut out = vec![0.0; l.n_out];
                for o in 0..l.n_out {
                    let mut acc = l.b[o];
                    for j in 0..l.n_in {
                        acc += l.w[o * l.n_in + j] * h[j];
                    }
                    out[o] = if li < 2 { acc.max(0.0) } else { acc };
                }
                h = out;
            }
            let got = net.forward_raw(x);
            for (a, b) in got.iter().zip(&h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut r = rng::stream(seed, 2);
            let mut net = ClusterNet::xavier(8, &mut r).unwrap();
            for l in &mut net.layers {
                l.b.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
            }
            let xs = vec![-1.1, 0.35, 0.8, 1.9];
            let ys: Vec<Vec<f64>> = xs
                .iter()
                .map(|_| (0..8).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect();
            let (_, g) = backprop(&net, &xs, &ys);
            let p = net.params();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] += h;
                let mut n1 = net.clone();
                n1.set_params(&q).unwrap();
                q[i] -= 2.0 * h;
                let mut n2 = net.clone();
                n2.set_params(&q).unwrap();
                let fd = (mse(&n1, &xs, &ys) - mse(&n2, &xs, &ys)) / (2.0 * h);
                assert!(rel_err(g[i], fd) < 1e-4, "param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn constant_labels_are_learned() {
        let vectors: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let mut v = vec![5.0; 8];
                v[0] = i as f64 * 0.25;
                v
            })
            .collect();
        // Labels other than the input column are constant.
        let set = TrainingSet {
            input_index: 0,
            vectors,
        };
        let t = train_net(
            &set,
            &NetHyper {
                learning_rate: 5e-2,
                ..Default::default()
            },
        )
        .unwrap();
        let x = set.vectors[3][0];
        let out = t.net.forward(x).unwrap();
        let err: f64 = out[1..].iter().map(|o| (o - 5.0) * (o - 5.0)).sum::<f64>() / 7.0;
        assert!(err < 1e-3, "mse {err}");
    }

    #[test]
    fn assign_examples() {
        let v = [1.0, 4.0, 7.0, 2.0, 9.0, 3.0, 8.0, 6.0];
        assert_eq!(assign_ue(7.0, &v).unwrap(), 2);
        // 5.0 is 1 dB from clusters 1 and 7 (and from 7 dB at index 2 by 2).
        let w = [0.0, 0.0, 0.0, 4.0, 20.0, 20.0, 20.0, 6.0];
        assert_eq!(assign_ue(5.0, &w).unwrap(), 3);
        assert!(assign_ue(1.0, &[]).is_err());
    }

    #[test]
    fn noisy_sinr_within_half_gap_is_correct() {
        let v = [1.0, 4.0, 7.0, 2.5, 9.5];
        let mut sorted = v.to_vec();
        sorted.sort_by(f64::total_cmp);
        let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let mut r = rng::stream(0, 3);
        for _ in 0..1000 {
            let k = r.random_range(0..v.len());
            let noise = r.random_range(-0.499..0.499) * gap;
            assert_eq!(assign_ue(v[k] + noise, &v).unwrap(), k);
        }
    }

    #[test]
    fn fingerprint_and_accuracy() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(fingerprint_baseline(&[a.clone()]).unwrap(), a);
        let b = vec![3.0, 4.0, 7.0];
        assert_eq!(fingerprint_baseline(&[a, b]).unwrap(), vec![2.0, 3.0, 5.0]);
        assert!(fingerprint_baseline(&[]).is_err());
        assert_eq!(localization_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(localization_accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(localization_accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(localization_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn quantization_loss_properties() {
        let cfg = AntennaConfig::initial();
        // A cluster collapsed onto the site sees one elevation everywhere.
        let g = build_clusters(1e-9, 1e-9, 1e-9, 1e-9).unwrap();
        assert!(cluster_quantization_loss(&g, &cfg, 30.5).unwrap() < 1e-6);
        let coarse = build_clusters(120.0, 0.5, 0.1, 30.0).unwrap();
        let fine = build_clusters(120.0, 0.5, 0.05, 15.0).unwrap();
        let lc = cluster_quantization_loss(&coarse, &cfg, 30.5).unwrap();
        let lf = cluster_quantization_loss(&fine, &cfg, 30.5).unwrap();
        assert!(lf <= lc);
    }

    #[test]
    fn training_rows_round_trip() {
        let set = TrainingSet {
            input_index: 2,
            vectors: vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]],
        };
        let rows = set.rows();
        assert_eq!(rows[0], vec![3.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(TrainingSet::from_rows(2, &rows).unwrap(), set);
    }

    proptest! {
        #[test]
        fn hidden_activations_nonnegative(seed in any::<u64>(), x in -5.0f64..5.0) {
            let mut r = rng::stream(seed, 4);
            let net = ClusterNet::xavier(20, &mut r).unwrap();
            let act = net.activations(&[x]);
            prop_assert_eq!(act.a.last().unwrap().len(), 20);
            for h in &act.a[1..3] {
                prop_assert!(h.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn assignment_shift_invariant(v in proptest::collection::vec(-10.0f64..20.0, 2..20),
                                      s in -10.0f64..20.0, c in -5i32..5) {
            // Integer shifts keep the arithmetic exact enough for tie cases.
            let c = c as f64;
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert_eq!(assign_ue(s, &v).unwrap(), assign_ue(s + c, &shifted).unwrap());
        }
    }
}
