//! Client distribution shifts and the synthetic base task they act on.

use std::fmt::Write as _;
use std::path::Path;

use fedot_core::{Matrix, RngStream};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::FedError;

/// Threshold separating "near-zero" pixels in the color shift.
pub const COLOR_ZETA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftSpec {
    /// `x' = diag(s) x + z`
    Affine { s: Vec<f64>, z: Vec<f64> },
    /// Per pixel: `a` if the intensity is at most `zeta`, else `intensity * b`.
    Color { a: [f64; 3], b: [f64; 3], zeta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Affine,
    Color,
}

impl ShiftSpec {
    pub fn identity_affine(d: usize) -> Self {
        ShiftSpec::Affine { s: vec![1.0; d], z: vec![0.0; d] }
    }

    /// Gray pixels replicated over the three channels.
    pub fn identity_color() -> Self {
        ShiftSpec::Color { a: [0.0; 3], b: [1.0; 3], zeta: COLOR_ZETA }
    }

    pub fn kind(&self) -> ShiftKind {
        match self {
            ShiftSpec::Affine { .. } => ShiftKind::Affine,
            ShiftSpec::Color { .. } => ShiftKind::Color,
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        match self {
            ShiftSpec::Affine { s, z } => {
                if s.len() != z.len() {
                    return Err(FedError::InvalidArgument(format!("affine shift has {} scales but {} offsets", s.len(), z.len())));
                }
                if let Some(bad) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                    return Err(FedError::InvalidArgument(format!("affine scales must be positive and finite, got {bad}")));
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(FedError::InvalidArgument("affine offset must be finite".into()));
                }
            }
            ShiftSpec::Color { a, b, zeta } => {
                if a.iter().chain(b).any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(FedError::InvalidArgument("color shift channels must lie in [0, 1]".into()));
                }
                if !(*zeta > 0.0) {
                    return Err(FedError::InvalidArgument(format!("color threshold must be positive, got {zeta}")));
                }
            }
        }
        Ok(())
    }

    /// Shifts one base feature vector (`d` entries for affine, `p` pixel
    /// intensities for color, producing `3p` channels).
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FedError> {
        match self {
            ShiftSpec::Affine { s, z } => apply_affine(x, s, z),
            ShiftSpec::Color { a, b, zeta } => {
                let mut out = Vec::with_capacity(3 * x.len());
                for &px in x {
                    out.extend_from_slice(&apply_color(px, a, b, *zeta)?);
                }
                Ok(out)
            }
        }
    }

    /// Feature dimension produced from a base dimension `d`.
    pub fn output_dim(kind: ShiftKind, d: usize) -> usize {
        match kind {
            ShiftKind::Affine => d,
            ShiftKind::Color => 3 * d,
        }
    }
}

pub fn apply_affine(x: &[f64], s: &[f64], z: &[f64]) -> Result<Vec<f64>, FedError> {
    if x.len() != s.len() || x.len() != z.len() {
        return Err(FedError::InvalidArgument(format!("affine shift of dimension {} applied to a {}-vector", s.len(), x.len())));
    }
    Ok(x.iter().zip(s).zip(z).map(|((&x, &s), &z)| s * x + z).collect())
}

/// `diag(1/s)(x' − z)`
pub fn invert_affine(xp: &[f64], s: &[f64], z: &[f64]) -> Result<Vec<f64>, FedError> {
    if xp.len() != s.len() || xp.len() != z.len() {
        return Err(FedError::InvalidArgument(format!("affine shift of dimension {} inverted on a {}-vector", s.len(), xp.len())));
    }
    Ok(xp.iter().zip(s).zip(z).map(|((&x, &s), &z)| (x - z) / s).collect())
}

pub fn apply_color(intensity: f64, a: &[f64; 3], b: &[f64; 3], zeta: f64) -> Result<[f64; 3], FedError> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(FedError::InvalidArgument(format!("pixel intensity {intensity} outside [0, 1]")));
    }
    if intensity <= zeta {
        Ok(*a)
    } else {
        Ok([intensity * b[0], intensity * b[1], intensity * b[2]])
    }
}

/// Draws one shift per client from client-indexed substreams of `stream`.
///
/// Affine: `s ~ Unif[0.5, 1.5]^d`, `z ~ N(0, sigma² I)`. Color: `a, b ~
/// Unif[0, 1]³` with threshold [`COLOR_ZETA`]; `d` and `sigma` are unused.
pub fn gen_client_shifts(n: usize, kind: ShiftKind, d: usize, sigma: f64, stream: RngStream) -> Result<Vec<ShiftSpec>, FedError> {
    if n == 0 {
        return Err(FedError::InvalidArgument("need at least one client".into()));
    }
    if !(sigma >= 0.0) {
        return Err(FedError::InvalidArgument(format!("shift scale must be nonnegative, got {sigma}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = stream.substream(i as u64).generator();
            match kind {
                ShiftKind::Affine => {
                    let s = (0..d).map(|_| 0.5 + rng.random::<f64>()).collect();
                    let z = (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                    ShiftSpec::Affine { s, z }
                }
                ShiftKind::Color => {
                    let mut draw = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                    let a = draw();
                    let b = draw();
                    ShiftSpec::Color { a, b, zeta: COLOR_ZETA }
                }
            }
        })
        .collect())
}

/// Labelled samples held by one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub client_id: usize,
}

impl ClientDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, client_id: usize) -> Result<Self, FedError> {
        if features.rows() == 0 {
            return Err(FedError::InvalidArgument(format!("client {client_id} has no samples")));
        }
        if features.rows() != labels.len() {
            return Err(FedError::InvalidArgument(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if !features.is_finite() {
            return Err(FedError::InvalidArgument(format!("client {client_id} has non-finite features")));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(FedError::InvalidArgument(format!("label {y} outside 0..{num_classes}")));
        }
        Ok(Self { features, labels, num_classes, client_id })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, j: usize) -> (&[f64], usize) {
        (self.features.row(j), self.labels[j])
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        self.labels.iter().for_each(|&y| h[y] += 1);
        h
    }

    /// CSV dump: a `d,K,m,client_id` line, then one line per sample with
    /// `d` features followed by the label.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{},{}\n", self.dim(), self.num_classes, self.len(), self.client_id);
        for j in 0..self.len() {
            let (x, y) = self.sample(j);
            for v in x {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, FedError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: String| FedError::Parse { line: line + 1, message };
        let (hl, header) = lines.next().ok_or_else(|| parse_err(0, "empty dataset file".into()))?;
        let head: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| parse_err(hl, format!("bad header field '{t}'"))))
            .collect::<Result<_, _>>()?;
        let [d, k, m, client_id] = head[..] else {
            return Err(parse_err(hl, "header must be d,K,m,client_id".into()));
        };
        let mut values = Vec::with_capacity(d * m);
        let mut labels = Vec::with_capacity(m);
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(parse_err(ln, format!("expected {} fields, found {}", d + 1, fields.len())));
            }
            for f in &fields[..d] {
                values.push(f.parse::<f64>().map_err(|_| parse_err(ln, format!("bad feature '{f}'")))?);
            }
            labels.push(fields[d].parse::<usize>().map_err(|_| parse_err(ln, format!("bad label '{}'", fields[d])))?);
        }
        if labels.len() != m {
            return Err(parse_err(hl, format!("header announces {m} samples, found {}", labels.len())));
        }
        Self::new(Matrix::from_vec(m, d, values)?, labels, k, client_id)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FedError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, FedError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Gaussian class-conditional mixture with equal class priors:
/// `x | y ~ N(class_means[y], class_cov_scale² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTaskSpec {
    pub d: usize,
    pub k: usize,
    pub class_means: Vec<Vec<f64>>,
    pub class_cov_scale: f64,
    pub n_train_per_client: usize,
    pub n_test_per_client: usize,
}

impl BaseTaskSpec {
    /// Class means `offset + separation * u_k` with `u_k` random unit
    /// directions, so every class sits away from the origin. With
    /// `offset = 0` the mixture is centred.
    pub fn synthetic(d: usize, k: usize, separation: f64, offset: f64, scale: f64, m: usize, n_test: usize, stream: RngStream) -> Result<Self, FedError> {
        let mut rng = stream.generator();
        let shift: Vec<f64> = {
            let u = unit_vector(&mut rng, d);
            u.iter().map(|v| v * offset).collect()
        };
        let class_means = (0..k)
            .map(|_| unit_vector(&mut rng, d).iter().zip(&shift).map(|(u, c)| c + separation * u).collect())
            .collect();
        let spec = Self { d, k, class_means, class_cov_scale: scale, n_train_per_client: m, n_test_per_client: n_test };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FedError> {
        if self.k < 2 {
            return Err(FedError::InvalidArgument(format!("need at least 2 classes, got {}", self.k)));
        }
        if self.d == 0 || self.n_train_per_client == 0 || self.n_test_per_client == 0 {
            return Err(FedError::InvalidArgument("dimension and per-client sample counts must be positive".into()));
        }
        if self.class_means.len() != self.k || self.class_means.iter().any(|m| m.len() != self.d) {
            return Err(FedError::InvalidArgument(format!("expected {} class means of dimension {}", self.k, self.d)));
        }
        if !(self.class_cov_scale > 0.0) {
            return Err(FedError::InvalidArgument(format!("class_cov_scale must be positive, got {}", self.class_cov_scale)));
        }
        for a in 0..self.k {
            for b in a + 1..self.k {
                if self.class_means[a] == self.class_means[b] {
                    return Err(FedError::InvalidArgument(format!("class means {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Bayes rule for equal priors and shared isotropic covariance: nearest
    /// class mean, ties to the lowest index.
    pub fn bayes_predict(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (c, mean) in self.class_means.iter().enumerate() {
            let d2: f64 = mean.iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum();
            if d2 < best.0 {
                best = (d2, c);
            }
        }
        best.1
    }

    fn draw(&self, rng: &mut impl Rng, count: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let y = rng.random_range(0..self.k);
            let x = self.class_means[y].iter().map(|&m| m + self.class_cov_scale * rng.sample::<f64, _>(StandardNormal)).collect();
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }
}

fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Shifted client data together with the unshifted draws it came from.
#[derive(Debug, Clone)]
pub struct FederatedTask {
    pub base: BaseTaskSpec,
    pub shifts: Vec<ShiftSpec>,
    pub train: Vec<ClientDataset>,
    pub test: Vec<ClientDataset>,
    /// The same samples before the client shift, in the common domain.
    pub base_train: Vec<ClientDataset>,
    pub base_test: Vec<ClientDataset>,
}

impl FederatedTask {
    pub fn num_clients(&self) -> usize {
        self.train.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.train[0].dim()
    }

    pub fn num_classes(&self) -> usize {
        self.base.k
    }
}

/// Draws each client's samples from the base mixture on its own substream
/// and applies that client's shift to the features. For color shifts the
/// base features are clamped to `[0, 1]` to form pixel intensities and the
/// unshifted copy uses [`ShiftSpec::identity_color`].
pub fn make_federated_task(base: &BaseTaskSpec, shifts: &[ShiftSpec], stream: RngStream) -> Result<FederatedTask, FedError> {
    base.validate()?;
    if shifts.is_empty() {
        return Err(FedError::InvalidArgument("need one shift per client, got none".into()));
    }
    let kind = shifts[0].kind();
    for s in shifts {
        s.validate()?;
        if s.kind() != kind {
            return Err(FedError::InvalidArgument("all clients must use the same shift family".into()));
        }
        if let ShiftSpec::Affine { s, .. } = s {
            if s.len() != base.d {
                return Err(FedError::InvalidArgument(format!("affine shift of dimension {} for a {}-dimensional task", s.len(), base.d)));
            }
        }
    }
    let reference = match kind {
        ShiftKind::Affine => ShiftSpec::identity_affine(base.d),
        ShiftKind::Color => ShiftSpec::identity_color(),
    };
    let out_dim = ShiftSpec::output_dim(kind, base.d);
    let mut task = FederatedTask {
        base: base.clone(),
        shifts: shifts.to_vec(),
        train: Vec::new(),
        test: Vec::new(),
        base_train: Vec::new(),
        base_test: Vec::new(),
    };
    for (i, shift) in shifts.iter().enumerate() {
        let mut rng = stream.substream(i as u64).generator();
        for (count, shifted_out, base_out) in [
            (base.n_train_per_client, &mut task.train, &mut task.base_train),
            (base.n_test_per_client, &mut task.test, &mut task.base_test),
        ] {
            let (mut xs, ys) = base.draw(&mut rng, count);
            if kind == ShiftKind::Color {
                xs.iter_mut().flatten().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            let mut shifted = Vec::with_capacity(count * out_dim);
            let mut plain = Vec::with_capacity(count * out_dim);
            for x in &xs {
                shifted.extend(shift.apply(x)?);
                plain.extend(reference.apply(x)?);
            }
            shifted_out.push(ClientDataset::new(Matrix::from_vec(count, out_dim, shifted)?, ys.clone(), base.k, i)?);
            base_out.push(ClientDataset::new(Matrix::from_vec(count, out_dim, plain)?, ys, base.k, i)?);
        }
    }
    Ok(task)
}

/// The realizable affine-shift benchmark: class means at distance 2 from a
/// common centre 3 away from the origin, noise 0.6, shifts with unit
/// translation scale. All draws come from `seed`.
pub fn affine_benchmark_task(n: usize, d: usize, k: usize, m: usize, n_test: usize, seed: u64) -> Result<FederatedTask, FedError> {
    let root = RngStream::new(seed, 0).named("task");
    let base = BaseTaskSpec::synthetic(d, k, 2.0, 3.0, 0.6, m, n_test, root.named("base"))?;
    let shifts = gen_client_shifts(n, ShiftKind::Affine, d, 1.0, root.named("shifts"))?;
    make_federated_task(&base, &shifts, root.named("draw"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_formula() {
        assert_eq!(apply_affine(&[1.0, 4.0], &[2.0, 0.5], &[1.0, -1.0]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(apply_affine(&[0.3, -2.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![0.3, -2.0]);
        assert!(apply_affine(&[1.0], &[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn color_rule() {
        let a = [0.2, 0.4, 0.6];
        assert_eq!(apply_color(0.0, &a, &[1.0; 3], COLOR_ZETA).unwrap(), a);
        assert_eq!(apply_color(COLOR_ZETA, &a, &[1.0; 3], COLOR_ZETA).unwrap(), a);
        assert_eq!(apply_color(0.5, &a, &[1.0, 0.5, 0.0], COLOR_ZETA).unwrap(), [0.5, 0.25, 0.0]);
        assert!(apply_color(1.5, &a, &a, COLOR_ZETA).is_err());
    }

    #[test]
    fn zero_sigma_gives_zero_offsets() {
        let shifts = gen_client_shifts(5, ShiftKind::Affine, 3, 0.0, RngStream::new(1, 0)).unwrap();
        for s in shifts {
            let ShiftSpec::Affine { z, .. } = s else { unreachable!() };
            assert!(z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = ClientDataset::new(Matrix::from_rows(&[vec![0.5, -1.25], vec![1e-9, 3.0]]).unwrap(), vec![1, 0], 2, 7).unwrap();
        assert_eq!(ClientDataset::from_csv(&ds.to_csv()).unwrap(), ds);
        assert!(ClientDataset::from_csv("2,2,3,0\n1,2,0\n").is_err());
    }

    #[test]
    fn rejects_bad_scale() {
        let mut base = BaseTaskSpec::synthetic(2, 2, 3.0, 0.0, 1.0, 4, 4, RngStream::new(0, 0)).unwrap();
        base.class_cov_scale = 0.0;
        assert!(make_federated_task(&base, &[ShiftSpec::identity_affine(2)], RngStream::new(0, 1)).is_err());
    }
}
