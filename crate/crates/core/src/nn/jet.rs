//! Truncated Taylor jets.
//!
//! A jet carries a value together with `k` first-order directional derivatives
//! and second-order mixed derivatives for a declared list of direction pairs.
//! Only declared pairs are tracked: the physics losses need `(t, t)` and
//! `(x_i, t)` and nothing else, so full Hessians would be wasted work.
//!
//! Two representations live here:
//!
//! * [`Jet2`], a scalar jet with ordinary arithmetic, handy for analytic code
//!   and for checking the chain rule in isolation.
//! * [`JetBatch`], a block of jets for `dim` features over `batch` samples,
//!   stored so that a dense layer applies to every channel with one matrix
//!   product. This is what the networks consume.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

/// Which derivative channels a jet carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JetLayout {
    dirs: usize,
    pairs: Vec<(usize, usize)>,
}

impl JetLayout {
    /// Layout with `dirs` first-order directions and the given second-order pairs.
    ///
    /// Pairs are stored with the smaller index first; duplicates are rejected.
    pub fn new(dirs: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            let p = (a.min(b), a.max(b));
            if p.1 >= dirs {
                return Err(Error::JetShape(format!(
                    "pair {p:?} references a direction outside 0..{dirs}"
                )));
            }
            if out.contains(&p) {
                return Err(Error::JetShape(format!("duplicate pair {p:?}")));
            }
            out.push(p);
        }
        Ok(Self { dirs, pairs: out })
    }

    /// Layout without derivative channels.
    pub fn constant() -> Self {
        Self { dirs: 0, pairs: Vec::new() }
    }

    /// First-order directions only.
    pub fn first_order(dirs: usize) -> Self {
        Self { dirs, pairs: Vec::new() }
    }

    pub fn dirs(&self) -> usize {
        self.dirs
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Total channel count: value, first-order, second-order.
    pub fn channels(&self) -> usize {
        1 + self.dirs + self.pairs.len()
    }

    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        let p = (a.min(b), a.max(b));
        self.pairs.iter().position(|&q| q == p)
    }

    /// Channel index of first-order direction `dir`.
    pub fn d1_channel(&self, dir: usize) -> usize {
        1 + dir
    }

    /// Channel index of the `pair`-th second-order entry.
    pub fn d2_channel(&self, pair: usize) -> usize {
        1 + self.dirs + pair
    }
}

/// Scalar jet: value, first-order and selected second-order directional derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    layout: Arc<JetLayout>,
}

impl Jet2 {
    /// A constant (all derivative channels zero).
    pub fn constant(value: f64, layout: Arc<JetLayout>) -> Self {
        Self {
            value,
            d1: vec![0.0; layout.dirs],
            d2: vec![0.0; layout.pairs.len()],
            layout,
        }
    }

    /// An independent variable seeded along direction `dir`.
    pub fn variable(value: f64, dir: usize, layout: Arc<JetLayout>) -> Self {
        let mut j = Self::constant(value, layout);
        j.d1[dir] = 1.0;
        j
    }

    pub fn from_parts(value: f64, d1: Vec<f64>, d2: Vec<f64>, layout: Arc<JetLayout>) -> Result<Self> {
        if d1.len() != layout.dirs || d2.len() != layout.pairs.len() {
            return Err(Error::JetShape(format!(
                "expected {} / {} derivative entries, got {} / {}",
                layout.dirs,
                layout.pairs.len(),
                d1.len(),
                d2.len()
            )));
        }
        Ok(Self { value, d1, d2, layout })
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    /// Second-order entry for directions `(a, b)`, if that pair is tracked.
    pub fn d2_pair(&self, a: usize, b: usize) -> Option<f64> {
        self.layout.pair_index(a, b).map(|p| self.d2[p])
    }

    /// Apply a scalar function given its first and second derivative at `self.value`.
    pub fn map(&self, f: f64, df: f64, ddf: f64) -> Self {
        let d1 = self.d1.iter().map(|&d| df * d).collect();
        let d2 = self
            .layout
            .pairs
            .iter()
            .zip(&self.d2)
            .map(|(&(a, b), &dd)| df * dd + ddf * self.d1[a] * self.d1[b])
            .collect();
        Self { value: f, d1, d2, layout: Arc::clone(&self.layout) }
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.map(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.map(c, -s, -c)
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.map(e, e, e)
    }

    pub fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        self.map(r, 0.5 / r, -0.25 / (r * self.value))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(k * self.value, k, 0.0)
    }

    fn check(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout,
            "jet layouts differ"
        );
    }
}

impl Add for &Jet2 {
    type Output = Jet2;
    fn add(self, rhs: &Jet2) -> Jet2 {
        self.check(rhs);
        Jet2 {
            value: self.value + rhs.value,
            d1: self.d1.iter().zip(&rhs.d1).map(|(a, b)| a + b).collect(),
            d2: self.d2.iter().zip(&rhs.d2).map(|(a, b)| a + b).collect(),
            layout: Arc::clone(&self.layout),
        }
    }
}

impl Sub for &Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: &Jet2) -> Jet2 {
        self + &(-rhs)
    }
}

impl Neg for &Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for &Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: &Jet2) -> Jet2 {
        self.check(rhs);
        let d1 = self
            .d1
            .iter()
            .zip(&rhs.d1)
            .map(|(a, b)| a * rhs.value + self.value * b)
            .collect();
        let d2 = self
            .layout
            .pairs
            .iter()
            .enumerate()
            .map(|(p, &(i, j))| {
                self.d2[p] * rhs.value
                    + self.value * rhs.d2[p]
                    + self.d1[i] * rhs.d1[j]
                    + self.d1[j] * rhs.d1[i]
            })
            .collect();
        Jet2 { value: self.value * rhs.value, d1, d2, layout: Arc::clone(&self.layout) }
    }
}

/// Jets for `dim` features over `batch` samples.
///
/// Storage is `dim x (channels * batch)`: channel `c` of sample `b` lives in
/// column `c * batch + b`, so a dense layer is a single matrix product over
/// all channels at once.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    layout: Arc<JetLayout>,
    batch: usize,
    data: Array2<f64>,
}

impl JetBatch {
    pub fn zeros(dim: usize, batch: usize, layout: Arc<JetLayout>) -> Self {
        let cols = layout.channels() * batch;
        Self { layout, batch, data: Array2::zeros((dim, cols)) }
    }

    /// Constant jets (no derivative channels) from a `dim x batch` value block.
    pub fn from_values(values: Array2<f64>) -> Self {
        let batch = values.ncols();
        Self { layout: Arc::new(JetLayout::constant()), batch, data: values }
    }

    /// Jets with the given value block and zero derivative channels.
    pub fn with_values(values: ArrayView2<f64>, layout: Arc<JetLayout>) -> Self {
        let mut out = Self::zeros(values.nrows(), values.ncols(), layout);
        out.value_mut().assign(&values);
        out
    }

    pub fn from_raw(data: Array2<f64>, batch: usize, layout: Arc<JetLayout>) -> Result<Self> {
        if data.ncols() != layout.channels() * batch {
            return Err(Error::JetShape(format!(
                "expected {} columns, got {}",
                layout.channels() * batch,
                data.ncols()
            )));
        }
        Ok(Self { layout, batch, data })
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_raw(self) -> Array2<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        let b = self.batch;
        self.data.slice(s![.., c * b..(c + 1) * b])
    }

    pub fn channel_mut(&mut self, c: usize) -> ArrayViewMut2<'_, f64> {
        let b = self.batch;
        self.data.slice_mut(s![.., c * b..(c + 1) * b])
    }

    pub fn value(&self) -> ArrayView2<'_, f64> {
        self.channel(0)
    }

    pub fn value_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.channel_mut(0)
    }

    pub fn d1(&self, dir: usize) -> ArrayView2<'_, f64> {
        self.channel(self.layout.d1_channel(dir))
    }

    pub fn d1_mut(&mut self, dir: usize) -> ArrayViewMut2<'_, f64> {
        let c = self.layout.d1_channel(dir);
        self.channel_mut(c)
    }

    /// Second-order channel for directions `(a, b)`; panics if the pair is not tracked.
    pub fn d2(&self, a: usize, b: usize) -> ArrayView2<'_, f64> {
        let p = self.layout.pair_index(a, b).expect("untracked jet pair");
        self.channel(self.layout.d2_channel(p))
    }

    pub fn d2_mut(&mut self, a: usize, b: usize) -> ArrayViewMut2<'_, f64> {
        let p = self.layout.pair_index(a, b).expect("untracked jet pair");
        let c = self.layout.d2_channel(p);
        self.channel_mut(c)
    }

    /// Set the first-order seed of feature `row` along `dir` to `scale` for every sample.
    pub fn seed(&mut self, row: usize, dir: usize, scale: f64) {
        self.d1_mut(dir).row_mut(row).fill(scale);
    }

    /// Multiply feature row `r` (every channel) by `factors[r]`.
    pub fn scale_rows(&mut self, factors: &[f64]) {
        for (mut row, &f) in self.data.rows_mut().into_iter().zip(factors) {
            row *= f;
        }
    }

    /// Re-express these jets in a layout with more directions or pairs.
    ///
    /// Direction `i` of `self` becomes direction `dir_map[i]` of `target`.
    /// Channels with no source (new directions, new pairs) are zero, which is
    /// exact when the new directions do not influence the source quantity.
    pub fn embed(&self, target: &Arc<JetLayout>, dir_map: &[usize]) -> Result<Self> {
        let src = &self.layout;
        if dir_map.len() != src.dirs {
            return Err(Error::JetShape("direction map length".into()));
        }
        let mut out = Self::zeros(self.dim(), self.batch, Arc::clone(target));
        out.value_mut().assign(&self.value());
        for (i, &j) in dir_map.iter().enumerate() {
            if j >= target.dirs {
                return Err(Error::JetShape(format!("direction {j} out of range")));
            }
            out.d1_mut(j).assign(&self.d1(i));
        }
        for (p, &(a, b)) in src.pairs.iter().enumerate() {
            let q = target
                .pair_index(dir_map[a], dir_map[b])
                .ok_or_else(|| Error::JetShape("target layout lacks a source pair".into()))?;
            let c = target.d2_channel(q);
            out.channel_mut(c).assign(&self.channel(src.d2_channel(p)));
        }
        Ok(out)
    }

    /// Adjoint of [`JetBatch::embed`]: gather a cotangent in `self`'s layout back to `source`.
    pub fn project(&self, source: &Arc<JetLayout>, dir_map: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(self.dim(), self.batch, Arc::clone(source));
        out.value_mut().assign(&self.value());
        for (i, &j) in dir_map.iter().enumerate() {
            out.d1_mut(i).assign(&self.d1(j));
        }
        for (p, &(a, b)) in source.pairs.iter().enumerate() {
            let q = self
                .layout
                .pair_index(dir_map[a], dir_map[b])
                .ok_or_else(|| Error::JetShape("layout lacks a source pair".into()))?;
            let c = source.d2_channel(p);
            out.channel_mut(c).assign(&self.channel(self.layout.d2_channel(q)));
        }
        Ok(out)
    }

    /// Stack feature rows of several batches with identical layout and batch size.
    pub fn vstack(parts: &[&JetBatch]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyBatch)?;
        for p in parts {
            if p.batch != first.batch || p.layout != first.layout {
                return Err(Error::JetShape("vstack of mismatched jets".into()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::JetShape(e.to_string()))?;
        Ok(Self { layout: Arc::clone(&first.layout), batch: first.batch, data })
    }

    /// Rows `start..end` as a new batch.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        Self {
            layout: Arc::clone(&self.layout),
            batch: self.batch,
            data: self.data.slice(s![start..end, ..]).to_owned(),
        }
    }

    /// Repeat every sample `k` times: sample `b` of copy `r` lands at `r * batch + b`.
    pub fn tile(&self, k: usize) -> Self {
        let (b, ch) = (self.batch, self.layout.channels());
        let mut out = Self::zeros(self.dim(), b * k, Arc::clone(&self.layout));
        for c in 0..ch {
            let src = self.channel(c);
            let mut dst = out.channel_mut(c);
            for r in 0..k {
                dst.slice_mut(s![.., r * b..(r + 1) * b]).assign(&src);
            }
        }
        out
    }

    /// Adjoint of [`JetBatch::tile`]: sum the `k` copies.
    pub fn untile_sum(&self, k: usize) -> Result<Self> {
        if self.batch % k != 0 {
            return Err(Error::JetShape("batch not divisible by tile count".into()));
        }
        let b = self.batch / k;
        let ch = self.layout.channels();
        let mut out = Self::zeros(self.dim(), b, Arc::clone(&self.layout));
        for c in 0..ch {
            let src = self.channel(c);
            let mut dst = out.channel_mut(c);
            for r in 0..k {
                dst += &src.slice(s![.., r * b..(r + 1) * b]);
            }
        }
        Ok(out)
    }

    /// Scalar jets of sample `b`, one per feature row.
    pub fn sample(&self, b: usize) -> Vec<Jet2> {
        let l = &self.layout;
        (0..self.dim())
            .map(|r| {
                let at = |c: usize| self.data[[r, c * self.batch + b]];
                Jet2 {
                    value: at(0),
                    d1: (0..l.dirs).map(|i| at(l.d1_channel(i))).collect(),
                    d2: (0..l.pairs.len()).map(|p| at(l.d2_channel(p))).collect(),
                    layout: Arc::clone(l),
                }
            })
            .collect()
    }

    /// Build a single-sample batch from scalar jets sharing one layout.
    pub fn from_jets(jets: &[Jet2]) -> Result<Self> {
        let first = jets.first().ok_or(Error::EmptyBatch)?;
        let layout = Arc::clone(&first.layout);
        let mut out = Self::zeros(jets.len(), 1, Arc::clone(&layout));
        for (r, j) in jets.iter().enumerate() {
            if *j.layout != *layout {
                return Err(Error::JetShape("inputs carry different jet layouts".into()));
            }
            out.data[[r, 0]] = j.value;
            for i in 0..layout.dirs {
                out.data[[r, layout.d1_channel(i)]] = j.d1[i];
            }
            for p in 0..layout.pairs.len() {
                out.data[[r, layout.d2_channel(p)]] = j.d2[p];
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<JetLayout> {
        Arc::new(JetLayout::new(2, &[(0, 0), (0, 1), (1, 1)]).unwrap())
    }

    #[test]
    fn sin_follows_chain_rule() {
        let l = layout();
        let x = Jet2::variable(0.3, 0, Arc::clone(&l));
        let y = x.sin();
        assert_eq!(y.d1[0], 0.3f64.cos());
        assert_eq!(y.d1[1], 0.0);
        assert!((y.d2_pair(0, 0).unwrap() + 0.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn product_mixed_partial() {
        // f(x, y) = x^2 y  => f_xy = 2x, f_xx = 2y, f_yy = 0
        let l = layout();
        let x = Jet2::variable(1.5, 0, Arc::clone(&l));
        let y = Jet2::variable(-0.7, 1, Arc::clone(&l));
        let f = &(&x * &x) * &y;
        assert!((f.value - 1.5 * 1.5 * -0.7).abs() < 1e-15);
        assert!((f.d1[0] - 2.0 * 1.5 * -0.7).abs() < 1e-15);
        assert!((f.d1[1] - 2.25).abs() < 1e-15);
        assert!((f.d2_pair(0, 1).unwrap() - 3.0).abs() < 1e-15);
        assert!((f.d2_pair(0, 0).unwrap() - 2.0 * -0.7).abs() < 1e-15);
        assert_eq!(f.d2_pair(1, 1).unwrap(), 0.0);
    }

    #[test]
    fn layout_rejects_bad_pairs() {
        assert!(JetLayout::new(2, &[(0, 2)]).is_err());
        assert!(JetLayout::new(2, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn embed_then_project_is_identity_on_source_channels() {
        let src = Arc::new(JetLayout::new(2, &[(0, 1)]).unwrap());
        let dst = Arc::new(JetLayout::new(3, &[(0, 2), (1, 2), (0, 1)]).unwrap());
        let mut j = JetBatch::zeros(2, 3, Arc::clone(&src));
        for (k, v) in j.raw_mut().iter_mut().enumerate() {
            *v = k as f64 * 0.5 - 1.0;
        }
        let e = j.embed(&dst, &[0, 1]).unwrap();
        assert_eq!(e.d1(2).sum(), 0.0);
        assert_eq!(e.d2(0, 2).sum(), 0.0);
        assert_eq!(e.d2(0, 1), j.d2(0, 1));
        let back = e.project(&src, &[0, 1]).unwrap();
        assert_eq!(back, j);
    }
}
