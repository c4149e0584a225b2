//! Image tensors, pixel-group partitions, and the matricizations that turn
//! a `c x h x w` tensor into the matrices spectral quantities are computed
//! on.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::io::{BufRead, Write};

/// A `c x h x w` real tensor stored channel-major, then row, then column.
/// Clean dataset images live in [0,1]; perturbations may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "tensor dimensions must be positive".into(),
            ));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        ImageTensor {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn require_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self + alpha * other`, elementwise.
    pub fn add_scaled(&self, alpha: f64, other: &ImageTensor) -> ImageTensor {
        debug_assert!(self.same_shape(other));
        ImageTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ImageTensor) -> ImageTensor {
        self.add_scaled(-1.0, other)
    }

    pub fn dot(&self, other: &ImageTensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// One `(c*h) x w` matrix with channel blocks stacked vertically.
    pub fn matricize_stacked(&self) -> Mat {
        Mat::from_vec(self.channels * self.height, self.width, self.data.clone())
    }

    /// One `h x w` matrix per channel.
    pub fn matricize_per_channel(&self) -> Vec<Mat> {
        let plane = self.height * self.width;
        (0..self.channels)
            .map(|c| {
                Mat::from_vec(
                    self.height,
                    self.width,
                    self.data[c * plane..(c + 1) * plane].to_vec(),
                )
            })
            .collect()
    }

    pub fn from_stacked(channels: usize, m: &Mat) -> Result<Self> {
        if m.rows() % channels != 0 {
            return Err(Error::ShapeMismatch(format!(
                "stacked matrix rows {} not divisible by {} channels",
                m.rows(),
                channels
            )));
        }
        ImageTensor::new(channels, m.rows() / channels, m.cols(), m.data().to_vec())
    }

    pub fn from_channel_mats(mats: &[Mat]) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channel matrices".into()))?;
        let (h, w) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(mats.len() * h * w);
        for m in mats {
            if m.rows() != h || m.cols() != w {
                return Err(Error::ShapeMismatch("uneven channel matrices".into()));
            }
            data.extend_from_slice(m.data());
        }
        ImageTensor::new(mats.len(), h, w, data)
    }

    /// Extract the sub-matrix selected by a pixel group: channel blocks
    /// stacked vertically, `|channels| * (r1-r0)` rows by `c1-c0` columns.
    pub fn extract_group(&self, g: &PixelGroup) -> Result<Mat> {
        g.check_bounds(self)?;
        let gh = g.row_range.1 - g.row_range.0;
        let gw = g.col_range.1 - g.col_range.0;
        let mut m = Mat::zeros(g.channel_set.len() * gh, gw);
        for (bi, &c) in g.channel_set.iter().enumerate() {
            for (ri, y) in (g.row_range.0..g.row_range.1).enumerate() {
                for (ci, x) in (g.col_range.0..g.col_range.1).enumerate() {
                    m[(bi * gh + ri, ci)] = self.at(c, y, x);
                }
            }
        }
        Ok(m)
    }

    /// Write a group matrix back into the tensor at the group's position.
    /// Inverse of [`extract_group`](Self::extract_group).
    pub fn scatter_group(&mut self, g: &PixelGroup, m: &Mat) -> Result<()> {
        g.check_bounds(self)?;
        let gh = g.row_range.1 - g.row_range.0;
        let gw = g.col_range.1 - g.col_range.0;
        if m.rows() != g.channel_set.len() * gh || m.cols() != gw {
            return Err(Error::ShapeMismatch(format!(
                "group matrix is {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                g.channel_set.len() * gh,
                gw
            )));
        }
        for (bi, &c) in g.channel_set.iter().enumerate() {
            for (ri, y) in (g.row_range.0..g.row_range.1).enumerate() {
                for (ci, x) in (g.col_range.0..g.col_range.1).enumerate() {
                    self.set(c, y, x, m[(bi * gh + ri, ci)]);
                }
            }
        }
        Ok(())
    }

    /// Flat CSV: header line `c,h,w`, then all entries comma-separated.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{},{},{}", self.channels, self.height, self.width)?;
        let mut line = String::new();
        for (i, v) in self.data.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}")?;
        Ok(())
    }

    pub fn read_csv(r: &mut impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let dims: Vec<usize> = header
            .trim()
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("bad tensor header: {e}")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse("tensor header must be c,h,w".into()));
        }
        let expected = dims[0] * dims[1] * dims[2];
        let mut data = Vec::with_capacity(expected);
        let mut body = String::new();
        r.read_to_string(&mut body)?;
        for tok in body
            .split([',', '\n', '\r'])
            .filter(|t| !t.trim().is_empty())
        {
            data.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad tensor value {tok:?}: {e}")))?,
            );
        }
        if data.len() != expected {
            return Err(Error::Parse(format!(
                "expected {expected} tensor values, found {}",
                data.len()
            )));
        }
        ImageTensor::new(dims[0], dims[1], dims[2], data)
    }
}

/// How a multi-channel tensor becomes matrices for spectral norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Matricization {
    /// One `(c*h) x w` matrix, channel blocks stacked vertically.
    Stacked,
    /// One `h x w` matrix per channel.
    PerChannel,
}

/// A rectangle of pixels on a set of channels. The selected sub-tensor is
/// extracted as one matrix with the channel blocks stacked vertically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGroup {
    /// Sorted, deduplicated channel indices.
    pub channel_set: Vec<usize>,
    /// Half-open row interval [r0, r1).
    pub row_range: (usize, usize),
    /// Half-open column interval [c0, c1).
    pub col_range: (usize, usize),
}

impl PixelGroup {
    pub fn new(
        mut channel_set: Vec<usize>,
        row_range: (usize, usize),
        col_range: (usize, usize),
    ) -> Result<Self> {
        channel_set.sort_unstable();
        channel_set.dedup();
        if channel_set.is_empty() {
            return Err(Error::InvalidArgument("group has no channels".into()));
        }
        if row_range.0 >= row_range.1 || col_range.0 >= col_range.1 {
            return Err(Error::InvalidArgument(
                "group ranges must be nonempty half-open intervals".into(),
            ));
        }
        Ok(PixelGroup {
            channel_set,
            row_range,
            col_range,
        })
    }

    /// Full-frame group on a single channel.
    pub fn full_channel(channel: usize, height: usize, width: usize) -> Self {
        PixelGroup {
            channel_set: vec![channel],
            row_range: (0, height),
            col_range: (0, width),
        }
    }

    /// Full-frame group spanning all channels.
    pub fn full_frame(channels: usize, height: usize, width: usize) -> Self {
        PixelGroup {
            channel_set: (0..channels).collect(),
            row_range: (0, height),
            col_range: (0, width),
        }
    }

    pub fn rows(&self) -> usize {
        self.row_range.1 - self.row_range.0
    }

    pub fn cols(&self) -> usize {
        self.col_range.1 - self.col_range.0
    }

    /// Rows of the extracted matrix (channel blocks stacked).
    pub fn matrix_rows(&self) -> usize {
        self.channel_set.len() * self.rows()
    }

    pub fn pixel_count(&self) -> usize {
        self.matrix_rows() * self.cols()
    }

    pub fn check_bounds(&self, t: &ImageTensor) -> Result<()> {
        let ok = self.channel_set.iter().all(|&c| c < t.channels())
            && self.row_range.1 <= t.height()
            && self.col_range.1 <= t.width();
        if ok {
            Ok(())
        } else {
            Err(Error::GroupOutOfBounds)
        }
    }

    fn overlaps(&self, other: &PixelGroup) -> bool {
        let chan = self
            .channel_set
            .iter()
            .any(|c| other.channel_set.contains(c));
        let rows = self.row_range.0 < other.row_range.1 && other.row_range.0 < self.row_range.1;
        let cols = self.col_range.0 < other.col_range.1 && other.col_range.0 < self.col_range.1;
        chan && rows && cols
    }
}

/// An ordered list of pairwise-disjoint pixel groups with positive
/// per-group weights. Pixels outside every group carry zero perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPartition {
    groups: Vec<PixelGroup>,
    weights: Vec<f64>,
}

impl GroupPartition {
    pub fn new(groups: Vec<PixelGroup>, weights: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidArgument("partition has no groups".into()));
        }
        if groups.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} groups but {} weights",
                groups.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "group weights must be strictly positive".into(),
            ));
        }
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if groups[i].overlaps(&groups[j]) {
                    return Err(Error::OverlappingGroups(i, j));
                }
            }
        }
        Ok(GroupPartition { groups, weights })
    }

    pub fn unweighted(groups: Vec<PixelGroup>) -> Result<Self> {
        let n = groups.len();
        GroupPartition::new(groups, vec![1.0; n])
    }

    /// One full-frame group per channel, all weights 1.
    pub fn per_channel(channels: usize, height: usize, width: usize) -> Self {
        let groups = (0..channels)
            .map(|c| PixelGroup::full_channel(c, height, width))
            .collect();
        GroupPartition {
            groups,
            weights: vec![1.0; channels],
        }
    }

    /// A single group covering the whole tensor, weight 1.
    pub fn full_frame(channels: usize, height: usize, width: usize) -> Self {
        GroupPartition {
            groups: vec![PixelGroup::full_frame(channels, height, width)],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[PixelGroup] {
        &self.groups
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same groups with new weights (validated).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        GroupPartition::new(self.groups.clone(), weights)
    }

    pub fn check_bounds(&self, t: &ImageTensor) -> Result<()> {
        for g in &self.groups {
            g.check_bounds(t)?;
        }
        Ok(())
    }
}
