//! Frequency-domain decomposition of RGB images.
//!
//! Each channel is transformed with an unnormalized forward 2-D DFT, the
//! spectrum is center-shifted so the DC bin sits at `(h / 2, w / 2)`, and a
//! Gaussian low-pass mask `exp(-D^2 / (2 D0^2))` together with its complement
//! splits it into a low and a high branch. The inverse transform carries the
//! `1 / (h w)` factor. Optionally each masked branch is damped by a random
//! attenuation matrix before inversion.
//!
//! Filtered components are kept unclamped so that `low + high == original`
//! holds to rounding error; clamping to `[0, 1]` happens only on export.

use num_complex::Complex;
use num_traits::{Float, Zero};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::Scalar;

/// Default Gaussian cutoff, in frequency-index units.
pub const DEFAULT_CUTOFF: f64 = 30.0;
/// Default inference-time attenuation bound.
pub const DEFAULT_GAMMA: f64 = 0.23;

/// A single `height x width` grid of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("plane must have at least one row and column"));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Builds a plane from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest absolute per-cell difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.dims() != other.dims() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| Float::max(m, Float::abs(a - b))),
        )
    }
}

/// An RGB image as three equally sized planes.
///
/// Images loaded from disk or built with [`Image::new`] hold intensities in
/// `[0, 1]`. Frequency components produced by [`decompose`] may leave that
/// range (a high-pass component is roughly zero-mean) and are built with
/// [`Image::from_planes`], which checks shape only.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    planes: [Plane<T>; 3],
}

impl<T: Scalar> Image<T> {
    /// Range-checked constructor.
    pub fn new(planes: [Plane<T>; 3]) -> Result<Self> {
        let image = Self::from_planes(planes)?;
        for (ch, plane) in image.planes.iter().enumerate() {
            if let Some(bad) = plane
                .as_slice()
                .iter()
                .position(|&v| !(v >= T::zero() && v <= T::one()))
            {
                return Err(Error::InvalidArgument(format!(
                    "channel {ch} intensity at index {bad} is {} (outside [0, 1])",
                    plane.as_slice()[bad]
                )));
            }
        }
        Ok(image)
    }

    /// Shape-checked constructor that accepts any finite or non-finite value.
    pub fn from_planes(planes: [Plane<T>; 3]) -> Result<Self> {
        let dims = planes[0].dims();
        if planes.iter().any(|p| p.dims() != dims) {
            return Err(Error::Dimension(format!(
                "channel planes differ in size: {:?}",
                planes.iter().map(Plane::dims).collect::<Vec<_>>()
            )));
        }
        Ok(Self { planes })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        let p = Plane::filled(height, width, value)?;
        Self::new([p.clone(), p.clone(), p])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> T) -> Result<Self> {
        let r = Plane::from_fn(height, width, |y, x| f(y, x, 0))?;
        let g = Plane::from_fn(height, width, |y, x| f(y, x, 1))?;
        let b = Plane::from_fn(height, width, |y, x| f(y, x, 2))?;
        Self::from_planes([r, g, b])
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn planes(&self) -> &[Plane<T>; 3] {
        &self.planes
    }

    pub fn plane(&self, channel: usize) -> &Plane<T> {
        &self.planes[channel]
    }

    pub fn into_planes(self) -> [Plane<T>; 3] {
        self.planes
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [T; 3] {
        [
            self.planes[0].get(row, col),
            self.planes[1].get(row, col),
            self.planes[2].get(row, col),
        ]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            planes: [
                self.planes[0].map(&f),
                self.planes[1].map(&f),
                self.planes[2].map(&f),
            ],
        }
    }

    /// Cellwise sum of two images of the same size.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?} images",
                self.dims(),
                other.dims()
            )));
        }
        let sum = |a: &Plane<T>, b: &Plane<T>| Plane {
            height: a.height,
            width: a.width,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
        };
        Ok(Self {
            planes: [
                sum(&self.planes[0], &other.planes[0]),
                sum(&self.planes[1], &other.planes[1]),
                sum(&self.planes[2], &other.planes[2]),
            ],
        })
    }

    /// Clamps every intensity into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        self.map(|v| Float::min(Float::max(v, T::zero()), T::one()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        let mut m = T::zero();
        for (a, b) in self.planes.iter().zip(&other.planes) {
            m = Float::max(m, a.max_abs_diff(b)?);
        }
        Some(m)
    }
}

/// Complex `height x width` frequency grid, row-major, DC at `(0, 0)` unless
/// it has been passed through [`Spectrum::shifted`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("spectrum must have at least one row and column"));
        }
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "spectrum {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![Complex::zero(); height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.width + col]
    }

    /// Moves the DC bin from `(0, 0)` to `(h / 2, w / 2)`.
    pub fn shifted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: roll(&self.data, self.height, self.width, self.height / 2, self.width / 2),
        }
    }

    /// Inverse of [`Spectrum::shifted`], also for odd sizes.
    pub fn unshifted(&self) -> Self {
        let (h, w) = self.dims();
        Self {
            height: h,
            width: w,
            data: roll(&self.data, h, w, h - h / 2, w - w / 2),
        }
    }

    /// Cellwise product with a real weight grid of the same shape.
    pub fn weighted(&self, weights: &Plane<T>) -> Result<Self> {
        if weights.dims() != self.dims() {
            return Err(Error::Dimension(format!(
                "weights {:?} do not match spectrum {:?}",
                weights.dims(),
                self.dims()
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(weights.as_slice())
                .map(|(&z, &g)| z * g)
                .collect(),
        })
    }
}

/// Cyclic roll: output `(r, c)` takes input `((r - dr) mod h, (c - dc) mod w)`.
fn roll<E: Copy>(data: &[E], h: usize, w: usize, dr: usize, dc: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(data.len());
    for r in 0..h {
        let src_r = (r + h - dr % h) % h;
        for c in 0..w {
            let src_c = (c + w - dc % w) % w;
            out.push(data[src_r * w + src_c]);
        }
    }
    out
}

/// Real weights in `[0, 1]` laid out in centered (shifted) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMask<T>(Plane<T>);

impl<T: Scalar> FilterMask<T> {
    pub fn weights(&self) -> &Plane<T> {
        &self.0
    }

    pub fn into_plane(self) -> Plane<T> {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.0.get(row, col)
    }

    /// Complement `1 - w` of every weight.
    pub fn complement(&self) -> Self {
        Self(self.0.map(|w| T::one() - w))
    }
}

/// Gaussian cutoff `D0`, strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CutoffFrequency(f64);

impl CutoffFrequency {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "cutoff frequency must be a positive finite number, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for CutoffFrequency {
    fn default() -> Self {
        Self(DEFAULT_CUTOFF)
    }
}

impl TryFrom<f64> for CutoffFrequency {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CutoffFrequency> for f64 {
    fn from(c: CutoffFrequency) -> f64 {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttenuationMode {
    /// Cells drawn i.i.d. from `U[0, gamma)`.
    #[default]
    Random,
    /// Every cell equals `gamma`.
    Constant,
}

/// How many attenuation matrices [`decompose_attenuated`] draws per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttenuationSharing {
    /// One matrix for the low branch and an independent one for the high
    /// branch, each shared by the three channels.
    #[default]
    PerBranch,
    /// A single matrix shared by both branches and all channels.
    Shared,
    /// Independent matrices per branch and per channel.
    PerBranchPerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationSpec {
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: AttenuationMode,
    #[serde(default)]
    pub sharing: AttenuationSharing,
}

impl AttenuationSpec {
    pub fn random(gamma: f64, seed: u64) -> Self {
        Self {
            gamma,
            seed,
            mode: AttenuationMode::Random,
            sharing: AttenuationSharing::PerBranch,
        }
    }

    pub fn constant(gamma: f64) -> Self {
        Self {
            gamma,
            seed: 0,
            mode: AttenuationMode::Constant,
            sharing: AttenuationSharing::PerBranch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "attenuation gamma must lie in [0, 1], got {}",
                self.gamma
            )))
        }
    }
}

impl Default for AttenuationSpec {
    fn default() -> Self {
        Self::random(DEFAULT_GAMMA, 0)
    }
}

/// In-place 2-D transform of a row-major grid; unnormalized in both directions.
fn fft2d_in_place<T: Scalar>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    row_fft.process(data);

    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut columns = vec![Complex::zero(); h * w];
    for r in 0..h {
        for c in 0..w {
            columns[c * h + r] = data[r * w + c];
        }
    }
    col_fft.process(&mut columns);
    for c in 0..w {
        for r in 0..h {
            data[r * w + c] = columns[c * h + r];
        }
    }
}

/// Unnormalized forward 2-D DFT of a real plane; `F(0, 0)` is the plain sum.
///
/// Works for any size (rustfft selects mixed-radix or Bluestein plans).
pub fn dft2d<T: Scalar>(plane: &Plane<T>) -> Result<Spectrum<T>> {
    let (h, w) = plane.dims();
    if h == 0 || w == 0 {
        return Err(Error::Empty("cannot transform an empty plane"));
    }
    let mut data: Vec<Complex<T>> = plane.as_slice().iter().map(|&x| Complex::new(x, T::zero())).collect();
    fft2d_in_place(&mut data, h, w, false);
    Spectrum::new(h, w, data)
}

/// Normalized inverse transform, returning the real part together with the
/// largest discarded imaginary magnitude.
pub fn idft2d_with_residue<T: Scalar>(spectrum: &Spectrum<T>) -> Result<(Plane<T>, T)> {
    let (h, w) = spectrum.dims();
    if h == 0 || w == 0 {
        return Err(Error::Empty("cannot invert an empty spectrum"));
    }
    let mut data = spectrum.as_slice().to_vec();
    fft2d_in_place(&mut data, h, w, true);
    let scale = T::one() / T::lit((h * w) as f64);
    let mut residue = T::zero();
    let real = data
        .iter()
        .map(|z| {
            residue = Float::max(residue, Float::abs(z.im * scale));
            z.re * scale
        })
        .collect();
    Ok((Plane::new(h, w, real)?, residue))
}

/// Normalized (`1 / (h w)`) inverse 2-D DFT, real part.
pub fn idft2d<T: Scalar>(spectrum: &Spectrum<T>) -> Result<Plane<T>> {
    idft2d_with_residue(spectrum).map(|(plane, _)| plane)
}

/// Gaussian low-pass mask and its exact complement, in centered coordinates.
///
/// `D` is the Euclidean index distance from `(h / 2, w / 2)`.
pub fn gaussian_masks<T: Scalar>(
    height: usize,
    width: usize,
    cutoff: CutoffFrequency,
) -> Result<(FilterMask<T>, FilterMask<T>)> {
    let d0 = cutoff.value();
    if d0.is_nan() || d0 <= 0.0 {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {d0}")));
    }
    let (cy, cx) = ((height / 2) as f64, (width / 2) as f64);
    let denom = 2.0 * d0 * d0;
    let low = Plane::from_fn(height, width, |r, c| {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        T::lit((-(dy * dy + dx * dx) / denom).exp())
    })?;
    let low = FilterMask(low);
    let high = low.complement();
    Ok((low, high))
}

/// The `D0 -> 0+` limit of [`gaussian_masks`]: the low mask keeps only the DC
/// bin and the high mask keeps everything else.
pub fn dc_split_masks<T: Scalar>(height: usize, width: usize) -> Result<(FilterMask<T>, FilterMask<T>)> {
    let (cy, cx) = (height / 2, width / 2);
    let low = FilterMask(Plane::from_fn(height, width, |r, c| {
        if r == cy && c == cx {
            T::one()
        } else {
            T::zero()
        }
    })?);
    let high = low.complement();
    Ok((low, high))
}

/// Splits an image into low- and high-frequency components.
pub fn decompose<T: Scalar>(image: &Image<T>, cutoff: CutoffFrequency) -> Result<(Image<T>, Image<T>)> {
    let (h, w) = image.dims();
    let (low, high) = gaussian_masks(h, w, cutoff)?;
    decompose_with_masks(image, &low, &high)
}

/// [`decompose`] with caller-supplied centered masks.
pub fn decompose_with_masks<T: Scalar>(
    image: &Image<T>,
    low: &FilterMask<T>,
    high: &FilterMask<T>,
) -> Result<(Image<T>, Image<T>)> {
    let l = low.weights();
    let hi = high.weights();
    filter_branches(image, [l, l, l], [hi, hi, hi], true)
}

/// Draws an attenuation matrix from `spec`'s own seed.
pub fn attenuation_matrix<T: Scalar>(height: usize, width: usize, spec: &AttenuationSpec) -> Result<Plane<T>> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    sample_attenuation(&mut rng, height, width, spec)
}

fn sample_attenuation<T: Scalar>(
    rng: &mut rng::SeededRng,
    height: usize,
    width: usize,
    spec: &AttenuationSpec,
) -> Result<Plane<T>> {
    match spec.mode {
        AttenuationMode::Constant => Plane::filled(height, width, T::lit(spec.gamma)),
        AttenuationMode::Random => {
            let gamma = spec.gamma;
            Plane::from_fn(height, width, |_, _| {
                let v: T = rng::uniform(rng, 0.0, gamma);
                // Rounding into f32 can land on gamma itself.
                let bound = T::lit(gamma);
                if gamma > 0.0 && v >= bound {
                    bound - bound * T::epsilon()
                } else {
                    v
                }
            })
        }
    }
}

/// [`decompose`] with each masked centered spectrum damped by attenuation
/// matrices before inversion.
///
/// Matrices are drawn from one generator seeded with `spec.seed`: the low
/// branch first, then the high branch (channel-major within a branch under
/// [`AttenuationSharing::PerBranchPerChannel`]).
pub fn decompose_attenuated<T: Scalar>(
    image: &Image<T>,
    cutoff: CutoffFrequency,
    spec: &AttenuationSpec,
) -> Result<(Image<T>, Image<T>)> {
    let (h, w) = image.dims();
    let (low, high) = gaussian_masks::<T>(h, w, cutoff)?;
    decompose_attenuated_with_masks(image, &low, &high, spec)
}

/// [`decompose_attenuated`] with caller-supplied centered masks.
pub fn decompose_attenuated_with_masks<T: Scalar>(
    image: &Image<T>,
    low: &FilterMask<T>,
    high: &FilterMask<T>,
    spec: &AttenuationSpec,
) -> Result<(Image<T>, Image<T>)> {
    spec.validate()?;
    let (h, w) = image.dims();
    if low.dims() != (h, w) || high.dims() != (h, w) {
        return Err(Error::Dimension(format!(
            "masks {:?}/{:?} do not match image {:?}",
            low.dims(),
            high.dims(),
            (h, w)
        )));
    }
    let mut rng = rng::seeded(spec.seed);
    let mut draw = || sample_attenuation::<T>(&mut rng, h, w, spec);

    let damp = |mask: &FilterMask<T>, g: &Plane<T>| -> Plane<T> {
        Plane {
            height: h,
            width: w,
            data: mask
                .weights()
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(&m, &g)| m * g)
                .collect(),
        }
    };

    let (low_w, high_w): ([Plane<T>; 3], [Plane<T>; 3]) = match spec.sharing {
        AttenuationSharing::PerBranch => {
            let gl = draw()?;
            let gh = draw()?;
            let l = damp(low, &gl);
            let hi = damp(high, &gh);
            ([l.clone(), l.clone(), l], [hi.clone(), hi.clone(), hi])
        }
        AttenuationSharing::Shared => {
            let g = draw()?;
            let l = damp(low, &g);
            let hi = damp(high, &g);
            ([l.clone(), l.clone(), l], [hi.clone(), hi.clone(), hi])
        }
        AttenuationSharing::PerBranchPerChannel => {
            let l = [damp(low, &draw()?), damp(low, &draw()?), damp(low, &draw()?)];
            let hi = [damp(high, &draw()?), damp(high, &draw()?), damp(high, &draw()?)];
            (l, hi)
        }
    };
    // Random matrices break conjugate symmetry, so the residue is expected.
    let symmetric = spec.mode == AttenuationMode::Constant;
    filter_branches(
        image,
        [&low_w[0], &low_w[1], &low_w[2]],
        [&high_w[0], &high_w[1], &high_w[2]],
        symmetric,
    )
}

fn filter_branches<T: Scalar>(
    image: &Image<T>,
    low: [&Plane<T>; 3],
    high: [&Plane<T>; 3],
    expect_real: bool,
) -> Result<(Image<T>, Image<T>)> {
    let mut low_planes = Vec::with_capacity(3);
    let mut high_planes = Vec::with_capacity(3);
    for (ch, plane) in image.planes().iter().enumerate() {
        let centered = dft2d(plane)?.shifted();
        for (weights, out) in [(low[ch], &mut low_planes), (high[ch], &mut high_planes)] {
            let filtered = centered.weighted(weights)?.unshifted();
            let (real, residue) = idft2d_with_residue(&filtered)?;
            debug_assert!(
                !expect_real || residue <= T::residue_tolerance(),
                "imaginary residue {residue} after inverse transform"
            );
            out.push(real);
        }
    }
    let to_image = |v: Vec<Plane<T>>| -> Result<Image<T>> {
        let [r, g, b]: [Plane<T>; 3] = v.try_into().expect("three channels");
        Image::from_planes([r, g, b])
    };
    Ok((to_image(low_planes)?, to_image(high_planes)?))
}
