//! Random frequency component rejection: 2-D DFT, band-pass decomposition
//! into N radial bands, random band rejection governed by a fraction P, and
//! exact reconstruction back to the spatial domain.
//!
//! Masks partition the frequency grid and are symmetric under frequency
//! negation, so the composite operator maps real images to real images and
//! is a self-adjoint idempotent projector. The transform is a radix-2 FFT
//! when an axis length is a power of two and a naive DFT otherwise.

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("image dims {got:?} do not match expected {expected:?}")]
    DimMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("rejection mask has {mask} bits but the filter bank has {bank} bands")]
    MaskLength { mask: usize, bank: usize },
    #[error("image data length {len} does not match {h}x{w}x{c}")]
    BadImage { h: usize, w: usize, c: usize, len: usize },
}

type Result<T> = std::result::Result<T, SpectralError>;

/// Real H×W×C array, row-major with channel innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != h * w * c || h == 0 || w == 0 || c == 0 {
            return Err(SpectralError::BadImage {
                h,
                w,
                c,
                len: data.len(),
            });
        }
        Ok(Image { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Image {
        Image {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
}

/// Complex H×W×C frequency representation, same layout as [`Image`].
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<Complex64>,
}

/// Partition of the H×W frequency grid into N binary band masks.
#[derive(Clone, Debug)]
pub struct FilterBank {
    pub n_bands: usize,
    pub h: usize,
    pub w: usize,
    /// One mask per band, length h·w, values 0 or 1.
    pub masks: Vec<Vec<u8>>,
}

/// The N frequency components of one spectrum under a filter bank.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub components: Vec<Vec<Complex64>>,
}

/// Length-N keep/reject bits; zeros mark rejected bands.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectionMask {
    pub bits: Vec<bool>,
    pub p: f64,
}

impl RejectionMask {
    pub fn keep_all(n: usize) -> RejectionMask {
        RejectionMask {
            bits: vec![true; n],
            p: 0.0,
        }
    }

    pub fn rejected_count(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }
}

/// Signed frequency of DFT index `i` along an axis of length `n`.
fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Centered normalized radial frequency in [0, 1]; the Nyquist corner of an
/// even-by-even grid maps to exactly 1.
fn radial_frequency(u: usize, v: usize, h: usize, w: usize) -> f64 {
    let nu = if h > 1 {
        signed_freq(u, h) / (h as f64 / 2.0)
    } else {
        0.0
    };
    let nv = if w > 1 {
        signed_freq(v, w) / (w as f64 / 2.0)
    } else {
        0.0
    };
    ((nu * nu + nv * nv) / 2.0).sqrt()
}

/// Band index of frequency bin (u, v) under an N-band equal-width partition
/// of the radial frequency; rho = 1 folds into the last band.
pub fn band_of(u: usize, v: usize, h: usize, w: usize, n_bands: usize) -> usize {
    let rho = radial_frequency(u, v, h, w);
    ((rho * n_bands as f64) as usize).min(n_bands - 1)
}

/// Builds N disjoint band masks whose elementwise sum is the all-ones mask.
/// Trailing bands may be empty when N exceeds the occupied annuli.
pub fn build_filter_bank(h: usize, w: usize, n_bands: usize) -> FilterBank {
    assert!(n_bands >= 1 && h >= 1 && w >= 1);
    let mut masks = vec![vec![0u8; h * w]; n_bands];
    for u in 0..h {
        for v in 0..w {
            masks[band_of(u, v, h, w, n_bands)][u * w + v] = 1;
        }
    }
    FilterBank {
        n_bands,
        h,
        w,
        masks,
    }
}

// ── transforms ──────────────────────────────────────────────────────────

fn fft_slice(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2_fft(buf, inverse);
    } else {
        let out = naive_dft_1d(buf, inverse);
        buf.copy_from_slice(&out);
    }
}

fn radix2_fft(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let levels = n.trailing_zeros();
    // bit-reversal permutation
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - levels)) as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

fn naive_dft_1d(buf: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &x) in buf.iter().enumerate() {
            let ang = sign * std::f64::consts::TAU * (j * k % n) as f64 / n as f64;
            acc += x * Complex64::new(ang.cos(), ang.sin());
        }
        out.push(acc);
    }
    out
}

fn transform_plane(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for row in plane.chunks_mut(w) {
        fft_slice(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        fft_slice(&mut col, inverse);
        for y in 0..h {
            plane[y * w + x] = col[y];
        }
    }
}

/// Unnormalized forward 2-D DFT per channel.
pub fn dft2(img: &Image) -> Spectrum {
    let (h, w, c) = img.dims();
    let mut data = vec![Complex64::new(0.0, 0.0); h * w * c];
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for i in 0..h * w {
            plane[i] = Complex64::new(img.data[i * c + ch], 0.0);
        }
        transform_plane(&mut plane, h, w, false);
        for i in 0..h * w {
            data[i * c + ch] = plane[i];
        }
    }
    Spectrum { h, w, c, data }
}

/// Inverse 2-D DFT per channel with the 1/(H·W) normalization.
pub fn idft2(spec: &Spectrum) -> Vec<Complex64> {
    let (h, w, c) = (spec.h, spec.w, spec.c);
    let scale = 1.0 / (h * w) as f64;
    let mut data = vec![Complex64::new(0.0, 0.0); h * w * c];
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for i in 0..h * w {
            plane[i] = spec.data[i * c + ch];
        }
        transform_plane(&mut plane, h, w, true);
        for i in 0..h * w {
            data[i * c + ch] = plane[i] * scale;
        }
    }
    data
}

/// Splits a spectrum into its N band components; their sum is the spectrum.
pub fn decompose(spec: &Spectrum, bank: &FilterBank) -> Result<SpectralDecomposition> {
    if spec.h != bank.h || spec.w != bank.w {
        return Err(SpectralError::DimMismatch {
            expected: (bank.h, bank.w, spec.c),
            got: (spec.h, spec.w, spec.c),
        });
    }
    let c = spec.c;
    let components = bank
        .masks
        .iter()
        .map(|mask| {
            let mut comp = vec![Complex64::new(0.0, 0.0); spec.data.len()];
            for i in 0..spec.h * spec.w {
                if mask[i] == 1 {
                    for ch in 0..c {
                        comp[i * c + ch] = spec.data[i * c + ch];
                    }
                }
            }
            comp
        })
        .collect();
    Ok(SpectralDecomposition {
        h: spec.h,
        w: spec.w,
        c,
        components,
    })
}

/// Rejected band count is round-half-up of P·N.
pub fn rejected_band_count(n_bands: usize, p: f64) -> usize {
    (p * n_bands as f64).round() as usize
}

/// Draws a keep/reject mask with exactly round(P·N) rejected bands, chosen
/// uniformly without replacement.
pub fn sample_rejection_mask<R: Rng>(n_bands: usize, p: f64, rng: &mut R) -> RejectionMask {
    assert!((0.0..=1.0).contains(&p), "P must lie in [0, 1], got {p}");
    let reject = rejected_band_count(n_bands, p);
    let mut bits = vec![true; n_bands];
    for idx in rand::seq::index::sample(rng, n_bands, reject) {
        bits[idx] = false;
    }
    RejectionMask { bits, p }
}

/// Residue above this means the mask symmetry invariant is broken.
const IMAG_RESIDUE_LIMIT: f64 = 1e-9;

/// The composite operator R: transform, drop rejected bands, transform back.
/// Output is real; a non-real residue is an internal invariant violation and
/// panics.
pub fn reject_and_reconstruct(
    x: &Image,
    bank: &FilterBank,
    mask: &RejectionMask,
) -> Result<Image> {
    if mask.bits.len() != bank.n_bands {
        return Err(SpectralError::MaskLength {
            mask: mask.bits.len(),
            bank: bank.n_bands,
        });
    }
    if x.h != bank.h || x.w != bank.w {
        return Err(SpectralError::DimMismatch {
            expected: (bank.h, bank.w, x.c),
            got: x.dims(),
        });
    }
    // keep-all is the identity and reject-all the zero map, exactly; the
    // transform round trip would only add rounding noise
    if mask.bits.iter().all(|&b| b) {
        return Ok(x.clone());
    }
    if mask.bits.iter().all(|&b| !b) {
        return Ok(Image::zeros(x.h, x.w, x.c));
    }
    // union of kept bands; bands are disjoint so this equals summing them
    let mut keep = vec![0u8; x.h * x.w];
    for (bits, m) in mask.bits.iter().zip(&bank.masks) {
        if *bits {
            for (k, &v) in keep.iter_mut().zip(m) {
                *k |= v;
            }
        }
    }
    let mut spec = dft2(x);
    let c = x.c;
    for i in 0..x.h * x.w {
        if keep[i] == 0 {
            for ch in 0..c {
                spec.data[i * c + ch] = Complex64::new(0.0, 0.0);
            }
        }
    }
    let out = idft2(&spec);
    let mut data = Vec::with_capacity(out.len());
    for v in &out {
        assert!(
            v.im.abs() < IMAG_RESIDUE_LIMIT,
            "imaginary residue {} breaks the mask symmetry invariant",
            v.im
        );
        data.push(v.re);
    }
    Ok(Image {
        h: x.h,
        w: x.w,
        c: x.c,
        data,
    })
}

/// Adjoint of R. R is a real self-adjoint projector, so this is R itself.
pub fn adjoint_reject(grad_out: &Image, bank: &FilterBank, mask: &RejectionMask) -> Result<Image> {
    reject_and_reconstruct(grad_out, bank, mask)
}
